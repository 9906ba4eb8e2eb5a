//! Dense rank-4 tensors in row-major NCHW layout.

use std::fmt;

use num_traits::Float;
use thiserror::Error;

/// Element type of a tensor.
///
/// Storage is generic so the same kernels run in `f32` for training and in
/// `f64` for gradient verification. Reductions always widen to `f64`.
pub trait Real: Float + Default + Send + Sync + fmt::Debug + fmt::Display + 'static {
    fn cast(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn cast(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn cast(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    ZeroDim([usize; 4]),
    #[error("shape {0:?} overflows the addressable element count")]
    Allocation([usize; 4]),
    #[error("index {index:?} out of bounds for shape {shape}")]
    OutOfBounds { index: [usize; 4], shape: Shape },
    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    LengthMismatch { len: usize, expected: usize, shape: Shape },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Dimensions of an NCHW tensor. All four are at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self, TensorError> {
        let dims = [n, c, h, w];
        if dims.contains(&0) {
            return Err(TensorError::ZeroDim(dims));
        }
        let count = n
            .checked_mul(c)
            .and_then(|x| x.checked_mul(h))
            .and_then(|x| x.checked_mul(w))
            .ok_or(TensorError::Allocation(dims))?;
        // Vec<f64> cannot hold more than isize::MAX bytes.
        if count > isize::MAX as usize / std::mem::size_of::<f64>() {
            return Err(TensorError::Allocation(dims));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn from_dims(dims: [usize; 4]) -> Result<Self, TensorError> {
        Shape::new(dims[0], dims[1], dims[2], dims[3])
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn element_count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Flat row-major offset of `(n, c, h, w)`.
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> Result<usize, TensorError> {
        if n >= self.n || c >= self.c || h >= self.h || w >= self.w {
            return Err(TensorError::OutOfBounds { index: [n, c, h, w], shape: *self });
        }
        Ok(((n * self.c + c) * self.h + h) * self.w + w)
    }

    /// Inverse of [`Shape::offset`].
    pub fn unravel(&self, flat: usize) -> Result<[usize; 4], TensorError> {
        if flat >= self.element_count() {
            return Err(TensorError::OutOfBounds { index: [flat, 0, 0, 0], shape: *self });
        }
        let w = flat % self.w;
        let rest = flat / self.w;
        let h = rest % self.h;
        let rest = rest / self.h;
        let c = rest % self.c;
        let n = rest / self.c;
        Ok([n, c, h, w])
    }

    pub fn with_batch(&self, n: usize) -> Result<Self, TensorError> {
        Shape::new(n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn full(shape: Shape, fill: T) -> Self {
        Tensor { shape, data: vec![fill; shape.element_count()] }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self, TensorError> {
        if data.len() != shape.element_count() {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                expected: shape.element_count(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> Result<T, TensorError> {
        Ok(self.data[self.shape.offset(n, c, h, w)?])
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) -> Result<(), TensorError> {
        let i = self.shape.offset(n, c, h, w)?;
        self.data[i] = v;
        Ok(())
    }

    /// Slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: Shape) -> Result<Self, TensorError> {
        if shape.element_count() != self.data.len() {
            return Err(TensorError::Shape(format!(
                "cannot reshape {} into {}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn convert<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| U::cast(x.widen())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Shape(format!(
                "cannot add {} to {}",
                other.shape, self.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|x| x.widen()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.widen() - b.widen()).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn create_counts() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2).unwrap());
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::zeros(Shape::new(1, 3, 224, 224).unwrap());
        assert_eq!(t.len(), 150_528);
        let t = Tensor::<f32>::full(Shape::new(2, 3, 4, 5).unwrap(), 1.5);
        assert_eq!(t.len(), 120);
        assert!(t.data().iter().all(|&x| x == 1.5));
    }

    #[test]
    fn bad_shapes() {
        assert!(matches!(Shape::new(0, 1, 1, 1), Err(TensorError::ZeroDim(_))));
        assert!(matches!(
            Shape::new(usize::MAX, 2, 1, 1),
            Err(TensorError::Allocation(_))
        ));
        assert!(matches!(
            Shape::new(1 << 20, 1 << 20, 1 << 20, 1),
            Err(TensorError::Allocation(_))
        ));
    }

    #[test]
    fn offsets() {
        let s = Shape::new(1, 1, 1, 1).unwrap();
        assert_eq!(s.offset(0, 0, 0, 0).unwrap(), 0);
        let s = Shape::new(2, 3, 4, 5).unwrap();
        assert_eq!(s.offset(1, 2, 3, 4).unwrap(), 119);
        assert_eq!(s.offset(0, 0, 0, 4).unwrap(), 4);
        assert!(matches!(s.offset(0, 3, 0, 0), Err(TensorError::OutOfBounds { .. })));
        assert!(s.offset(2, 0, 0, 0).is_err());
        assert!(s.unravel(120).is_err());
    }

    #[test]
    fn offset_is_bijective() {
        let s = Shape::new(2, 3, 4, 5).unwrap();
        let mut seen = vec![false; s.element_count()];
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..4 {
                    for w in 0..5 {
                        let i = s.offset(n, c, h, w).unwrap();
                        assert!(!seen[i]);
                        seen[i] = true;
                    }
                }
            }
        }
        assert!(seen.into_iter().all(|x| x));
    }

    #[test]
    fn length_mismatch() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        assert!(Tensor::<f32>::from_vec(s, vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::from_vec(s, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.get(0, 0, 1, 0).unwrap(), 3.0);
        assert!(t.reshape(Shape::new(1, 4, 1, 1).unwrap()).is_ok());
    }

    proptest! {
        #[test]
        fn offset_round_trip(n in 1usize..5, c in 1usize..6, h in 1usize..7, w in 1usize..8, seed in any::<u64>()) {
            let s = Shape::new(n, c, h, w).unwrap();
            let flat = (seed as usize) % s.element_count();
            let [a, b, y, x] = s.unravel(flat).unwrap();
            prop_assert_eq!(s.offset(a, b, y, x).unwrap(), flat);
        }
    }
}
