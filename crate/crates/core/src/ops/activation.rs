use serde::{Deserialize, Serialize};

use super::OpError;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Training runs stochastic layers; inference bypasses them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the forward input was strictly positive.
pub fn relu_backward<T: Real>(input: &Tensor<T>, d_out: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    if input.shape() != d_out.shape() {
        return Err(OpError::Shape(format!(
            "relu gradient {} != input {}",
            d_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Ok(Tensor::from_vec(input.shape(), data)?)
}

/// Inverted dropout. In training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 − rate)`; the returned mask
/// holds that per-element multiplier. Inference is the identity.
pub fn dropout<T: Real>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut Rng,
) -> Result<(Tensor<T>, Vec<T>), OpError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(OpError::Param(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((input.clone(), vec![T::one(); input.len()]));
    }
    let keep = T::cast(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_vec(input.shape(), data)?, mask))
}

pub fn dropout_backward<T: Real>(d_out: &Tensor<T>, mask: &[T]) -> Result<Tensor<T>, OpError> {
    if mask.len() != d_out.len() {
        return Err(OpError::Shape("dropout mask does not match gradient".into()));
    }
    let data = d_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
    Ok(Tensor::from_vec(d_out.shape(), data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn relu_values() {
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 1).unwrap(), vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
        let pos = Tensor::from_vec(Shape::new(1, 2, 1, 1).unwrap(), vec![0.5f32, 3.0]).unwrap();
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f32>::full(Shape::new(1, 1, 4, 4).unwrap(), 2.0);
        let (y, mask) = dropout(&x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m == 1.0));
        let (y, _) = dropout(&x, 0.7, Mode::Infer, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(OpError::Param(_))));
    }

    #[test]
    fn inverted_dropout_is_unbiased() {
        let mut rng = Rng::new(2024);
        let x = Tensor::<f32>::full(Shape::new(1, 1, 1000, 1000).unwrap(), 1.0);
        let (y, mask) = dropout(&x, 0.7, Mode::Train, &mut rng).unwrap();
        let mean = y.sum_f64() / y.len() as f64;
        assert!((0.99..=1.01).contains(&mean), "mean {mean}");
        let dropped = mask.iter().filter(|&&m| m == 0.0).count() as f64 / mask.len() as f64;
        assert!((dropped - 0.7).abs() < 0.005);
    }
}
