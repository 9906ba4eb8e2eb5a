//! 2-D convolution: a direct loop kernel and an im2col + GEMM kernel.
//!
//! The direct kernel is the reference; the im2col kernel is what the network
//! runs. Both accumulate in `f64`, so they agree to the last rounding of the
//! stored result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use super::{LayerGrads, OpError};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvParams {
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvParams {
    pub fn square(out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvParams { out_channels, kernel_h: kernel, kernel_w: kernel, stride, pad }
    }

    pub fn validate(&self) -> Result<(), OpError> {
        if self.out_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(OpError::Param(format!("degenerate convolution {self:?}")));
        }
        if self.stride == 0 {
            return Err(OpError::Param("convolution stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Output shape for an input of `input` shape.
    pub fn output_shape(&self, input: Shape) -> Result<Shape, OpError> {
        self.validate()?;
        let oh = conv_output_dim(input.h, self.kernel_h, self.stride, self.pad)?;
        let ow = conv_output_dim(input.w, self.kernel_w, self.stride, self.pad)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow)?)
    }
}

/// Which convolution kernel a layer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvAlgo {
    Naive,
    #[default]
    Im2col,
}

/// `floor((size + 2·pad − kernel) / stride) + 1`.
pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, OpError> {
    let padded = size + 2 * pad;
    if padded < kernel {
        return Err(OpError::Shape(format!(
            "kernel {kernel} larger than padded input {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn check<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    p: &ConvParams,
) -> Result<Shape, OpError> {
    let ws = weights.shape();
    if ws.n != p.out_channels || ws.h != p.kernel_h || ws.w != p.kernel_w {
        return Err(OpError::Shape(format!(
            "weights {ws} do not match convolution {p:?}"
        )));
    }
    if ws.c != input.shape().c {
        return Err(OpError::Shape(format!(
            "weights expect {} input channels, input {} has {}",
            ws.c,
            input.shape(),
            input.shape().c
        )));
    }
    if bias.len() != p.out_channels {
        return Err(OpError::Shape(format!(
            "bias length {} != out channels {}",
            bias.len(),
            p.out_channels
        )));
    }
    p.output_shape(input.shape())
}

/// Direct convolution: one loop per output coordinate and one per tap.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    p: &ConvParams,
) -> Result<Tensor<T>, OpError> {
    let os = check(input, weights, bias, p)?;
    let is = input.shape();
    let (x, w) = (input.data(), weights.data());
    let pad = p.pad as isize;
    let mut out = Vec::with_capacity(os.element_count());
    for n in 0..is.n {
        for k in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = bias[k].widen();
                    for c in 0..is.c {
                        for i in 0..p.kernel_h {
                            let iy = (oy * p.stride + i) as isize - pad;
                            if iy < 0 || iy >= is.h as isize {
                                continue;
                            }
                            for j in 0..p.kernel_w {
                                let ix = (ox * p.stride + j) as isize - pad;
                                if ix < 0 || ix >= is.w as isize {
                                    continue;
                                }
                                let xv = x[((n * is.c + c) * is.h + iy as usize) * is.w + ix as usize];
                                let wv = w[((k * is.c + c) * p.kernel_h + i) * p.kernel_w + j];
                                acc += xv.widen() * wv.widen();
                            }
                        }
                    }
                    out.push(T::cast(acc));
                }
            }
        }
    }
    Ok(Tensor::from_vec(os, out)?)
}

/// Reference backward pass for [`conv2d`].
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_out: &Tensor<T>,
    p: &ConvParams,
) -> Result<LayerGrads<T>, OpError> {
    let bias = vec![T::zero(); p.out_channels];
    let os = check(input, weights, &bias, p)?;
    if d_out.shape() != os {
        return Err(OpError::Shape(format!(
            "upstream gradient {} != output {}",
            d_out.shape(),
            os
        )));
    }
    let is = input.shape();
    let (x, w, g) = (input.data(), weights.data(), d_out.data());
    let mut dx = vec![0.0f64; is.element_count()];
    let mut dw = vec![0.0f64; weights.len()];
    let mut db = vec![0.0f64; os.c];
    let pad = p.pad as isize;
    for n in 0..is.n {
        for k in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let gv = g[((n * os.c + k) * os.h + oy) * os.w + ox].widen();
                    db[k] += gv;
                    for c in 0..is.c {
                        for i in 0..p.kernel_h {
                            let iy = (oy * p.stride + i) as isize - pad;
                            if iy < 0 || iy >= is.h as isize {
                                continue;
                            }
                            for j in 0..p.kernel_w {
                                let ix = (ox * p.stride + j) as isize - pad;
                                if ix < 0 || ix >= is.w as isize {
                                    continue;
                                }
                                let xi = ((n * is.c + c) * is.h + iy as usize) * is.w + ix as usize;
                                let wi = ((k * is.c + c) * p.kernel_h + i) * p.kernel_w + j;
                                dw[wi] += gv * x[xi].widen();
                                dx[xi] += gv * w[wi].widen();
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::from_vec(is, dx.into_iter().map(T::cast).collect())?,
        d_weights: Some(Tensor::from_vec(weights.shape(), dw.into_iter().map(T::cast).collect())?),
        d_bias: Some(db.into_iter().map(T::cast).collect()),
    })
}

/// Patch-matrix geometry for one batch item.
struct Patches {
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    p: ConvParams,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.p.kernel_h * self.p.kernel_w
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unrolls one item into a `rows × cols` matrix; padding reads as zero.
    fn im2col<T: Real>(&self, item: &[T], col: &mut [f64]) {
        let (kh, kw, s) = (self.p.kernel_h, self.p.kernel_w, self.p.stride);
        let pad = self.p.pad as isize;
        let cols = self.cols();
        for c in 0..self.channels {
            let plane = &item[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = (c * kh + i) * kw + j;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + i) as isize - pad;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s + j) as isize - pad;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                0.0
                            } else {
                                src[ix as usize].widen()
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto the item layout.
    fn col2im(&self, col: &[f64], out: &mut [f64]) {
        let (kh, kw, s) = (self.p.kernel_h, self.p.kernel_w, self.p.stride);
        let pad = self.p.pad as isize;
        let cols = self.cols();
        for c in 0..self.channels {
            let plane = &mut out[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for i in 0..kh {
                for j in 0..kw {
                    let row = (c * kh + i) * kw + j;
                    let src = &col[row * cols..(row + 1) * cols];
                    for oy in 0..self.out_h {
                        let iy = (oy * s + i) as isize - pad;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let base = iy as usize * self.in_w;
                        for ox in 0..self.out_w {
                            let ix = (ox * s + j) as isize - pad;
                            if ix >= 0 && ix < self.in_w as isize {
                                plane[base + ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn patches(is: Shape, os: Shape, p: &ConvParams) -> Patches {
    Patches { channels: is.c, in_h: is.h, in_w: is.w, out_h: os.h, out_w: os.w, p: *p }
}

/// Convolution as one matrix product per batch item: `W[K × CRS] · cols[CRS × HW]`.
pub fn conv2d_im2col<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    p: &ConvParams,
) -> Result<Tensor<T>, OpError> {
    let os = check(input, weights, bias, p)?;
    let is = input.shape();
    let geo = patches(is, os, p);
    let (rows, cols) = (geo.rows(), geo.cols());
    let w: Vec<f64> = weights.data().iter().map(|v| v.widen()).collect();
    let mut out = Tensor::zeros(os);
    out.data_mut()
        .par_chunks_mut(os.item_len())
        .enumerate()
        .for_each(|(n, dst)| {
            let mut col = vec![0.0f64; rows * cols];
            geo.im2col(input.item(n), &mut col);
            let mut acc = vec![0.0f64; os.c * cols];
            for (k, chunk) in acc.chunks_mut(cols).enumerate() {
                chunk.fill(bias[k].widen());
            }
            gemm(Mat::new(&w, os.c, rows), Mat::new(&col, rows, cols), 1.0, &mut acc);
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = T::cast(a);
            }
        });
    Ok(out)
}

/// Backward pass for [`conv2d_im2col`].
///
/// Per-item weight gradients are summed in batch order, so the result does
/// not depend on the thread count.
pub fn conv2d_im2col_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_out: &Tensor<T>,
    p: &ConvParams,
) -> Result<LayerGrads<T>, OpError> {
    let bias = vec![T::zero(); p.out_channels];
    let os = check(input, weights, &bias, p)?;
    if d_out.shape() != os {
        return Err(OpError::Shape(format!(
            "upstream gradient {} != output {}",
            d_out.shape(),
            os
        )));
    }
    let is = input.shape();
    let geo = patches(is, os, p);
    let (rows, cols) = (geo.rows(), geo.cols());
    let w: Vec<f64> = weights.data().iter().map(|v| v.widen()).collect();

    let per_item: Vec<(Vec<f64>, Vec<f64>)> = (0..is.n)
        .into_par_iter()
        .map(|n| {
            let g: Vec<f64> = d_out.item(n).iter().map(|v| v.widen()).collect();
            let mut col = vec![0.0f64; rows * cols];
            geo.im2col(input.item(n), &mut col);
            let mut dw = vec![0.0f64; os.c * rows];
            gemm(Mat::new(&g, os.c, cols), Mat::new(&col, rows, cols).t(), 0.0, &mut dw);
            gemm(Mat::new(&w, os.c, rows).t(), Mat::new(&g, os.c, cols), 0.0, &mut col);
            let mut dx = vec![0.0f64; is.item_len()];
            geo.col2im(&col, &mut dx);
            (dw, dx)
        })
        .collect();

    let mut dw = vec![0.0f64; os.c * rows];
    let mut dx = Vec::with_capacity(is.element_count());
    for (item_dw, item_dx) in per_item {
        for (a, b) in dw.iter_mut().zip(item_dw) {
            *a += b;
        }
        dx.extend(item_dx.into_iter().map(T::cast));
    }
    let mut db = vec![0.0f64; os.c];
    for n in 0..is.n {
        for (k, plane) in d_out.item(n).chunks(cols).enumerate() {
            db[k] += plane.iter().map(|v| v.widen()).sum::<f64>();
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::from_vec(is, dx)?,
        d_weights: Some(Tensor::from_vec(weights.shape(), dw.into_iter().map(T::cast).collect())?),
        d_bias: Some(db.into_iter().map(T::cast).collect()),
    })
}

impl ConvAlgo {
    pub fn forward<T: Real>(
        self,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        bias: &[T],
        p: &ConvParams,
    ) -> Result<Tensor<T>, OpError> {
        match self {
            ConvAlgo::Naive => conv2d(input, weights, bias, p),
            ConvAlgo::Im2col => conv2d_im2col(input, weights, bias, p),
        }
    }

    pub fn backward<T: Real>(
        self,
        input: &Tensor<T>,
        weights: &Tensor<T>,
        d_out: &Tensor<T>,
        p: &ConvParams,
    ) -> Result<LayerGrads<T>, OpError> {
        match self {
            ConvAlgo::Naive => conv2d_backward(input, weights, d_out, p),
            ConvAlgo::Im2col => conv2d_im2col_backward(input, weights, d_out, p),
        }
    }
}
