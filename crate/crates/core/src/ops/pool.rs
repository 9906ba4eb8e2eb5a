//! Max and average pooling.

use serde::{Deserialize, Serialize};

use super::OpError;
use crate::tensor::{Real, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Ceil,
    Floor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolParams {
    pub kind: PoolKind,
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub rounding: Rounding,
}

impl PoolParams {
    pub fn max(kernel: usize, stride: usize, pad: usize) -> Self {
        PoolParams { kind: PoolKind::Max, kernel, stride, pad, rounding: Rounding::Ceil }
    }

    pub fn avg(kernel: usize, stride: usize, pad: usize) -> Self {
        PoolParams { kind: PoolKind::Avg, kernel, stride, pad, rounding: Rounding::Ceil }
    }

    pub fn with_rounding(self, rounding: Rounding) -> Self {
        PoolParams { rounding, ..self }
    }

    pub fn validate(&self) -> Result<(), OpError> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(OpError::Param(format!("degenerate pooling {self:?}")));
        }
        if self.pad >= self.kernel {
            return Err(OpError::Param(format!(
                "pooling pad {} must be smaller than kernel {}",
                self.pad, self.kernel
            )));
        }
        Ok(())
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape, OpError> {
        self.validate()?;
        let oh = pool_output_dim(input.h, self)?;
        let ow = pool_output_dim(input.w, self)?;
        Ok(Shape::new(input.n, input.c, oh, ow)?)
    }
}

/// `rounding((size + 2·pad − kernel) / stride) + 1`.
///
/// Under ceil rounding the last window must start inside the input or its
/// leading pad; a window that would start in the trailing pad is dropped.
pub fn pool_output_dim(size: usize, p: &PoolParams) -> Result<usize, OpError> {
    let padded = size + 2 * p.pad;
    if padded < p.kernel {
        return Err(OpError::Shape(format!(
            "pool window {} does not fit padded input {padded}",
            p.kernel
        )));
    }
    let span = padded - p.kernel;
    let mut out = match p.rounding {
        Rounding::Floor => span / p.stride + 1,
        Rounding::Ceil => span.div_ceil(p.stride) + 1,
    };
    if p.rounding == Rounding::Ceil && (out - 1) * p.stride >= size + p.pad {
        out -= 1;
    }
    Ok(out)
}

/// Pools `input`. Max pooling also returns, per output cell, the flat input
/// index that won; ties go to the lowest index.
fn pool_impl<T: Real>(
    input: &Tensor<T>,
    p: &PoolParams,
) -> Result<(Tensor<T>, Vec<usize>), OpError> {
    let os = p.output_shape(input.shape())?;
    let is = input.shape();
    let x = input.data();
    let area = (p.kernel * p.kernel) as f64;
    let pad = p.pad as isize;
    let mut out = Vec::with_capacity(os.element_count());
    let mut argmax = Vec::new();
    if p.kind == PoolKind::Max {
        argmax.reserve(os.element_count());
    }
    for plane in 0..is.n * is.c {
        let base = plane * is.plane();
        for oy in 0..os.h {
            let y0 = (oy * p.stride) as isize - pad;
            let ys = y0.max(0) as usize..((y0 + p.kernel as isize).min(is.h as isize)).max(0) as usize;
            for ox in 0..os.w {
                let x0 = (ox * p.stride) as isize - pad;
                let xs = x0.max(0) as usize
                    ..((x0 + p.kernel as isize).min(is.w as isize)).max(0) as usize;
                if ys.is_empty() || xs.is_empty() {
                    return Err(OpError::Shape(format!(
                        "pool window at ({oy}, {ox}) covers no input cells"
                    )));
                }
                match p.kind {
                    PoolKind::Max => {
                        let mut best = base + ys.start * is.w + xs.start;
                        for y in ys.clone() {
                            for xx in xs.clone() {
                                let i = base + y * is.w + xx;
                                if x[i] > x[best] {
                                    best = i;
                                }
                            }
                        }
                        out.push(x[best]);
                        argmax.push(best);
                    }
                    PoolKind::Avg => {
                        let mut acc = 0.0f64;
                        for y in ys.clone() {
                            for xx in xs.clone() {
                                acc += x[base + y * is.w + xx].widen();
                            }
                        }
                        out.push(T::cast(acc / area));
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, argmax))
}

/// Pools `input`, returning the output and (for max pooling) the winning
/// input index of every output cell, which [`pool2d_backward`] needs.
pub fn pool2d<T: Real>(input: &Tensor<T>, p: &PoolParams) -> Result<(Tensor<T>, Vec<usize>), OpError> {
    pool_impl(input, p)
}

pub fn pool2d_backward<T: Real>(
    input_shape: Shape,
    d_out: &Tensor<T>,
    p: &PoolParams,
    argmax: &[usize],
) -> Result<Tensor<T>, OpError> {
    let os = p.output_shape(input_shape)?;
    if d_out.shape() != os {
        return Err(OpError::Shape(format!(
            "upstream gradient {} != pool output {}",
            d_out.shape(),
            os
        )));
    }
    let is = input_shape;
    let mut dx = vec![0.0f64; is.element_count()];
    let g = d_out.data();
    match p.kind {
        PoolKind::Max => {
            if argmax.len() != g.len() {
                return Err(OpError::Shape("argmax indices do not match output".into()));
            }
            for (&i, gv) in argmax.iter().zip(g) {
                dx[i] += gv.widen();
            }
        }
        PoolKind::Avg => {
            let area = (p.kernel * p.kernel) as f64;
            let pad = p.pad as isize;
            for plane in 0..is.n * is.c {
                let base = plane * is.plane();
                for oy in 0..os.h {
                    let y0 = (oy * p.stride) as isize - pad;
                    for ox in 0..os.w {
                        let x0 = (ox * p.stride) as isize - pad;
                        let share = g[(plane * os.h + oy) * os.w + ox].widen() / area;
                        for y in y0.max(0)..(y0 + p.kernel as isize).min(is.h as isize) {
                            for xx in x0.max(0)..(x0 + p.kernel as isize).min(is.w as isize) {
                                dx[base + y as usize * is.w + xx as usize] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(is, dx.into_iter().map(T::cast).collect())?)
}

/// Mean over each channel's full spatial plane; output is `N×C×1×1`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>, OpError> {
    let s = input.shape();
    let out = input
        .data()
        .chunks(s.plane())
        .map(|plane| T::cast(plane.iter().map(|v| v.widen()).sum::<f64>() / s.plane() as f64))
        .collect();
    Ok(Tensor::from_vec(Shape::new(s.n, s.c, 1, 1)?, out)?)
}

pub fn global_avg_pool_backward<T: Real>(
    input_shape: Shape,
    d_out: &Tensor<T>,
) -> Result<Tensor<T>, OpError> {
    let expect = Shape::new(input_shape.n, input_shape.c, 1, 1)?;
    if d_out.shape() != expect {
        return Err(OpError::Shape(format!(
            "upstream gradient {} != {expect}",
            d_out.shape()
        )));
    }
    let area = input_shape.plane() as f64;
    let mut dx = Vec::with_capacity(input_shape.element_count());
    for g in d_out.data() {
        let v = T::cast(g.widen() / area);
        dx.extend(std::iter::repeat(v).take(input_shape.plane()));
    }
    Ok(Tensor::from_vec(input_shape, dx)?)
}
