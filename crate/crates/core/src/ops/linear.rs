use super::{LayerGrads, OpError};
use crate::tensor::{Real, Shape, Tensor};

fn check<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias_len: usize) -> Result<(), OpError> {
    let (is, ws) = (input.shape(), weights.shape());
    if is.h != 1 || is.w != 1 || ws.h != 1 || ws.w != 1 {
        return Err(OpError::Shape(format!(
            "fully connected layer needs 1x1 spatial dims, got input {is} weights {ws}"
        )));
    }
    if is.c != ws.c {
        return Err(OpError::Shape(format!(
            "fully connected input width {} != weight width {}",
            is.c, ws.c
        )));
    }
    if bias_len != ws.n {
        return Err(OpError::Shape(format!("bias length {bias_len} != outputs {}", ws.n)));
    }
    Ok(())
}

/// `out[n,k] = bias[k] + Σ_d in[n,d] · w[k,d]`.
pub fn fully_connected<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>, OpError> {
    check(input, weights, bias.len())?;
    let (n, d, k) = (input.shape().n, input.shape().c, weights.shape().n);
    let mut out = Vec::with_capacity(n * k);
    for row in input.data().chunks(d) {
        for (kk, wrow) in weights.data().chunks(d).enumerate() {
            let dot: f64 = row.iter().zip(wrow).map(|(a, b)| a.widen() * b.widen()).sum();
            out.push(T::cast(bias[kk].widen() + dot));
        }
    }
    Ok(Tensor::from_vec(Shape::new(n, k, 1, 1)?, out)?)
}

pub fn fully_connected_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    d_out: &Tensor<T>,
) -> Result<LayerGrads<T>, OpError> {
    check(input, weights, weights.shape().n)?;
    let (n, d, k) = (input.shape().n, input.shape().c, weights.shape().n);
    if d_out.shape() != Shape::new(n, k, 1, 1)? {
        return Err(OpError::Shape(format!("fully connected gradient {}", d_out.shape())));
    }
    let (x, w, g) = (input.data(), weights.data(), d_out.data());
    let mut dx = vec![0.0f64; n * d];
    let mut dw = vec![0.0f64; k * d];
    let mut db = vec![0.0f64; k];
    for nn in 0..n {
        for kk in 0..k {
            let gv = g[nn * k + kk].widen();
            if gv == 0.0 {
                continue;
            }
            db[kk] += gv;
            for dd in 0..d {
                dw[kk * d + dd] += gv * x[nn * d + dd].widen();
                dx[nn * d + dd] += gv * w[kk * d + dd].widen();
            }
        }
    }
    Ok(LayerGrads {
        d_input: Tensor::from_vec(input.shape(), dx.into_iter().map(T::cast).collect())?,
        d_weights: Some(Tensor::from_vec(weights.shape(), dw.into_iter().map(T::cast).collect())?),
        d_bias: Some(db.into_iter().map(T::cast).collect()),
    })
}
