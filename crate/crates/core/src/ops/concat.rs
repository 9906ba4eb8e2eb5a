use super::OpError;
use crate::tensor::{Real, Shape, Tensor};

/// Stacks inputs along the channel axis in argument order.
pub fn concat_channels<T: Real>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>, OpError> {
    let first = inputs
        .first()
        .ok_or_else(|| OpError::Shape("concat of zero tensors".into()))?
        .shape();
    for t in inputs {
        let s = t.shape();
        if s.n != first.n || s.h != first.h || s.w != first.w {
            return Err(OpError::Shape(format!("cannot concat {s} with {first}")));
        }
    }
    let channels: usize = inputs.iter().map(|t| t.shape().c).sum();
    let out_shape = Shape::new(first.n, channels, first.h, first.w)?;
    let mut out = Vec::with_capacity(out_shape.element_count());
    for n in 0..first.n {
        for t in inputs {
            out.extend_from_slice(t.item(n));
        }
    }
    Ok(Tensor::from_vec(out_shape, out)?)
}

/// Splits an upstream gradient back into per-input pieces of `channels` each.
pub fn concat_backward<T: Real>(d_out: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>, OpError> {
    let s = d_out.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(OpError::Shape(format!(
            "channel split {channels:?} does not cover {s}"
        )));
    }
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&c| Vec::with_capacity(s.n * c * s.plane()))
        .collect();
    for n in 0..s.n {
        let mut rest = d_out.item(n);
        for (part, &c) in parts.iter_mut().zip(channels) {
            let (head, tail) = rest.split_at(c * s.plane());
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Ok(Tensor::from_vec(Shape::new(s.n, c, s.h, s.w)?, data)?))
        .collect()
}
