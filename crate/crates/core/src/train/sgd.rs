use indexmap::IndexMap;

use super::TrainError;
use crate::net::{Gradients, LayerGraph};
use crate::tensor::{Real, Tensor};

/// One momentum step on a single tensor, computed in `f64`:
/// `g' = g + wd·w`, `v ← m·v + lr·g'`, `w ← w − v`.
pub fn sgd_momentum_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(TrainError::Shape(format!(
            "parameter {}, gradient {}, velocity {}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    for ((w, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        let g = g.widen() + weight_decay * w.widen();
        let nv = momentum * v.widen() + lr * g;
        *v = T::cast(nv);
        *w = T::cast(w.widen() - nv);
    }
    Ok(())
}

/// Per-parameter velocities plus the count of completed steps.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real = f32> {
    pub velocity: IndexMap<String, Tensor<T>>,
    pub iteration: usize,
}

impl<T: Real> OptimizerState<T> {
    /// Zero velocities mirroring every parameter of `graph`.
    pub fn new(graph: &LayerGraph<T>) -> Self {
        OptimizerState {
            velocity: graph.params().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect(),
            iteration: 0,
        }
    }

    /// Applies one step to every parameter with a gradient, skipping those
    /// for which `frozen` returns true.
    pub fn step(
        &mut self,
        graph: &mut LayerGraph<T>,
        grads: &Gradients<T>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        frozen: impl Fn(&str) -> bool,
    ) -> Result<(), TrainError> {
        for (name, grad) in grads {
            if frozen(name) {
                continue;
            }
            let velocity = self
                .velocity
                .get_mut(name)
                .ok_or_else(|| TrainError::Shape(format!("no velocity for parameter {name}")))?;
            let param = graph
                .param_mut(name)
                .ok_or_else(|| TrainError::Shape(format!("gradient for unknown parameter {name}")))?;
            sgd_momentum_step(param, grad, velocity, lr, momentum, weight_decay)
                .map_err(|e| TrainError::Shape(format!("{name}: {e}")))?;
        }
        self.iteration += 1;
        Ok(())
    }
}
