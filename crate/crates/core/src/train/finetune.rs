use std::path::Path;

use super::checkpoint::Checkpoint;
use super::TrainError;
use crate::net::{Init, LayerGraph, CLASSIFIER};

/// Names of the parameters replaced on fine-tuning: the final classifier.
pub fn head_param_names(graph: &LayerGraph<f32>) -> Vec<String> {
    graph.topology().params_of(CLASSIFIER)
}

/// Copies every non-head tensor of `ckpt` into `graph` bitwise and redraws
/// the head from `seed`.
///
/// `graph` must share the checkpoint's body; only the class count may
/// differ. Fails listing every non-head tensor that is missing or has a
/// different shape.
pub fn finetune_into(ckpt: &Checkpoint, graph: &mut LayerGraph<f32>, seed: u64) -> Result<(), TrainError> {
    let src = ckpt.spec()?;
    if !src.same_body(graph.spec()) {
        return Err(TrainError::Config("checkpoint network differs from the target beyond the class count".into()));
    }
    let head = head_param_names(graph);
    let mut problems = Vec::new();
    for name in graph.param_names().filter(|n| !head.iter().any(|h| h == n)) {
        match ckpt.tensors.get(name) {
            None => problems.push(format!("{name} (missing)")),
            Some(t) if t.shape() != graph.param(name).expect("listed param").shape() => {
                problems.push(format!("{name} ({} in file, {} in network)", t.shape(), graph.param(name).unwrap().shape()))
            }
            Some(_) => {}
        }
    }
    if !problems.is_empty() {
        return Err(TrainError::Mismatch(problems));
    }
    let body: Vec<String> = graph.param_names().filter(|n| !head.contains(&n.to_string())).map(String::from).collect();
    for name in body {
        graph.set_param(&name, ckpt.tensors[&name].clone())?;
    }
    graph.reinit_params(&head, seed)?;
    Ok(())
}

/// Loads `path` and rebuilds its network with a `new_classes`-way head.
/// Input means carry over; class names are kept only when the count matches.
pub fn finetune_load(path: &Path, new_classes: usize, seed: u64) -> Result<LayerGraph<f32>, TrainError> {
    let ckpt = Checkpoint::load(path)?;
    let mut spec = ckpt.spec()?;
    if spec.classes != new_classes {
        spec.class_names.clear();
    }
    let mut graph = LayerGraph::new(spec.with_classes(new_classes), Init::Zeros)?;
    finetune_into(&ckpt, &mut graph, seed)?;
    Ok(graph)
}
