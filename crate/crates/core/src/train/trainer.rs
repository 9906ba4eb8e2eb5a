use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{lr_at, TrainConfig};
use super::sgd::OptimizerState;
use super::TrainError;
use crate::data::BatchSource;
use crate::net::LayerGraph;
use crate::ops::Mode;
use crate::rng::Rng;

/// Stream id of the dropout generator forked from the run seed.
const DROPOUT_STREAM: u64 = 1;

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainSummary {
    /// Loss of every iteration, in order.
    pub losses: Vec<f64>,
    pub snapshots: Vec<PathBuf>,
}

impl TrainSummary {
    /// Mean loss over iterations `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let s = &self.losses[from.min(self.losses.len())..to.min(self.losses.len())];
        s.iter().sum::<f64>() / s.len().max(1) as f64
    }
}

/// Runs the training loop over `source`.
///
/// Every `log_every` iterations a JSON line `{"iter","lr","loss"}` goes to
/// `log`; every `snapshot_every` iterations a checkpoint is written to
/// `<snapshot_prefix>.iter<N>.dfck`. A non-finite logit, loss, gradient or
/// parameter aborts the run with the name of the first offending tensor.
pub struct Trainer<'a> {
    pub config: &'a TrainConfig,
    pub log: Option<&'a mut dyn Write>,
    pub snapshot_prefix: Option<&'a Path>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig) -> Self {
        Trainer { config, log: None, snapshot_prefix: None }
    }

    pub fn with_log(mut self, log: &'a mut dyn Write) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_snapshots(mut self, prefix: &'a Path) -> Self {
        self.snapshot_prefix = Some(prefix);
        self
    }

    pub fn run(
        &mut self,
        graph: &mut LayerGraph<f32>,
        state: &mut OptimizerState<f32>,
        source: &mut dyn BatchSource,
    ) -> Result<TrainSummary, TrainError> {
        let cfg = self.config;
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed).fork(DROPOUT_STREAM);
        let mut summary = TrainSummary::default();
        let classes = graph.classes();
        for it in 0..cfg.max_iterations {
            let batch = source.next_batch()?;
            if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
                return Err(TrainError::Config(format!("label {bad} outside the network's {classes} classes")));
            }
            let lr = lr_at(cfg, it);
            let logits = graph.forward(&batch.images, Mode::Train, &mut rng)?;
            if !logits.all_finite() {
                return Err(diverged(it, graph.first_non_finite().unwrap_or_else(|| "logits".into())));
            }
            let (loss, grads) = graph.backward_loss(&batch.labels)?;
            if !loss.is_finite() {
                return Err(diverged(it, "loss".into()));
            }
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(diverged(it, format!("gradient of {name}")));
            }
            state.step(graph, &grads, lr, cfg.momentum, cfg.weight_decay, |n| cfg.is_frozen(n))?;
            if let Some(name) = graph.first_non_finite() {
                return Err(diverged(it, name));
            }
            summary.losses.push(loss);
            let done = it + 1;
            if cfg.log_every > 0 && (done % cfg.log_every == 0 || done == cfg.max_iterations) {
                if let Some(log) = self.log.as_mut() {
                    let line = serde_json::to_string(&LogEntry { iter: it, lr, loss }).expect("log entry serializes");
                    writeln!(log, "{line}").map_err(|source| TrainError::Io { path: PathBuf::from("<log>"), source })?;
                }
            }
            if let Some(prefix) = self.snapshot_prefix {
                if cfg.snapshot_every > 0 && done % cfg.snapshot_every == 0 {
                    let path = snapshot_path(prefix, done);
                    Checkpoint::from_graph(graph).save(&path)?;
                    summary.snapshots.push(path);
                }
            }
        }
        Ok(summary)
    }
}

fn diverged(iteration: usize, tensor: String) -> TrainError {
    TrainError::Diverged { iteration, tensor }
}

pub fn snapshot_path(prefix: &Path, iteration: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!(".iter{iteration}.dfck"));
    PathBuf::from(s)
}

/// Trains `graph` with a fresh optimizer state.
pub fn train(
    graph: &mut LayerGraph<f32>,
    source: &mut dyn BatchSource,
    config: &TrainConfig,
) -> Result<TrainSummary, TrainError> {
    let mut state = OptimizerState::new(graph);
    Trainer::new(config).run(graph, &mut state, source)
}
