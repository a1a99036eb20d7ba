//! Full-batch training loop over one or more labelled graphs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{score, MetricsReport};
use super::optim::{AdamParams, Optimizer, OptimizerKind};
use super::{mse_loss_masked, Network};
use crate::drelu::{DreluConfig, DreluMode};
use crate::error::ModelError;
use crate::graph::HeteroGraph;
use crate::SCHEMA_VERSION;

/// Hyperparameters for [`train`] and [`train_multi`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Learning rate; zero is allowed and freezes the parameters, which is
    /// occasionally useful to measure the untrained baseline.
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    /// Keep width of the input layer, both node types.
    pub k_in: usize,
    /// Keep width of the hidden layer, both node types.
    pub k_hidden: usize,
    pub mode: DreluMode,
    pub optimizer: OptimizerKind,
    pub adam: AdamParams,
    pub seed: u64,
    /// Fraction of cells per graph held out of the loss and used for
    /// scoring; zero scores on the training cells.
    pub holdout_fraction: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 2e-4,
            weight_decay: 0.0,
            hidden: 64,
            k_in: 16,
            k_hidden: 16,
            mode: DreluMode::Literal,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            seed: 0,
            holdout_fraction: 0.0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.hidden == 0 || self.workers == 0 {
            return Err(ModelError::BadConfig(
                "epochs, hidden and workers must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(ModelError::BadConfig(format!(
                "holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ModelError::BadConfig(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Which cells the final metrics were computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSet {
    Train,
    Holdout,
}

/// Result of one training run.
pub struct TrainOutcome {
    /// Mean training loss per epoch, averaged over graphs.
    pub losses: Vec<f64>,
    pub eval_set: EvalSet,
    pub per_graph: Vec<MetricsReport>,
    /// Field-wise mean of `per_graph`.
    pub metrics: MetricsReport,
    pub network: Network,
}

fn slot_sizes(net: &Network) -> Vec<usize> {
    net.layers
        .iter()
        .flat_map(|l| {
            let d = l.dims();
            [
                d.d_cell_in * d.d_out,
                d.d_net_in * d.d_out,
                d.d_cell_in * d.d_out,
                d.d_out,
                d.d_out,
                d.d_out,
            ]
        })
        .collect()
}

fn mean_reports(reports: &[MetricsReport]) -> MetricsReport {
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    MetricsReport {
        schema_version: SCHEMA_VERSION,
        n: reports.iter().map(|r| r.n).sum(),
        pearson: avg(|r| r.pearson),
        spearman: avg(|r| r.spearman),
        kendall_tau: avg(|r| r.kendall_tau),
        mae: avg(|r| r.mae),
        rmse: avg(|r| r.rmse),
        degenerate: reports.iter().any(|r| r.degenerate),
    }
}

/// Per-graph boolean masks: `true` marks a training cell.
fn split_masks(
    gs: &[&HeteroGraph],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<bool>>, ModelError> {
    let mut masks = Vec::with_capacity(gs.len());
    for g in gs {
        let n = g.n_cell();
        let held = (fraction * n as f64).floor() as usize;
        if held >= n {
            return Err(ModelError::BadConfig(format!(
                "holdout would leave no training cells on a graph with {n} cells"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut mask = vec![true; n];
        for &i in &idx[..held] {
            mask[i] = false;
        }
        masks.push(mask);
    }
    Ok(masks)
}

/// Trains one network jointly on several graphs; one optimizer step per
/// graph per epoch. All graphs must share feature widths. Deterministic for
/// a fixed config: the same seed yields bit-identical parameters and losses
/// at any worker count.
pub fn train_multi(gs: &[&HeteroGraph], cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    cfg.check()?;
    let first = *gs.first().ok_or_else(|| {
        ModelError::BadConfig("need at least one graph to train on".into())
    })?;
    for g in gs {
        if g.labels().is_none() {
            return Err(ModelError::MissingLabels);
        }
        if g.d_cell() != first.d_cell() || g.d_net() != first.d_net() {
            return Err(ModelError::BadConfig(
                "all graphs must share feature widths".into(),
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut network = Network::new(
        first.d_cell(),
        first.d_net(),
        cfg.hidden,
        DreluConfig {
            k_cell: cfg.k_in,
            k_net: cfg.k_in,
            mode: cfg.mode,
        },
        DreluConfig {
            k_cell: cfg.k_hidden,
            k_net: cfg.k_hidden,
            mode: cfg.mode,
        },
        &mut rng,
    )?;
    let masks = split_masks(gs, cfg.holdout_fraction, &mut rng)?;
    let mut opt = Optimizer::new(
        cfg.optimizer,
        cfg.adam,
        cfg.lr,
        cfg.weight_decay,
        &slot_sizes(&network),
    )?;

    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (&g, mask) in gs.iter().zip(&masks) {
            let eval = network.forward(g, cfg.workers)?;
            let labels = g.labels().expect("checked above");
            let (loss, d_pred) = mse_loss_masked(&eval.prediction, labels, mask)?;
            epoch_loss += loss;
            let back = network.backward(g, &eval, &d_pred, cfg.workers)?;
            let grads: Vec<&[f64]> = back.layer_grads.iter().flat_map(|lg| lg.params()).collect();
            let mut params: Vec<&mut [f64]> = network
                .layers
                .iter_mut()
                .flat_map(|l| l.params_mut())
                .collect();
            opt.step(&mut params, &grads)?;
        }
        losses.push(epoch_loss / gs.len() as f64);
    }

    let scoring_on_holdout = masks.iter().any(|m| m.iter().any(|&t| !t));
    let mut per_graph = Vec::with_capacity(gs.len());
    for (&g, mask) in gs.iter().zip(&masks) {
        let eval = network.forward(g, cfg.workers)?;
        let labels = g.labels().expect("checked above");
        let keep = |&(i, _): &(usize, &f64)| {
            if scoring_on_holdout {
                !mask[i]
            } else {
                true
            }
        };
        let pred: Vec<f64> = eval
            .prediction
            .iter()
            .enumerate()
            .filter(keep)
            .map(|(_, &v)| v)
            .collect();
        let lab: Vec<f64> = labels.iter().enumerate().filter(keep).map(|(_, &v)| v).collect();
        per_graph.push(score(&pred, &lab)?);
    }

    Ok(TrainOutcome {
        losses,
        eval_set: if scoring_on_holdout {
            EvalSet::Holdout
        } else {
            EvalSet::Train
        },
        metrics: mean_reports(&per_graph),
        per_graph,
        network,
    })
}

/// Single-graph convenience wrapper over [`train_multi`].
pub fn train(g: &HeteroGraph, cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    train_multi(&[g], cfg)
}
