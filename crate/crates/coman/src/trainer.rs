//! Deterministic minibatch training loop.
//!
//! Seeded shuffling, Adagrad updates, per-epoch loss traces, abort on
//! non-finite loss, and optional early stopping on the unbiased split's
//! binned divergence between predicted and empirical response curves.
//! Dropout applies only where models route it (context paths); the
//! monotone constraints are reparameterizations, so no projection step
//! exists or is needed here.

use crate::diffcore::{Adagrad, Dropout, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::simkit::dataset::LoggedDataset;
use crate::simkit::metrics::kl_divergence;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Predictions this close to 0 or 1 are clamped inside the log.
pub const PRED_CLAMP: f64 = 1e-12;
/// Value labels are scaled down by this factor inside the regression loss
/// so the two task losses have comparable magnitude.
pub const VALUE_SCALE: f64 = 25.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub cvr_loss_weight: f64,
    pub value_loss_weight: f64,
    pub dropout: f64,
    /// Early stopping patience on the unbiased-split divergence; None
    /// disables early stopping.
    pub early_stop_patience: Option<usize>,
    pub adagrad_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.001,
            epochs: 3,
            seed: 0,
            cvr_loss_weight: 1.0,
            value_loss_weight: 0.25,
            dropout: 0.3,
            early_stop_patience: Some(5),
            adagrad_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParam(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Number of predictions that hit the clamp inside the log loss.
    pub clamp_hits: usize,
    pub val_divergence: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<EpochStats>,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
}

/// Binary cross-entropy against 0/1 labels, with clamping at the domain
/// edges. Returns the loss node and how many predictions were clamped.
pub fn cross_entropy_loss(
    g: &mut Graph,
    pred: NodeId,
    labels: &[u8],
) -> Result<(NodeId, usize)> {
    let n = labels.len();
    if g.value(pred).len() != n {
        return Err(Error::WidthMismatch {
            what: "cross entropy labels",
            expected: g.value(pred).len(),
            got: n,
        });
    }
    let clamp_hits = g
        .value(pred)
        .data()
        .iter()
        .filter(|&&p| p <= PRED_CLAMP || p >= 1.0 - PRED_CLAMP)
        .count();
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let shape = g.value(pred).shape().to_vec();
    let yn = g.leaf(Tensor::new(shape, y)?);
    let p = g.clamp_unit(pred, PRED_CLAMP);
    let ln_p = g.log(p)?;
    let neg_p = g.scale(p, -1.0);
    let one_minus = g.add_scalar(neg_p, 1.0);
    let ln_q = g.log(one_minus)?;
    let pos_term = g.mul(yn, ln_p)?;
    let neg_y = g.scale(yn, -1.0);
    let one_minus_y = g.add_scalar(neg_y, 1.0);
    let neg_term = g.mul(one_minus_y, ln_q)?;
    let sum = g.add(pos_term, neg_term)?;
    let mean = g.mean_all(sum);
    Ok((g.scale(mean, -1.0), clamp_hits))
}

/// Mean squared error against scaled targets.
pub fn squared_error_loss(g: &mut Graph, pred: NodeId, targets: &[f64]) -> Result<NodeId> {
    let n = targets.len();
    if g.value(pred).len() != n {
        return Err(Error::WidthMismatch {
            what: "squared error targets",
            expected: g.value(pred).len(),
            got: n,
        });
    }
    let shape = g.value(pred).shape().to_vec();
    let t = g.leaf(Tensor::new(shape, targets.to_vec())?);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean_all(sq))
}

/// Divergence between the model's mean prediction per logged treatment and
/// the empirical conversion rate per logged treatment on a uniformly
/// treated split. Used as the early-stopping signal; needs no ground
/// truth.
pub fn unbiased_split_divergence(model: &Model, val: &LoggedDataset) -> Result<f64> {
    let preds = model.predict(&val.records)?;
    let grid = &model.meta().treatments;
    let mut pred_sum = vec![0.0f64; grid.len()];
    let mut label_sum = vec![0.0f64; grid.len()];
    let mut counts = vec![0usize; grid.len()];
    for (r, &p) in val.records.iter().zip(&preds) {
        if let Some(k) = grid.iter().position(|&t| t == r.treatment) {
            pred_sum[k] += p;
            label_sum[k] += r.label as f64;
            counts[k] += 1;
        }
    }
    let mut pred_curve = Vec::new();
    let mut emp_curve = Vec::new();
    for k in 0..grid.len() {
        if counts[k] > 0 {
            pred_curve.push(pred_sum[k] / counts[k] as f64);
            emp_curve.push(label_sum[k] / counts[k] as f64);
        }
    }
    if pred_curve.is_empty() {
        return Err(Error::InvalidParam(
            "validation split shares no treatments with the model grid".into(),
        ));
    }
    kl_divergence(&pred_curve, &emp_curve)
}

/// Train in place. The loss trace is per epoch; a non-finite loss aborts
/// with the offending epoch and step.
pub fn train(
    model: &mut Model,
    data: &LoggedDataset,
    val: Option<&LoggedDataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidParam("empty training dataset".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout = Dropout::new(cfg.dropout, cfg.seed.wrapping_add(0x9e37_79b9))?;
    let mut optimizer = Adagrad::new(cfg.learning_rate, cfg.adagrad_epsilon, model.store())?;
    let multi_task = model.is_multi_task();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;

    let mut indices: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        indices.shuffle(&mut shuffle_rng);
        dropout.set_active(true);
        let mut loss_sum = 0.0;
        let mut clamp_hits = 0usize;
        let mut steps = 0usize;
        for (step, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| data.records[i].clone()).collect();
            let mut g = Graph::new();
            let leaves = model.store().leaves(&mut g);
            let out = model.forward_batch(&mut g, &leaves, &batch, None, &mut dropout)?;
            let labels: Vec<u8> = batch.iter().map(|r| r.label).collect();
            let (ce, hits) = cross_entropy_loss(&mut g, out.cvr, &labels)?;
            clamp_hits += hits;
            let mut loss = g.scale(ce, cfg.cvr_loss_weight);
            if multi_task {
                if let Some(value_node) = out.value {
                    let targets: Vec<f64> =
                        batch.iter().map(|r| r.value / VALUE_SCALE).collect();
                    let se = squared_error_loss(&mut g, value_node, &targets)?;
                    let weighted = g.scale(se, cfg.value_loss_weight);
                    loss = g.add(loss, weighted)?;
                }
            }
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    detail: format!("loss = {loss_value} on batch of {}", batch.len()),
                });
            }
            loss_sum += loss_value;
            steps += 1;
            g.backward(loss)?;
            let grads = model.store().grads(&g, &leaves);
            optimizer.step(model.store_mut(), &grads)?;
        }
        dropout.set_active(false);

        let val_divergence = match (val, cfg.early_stop_patience) {
            (Some(v), Some(_)) => Some(unbiased_split_divergence(model, v)?),
            _ => None,
        };
        trace.push(EpochStats {
            epoch,
            mean_loss: loss_sum / steps.max(1) as f64,
            clamp_hits,
            val_divergence,
        });

        if let (Some(kl), Some(patience)) = (val_divergence, cfg.early_stop_patience) {
            let improved = best.as_ref().is_none_or(|(b, _, _)| kl < *b);
            if improved {
                let snapshot = model
                    .store()
                    .ids()
                    .map(|id| model.store().get(id).clone())
                    .collect();
                best = Some((kl, epoch, snapshot));
                bad_epochs = 0;
            } else {
                bad_epochs += 1;
                if bad_epochs >= patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let best_epoch = if let Some((_, epoch, snapshot)) = best {
        for (id, tensor) in model.store().ids().zip(snapshot).collect::<Vec<_>>() {
            model.store_mut().set(id, tensor);
        }
        Some(epoch)
    } else {
        None
    };

    Ok(TrainOutcome {
        trace,
        stopped_early,
        best_epoch,
    })
}

/// Write the loss trace as CSV.
pub fn write_trace(outcome: &TrainOutcome, path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    writeln!(f, "epoch,mean_loss,clamp_hits,val_divergence")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for s in &outcome.trace {
        let v = s
            .val_divergence
            .map(|x| x.to_string())
            .unwrap_or_default();
        writeln!(f, "{},{},{},{}", s.epoch, s.mean_loss, s.clamp_hits, v)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}
