//! Mini-batch training loop shared by every model.
//!
//! Each utterance gets its own graph; per-utterance gradients are summed in
//! a fixed order and divided by the batch's total weight (token count), so a
//! run is a pure function of the seed.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, AdamConfig, AdamState, AutodiffError, Gradients, ParamStore};
use crate::conditioning::ConditioningError;
use crate::corpus::CorpusError;
use crate::rng::{streams, SeedTree};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Conditioning(#[from] ConditioningError),
    #[error("training diverged at epoch {epoch}: loss {loss} exceeds {factor} x |initial loss {initial}|")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },
    #[error("non-finite value in flow step {step}")]
    NonFiniteStep { step: usize },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Abort once a loss exceeds this multiple of the initial dev loss magnitude.
    pub divergence_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-3,
            seed: 0,
            clip_norm: 5.0,
            divergence_factor: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_dev_loss: f64,
    pub curve: Vec<EpochRecord>,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub best_dev_loss: f64,
}

/// One utterance's contribution to a batch.
pub struct Contribution {
    pub grads: Gradients,
    /// Summed (not averaged) loss.
    pub loss: f64,
    /// Number of scored items behind `loss`.
    pub weight: f64,
}

/// Runs Adam over `n_train` items and keeps the parameters with the best dev loss.
///
/// `contribution(store, item, epoch)` builds one item's graph and returns its
/// gradients; `dev_loss(store)` returns the mean dev loss.
pub fn fit<C, D>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    n_train: usize,
    mut contribution: C,
    mut dev_loss: D,
) -> Result<TrainReport, ModelError>
where
    C: FnMut(&ParamStore, usize, usize) -> Result<Contribution, ModelError>,
    D: FnMut(&ParamStore) -> Result<f64, ModelError>,
{
    if n_train == 0 {
        return Err(ModelError::EmptySplit("train"));
    }
    let initial = dev_loss(store)?;
    if !initial.is_finite() {
        return Err(ModelError::Diverged {
            epoch: 0,
            loss: initial,
            initial,
            factor: cfg.divergence_factor,
        });
    }
    let limit = initial.abs() * cfg.divergence_factor;
    let diverged = |epoch: usize, loss: f64| ModelError::Diverged {
        epoch,
        loss,
        initial,
        factor: cfg.divergence_factor,
    };
    let mut adam = AdamState::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
        store,
    );
    let shuffle = SeedTree::new(cfg.seed).fork(streams::SHUFFLE);
    let mut best = (0usize, initial, store.snapshot());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch_size.max(1);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut shuffle.fork_index(epoch as u64).rng());
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        for chunk in order.chunks(batch) {
            let mut parts = Vec::with_capacity(chunk.len());
            for &item in chunk {
                match contribution(store, item, epoch) {
                    Ok(c) => parts.push(c),
                    Err(ModelError::Autodiff(AutodiffError::NonFinite { .. })) | Err(ModelError::NonFiniteStep { .. }) => {
                        return Err(diverged(epoch, f64::NAN))
                    }
                    Err(e) => return Err(e),
                }
            }
            let w: f64 = parts.iter().map(|c| c.weight).sum();
            if w <= 0.0 {
                continue;
            }
            store.zero_grad();
            for c in &parts {
                store.accumulate(&c.grads, 1.0 / w)?;
                loss_sum += c.loss;
            }
            weight_sum += w;
            let norm = store.grad_norm();
            if !norm.is_finite() {
                return Err(diverged(epoch, f64::NAN));
            }
            if cfg.clip_norm > 0.0 && norm > cfg.clip_norm {
                store.scale_grads(cfg.clip_norm / norm);
            }
            adam.step(store)?;
        }
        let train_loss = loss_sum / weight_sum.max(1.0);
        if !train_loss.is_finite() || train_loss > limit {
            return Err(diverged(epoch, train_loss));
        }
        let dev = match dev_loss(store) {
            Ok(v) => v,
            Err(ModelError::Autodiff(AutodiffError::NonFinite { .. })) | Err(ModelError::NonFiniteStep { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !dev.is_finite() || dev > limit {
            return Err(diverged(epoch, dev));
        }
        curve.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss: dev,
        });
        if dev < best.1 {
            best = (epoch, dev, store.snapshot());
        }
    }
    store.restore(&best.2)?;
    Ok(TrainReport {
        initial_dev_loss: initial,
        curve,
        best_epoch: best.0,
        best_dev_loss: best.1,
    })
}

/// Writes `<stem>.params` (text checkpoint) and `<stem>.json` (metadata) into `dir`.
pub fn save_model<M: Serialize>(dir: &Path, stem: &str, store: &ParamStore, meta: &M) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir)?;
    checkpoint::save_params(store, &dir.join(format!("{stem}.params")))?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| ModelError::Metadata(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), text)?;
    Ok(())
}

/// Reads the metadata written by [`save_model`].
pub fn load_meta<M: DeserializeOwned>(dir: &Path, stem: &str) -> Result<M, ModelError> {
    let path = dir.join(format!("{stem}.json"));
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| ModelError::Metadata(format!("{}: {e}", path.display())))
}

/// Overwrites the values in `store` with the checkpoint written by [`save_model`].
pub fn load_params_into(dir: &Path, stem: &str, store: &mut ParamStore) -> Result<(), ModelError> {
    let loaded = checkpoint::load_params(&dir.join(format!("{stem}.params")))?;
    checkpoint::restore_into(store, &loaded)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    // Least squares on y = 3x: items are single points.
    fn run(cfg: &TrainConfig) -> (TrainReport, f64) {
        let xs: Vec<f64> = (0..32).map(|i| i as f64 / 8.0 - 2.0).collect();
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![0.0])).unwrap();
        let loss_of = |store: &ParamStore, x: f64| -> Result<(Graph, crate::Var), ModelError> {
            let mut g = Graph::new();
            let p = g.param(store, w);
            let xv = g.constant(Tensor::vector(vec![x]));
            let pred = g.mul(p, xv)?;
            let t = g.constant(Tensor::vector(vec![3.0 * x]));
            let d = g.sub(pred, t)?;
            let sq = g.mul(d, d)?;
            let l = g.sum(sq)?;
            Ok((g, l))
        };
        let report = fit(
            &mut store,
            cfg,
            xs.len(),
            |s, i, _| {
                let (g, l) = loss_of(s, xs[i])?;
                let loss = g.value(l).item().unwrap();
                Ok(Contribution {
                    grads: g.backward(l)?,
                    loss,
                    weight: 1.0,
                })
            },
            |s| {
                let mut tot = 0.0;
                for &x in &xs {
                    let (g, l) = loss_of(s, x)?;
                    tot += g.value(l).item().unwrap();
                }
                Ok(tot / xs.len() as f64)
            },
        )
        .unwrap();
        let wv = store.value(w).data()[0];
        (report, wv)
    }

    #[test]
    fn converges_and_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 4,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let (a, wa) = run(&cfg);
        let (b, wb) = run(&cfg);
        assert_eq!(a, b);
        assert_eq!(wa.to_bits(), wb.to_bits());
        assert!((wa - 3.0).abs() < 0.05, "w = {wa}");
        assert!(a.best_dev_loss < a.initial_dev_loss * 1e-2);
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            learning_rate: 1e3,
            clip_norm: 0.0,
            ..TrainConfig::default()
        };
        let xs = [1.0, -1.0];
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::vector(vec![2.9])).unwrap();
        let err = fit(
            &mut store,
            &cfg,
            2,
            |s, i, _| {
                let mut g = Graph::new();
                let p = g.param(s, w);
                let xv = g.constant(Tensor::vector(vec![xs[i]]));
                let pred = g.mul(p, xv)?;
                let t = g.constant(Tensor::vector(vec![3.0 * xs[i]]));
                let d = g.sub(pred, t)?;
                let sq = g.mul(d, d)?;
                let l = g.sum(sq)?;
                let loss = g.value(l).item().unwrap();
                Ok(Contribution {
                    grads: g.backward(l)?,
                    loss,
                    weight: 1.0,
                })
            },
            |s| Ok((s.value(w).data()[0] - 3.0).powi(2)),
        )
        .unwrap_err();
        assert!(matches!(err, ModelError::Diverged { .. }), "{err}");
    }
}
