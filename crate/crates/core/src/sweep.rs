//! Temperature and rate-control sweeps over a trained flow.
//!
//! Every point of a sweep samples the same utterances with the same seed, so
//! differences between points come from the swept knob alone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::conditioning::RateOverrides;
use crate::corpus::{Corpus, CorpusError, Utterance};
use crate::flow::CauliflowModel;
use crate::metrics::{self, MetricError, MetricReport};
use crate::train::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("sweep needs at least one value")]
    NoValues,
}

/// Which rate condition a sweep overrides.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateControl {
    /// Speech rate, words per second.
    Rs,
    /// Pause rate, words per pause.
    Rp,
}

impl RateControl {
    pub fn overrides(self, value: f64) -> RateOverrides {
        match self {
            RateControl::Rs => RateOverrides {
                rs: Some(value),
                rp: None,
            },
            RateControl::Rp => RateOverrides {
                rs: None,
                rp: Some(value),
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RateControl::Rs => "rs",
            RateControl::Rp => "rp",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperaturePoint {
    pub temperature: f64,
    pub report: MetricReport,
}

/// One [`MetricReport`] per temperature against the corpus durations.
pub fn temperature_sweep(
    model: &CauliflowModel,
    corpus: &Corpus,
    indices: &[usize],
    temperatures: &[f64],
    seed: u64,
    percentile: f64,
) -> Result<Vec<TemperaturePoint>, SweepError> {
    if temperatures.is_empty() {
        return Err(SweepError::NoValues);
    }
    let target: Vec<Utterance> = corpus.select(indices).cloned().collect();
    temperatures
        .iter()
        .map(|&t| {
            let pred = model.predict(corpus, indices, t, RateOverrides::default(), seed)?;
            let report = metrics::evaluate(&pred, &target, model.config.pause_threshold, percentile)?;
            Ok(TemperaturePoint {
                temperature: t,
                report,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub requested: f64,
    /// Rate of the samples at this value minus the rate at value 0, in the
    /// control's own unit.
    pub measured: f64,
    pub speech_rate: f64,
    /// Words per pause; infinite when nothing paused.
    pub pause_rate: f64,
    pub pauses: usize,
}

fn measured_rate(control: RateControl, utts: &[Utterance], threshold: f64) -> Result<f64, MetricError> {
    match control {
        RateControl::Rs => metrics::speech_rate(utts),
        RateControl::Rp => match metrics::pause_rate(utts, threshold) {
            Err(MetricError::Corpus(CorpusError::NoPauses)) => Ok(f64::INFINITY),
            other => other,
        },
    }
}

/// Samples at each requested value of one rate control; the other stays at 0.
pub fn rate_sweep(
    model: &CauliflowModel,
    corpus: &Corpus,
    indices: &[usize],
    control: RateControl,
    values: &[f64],
    temperature: f64,
    seed: u64,
) -> Result<Vec<RatePoint>, SweepError> {
    if values.is_empty() {
        return Err(SweepError::NoValues);
    }
    let thr = model.config.pause_threshold;
    let base = model.predict(corpus, indices, temperature, control.overrides(0.0), seed)?;
    let base_rate = measured_rate(control, &base, thr)?;
    values
        .iter()
        .map(|&v| {
            let pred = model.predict(corpus, indices, temperature, control.overrides(v), seed)?;
            Ok(RatePoint {
                requested: v,
                measured: measured_rate(control, &pred, thr)? - base_rate,
                speech_rate: metrics::speech_rate(&pred)?,
                pause_rate: measured_rate(RateControl::Rp, &pred, thr)?,
                pauses: pred.iter().map(|u| u.pause_count(thr)).sum(),
            })
        })
        .collect()
}

/// Pause positions per utterance (outer) at each rp value (inner).
pub fn pause_sets_over_rp(
    model: &CauliflowModel,
    corpus: &Corpus,
    indices: &[usize],
    rp_values: &[f64],
    temperature: f64,
    seed: u64,
) -> Result<Vec<Vec<BTreeSet<usize>>>, SweepError> {
    let thr = model.config.pause_threshold;
    let mut out = vec![Vec::with_capacity(rp_values.len()); indices.len()];
    for &rp in rp_values {
        let pred = model.predict(corpus, indices, temperature, RateControl::Rp.overrides(rp), seed)?;
        for (slot, u) in out.iter_mut().zip(&pred) {
            slot.push(metrics::pause_events(&u.durations(), &u.kinds(), thr).all());
        }
    }
    Ok(out)
}

/// Fraction of (utterance, consecutive step) pairs whose pause set only grows.
pub fn pooled_containment(sets: &[Vec<BTreeSet<usize>>]) -> f64 {
    let (mut held, mut total) = (0usize, 0usize);
    for s in sets {
        for w in s.windows(2) {
            total += 1;
            held += usize::from(w[0].is_subset(&w[1]));
        }
    }
    if total == 0 {
        1.0
    } else {
        held as f64 / total as f64
    }
}
