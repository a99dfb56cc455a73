//! Objective evaluation: duration-histogram JSD, pause precision/recall/F_β,
//! pause and speech rates, and percentile L1 errors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{corpus_stats, CorpusError, TokenKind, Utterance};

/// Histogram bins cover integer frames `0..=HIST_MAX`, plus one overflow bin.
pub const HIST_MAX: usize = 200;
pub const HIST_BINS: usize = HIST_MAX + 2;

/// β used for every reported F score.
pub const F_BETA: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{0}: nothing to measure")]
    Empty(&'static str),
    #[error("predicted and target sets are not aligned: {0}")]
    Misaligned(String),
    #[error("percentile must lie in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Precision, recall and F_β as fractions in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrF {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn fbeta(tp: u64, fp: u64, fn_: u64, beta: f64) -> PrF {
    let (tp, fp, fn_) = (tp as f64, fp as f64, fn_ as f64);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let b2 = beta * beta;
    let f = ratio((1.0 + b2) * precision * recall, b2 * precision + recall);
    PrF { precision, recall, f }
}

/// Token positions of detected pauses, split by separator type.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PauseEvents {
    pub punctuation: BTreeSet<usize>,
    pub word_boundary: BTreeSet<usize>,
}

impl PauseEvents {
    pub fn len(&self) -> usize {
        self.punctuation.len() + self.word_boundary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> BTreeSet<usize> {
        self.punctuation.union(&self.word_boundary).copied().collect()
    }
}

pub fn pause_events(durations: &[f64], kinds: &[TokenKind], threshold: f64) -> PauseEvents {
    let mut ev = PauseEvents::default();
    for (i, (&d, &k)) in durations.iter().zip(kinds).enumerate() {
        if d < threshold {
            continue;
        }
        match k {
            TokenKind::Punctuation => {
                ev.punctuation.insert(i);
            }
            TokenKind::WordBoundary => {
                ev.word_boundary.insert(i);
            }
            TokenKind::Phoneme => {}
        }
    }
    ev
}

/// Normalised histogram of durations rounded to whole frames.
pub fn duration_histogram(durations: &[f64]) -> Result<Vec<f64>, MetricError> {
    if durations.is_empty() {
        return Err(MetricError::Empty("duration_histogram"));
    }
    let mut h = vec![0.0; HIST_BINS];
    for &d in durations {
        let bin = if d.round() <= 0.0 {
            0
        } else {
            (d.round() as usize).min(HIST_MAX + 1)
        };
        h[bin] += 1.0;
    }
    let n = durations.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

/// Jensen-Shannon divergence in nats between two distributions on the same support.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        // Order each pair so that jsd(p, q) and jsd(q, p) round identically.
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let m = 0.5 * (lo + hi);
        let term = |x: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
        total += 0.5 * (term(lo) + term(hi));
    }
    total.max(0.0)
}

/// Which tokens enter a duration histogram.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenFilter {
    /// Word boundaries and punctuation.
    PauseCapable,
    Phonemes,
}

impl TokenFilter {
    pub fn keeps(self, kind: TokenKind) -> bool {
        match self {
            TokenFilter::PauseCapable => kind.is_separator(),
            TokenFilter::Phonemes => kind == TokenKind::Phoneme,
        }
    }
}

pub fn filtered_durations<'a>(utts: impl IntoIterator<Item = &'a Utterance>, filter: TokenFilter) -> Vec<f64> {
    utts.into_iter()
        .flat_map(|u| u.tokens.iter())
        .filter(|t| filter.keeps(t.kind))
        .map(|t| t.duration)
        .collect()
}

pub fn jsd_durations(predicted: &[f64], target: &[f64]) -> Result<f64, MetricError> {
    Ok(jsd(&duration_histogram(predicted)?, &duration_histogram(target)?))
}

/// Mean words per pause over utterances that contain a pause.
pub fn pause_rate<'a>(utts: impl IntoIterator<Item = &'a Utterance>, threshold: f64) -> Result<f64, MetricError> {
    Ok(corpus_stats(utts, threshold)?.mean_pause_rate)
}

/// Mean words per second.
pub fn speech_rate<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Result<f64, MetricError> {
    let mut n = 0usize;
    let mut sum = 0.0;
    for u in utts {
        let secs = u.duration_seconds();
        if secs <= 0.0 {
            return Err(CorpusError::ZeroDuration(u.id.clone()).into());
        }
        n += 1;
        sum += u.word_count() as f64 / secs;
    }
    if n == 0 {
        return Err(MetricError::Empty("speech_rate"));
    }
    Ok(sum / n as f64)
}

/// Rank index used by [`percentile_l1`]: `min(n - 1, floor(q·n/100))`.
///
/// With errors `0..100` the 99th percentile is 99.
pub fn percentile_index(n: usize, q: f64) -> usize {
    (((q * n as f64) / 100.0).floor() as usize).min(n - 1)
}

/// The q-th percentile of pooled absolute errors.
pub fn percentile_l1(predicted: &[f64], target: &[f64], q: f64) -> Result<f64, MetricError> {
    if !(q > 0.0 && q <= 100.0) {
        return Err(MetricError::BadPercentile(q));
    }
    if predicted.len() != target.len() {
        return Err(MetricError::Misaligned(format!("{} vs {} tokens", predicted.len(), target.len())));
    }
    if predicted.is_empty() {
        return Err(MetricError::Empty("percentile_l1"));
    }
    let mut errs: Vec<f64> = predicted.iter().zip(target).map(|(p, t)| (p - t).abs()).collect();
    errs.sort_by(f64::total_cmp);
    Ok(errs[percentile_index(errs.len(), q)])
}

/// Pause-detection counts for one separator type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    fn add(&mut self, pred: &BTreeSet<usize>, target: &BTreeSet<usize>) {
        self.tp += pred.intersection(target).count() as u64;
        self.fp += pred.difference(target).count() as u64;
        self.fn_ += target.difference(pred).count() as u64;
    }

    pub fn prf(&self, beta: f64) -> PrF {
        fbeta(self.tp, self.fp, self.fn_, beta)
    }
}

/// Objective comparison of predicted against target durations.
///
/// Precision, recall and F are percentages; a predicted pause is a hit only
/// at the exact token of a target pause.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub jsd_pause: f64,
    pub jsd_nonpause: f64,
    pub punct_precision: f64,
    pub punct_recall: f64,
    pub punct_f: f64,
    pub word_precision: f64,
    pub word_recall: f64,
    pub word_f: f64,
    pub pause_rate: f64,
    pub target_pause_rate: f64,
    pub speech_rate: f64,
    pub target_speech_rate: f64,
    pub percentile: f64,
    pub percentile_l1: f64,
}

impl MetricReport {
    /// `(key, value)` pairs in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("jsd_pause", self.jsd_pause),
            ("jsd_nonpause", self.jsd_nonpause),
            ("punct_precision", self.punct_precision),
            ("punct_recall", self.punct_recall),
            ("punct_f", self.punct_f),
            ("word_precision", self.word_precision),
            ("word_recall", self.word_recall),
            ("word_f", self.word_f),
            ("pause_rate", self.pause_rate),
            ("target_pause_rate", self.target_pause_rate),
            ("speech_rate", self.speech_rate),
            ("target_speech_rate", self.target_speech_rate),
            ("percentile", self.percentile),
            ("percentile_l1", self.percentile_l1),
        ]
    }
}

/// Pause-detection counts accumulated over aligned utterance pairs.
pub fn pause_counts(
    predicted: &[Utterance],
    target: &[Utterance],
    threshold: f64,
) -> Result<(Counts, Counts), MetricError> {
    check_aligned(predicted, target)?;
    let mut punct = Counts::default();
    let mut word = Counts::default();
    for (p, t) in predicted.iter().zip(target) {
        let ep = pause_events(&p.durations(), &p.kinds(), threshold);
        let et = pause_events(&t.durations(), &t.kinds(), threshold);
        punct.add(&ep.punctuation, &et.punctuation);
        word.add(&ep.word_boundary, &et.word_boundary);
    }
    Ok((punct, word))
}

fn check_aligned(predicted: &[Utterance], target: &[Utterance]) -> Result<(), MetricError> {
    if predicted.len() != target.len() {
        return Err(MetricError::Misaligned(format!(
            "{} vs {} utterances",
            predicted.len(),
            target.len()
        )));
    }
    for (p, t) in predicted.iter().zip(target) {
        if p.id != t.id || p.kinds() != t.kinds() {
            return Err(MetricError::Misaligned(format!("utterance {} vs {}", p.id, t.id)));
        }
    }
    Ok(())
}

/// Full report for predicted durations against targets on the same tokens.
pub fn evaluate(
    predicted: &[Utterance],
    target: &[Utterance],
    threshold: f64,
    percentile: f64,
) -> Result<MetricReport, MetricError> {
    let (punct, word) = pause_counts(predicted, target, threshold)?;
    let pp = punct.prf(F_BETA);
    let wp = word.prf(F_BETA);
    let jsd_pause = jsd_durations(
        &filtered_durations(predicted, TokenFilter::PauseCapable),
        &filtered_durations(target, TokenFilter::PauseCapable),
    )?;
    let jsd_nonpause = jsd_durations(
        &filtered_durations(predicted, TokenFilter::Phonemes),
        &filtered_durations(target, TokenFilter::Phonemes),
    )?;
    let pred_all: Vec<f64> = predicted.iter().flat_map(|u| u.durations()).collect();
    let target_all: Vec<f64> = target.iter().flat_map(|u| u.durations()).collect();
    // A model that never pauses has an infinite words-per-pause rate.
    let pause_rate_or_inf = |u: &[Utterance]| match pause_rate(u, threshold) {
        Err(MetricError::Corpus(CorpusError::NoPauses)) => Ok(f64::INFINITY),
        other => other,
    };
    Ok(MetricReport {
        jsd_pause,
        jsd_nonpause,
        punct_precision: 100.0 * pp.precision,
        punct_recall: 100.0 * pp.recall,
        punct_f: 100.0 * pp.f,
        word_precision: 100.0 * wp.precision,
        word_recall: 100.0 * wp.recall,
        word_f: 100.0 * wp.f,
        pause_rate: pause_rate_or_inf(predicted)?,
        target_pause_rate: pause_rate_or_inf(target)?,
        speech_rate: speech_rate(predicted)?,
        target_speech_rate: speech_rate(target)?,
        percentile,
        percentile_l1: percentile_l1(&pred_all, &target_all, percentile)?,
    })
}

/// Pearson correlation; zero when either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Fraction of consecutive pairs in which the later pause set contains the earlier one.
pub fn containment_fraction(sets: &[BTreeSet<usize>]) -> f64 {
    if sets.len() < 2 {
        return 1.0;
    }
    let held = sets.windows(2).filter(|w| w[0].is_subset(&w[1])).count();
    held as f64 / (sets.len() - 1) as f64
}
