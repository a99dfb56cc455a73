//! Synthetic duration corpora with a known conditional distribution.
//!
//! Every utterance is drawn from a small hierarchical process:
//!
//! * a speaker (duration multiplier, speaker-vector centre), a tempo and a
//!   pausing factor per utterance;
//! * per word a break suitability `s`, planted on a small fraction of word
//!   boundaries, which sets the probability of a pause after the word;
//! * per token a rounded, clamped normal phoneme duration (lengthened before
//!   a pause), a capped Poisson gap for separators without a pause, or a
//!   rounded normal pause of at least [`PAUSE_FLOOR`] frames.
//!
//! The word feature vectors carry a noisy copy of `s`, so a phrasing model can
//! recover the break sites but cannot see the pausing factor.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::corpus::{
    Corpus, CorpusError, Inventory, SpeakerTable, Split, TokenKind, Utterance, UtteranceBuilder, WordFeatureTable,
    DEFAULT_PAUSE_THRESHOLD, FRAME_SECONDS,
};
use crate::metrics::{fbeta, PrF, HIST_BINS, HIST_MAX};
use crate::rng::{streams, SeedTree};

/// Shortest generated pause, equal to the default pause threshold.
pub const PAUSE_FLOOR: u32 = DEFAULT_PAUSE_THRESHOLD as u32;

pub const BOUNDARY_SYMBOL: &str = "_";
pub const COMMA_SYMBOL: &str = ",";
pub const PERIOD_SYMBOL: &str = ".";
pub const QUESTION_SYMBOL: &str = "?";

/// Leading word-feature channels; the rest are pure noise.
pub const FEATURE_SUITABILITY: usize = 0;
pub const FEATURE_NEXT_BOUNDARY: usize = 1;
pub const FEATURE_NEXT_COMMA: usize = 2;
pub const FEATURE_NEXT_FINAL: usize = 3;
pub const FEATURE_POSITION: usize = 4;
const INFORMATIVE_FEATURES: usize = 5;

/// Quadrature resolution for the analytic oracles.
const QUAD_NODES: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("context outside the generator: {0}")]
    Context(String),
    #[error("spec file: {0}")]
    Parse(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhonemeSpec {
    pub symbol: String,
    /// Mean frames at unit rate.
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeakerSpec {
    pub id: String,
    /// Multiplies every phoneme duration; above 1 is slower.
    pub rate: f64,
}

/// Full description of the generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub phonemes: Vec<PhonemeSpec>,
    pub speakers: Vec<SpeakerSpec>,
    pub speaker_dim: usize,
    /// Per-utterance spread of speaker vectors around their centre.
    pub speaker_spread: f64,
    pub words_min: usize,
    pub words_max: usize,
    pub phonemes_min: usize,
    pub phonemes_max: usize,
    /// Probability that a non-final word is followed by a comma.
    pub comma_rate: f64,
    /// Probability that the final mark is a question mark.
    pub question_rate: f64,
    /// Fraction of word boundaries with a planted break site.
    pub planted_rate: f64,
    /// Lower end of the uniform suitability range; the upper end is 1.
    pub suitability_min: f64,
    /// Slope of the boundary break logit in the suitability.
    pub break_slope: f64,
    /// Target fraction of word boundaries carrying a pause; fixes the logit offset.
    pub boundary_pause_rate: f64,
    /// Comma pause logit at mid-range suitability.
    pub comma_pause_logit: f64,
    pub comma_slope: f64,
    pub final_pause_prob: f64,
    /// Log-normal sigma of the per-utterance pausing factor (odds multiplier).
    pub pausing_sd: f64,
    /// Log-normal sigma of the per-utterance tempo (duration multiplier).
    pub tempo_sd: f64,
    /// Lengthening of a word's last phoneme before a pause.
    pub final_lengthening: f64,
    /// Lengthening of the word's other phonemes before a pause.
    pub word_lengthening: f64,
    pub pause_mean: f64,
    pub pause_sd: f64,
    /// Poisson mean of pause-free gaps after word boundaries.
    pub boundary_gap_mean: f64,
    /// Poisson mean of pause-free gaps after punctuation.
    pub punct_gap_mean: f64,
    /// Pause-free gaps are capped here; must stay below the pause floor.
    pub gap_cap: u32,
    pub feature_noise: f64,
    pub feature_noise_dims: usize,
}

const PHONEME_SYMBOLS: [&str; 24] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G", "HH", "IH", "IY", "JH", "K",
    "L", "M", "N", "P",
];

impl Default for GeneratorSpec {
    fn default() -> Self {
        let phonemes = PHONEME_SYMBOLS
            .iter()
            .enumerate()
            .map(|(i, s)| {
                // Spread means over 3..10 frames in a scrambled order.
                let mean = 3.0 + 7.0 * ((i * 7) % 24) as f64 / 23.0;
                let mean = (mean * 4.0).round() / 4.0;
                PhonemeSpec {
                    symbol: (*s).to_string(),
                    mean,
                    sd: 0.25 * mean + 0.5,
                }
            })
            .collect();
        let speakers = [0.9, 0.97, 1.03, 1.1]
            .iter()
            .enumerate()
            .map(|(i, &rate)| SpeakerSpec {
                id: format!("spk{i}"),
                rate,
            })
            .collect();
        Self {
            seed: 0,
            phonemes,
            speakers,
            speaker_dim: 192,
            speaker_spread: 0.3,
            words_min: 8,
            words_max: 25,
            phonemes_min: 2,
            phonemes_max: 6,
            comma_rate: 0.025,
            question_rate: 0.2,
            planted_rate: 0.07,
            suitability_min: 0.3,
            break_slope: 20.0,
            boundary_pause_rate: 0.025,
            comma_pause_logit: 3.2,
            comma_slope: 1.0,
            final_pause_prob: 0.97,
            pausing_sd: 0.35,
            tempo_sd: 0.1,
            final_lengthening: 1.6,
            word_lengthening: 1.2,
            pause_mean: 40.0,
            pause_sd: 10.0,
            boundary_gap_mean: 0.8,
            punct_gap_mean: 1.0,
            gap_cap: 3,
            feature_noise: 0.05,
            feature_noise_dims: 3,
        }
    }
}

impl GeneratorSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        toml::from_str(text).map_err(|e| SynthError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn word_feature_dim(&self) -> usize {
        INFORMATIVE_FEATURES + self.feature_noise_dims
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.phonemes.is_empty() || self.speakers.is_empty() {
            return bad("need at least one phoneme and one speaker");
        }
        if self.phonemes.iter().any(|p| !(p.mean > 0.0 && p.sd > 0.0)) {
            return bad("phoneme means and sds must be positive");
        }
        if self.speakers.iter().any(|s| !(s.rate > 0.0)) {
            return bad("speaker rates must be positive");
        }
        if self.words_min == 0 || self.words_min > self.words_max {
            return bad("word count range is empty");
        }
        if self.phonemes_min == 0 || self.phonemes_min > self.phonemes_max {
            return bad("phonemes-per-word range is empty");
        }
        let probs = [
            self.comma_rate,
            self.question_rate,
            self.planted_rate,
            self.boundary_pause_rate,
            self.final_pause_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.planted_rate > 0.0 && self.boundary_pause_rate < self.planted_rate) {
            return bad("boundary pause rate must be below the planted rate");
        }
        if !(0.0..1.0).contains(&self.suitability_min) {
            return bad("suitability_min must lie in [0, 1)");
        }
        let positive = [
            self.pause_sd,
            self.pause_mean,
            self.speaker_spread,
            self.final_lengthening,
            self.word_lengthening,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.pausing_sd < 0.0 || self.tempo_sd < 0.0 {
            return bad("scales must be positive");
        }
        if self.gap_cap >= PAUSE_FLOOR {
            return bad("gap_cap must stay below the pause floor");
        }
        if self.boundary_gap_mean <= 0.0 || self.punct_gap_mean <= 0.0 {
            return bad("gap means must be positive");
        }
        if self.speaker_dim == 0 {
            return bad("speaker_dim must be positive");
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in self.phonemes.iter().map(|p| &p.symbol) {
            if [BOUNDARY_SYMBOL, COMMA_SYMBOL, PERIOD_SYMBOL, QUESTION_SYMBOL].contains(&s.as_str()) || !seen.insert(s)
            {
                return bad("phoneme symbols must be unique and distinct from separators");
            }
        }
        Ok(())
    }
}

/// Train, dev and test utterance counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl Default for CorpusSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            dev: 200,
            test: 200,
        }
    }
}

impl CorpusSizes {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

/// What follows a word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeparatorType {
    Boundary,
    Comma,
    Final,
}

impl SeparatorType {
    pub fn kind(self) -> TokenKind {
        match self {
            SeparatorType::Boundary => TokenKind::WordBoundary,
            _ => TokenKind::Punctuation,
        }
    }
}

/// The hidden variables behind one generated utterance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceLatent {
    pub id: String,
    pub speaker: usize,
    pub tempo: f64,
    pub pausing: f64,
    pub separators: Vec<SeparatorType>,
    /// Break suitability per word; zero for unplanted word boundaries.
    pub suitability: Vec<f64>,
    /// True pause probability per word given all latents.
    pub pause_prob: Vec<f64>,
    /// Words per second of the generated durations.
    pub speech_rate: f64,
}

impl UtteranceLatent {
    /// Combined duration multiplier of speaker and tempo.
    pub fn rate(&self, spec: &GeneratorSpec) -> f64 {
        spec.speakers[self.speaker].rate * self.tempo
    }
}

#[derive(Clone, Debug)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub split: Split,
    pub latents: Vec<UtteranceLatent>,
}

/// A pmf over integer frames `0..probs.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pmf {
    pub probs: Vec<f64>,
}

impl Pmf {
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_moment() - m * m
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of at least `k` frames.
    pub fn tail(&self, k: usize) -> f64 {
        self.probs.iter().skip(k).sum()
    }

    /// Binned like [`crate::metrics::duration_histogram`].
    pub fn to_histogram(&self) -> Vec<f64> {
        let mut h = vec![0.0; HIST_BINS];
        for (k, p) in self.probs.iter().enumerate() {
            h[k.min(HIST_MAX + 1)] += p;
        }
        h
    }

    fn mixture(a: &Pmf, b: &Pmf, weight_b: f64) -> Pmf {
        let n = a.probs.len().max(b.probs.len());
        let get = |p: &Pmf, k: usize| p.probs.get(k).copied().unwrap_or(0.0);
        Pmf {
            probs: (0..n)
                .map(|k| (1.0 - weight_b) * get(a, k) + weight_b * get(b, k))
                .collect(),
        }
    }
}

/// Context of a single token for [`Generator::oracle_conditional`].
#[derive(Clone, Debug, PartialEq)]
pub enum TokenContext {
    Phoneme {
        symbol: String,
        /// Combined speaker and tempo multiplier.
        rate: f64,
        /// Whether the containing word is followed by a pause.
        before_pause: bool,
        last_in_word: bool,
    },
    Separator {
        separator: SeparatorType,
        /// Pause probability of the preceding word.
        pause_prob: f64,
    },
}

/// Best F_β of the thresholded true posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleFbeta {
    pub threshold: f64,
    pub score: PrF,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("unit normal")
}

/// Equal-weight standard-normal quantile nodes.
fn normal_nodes(n: usize) -> Vec<f64> {
    let d = std_normal();
    (0..n).map(|i| d.inverse_cdf((i as f64 + 0.5) / n as f64)).collect()
}

fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

/// pmf of `max(floor, round(N(mean, sd)))`.
fn rounded_normal_pmf(mean: f64, sd: f64, floor: usize) -> Pmf {
    let d = std_normal();
    let hi = (mean + 12.0 * sd).ceil().max(floor as f64 + 1.0) as usize;
    let cdf = |x: f64| d.cdf((x - mean) / sd);
    let mut probs = vec![0.0; hi + 1];
    probs[floor] = cdf(floor as f64 + 0.5);
    for (k, p) in probs.iter_mut().enumerate().skip(floor + 1) {
        *p = cdf(k as f64 + 0.5) - cdf(k as f64 - 0.5);
    }
    Pmf { probs }
}

/// pmf of `min(cap, Poisson(mean))`.
fn capped_poisson_pmf(mean: f64, cap: u32) -> Pmf {
    let mut probs = Vec::with_capacity(cap as usize + 1);
    let mut term = (-mean).exp();
    let mut acc = 0.0;
    for k in 0..cap {
        probs.push(term);
        acc += term;
        term *= mean / f64::from(k + 1);
    }
    probs.push(1.0 - acc);
    Pmf { probs }
}

/// The generator: a validated spec plus derived constants.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: GeneratorSpec,
    break_offset: f64,
    centres: Vec<Vec<f64>>,
    symbol_index: BTreeMap<String, usize>,
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let break_offset = calibrate_break_offset(&spec)?;
        let tree = SeedTree::new(spec.seed).fork(streams::GENERATOR);
        let mut rng = tree.stream("speakers");
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let centres = (0..spec.speakers.len())
            .map(|_| (0..spec.speaker_dim).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let symbol_index = spec
            .phonemes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.symbol.clone(), i))
            .collect();
        Ok(Self {
            spec,
            break_offset,
            centres,
            symbol_index,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Suitability at which a boundary break has even odds (unit pausing factor).
    pub fn break_offset(&self) -> f64 {
        self.break_offset
    }

    pub fn speaker_centre(&self, speaker: usize) -> &[f64] {
        &self.centres[speaker]
    }

    pub fn inventory(&self) -> Inventory {
        let mut inv = Inventory::new();
        for p in &self.spec.phonemes {
            inv.insert(p.symbol.clone(), TokenKind::Phoneme);
        }
        inv.insert(BOUNDARY_SYMBOL, TokenKind::WordBoundary);
        for s in [COMMA_SYMBOL, PERIOD_SYMBOL, QUESTION_SYMBOL] {
            inv.insert(s, TokenKind::Punctuation);
        }
        inv
    }

    /// Pause probability after a word given its separator, suitability and the utterance pausing factor.
    pub fn pause_prob(&self, separator: SeparatorType, suitability: f64, pausing: f64) -> f64 {
        let s = &self.spec;
        match separator {
            SeparatorType::Final => s.final_pause_prob,
            SeparatorType::Boundary if suitability <= 0.0 => 0.0,
            SeparatorType::Boundary => sigmoid(s.break_slope * (suitability - self.break_offset) + pausing.ln()),
            SeparatorType::Comma => {
                let centre = 0.5 * (s.suitability_min + 1.0);
                sigmoid(s.comma_pause_logit + s.comma_slope * (suitability - centre) + pausing.ln())
            }
        }
    }

    /// Pause probability given only what the text reveals: the pausing factor is marginalised.
    pub fn pause_posterior(&self, separator: SeparatorType, suitability: f64) -> f64 {
        let nodes = normal_nodes(QUAD_NODES);
        nodes
            .iter()
            .map(|u| self.pause_prob(separator, suitability, (self.spec.pausing_sd * u).exp()))
            .sum::<f64>()
            / nodes.len() as f64
    }

    /// Pause probability marginalised over suitability, for a given pausing factor.
    fn marginal_pause_prob(&self, separator: SeparatorType, pausing: f64) -> f64 {
        let s = &self.spec;
        match separator {
            SeparatorType::Final => s.final_pause_prob,
            SeparatorType::Boundary | SeparatorType::Comma => {
                let nodes = uniform_nodes(s.suitability_min, 1.0, QUAD_NODES);
                let mean = nodes
                    .iter()
                    .map(|&x| self.pause_prob(separator, x, pausing))
                    .sum::<f64>()
                    / nodes.len() as f64;
                if separator == SeparatorType::Boundary {
                    s.planted_rate * mean
                } else {
                    mean
                }
            }
        }
    }

    pub fn generate(&self, sizes: CorpusSizes) -> Result<GeneratedCorpus, SynthError> {
        let n = sizes.total();
        let mut utterances = Vec::with_capacity(n);
        let mut latents = Vec::with_capacity(n);
        let mut features = WordFeatureTable::new(self.spec.word_feature_dim());
        let mut speakers = SpeakerTable::new(self.spec.speaker_dim);
        for i in 0..n {
            let g = self.generate_utterance(i);
            for (w, v) in g.word_features.into_iter().enumerate() {
                features.insert(&g.utterance.id, w, v)?;
            }
            speakers.insert(&g.utterance.speaker_id, &g.utterance.id, g.speaker_vector)?;
            utterances.push(g.utterance);
            latents.push(g.latent);
        }
        let corpus = Corpus {
            utterances,
            inventory: self.inventory(),
            word_features: features,
            speakers,
        };
        corpus.validate()?;
        let split = Split {
            train: (0..sizes.train).collect(),
            dev: (sizes.train..sizes.train + sizes.dev).collect(),
            test: (sizes.train + sizes.dev..n).collect(),
        };
        Ok(GeneratedCorpus { corpus, split, latents })
    }

    /// Utterance `index`, drawn from its own stream so utterances are independent of generation order.
    pub fn generate_utterance(&self, index: usize) -> GeneratedUtterance {
        let s = &self.spec;
        let mut rng = SeedTree::new(s.seed)
            .fork(streams::GENERATOR)
            .fork_index(index as u64)
            .rng();
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let speaker = rng.random_range(0..s.speakers.len());
        let tempo = (s.tempo_sd * unit.sample(&mut rng)).exp();
        let pausing = (s.pausing_sd * unit.sample(&mut rng)).exp();
        let rate = s.speakers[speaker].rate * tempo;
        let n_words = rng.random_range(s.words_min..=s.words_max);

        let id = format!("utt{index:05}");
        let mut b = UtteranceBuilder::new(id.clone(), s.speakers[speaker].id.clone());
        let mut separators = Vec::with_capacity(n_words);
        let mut suitability = Vec::with_capacity(n_words);
        let mut pause_prob = Vec::with_capacity(n_words);
        let mut word_features = Vec::with_capacity(n_words);
        let mut total_frames = 0.0;
        for w in 0..n_words {
            let sep = if w + 1 == n_words {
                SeparatorType::Final
            } else if rng.random_bool(s.comma_rate) {
                SeparatorType::Comma
            } else {
                SeparatorType::Boundary
            };
            let suit = match sep {
                SeparatorType::Final => 1.0,
                SeparatorType::Comma => rng.random_range(s.suitability_min..1.0),
                SeparatorType::Boundary => {
                    if rng.random_bool(s.planted_rate) {
                        rng.random_range(s.suitability_min..1.0)
                    } else {
                        0.0
                    }
                }
            };
            let p = self.pause_prob(sep, suit, pausing);
            let pause = rng.random_bool(p);

            let n_ph = rng.random_range(s.phonemes_min..=s.phonemes_max);
            let mut phones = Vec::with_capacity(n_ph);
            for j in 0..n_ph {
                let ph = &s.phonemes[rng.random_range(0..s.phonemes.len())];
                let lengthening = match (pause, j + 1 == n_ph) {
                    (false, _) => 1.0,
                    (true, true) => s.final_lengthening,
                    (true, false) => s.word_lengthening,
                };
                let d = Normal::new(ph.mean * rate * lengthening, ph.sd * rate)
                    .expect("positive sd")
                    .sample(&mut rng)
                    .round()
                    .max(1.0);
                phones.push((ph.symbol.as_str(), d));
            }
            let gap = if pause {
                Normal::new(s.pause_mean, s.pause_sd)
                    .expect("positive sd")
                    .sample(&mut rng)
                    .round()
                    .max(f64::from(PAUSE_FLOOR))
            } else {
                let mean = if sep == SeparatorType::Boundary {
                    s.boundary_gap_mean
                } else {
                    s.punct_gap_mean
                };
                Poisson::new(mean).expect("positive mean").sample(&mut rng).min(f64::from(s.gap_cap))
            };
            total_frames += phones.iter().map(|p| p.1).sum::<f64>() + gap;
            let text: String = phones.iter().map(|p| p.0.to_lowercase()).collect();
            b = b.word(text, &phones);
            b = match sep {
                SeparatorType::Boundary => b.boundary(gap),
                SeparatorType::Comma => b.punct(COMMA_SYMBOL, gap),
                SeparatorType::Final => {
                    let mark = if rng.random_bool(s.question_rate) {
                        QUESTION_SYMBOL
                    } else {
                        PERIOD_SYMBOL
                    };
                    b.punct(mark, gap)
                }
            };
            word_features.push(self.word_feature(&mut rng, sep, suit, w, n_words));
            separators.push(sep);
            suitability.push(suit);
            pause_prob.push(p);
        }
        let spread = Normal::new(0.0, s.speaker_spread).expect("positive spread");
        let speaker_vector = self.centres[speaker]
            .iter()
            .map(|c| c + spread.sample(&mut rng))
            .collect();
        GeneratedUtterance {
            utterance: b.build(),
            word_features,
            speaker_vector,
            latent: UtteranceLatent {
                id,
                speaker,
                tempo,
                pausing,
                separators,
                suitability,
                pause_prob,
                speech_rate: n_words as f64 / (total_frames * FRAME_SECONDS),
            },
        }
    }

    fn word_feature(&self, rng: &mut ChaCha20Rng, sep: SeparatorType, suit: f64, w: usize, n: usize) -> Vec<f64> {
        let s = &self.spec;
        let noise = Normal::new(0.0, s.feature_noise.max(f64::MIN_POSITIVE)).expect("noise sd");
        let mut v = vec![0.0; s.word_feature_dim()];
        v[FEATURE_SUITABILITY] = suit + if s.feature_noise > 0.0 { noise.sample(rng) } else { 0.0 };
        v[match sep {
            SeparatorType::Boundary => FEATURE_NEXT_BOUNDARY,
            SeparatorType::Comma => FEATURE_NEXT_COMMA,
            SeparatorType::Final => FEATURE_NEXT_FINAL,
        }] = 1.0;
        v[FEATURE_POSITION] = if n > 1 { w as f64 / (n - 1) as f64 } else { 0.0 };
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        for x in &mut v[INFORMATIVE_FEATURES..] {
            *x = unit.sample(rng);
        }
        v
    }

    /// Exact pmf of a token's frame count in the given context.
    pub fn oracle_conditional(&self, ctx: &TokenContext) -> Result<Pmf, SynthError> {
        let s = &self.spec;
        match ctx {
            TokenContext::Phoneme {
                symbol,
                rate,
                before_pause,
                last_in_word,
            } => {
                let i = *self
                    .symbol_index
                    .get(symbol)
                    .ok_or_else(|| SynthError::Context(format!("unknown phoneme {symbol:?}")))?;
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(SynthError::Context(format!("rate {rate} must be positive")));
                }
                let lengthening = match (before_pause, last_in_word) {
                    (false, _) => 1.0,
                    (true, true) => s.final_lengthening,
                    (true, false) => s.word_lengthening,
                };
                let ph = &s.phonemes[i];
                Ok(rounded_normal_pmf(ph.mean * rate * lengthening, ph.sd * rate, 1))
            }
            TokenContext::Separator { separator, pause_prob } => {
                if !(0.0..=1.0).contains(pause_prob) {
                    return Err(SynthError::Context(format!("pause probability {pause_prob}")));
                }
                let gap_mean = if *separator == SeparatorType::Boundary {
                    s.boundary_gap_mean
                } else {
                    s.punct_gap_mean
                };
                Ok(Pmf::mixture(
                    &capped_poisson_pmf(gap_mean, s.gap_cap),
                    &rounded_normal_pmf(s.pause_mean, s.pause_sd, PAUSE_FLOOR as usize),
                    *pause_prob,
                ))
            }
        }
    }

    /// Thresholds the text-level pause posterior of every word and keeps the best F_β.
    ///
    /// `labels[u][w]` is the observed pause after word `w` of utterance `u`.
    pub fn oracle_best_fbeta(&self, latents: &[UtteranceLatent], labels: &[Vec<bool>], beta: f64) -> OracleFbeta {
        let mut scored: Vec<(f64, bool)> = Vec::new();
        for (lat, lab) in latents.iter().zip(labels) {
            for (w, &y) in lab.iter().enumerate() {
                scored.push((self.pause_posterior(lat.separators[w], lat.suitability[w]), y));
            }
        }
        best_threshold(&scored, beta)
    }

    /// Expected mean of per-utterance words per second.
    ///
    /// Exact first and second moments of the frame total, conditional on word
    /// count, speaker, tempo and pausing factor, combined with a second-order
    /// expansion of `W / D`; tempo and pausing factor are integrated by quadrature.
    pub fn expected_speech_rate(&self) -> f64 {
        let s = &self.spec;
        let tempo_nodes = normal_nodes(QUAD_NODES);
        let pausing: Vec<f64> = normal_nodes(QUAD_NODES)
            .iter()
            .map(|u| (s.pausing_sd * u).exp())
            .collect();
        let probs: Vec<[f64; 3]> = pausing
            .iter()
            .map(|&pf| {
                [
                    self.marginal_pause_prob(SeparatorType::Boundary, pf),
                    self.marginal_pause_prob(SeparatorType::Comma, pf),
                    s.final_pause_prob,
                ]
            })
            .collect();
        let sep_moments = |sep: SeparatorType, pause: bool| -> (f64, f64) {
            let pmf = self
                .oracle_conditional(&TokenContext::Separator {
                    separator: sep,
                    pause_prob: if pause { 1.0 } else { 0.0 },
                })
                .expect("valid context");
            (pmf.mean(), pmf.variance())
        };
        let mut total = 0.0;
        let mut weight = 0.0;
        for spk in &s.speakers {
            for u in &tempo_nodes {
                let rate = spk.rate * (s.tempo_sd * u).exp();
                let word = |sep: SeparatorType, pause: bool| -> (f64, f64) {
                    let (ph_mean, ph_var) = self.word_phoneme_moments(rate, pause);
                    let (g_mean, g_var) = sep_moments(sep, pause);
                    (ph_mean + g_mean, ph_var + g_var)
                };
                let moments: Vec<[(f64, f64); 2]> = [SeparatorType::Boundary, SeparatorType::Comma, SeparatorType::Final]
                    .iter()
                    .map(|&sep| [word(sep, false), word(sep, true)])
                    .collect();
                for p in &probs {
                    let mix = |t: usize| -> (f64, f64) {
                        let [(m0, v0), (m1, v1)] = moments[t];
                        let m = (1.0 - p[t]) * m0 + p[t] * m1;
                        let second = (1.0 - p[t]) * (v0 + m0 * m0) + p[t] * (v1 + m1 * m1);
                        (m, second - m * m)
                    };
                    let (bm, bv) = mix(0);
                    let (cm, cv) = mix(1);
                    let (fm, fv) = mix(2);
                    let c = s.comma_rate;
                    let inner_mean = (1.0 - c) * bm + c * cm;
                    let inner_second = (1.0 - c) * (bv + bm * bm) + c * (cv + cm * cm);
                    let inner_var = inner_second - inner_mean * inner_mean;
                    for w in s.words_min..=s.words_max {
                        let m = (w - 1) as f64 * inner_mean + fm;
                        let v = (w - 1) as f64 * inner_var + fv;
                        let r = w as f64 / (m * FRAME_SECONDS);
                        total += r * (1.0 + v / (m * m));
                        weight += 1.0;
                    }
                }
            }
        }
        total / weight
    }

    /// Mean and variance of the summed phoneme frames of one word.
    fn word_phoneme_moments(&self, rate: f64, before_pause: bool) -> (f64, f64) {
        let s = &self.spec;
        let symbol_moments = |last: bool| -> (f64, f64) {
            let mut m = 0.0;
            let mut m2 = 0.0;
            for p in &s.phonemes {
                let pmf = self
                    .oracle_conditional(&TokenContext::Phoneme {
                        symbol: p.symbol.clone(),
                        rate,
                        before_pause,
                        last_in_word: last,
                    })
                    .expect("valid context");
                m += pmf.mean();
                m2 += pmf.second_moment();
            }
            let k = s.phonemes.len() as f64;
            (m / k, m2 / k - (m / k) * (m / k))
        };
        let (inner_m, inner_v) = symbol_moments(false);
        let (last_m, last_v) = symbol_moments(true);
        let counts: Vec<f64> = (s.phonemes_min..=s.phonemes_max).map(|n| n as f64).collect();
        let k = counts.len() as f64;
        let means: Vec<f64> = counts.iter().map(|n| (n - 1.0) * inner_m + last_m).collect();
        let vars: Vec<f64> = counts.iter().map(|n| (n - 1.0) * inner_v + last_v).collect();
        let mean = means.iter().sum::<f64>() / k;
        let var_of_mean = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / k;
        (mean, vars.iter().sum::<f64>() / k + var_of_mean)
    }

    /// Expected fraction of word boundaries followed by a pause.
    pub fn expected_boundary_pause_rate(&self) -> f64 {
        self.mean_over_pausing(|pf| self.marginal_pause_prob(SeparatorType::Boundary, pf))
    }

    /// Expected share of all pauses that fall on word boundaries, pooled over a corpus.
    pub fn expected_boundary_pause_share(&self) -> f64 {
        let s = &self.spec;
        let inner = (s.words_min + s.words_max) as f64 / 2.0 - 1.0;
        let boundary = inner * (1.0 - s.comma_rate) * self.expected_boundary_pause_rate();
        let comma = inner * s.comma_rate * self.mean_over_pausing(|pf| self.marginal_pause_prob(SeparatorType::Comma, pf));
        boundary / (boundary + comma + s.final_pause_prob)
    }

    /// Expected frames of a phoneme symbol, marginalised over speakers, tempo and pause context.
    pub fn expected_phoneme_mean(&self, symbol: &str) -> Result<f64, SynthError> {
        let s = &self.spec;
        // Pause probability of a random word, and the chance a phoneme is its last.
        let inner = (s.words_min + s.words_max) as f64 / 2.0 - 1.0;
        let words = inner + 1.0;
        let p_comma = self.mean_over_pausing(|pf| self.marginal_pause_prob(SeparatorType::Comma, pf));
        let p_word = (inner * ((1.0 - s.comma_rate) * self.expected_boundary_pause_rate() + s.comma_rate * p_comma)
            + s.final_pause_prob)
            / words;
        let mean_phones = (s.phonemes_min + s.phonemes_max) as f64 / 2.0;
        let p_last = 1.0 / mean_phones;
        let mut total = 0.0;
        let nodes = normal_nodes(QUAD_NODES);
        for spk in &s.speakers {
            for u in &nodes {
                let rate = spk.rate * (s.tempo_sd * u).exp();
                let m = |before_pause: bool, last_in_word: bool| -> Result<f64, SynthError> {
                    Ok(self
                        .oracle_conditional(&TokenContext::Phoneme {
                            symbol: symbol.to_string(),
                            rate,
                            before_pause,
                            last_in_word,
                        })?
                        .mean())
                };
                let plain = m(false, false)?;
                let last = m(true, true)?;
                let inner_len = m(true, false)?;
                total += (1.0 - p_word) * plain + p_word * (p_last * last + (1.0 - p_last) * inner_len);
            }
        }
        Ok(total / (s.speakers.len() * nodes.len()) as f64)
    }

    fn mean_over_pausing(&self, f: impl Fn(f64) -> f64) -> f64 {
        let nodes = normal_nodes(QUAD_NODES);
        nodes.iter().map(|u| f((self.spec.pausing_sd * u).exp())).sum::<f64>() / nodes.len() as f64
    }
}

/// One generated utterance with its sidecar vectors and latents.
#[derive(Clone, Debug)]
pub struct GeneratedUtterance {
    pub utterance: Utterance,
    pub word_features: Vec<Vec<f64>>,
    pub speaker_vector: Vec<f64>,
    pub latent: UtteranceLatent,
}

/// Best F_β over every distinct score used as a `score >= threshold` cut.
///
/// Ties in F go to the higher threshold.
pub fn best_threshold(scored: &[(f64, bool)], beta: f64) -> OracleFbeta {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = sorted.iter().filter(|s| s.1).count() as u64;
    let mut best = OracleFbeta {
        threshold: f64::INFINITY,
        score: fbeta(0, 0, positives, beta),
    };
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let score = fbeta(tp, fp, positives - tp, beta);
        if score.f > best.score.f {
            best = OracleFbeta { threshold: t, score };
        }
    }
    best
}

/// Solves for the boundary logit offset that yields the target boundary pause rate.
fn calibrate_break_offset(spec: &GeneratorSpec) -> Result<f64, SynthError> {
    let nodes_s = uniform_nodes(spec.suitability_min, 1.0, QUAD_NODES);
    let nodes_p: Vec<f64> = normal_nodes(QUAD_NODES).iter().map(|u| spec.pausing_sd * u).collect();
    let rate = |offset: f64| {
        let mut acc = 0.0;
        for &x in &nodes_s {
            for &lp in &nodes_p {
                acc += sigmoid(spec.break_slope * (x - offset) + lp);
            }
        }
        spec.planted_rate * acc / (nodes_s.len() * nodes_p.len()) as f64
    };
    let (mut lo, mut hi) = (-20.0, 20.0);
    if !(rate(hi) < spec.boundary_pause_rate && spec.boundary_pause_rate < rate(lo)) {
        return Err(SynthError::InvalidSpec(
            "boundary pause rate unreachable with this slope and planted rate".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > spec.boundary_pause_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{corpus_stats, extract_pause_labels};
    use crate::metrics::{duration_histogram, jsd};

    fn small(seed: u64) -> GeneratedCorpus {
        let spec = GeneratorSpec {
            seed,
            ..GeneratorSpec::default()
        };
        Generator::new(spec)
            .unwrap()
            .generate(CorpusSizes {
                train: 60,
                dev: 10,
                test: 10,
            })
            .unwrap()
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = GeneratorSpec::default();
        let back = GeneratorSpec::from_toml_str(&spec.to_toml_string()).unwrap();
        assert_eq!(back, spec);
        assert!(GeneratorSpec::from_toml_str("bogus_field = 1").is_err());
        let partial = GeneratorSpec::from_toml_str("seed = 9\ncomma_rate = 0.1").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.words_max, GeneratorSpec::default().words_max);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = GeneratorSpec {
            gap_cap: PAUSE_FLOOR,
            ..GeneratorSpec::default()
        };
        assert!(Generator::new(bad).is_err());
        let bad = GeneratorSpec {
            boundary_pause_rate: 0.5,
            ..GeneratorSpec::default()
        };
        assert!(Generator::new(bad).is_err());
    }

    #[test]
    fn generation_is_reproducible_and_valid() {
        let a = small(3);
        let b = small(3);
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.latents, b.latents);
        assert_ne!(a.corpus, small(4).corpus);
        a.corpus.validate().unwrap();
        assert_eq!(a.split.train.len(), 60);
    }

    #[test]
    fn latents_match_the_durations() {
        let g = small(5);
        for (u, lat) in g.corpus.utterances.iter().zip(&g.latents) {
            let labels = extract_pause_labels(u, DEFAULT_PAUSE_THRESHOLD);
            assert_eq!(labels.len(), lat.separators.len());
            for (w, &l) in labels.iter().enumerate() {
                if lat.pause_prob[w] == 0.0 {
                    assert!(!l, "unplanted boundary paused in {}", u.id);
                }
            }
            let rate = u.word_count() as f64 / u.duration_seconds();
            assert!((rate - lat.speech_rate).abs() < 1e-12);
        }
    }

    #[test]
    fn capped_poisson_and_rounded_normal_are_normalised() {
        let p = capped_poisson_pmf(0.8, 3);
        assert!((p.total() - 1.0).abs() < 1e-14);
        assert_eq!(p.probs.len(), 4);
        let q = rounded_normal_pmf(40.0, 10.0, 4);
        assert!((q.total() - 1.0).abs() < 1e-9);
        assert!((q.mean() - 40.0).abs() < 0.01);
    }

    #[test]
    fn calibration_hits_the_target_rate() {
        let g = Generator::new(GeneratorSpec::default()).unwrap();
        assert!((g.expected_boundary_pause_rate() - 0.025).abs() < 1e-9);
        let share = g.expected_boundary_pause_share();
        assert!((0.20..=0.25).contains(&share), "{share}");
    }

    #[test]
    fn noiseless_break_latent_gives_perfect_oracle() {
        let spec = GeneratorSpec {
            break_slope: 1e6,
            pausing_sd: 0.0,
            comma_rate: 0.0,
            final_pause_prob: 1.0,
            ..GeneratorSpec::default()
        };
        let g = Generator::new(spec).unwrap();
        let data = g
            .generate(CorpusSizes {
                train: 0,
                dev: 80,
                test: 0,
            })
            .unwrap();
        let labels: Vec<Vec<bool>> = data
            .corpus
            .utterances
            .iter()
            .map(|u| extract_pause_labels(u, DEFAULT_PAUSE_THRESHOLD))
            .collect();
        let best = g.oracle_best_fbeta(&data.latents, &labels, 0.25);
        assert_eq!(best.score.f, 1.0);
    }

    #[test]
    fn best_threshold_matches_brute_force() {
        let scored = [(0.9, true), (0.8, false), (0.8, true), (0.3, true), (0.1, false)];
        let best = best_threshold(&scored, 0.25);
        let mut brute = (0.0f64, f64::INFINITY);
        for &(t, _) in &scored {
            let tp = scored.iter().filter(|s| s.0 >= t && s.1).count() as u64;
            let fp = scored.iter().filter(|s| s.0 >= t && !s.1).count() as u64;
            let fn_ = scored.iter().filter(|s| s.0 < t && s.1).count() as u64;
            let f = fbeta(tp, fp, fn_, 0.25).f;
            if f > brute.0 || (f == brute.0 && t > brute.1) {
                brute = (f, t);
            }
        }
        assert_eq!(best.score.f, brute.0);
        assert_eq!(best.threshold, brute.1);
    }

    #[test]
    fn sampled_separators_follow_the_oracle_pmf() {
        let g = Generator::new(GeneratorSpec::default()).unwrap();
        let data = g
            .generate(CorpusSizes {
                train: 300,
                dev: 0,
                test: 0,
            })
            .unwrap();
        // Final punctuation has a context-free pause probability.
        let finals: Vec<f64> = data
            .corpus
            .utterances
            .iter()
            .map(|u| u.tokens.last().unwrap().duration)
            .collect();
        let oracle = g
            .oracle_conditional(&TokenContext::Separator {
                separator: SeparatorType::Final,
                pause_prob: g.spec().final_pause_prob,
            })
            .unwrap();
        let d = jsd(&duration_histogram(&finals).unwrap(), &oracle.to_histogram());
        assert!(d < 0.1, "{d}");
    }

    #[test]
    fn corpus_rate_is_near_the_analytic_rate() {
        let g = small(11);
        let stats = corpus_stats(&g.corpus.utterances, DEFAULT_PAUSE_THRESHOLD).unwrap();
        let expected = Generator::new(GeneratorSpec::default()).unwrap().expected_speech_rate();
        assert!((stats.mean_speech_rate / expected - 1.0).abs() < 0.05);
    }
}
