//! Duration-annotated utterances: data model, validation, statistics and splits.
//!
//! Durations are counted in frames of [`FRAME_SECONDS`]. Every word is a
//! span of phoneme tokens; a word boundary or punctuation token may follow
//! each word and carries the silence (if any) after it.

mod io;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::SeedTree;

pub use io::{
    INVENTORY_FILE, INVENTORY_HEADER, SPEAKER_HEADER, SPEAKER_VECTORS_FILE, UTTERANCES_FILE, UTTERANCE_HEADER,
    WORD_FEATURES_FILE, WORD_FEATURE_HEADER,
};

/// Length of one frame in seconds.
pub const FRAME_SECONDS: f64 = 0.0125;

/// Minimum silence, in frames, that counts as a pause (50 ms).
pub const DEFAULT_PAUSE_THRESHOLD: f64 = 4.0;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {detail}")]
    Malformed { file: String, line: usize, detail: String },
    #[error("utterance {utterance}: unknown symbol {symbol:?}")]
    UnknownSymbol { utterance: String, symbol: String },
    #[error("utterance {utterance}: token {token} has negative duration {duration}")]
    NegativeDuration {
        utterance: String,
        token: usize,
        duration: f64,
    },
    #[error("utterance {utterance}: {detail}")]
    Invalid { utterance: String, detail: String },
    #[error("utterance {utterance}: word {word} has no feature vector")]
    MissingWordFeature { utterance: String, word: usize },
    #[error("speaker {0} has no speaker vector")]
    MissingSpeakerVector(String),
    #[error("unknown speaker {0}")]
    UnknownSpeaker(String),
    #[error("utterance {0} has zero duration")]
    ZeroDuration(String),
    #[error("{0}: empty utterance set")]
    Empty(&'static str),
    #[error("no utterance contains a pause")]
    NoPauses,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("length mismatch: {items} items, {durations} durations")]
    LengthMismatch { items: usize, durations: usize },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum TokenKind {
    Phoneme,
    WordBoundary,
    Punctuation,
}

impl TokenKind {
    /// Word boundaries and punctuation are the only tokens that can carry a pause.
    pub fn is_separator(self) -> bool {
        !matches!(self, TokenKind::Phoneme)
    }

    pub fn code(self) -> &'static str {
        match self {
            TokenKind::Phoneme => "P",
            TokenKind::WordBoundary => "B",
            TokenKind::Punctuation => "U",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "P" => Some(TokenKind::Phoneme),
            "B" => Some(TokenKind::WordBoundary),
            "U" => Some(TokenKind::Punctuation),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub symbol: String,
    /// Containing word for phonemes, preceding word for separators.
    pub word_index: usize,
    /// Frames; integral in files.
    pub duration: f64,
}

/// A word and the half-open span of phoneme tokens it covers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker_id: String,
    pub tokens: Vec<Token>,
    pub words: Vec<Word>,
}

impl Utterance {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// T: total frames.
    pub fn total_frames(&self) -> f64 {
        self.tokens.iter().map(|t| t.duration).sum()
    }

    /// D: duration in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.total_frames() * FRAME_SECONDS
    }

    pub fn durations(&self) -> Vec<f64> {
        self.tokens.iter().map(|t| t.duration).collect()
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        self.tokens.iter().map(|t| t.kind).collect()
    }

    /// Copy of the utterance with its durations replaced.
    pub fn with_durations(&self, durations: &[f64]) -> Result<Utterance, CorpusError> {
        if durations.len() != self.tokens.len() {
            return Err(CorpusError::LengthMismatch {
                items: self.tokens.len(),
                durations: durations.len(),
            });
        }
        let mut out = self.clone();
        for (t, &d) in out.tokens.iter_mut().zip(durations) {
            t.duration = d;
        }
        Ok(out)
    }

    /// Index of the separator token following word `w`, if any.
    pub fn separator_after(&self, w: usize) -> Option<usize> {
        let word = self.words.get(w)?;
        self.tokens
            .get(word.end)
            .filter(|t| t.kind.is_separator() && t.word_index == w)
            .map(|_| word.end)
    }

    /// Number of separator tokens whose duration reaches `threshold`.
    pub fn pause_count(&self, threshold: f64) -> usize {
        self.tokens
            .iter()
            .filter(|t| t.kind.is_separator() && t.duration >= threshold)
            .count()
    }

    /// Structural checks plus symbol membership.
    pub fn validate(&self, inventory: &Inventory) -> Result<(), CorpusError> {
        let invalid = |detail: String| CorpusError::Invalid {
            utterance: self.id.clone(),
            detail,
        };
        if self.words.is_empty() {
            return Err(invalid("no words".into()));
        }
        for (i, t) in self.tokens.iter().enumerate() {
            match inventory.kind_of(&t.symbol) {
                None => {
                    return Err(CorpusError::UnknownSymbol {
                        utterance: self.id.clone(),
                        symbol: t.symbol.clone(),
                    })
                }
                Some(k) if k != t.kind => {
                    return Err(invalid(format!("token {i}: symbol {:?} is not a {:?}", t.symbol, t.kind)))
                }
                _ => {}
            }
            if !t.duration.is_finite() || t.duration < 0.0 {
                return Err(CorpusError::NegativeDuration {
                    utterance: self.id.clone(),
                    token: i,
                    duration: t.duration,
                });
            }
            if t.kind == TokenKind::Phoneme && t.duration < 1.0 {
                return Err(invalid(format!("phoneme token {i} shorter than one frame")));
            }
            if t.word_index >= self.words.len() {
                return Err(invalid(format!("token {i}: word index {} out of range", t.word_index)));
            }
        }
        let mut cursor = 0;
        for (w, word) in self.words.iter().enumerate() {
            if word.start >= word.end || word.end > self.tokens.len() {
                return Err(invalid(format!("word {w} has empty or out-of-range span")));
            }
            if word.start != cursor {
                return Err(invalid(format!("word {w} does not start where the previous one ended")));
            }
            for (i, t) in self.tokens[word.start..word.end].iter().enumerate() {
                if t.kind != TokenKind::Phoneme || t.word_index != w {
                    return Err(invalid(format!("token {} inside word {w} is not one of its phonemes", word.start + i)));
                }
            }
            cursor = word.end;
            if let Some(t) = self.tokens.get(cursor) {
                if t.kind.is_separator() {
                    if t.word_index != w {
                        return Err(invalid(format!("separator {cursor} must point at word {w}")));
                    }
                    cursor += 1;
                }
            }
        }
        if cursor != self.tokens.len() {
            return Err(invalid(format!("{} trailing tokens outside any word", self.tokens.len() - cursor)));
        }
        Ok(())
    }
}

/// Incremental construction of well-formed utterances.
#[derive(Clone, Debug)]
pub struct UtteranceBuilder {
    utt: Utterance,
}

impl UtteranceBuilder {
    pub fn new(id: impl Into<String>, speaker_id: impl Into<String>) -> Self {
        Self {
            utt: Utterance {
                id: id.into(),
                speaker_id: speaker_id.into(),
                tokens: Vec::new(),
                words: Vec::new(),
            },
        }
    }

    /// Appends a word made of `(symbol, duration)` phonemes.
    pub fn word(mut self, text: impl Into<String>, phonemes: &[(&str, f64)]) -> Self {
        let w = self.utt.words.len();
        let start = self.utt.tokens.len();
        for (s, d) in phonemes {
            self.utt.tokens.push(Token {
                kind: TokenKind::Phoneme,
                symbol: (*s).to_string(),
                word_index: w,
                duration: *d,
            });
        }
        self.utt.words.push(Word {
            text: text.into(),
            start,
            end: self.utt.tokens.len(),
        });
        self
    }

    /// Appends a separator after the most recent word.
    pub fn separator(mut self, kind: TokenKind, symbol: impl Into<String>, duration: f64) -> Self {
        let w = self.utt.words.len().saturating_sub(1);
        self.utt.tokens.push(Token {
            kind,
            symbol: symbol.into(),
            word_index: w,
            duration,
        });
        self
    }

    pub fn boundary(self, duration: f64) -> Self {
        self.separator(TokenKind::WordBoundary, "_", duration)
    }

    pub fn punct(self, symbol: &str, duration: f64) -> Self {
        self.separator(TokenKind::Punctuation, symbol, duration)
    }

    pub fn build(self) -> Utterance {
        self.utt
    }
}

/// Symbol inventory; every token symbol must be declared with its kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Inventory {
    entries: Vec<(String, TokenKind)>,
    index: HashMap<String, usize>,
}

impl Inventory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, TokenKind)>) -> Self {
        let mut inv = Self::new();
        for (s, k) in entries {
            inv.insert(s, k);
        }
        inv
    }

    /// Adds a symbol (no-op if present) and returns its index.
    pub fn insert(&mut self, symbol: impl Into<String>, kind: TokenKind) -> usize {
        let symbol = symbol.into();
        if let Some(&i) = self.index.get(&symbol) {
            return i;
        }
        self.index.insert(symbol.clone(), self.entries.len());
        self.entries.push((symbol, kind));
        self.entries.len() - 1
    }

    pub fn index(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn kind_of(&self, symbol: &str) -> Option<TokenKind> {
        self.index(symbol).map(|i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, TokenKind)] {
        &self.entries
    }

    /// Inventory indices for each token of `utt`.
    pub fn encode(&self, utt: &Utterance) -> Result<Vec<usize>, CorpusError> {
        utt.tokens
            .iter()
            .map(|t| {
                self.index(&t.symbol).ok_or_else(|| CorpusError::UnknownSymbol {
                    utterance: utt.id.clone(),
                    symbol: t.symbol.clone(),
                })
            })
            .collect()
    }
}

/// Per-(utterance, word) feature vectors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordFeatureTable {
    pub dim: usize,
    pub vectors: BTreeMap<(String, usize), Vec<f64>>,
}

impl WordFeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, utterance: &str, word: usize) -> Option<&[f64]> {
        self.vectors.get(&(utterance.to_string(), word)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, utterance: &str, word: usize, v: Vec<f64>) -> Result<(), CorpusError> {
        if v.len() != self.dim {
            return Err(CorpusError::Dimension {
                what: format!("word feature {utterance}/{word}"),
                expected: self.dim,
                got: v.len(),
            });
        }
        self.vectors.insert((utterance.to_string(), word), v);
        Ok(())
    }
}

/// Per-utterance speaker vectors grouped by speaker.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpeakerTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
}

impl SpeakerTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, speaker: &str, utterance: &str, v: Vec<f64>) -> Result<(), CorpusError> {
        if v.len() != self.dim {
            return Err(CorpusError::Dimension {
                what: format!("speaker vector {speaker}/{utterance}"),
                expected: self.dim,
                got: v.len(),
            });
        }
        self.vectors
            .entry(speaker.to_string())
            .or_default()
            .insert(utterance.to_string(), v);
        Ok(())
    }

    pub fn utterance_vector(&self, speaker: &str, utterance: &str) -> Option<&[f64]> {
        self.vectors.get(speaker)?.get(utterance).map(Vec::as_slice)
    }

    /// Table restricted to the given utterance ids.
    pub fn restricted<'a>(&self, utterances: impl IntoIterator<Item = &'a Utterance>) -> SpeakerTable {
        let mut out = SpeakerTable::new(self.dim);
        for u in utterances {
            if let Some(v) = self.utterance_vector(&u.speaker_id, &u.id) {
                out.vectors
                    .entry(u.speaker_id.clone())
                    .or_default()
                    .insert(u.id.clone(), v.to_vec());
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub inventory: Inventory,
    pub word_features: WordFeatureTable,
    pub speakers: SpeakerTable,
}

impl Corpus {
    /// Rejects the corpus unless every invariant holds.
    pub fn validate(&self) -> Result<(), CorpusError> {
        for u in &self.utterances {
            u.validate(&self.inventory)?;
            for w in 0..u.words.len() {
                if self.word_features.get(&u.id, w).is_none() {
                    return Err(CorpusError::MissingWordFeature {
                        utterance: u.id.clone(),
                        word: w,
                    });
                }
            }
            if self.speakers.vectors.get(&u.speaker_id).is_none_or(|m| m.is_empty()) {
                return Err(CorpusError::MissingSpeakerVector(u.speaker_id.clone()));
            }
        }
        Ok(())
    }

    pub fn select<'a>(&'a self, indices: &'a [usize]) -> impl Iterator<Item = &'a Utterance> + 'a {
        indices.iter().map(move |&i| &self.utterances[i])
    }

    /// Same tables, different utterances (e.g. predictions).
    pub fn with_utterances(&self, utterances: Vec<Utterance>) -> Corpus {
        Corpus {
            utterances,
            inventory: self.inventory.clone(),
            word_features: self.word_features.clone(),
            speakers: self.speakers.clone(),
        }
    }

    pub fn find(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }
}

/// One label per word: true iff the separator after it lasts at least `threshold` frames.
pub fn extract_pause_labels(utt: &Utterance, threshold: f64) -> Vec<bool> {
    (0..utt.words.len())
        .map(|w| {
            utt.separator_after(w)
                .is_some_and(|i| utt.tokens[i].duration >= threshold)
        })
        .collect()
}

/// Training-split rate statistics used to centre the speech and pause rate controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// Mean words per second.
    pub mean_speech_rate: f64,
    /// Mean words per pause over utterances with at least one pause.
    pub mean_pause_rate: f64,
    /// Pause threshold in frames.
    pub pause_threshold: f64,
}

pub fn corpus_stats<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    threshold: f64,
) -> Result<CorpusStats, CorpusError> {
    let mut n = 0usize;
    let mut rate_sum = 0.0;
    let mut pause_n = 0usize;
    let mut pause_sum = 0.0;
    for u in utterances {
        let secs = u.duration_seconds();
        if secs <= 0.0 {
            return Err(CorpusError::ZeroDuration(u.id.clone()));
        }
        n += 1;
        rate_sum += u.word_count() as f64 / secs;
        let s = u.pause_count(threshold);
        if s > 0 {
            pause_n += 1;
            pause_sum += u.word_count() as f64 / s as f64;
        }
    }
    if n == 0 {
        return Err(CorpusError::Empty("corpus_stats"));
    }
    if pause_n == 0 {
        return Err(CorpusError::NoPauses);
    }
    Ok(CorpusStats {
        mean_speech_rate: rate_sum / n as f64,
        mean_pause_rate: pause_sum / pause_n as f64,
        pause_threshold: threshold,
    })
}

/// Repeats item `i` `durations[i]` times.
pub fn upsample_by_durations<T: Clone>(items: &[T], durations: &[usize]) -> Result<Vec<T>, CorpusError> {
    if items.len() != durations.len() {
        return Err(CorpusError::LengthMismatch {
            items: items.len(),
            durations: durations.len(),
        });
    }
    let mut out = Vec::with_capacity(durations.iter().sum());
    for (item, &d) in items.iter().zip(durations) {
        out.extend(std::iter::repeat_n(item, d).cloned());
    }
    Ok(out)
}

/// Utterance indices of a train/dev/test partition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle followed by contiguous cuts at the requested ratios.
pub fn split_corpus(num_utterances: usize, seed: u64, ratios: [f64; 3]) -> Result<Split, CorpusError> {
    if num_utterances == 0 {
        return Err(CorpusError::Empty("split_corpus"));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    let mut order: Vec<usize> = (0..num_utterances).collect();
    order.shuffle(&mut SeedTree::new(seed).stream(crate::rng::streams::SPLIT));
    let n = num_utterances as f64;
    let n_train = ((n * ratios[0]).round() as usize).min(num_utterances);
    let n_dev = ((n * ratios[1]).round() as usize).min(num_utterances - n_train);
    let mut split = Split {
        train: order[..n_train].to_vec(),
        dev: order[n_train..n_train + n_dev].to_vec(),
        test: order[n_train + n_dev..].to_vec(),
    };
    split.train.sort_unstable();
    split.dev.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests;
