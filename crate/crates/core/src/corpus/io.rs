//! On-disk corpus layout.
//!
//! A corpus is a directory of four plain-text files, each starting with a
//! version header line:
//!
//! * `inventory.txt`: `#cauliflow-inventory v1`, then `<kind> <symbol>` per
//!   line with kind `P` (phoneme), `B` (word boundary) or `U` (punctuation).
//! * `utterances.jsonl`: `#cauliflow-utterances v1`, then one JSON object per
//!   utterance: `{"id", "speaker_id", "tokens": [{"kind", "symbol",
//!   "word_index", "duration"}], "words": [{"text", "start", "end"}]}`.
//!   Durations are non-negative integers (frames).
//! * `word_features.tsv`: `#cauliflow-word-features v1 dim=<D>`, then
//!   `<utterance_id>\t<word_index>\t<v0> <v1> ...`.
//! * `speaker_vectors.tsv`: `#cauliflow-speaker-vectors v1 dim=<D>`, then
//!   `<speaker_id>\t<utterance_id>\t<v0> <v1> ...`.
//!
//! Floats use shortest round-trip formatting, so save/load is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Corpus, CorpusError, Inventory, SpeakerTable, Token, TokenKind, Utterance, Word, WordFeatureTable,
};

pub const INVENTORY_FILE: &str = "inventory.txt";
pub const UTTERANCES_FILE: &str = "utterances.jsonl";
pub const WORD_FEATURES_FILE: &str = "word_features.tsv";
pub const SPEAKER_VECTORS_FILE: &str = "speaker_vectors.tsv";

pub const INVENTORY_HEADER: &str = "#cauliflow-inventory v1";
pub const UTTERANCE_HEADER: &str = "#cauliflow-utterances v1";
pub const WORD_FEATURE_HEADER: &str = "#cauliflow-word-features v1";
pub const SPEAKER_HEADER: &str = "#cauliflow-speaker-vectors v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    kind: String,
    symbol: String,
    word_index: usize,
    duration: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordRecord {
    text: String,
    start: usize,
    end: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    id: String,
    speaker_id: String,
    tokens: Vec<TokenRecord>,
    words: Vec<WordRecord>,
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn malformed(file: &str, line: usize, detail: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        file: file.to_string(),
        line,
        detail: detail.into(),
    }
}

/// Non-empty, non-header lines with 1-based line numbers.
fn body_lines<'a>(text: &'a str, file: &str, header: &str) -> Result<Vec<(usize, &'a str)>, CorpusError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end().starts_with(header) => {}
        _ => return Err(malformed(file, 1, format!("expected header {header:?}"))),
    }
    Ok(lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect())
}

fn parse_dim(text: &str, file: &str) -> Result<usize, CorpusError> {
    let first = text.lines().next().unwrap_or_default();
    first
        .split_whitespace()
        .find_map(|f| f.strip_prefix("dim="))
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| malformed(file, 1, "header lacks dim=<D>"))
}

fn parse_floats(s: &str, file: &str, line: usize) -> Result<Vec<f64>, CorpusError> {
    s.split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(file, line, format!("bad float {v:?}")))
        })
        .collect()
}

fn format_floats(v: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:e}");
    }
    s
}

fn kind_name(kind: TokenKind) -> &'static str {
    kind.code()
}

pub(super) fn parse_inventory(text: &str) -> Result<Inventory, CorpusError> {
    let mut inv = Inventory::new();
    for (line, l) in body_lines(text, INVENTORY_FILE, INVENTORY_HEADER)? {
        let mut f = l.split_whitespace();
        let (Some(kind), Some(symbol), None) = (f.next(), f.next(), f.next()) else {
            return Err(malformed(INVENTORY_FILE, line, "expected `<kind> <symbol>`"));
        };
        let kind =
            TokenKind::from_code(kind).ok_or_else(|| malformed(INVENTORY_FILE, line, format!("unknown kind {kind:?}")))?;
        if inv.index(symbol).is_some() {
            return Err(malformed(INVENTORY_FILE, line, format!("duplicate symbol {symbol:?}")));
        }
        inv.insert(symbol, kind);
    }
    Ok(inv)
}

fn parse_utterance(line: usize, l: &str) -> Result<Utterance, CorpusError> {
    let rec: UtteranceRecord = serde_json::from_str(l).map_err(|e| malformed(UTTERANCES_FILE, line, e.to_string()))?;
    let mut tokens = Vec::with_capacity(rec.tokens.len());
    for (i, t) in rec.tokens.into_iter().enumerate() {
        let kind = TokenKind::from_code(&t.kind)
            .ok_or_else(|| malformed(UTTERANCES_FILE, line, format!("token {i}: unknown kind {:?}", t.kind)))?;
        if t.duration < 0 {
            return Err(CorpusError::NegativeDuration {
                utterance: rec.id.clone(),
                token: i,
                duration: t.duration as f64,
            });
        }
        tokens.push(Token {
            kind,
            symbol: t.symbol,
            word_index: t.word_index,
            duration: t.duration as f64,
        });
    }
    let words = rec
        .words
        .into_iter()
        .map(|w| Word {
            text: w.text,
            start: w.start,
            end: w.end,
        })
        .collect();
    Ok(Utterance {
        id: rec.id,
        speaker_id: rec.speaker_id,
        tokens,
        words,
    })
}

pub(super) fn parse_utterances(text: &str) -> Result<Vec<Utterance>, CorpusError> {
    body_lines(text, UTTERANCES_FILE, UTTERANCE_HEADER)?
        .into_iter()
        .map(|(line, l)| parse_utterance(line, l))
        .collect()
}

pub(super) fn format_utterances(utterances: &[Utterance]) -> Result<String, CorpusError> {
    let mut out = String::from(UTTERANCE_HEADER);
    out.push('\n');
    for u in utterances {
        let tokens = u
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.duration < 0.0 || t.duration.fract() != 0.0 || !t.duration.is_finite() {
                    return Err(CorpusError::Invalid {
                        utterance: u.id.clone(),
                        detail: format!("token {i} duration {} is not a non-negative integer", t.duration),
                    });
                }
                Ok(TokenRecord {
                    kind: kind_name(t.kind).to_string(),
                    symbol: t.symbol.clone(),
                    word_index: t.word_index,
                    duration: t.duration as i64,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rec = UtteranceRecord {
            id: u.id.clone(),
            speaker_id: u.speaker_id.clone(),
            tokens,
            words: u
                .words
                .iter()
                .map(|w| WordRecord {
                    text: w.text.clone(),
                    start: w.start,
                    end: w.end,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("records serialise"));
        out.push('\n');
    }
    Ok(out)
}

fn parse_word_features(text: &str) -> Result<WordFeatureTable, CorpusError> {
    let file = WORD_FEATURES_FILE;
    let mut table = WordFeatureTable::new(parse_dim(text, file)?);
    for (line, l) in body_lines(text, file, WORD_FEATURE_HEADER)? {
        let mut f = l.splitn(3, '\t');
        let (Some(utt), Some(word), Some(vals)) = (f.next(), f.next(), f.next()) else {
            return Err(malformed(file, line, "expected 3 tab-separated fields"));
        };
        let word: usize = word.parse().map_err(|_| malformed(file, line, "bad word index"))?;
        let v = parse_floats(vals, file, line)?;
        if table.get(utt, word).is_some() {
            return Err(malformed(file, line, "duplicate entry"));
        }
        table.insert(utt, word, v).map_err(|e| malformed(file, line, e.to_string()))?;
    }
    Ok(table)
}

fn parse_speakers(text: &str) -> Result<SpeakerTable, CorpusError> {
    let file = SPEAKER_VECTORS_FILE;
    let mut table = SpeakerTable::new(parse_dim(text, file)?);
    for (line, l) in body_lines(text, file, SPEAKER_HEADER)? {
        let mut f = l.splitn(3, '\t');
        let (Some(spk), Some(utt), Some(vals)) = (f.next(), f.next(), f.next()) else {
            return Err(malformed(file, line, "expected 3 tab-separated fields"));
        };
        let v = parse_floats(vals, file, line)?;
        table.insert(spk, utt, v).map_err(|e| malformed(file, line, e.to_string()))?;
    }
    Ok(table)
}

impl Corpus {
    /// Loads and validates a corpus directory.
    pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
        let corpus = Corpus {
            inventory: parse_inventory(&read(&dir.join(INVENTORY_FILE))?)?,
            utterances: parse_utterances(&read(&dir.join(UTTERANCES_FILE))?)?,
            word_features: parse_word_features(&read(&dir.join(WORD_FEATURES_FILE))?)?,
            speakers: parse_speakers(&read(&dir.join(SPEAKER_VECTORS_FILE))?)?,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Writes all four corpus files into `dir` (created if missing).
    pub fn save(&self, dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut inv = String::from(INVENTORY_HEADER);
        inv.push('\n');
        for (s, k) in self.inventory.entries() {
            let _ = writeln!(inv, "{} {s}", kind_name(*k));
        }
        write(&dir.join(INVENTORY_FILE), &inv)?;
        write(&dir.join(UTTERANCES_FILE), &format_utterances(&self.utterances)?)?;

        let mut wf = format!("{WORD_FEATURE_HEADER} dim={}\n", self.word_features.dim);
        for ((utt, w), v) in &self.word_features.vectors {
            let _ = writeln!(wf, "{utt}\t{w}\t{}", format_floats(v));
        }
        write(&dir.join(WORD_FEATURES_FILE), &wf)?;

        let mut sp = format!("{SPEAKER_HEADER} dim={}\n", self.speakers.dim);
        for (spk, m) in &self.speakers.vectors {
            for (utt, v) in m {
                let _ = writeln!(sp, "{spk}\t{utt}\t{}", format_floats(v));
            }
        }
        write(&dir.join(SPEAKER_VECTORS_FILE), &sp)?;
        Ok(())
    }

    /// Writes only `utterances.jsonl` (e.g. a prediction run) into `dir`.
    pub fn save_utterances(utterances: &[Utterance], dir: &Path) -> Result<(), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write(&dir.join(UTTERANCES_FILE), &format_utterances(utterances)?)
    }

    /// Reads an `utterances.jsonl` file without sidecars or validation.
    pub fn load_utterances(path: &Path) -> Result<Vec<Utterance>, CorpusError> {
        parse_utterances(&read(path)?)
    }
}
