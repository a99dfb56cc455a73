//! Data directories.
//!
//! `gen-data` writes `corpus/`, `split.json`, `latents.jsonl` and
//! `generator.toml`. Any directory holding the corpus files directly also
//! works; it is then split 80/10/10 with seed 0.

use std::path::{Path, PathBuf};

use cauliflow_core::corpus::{split_corpus, Split, UTTERANCES_FILE};
use cauliflow_core::Corpus;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CORPUS_DIR: &str = "corpus";
pub const SPLIT_FILE: &str = "split.json";
pub const LATENTS_FILE: &str = "latents.jsonl";
pub const GENERATOR_FILE: &str = "generator.toml";

pub struct Dataset {
    pub corpus: Corpus,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    #[default]
    Test,
    All,
}

impl SplitName {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            other => Err(CliError::Usage(format!(
                "unknown split `{other}`; expected train, dev, test or all"
            ))),
        }
    }
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        if !dir.is_dir() {
            return Err(CliError::missing(dir, "data directory not found; run `cauliflow gen-data` first"));
        }
        let nested = dir.join(CORPUS_DIR);
        let corpus_dir = if nested.join(UTTERANCES_FILE).is_file() { nested } else { dir.to_path_buf() };
        if !corpus_dir.join(UTTERANCES_FILE).is_file() {
            return Err(CliError::missing(
                corpus_dir.join(UTTERANCES_FILE),
                "not a corpus or gen-data directory",
            ));
        }
        let corpus = Corpus::load(&corpus_dir).map_err(|e| CliError::Config(format!("corpus: {e}")))?;
        let split_path = dir.join(SPLIT_FILE);
        let split = if split_path.is_file() {
            let text = std::fs::read_to_string(&split_path).map_err(CliError::runtime)?;
            let s: Split = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", split_path.display())))?;
            let n = corpus.utterances.len();
            if s.train.iter().chain(&s.dev).chain(&s.test).any(|&i| i >= n) {
                return Err(CliError::Config(format!("{}: index beyond {n} utterances", split_path.display())));
            }
            s
        } else {
            split_corpus(corpus.utterances.len(), 0, [0.8, 0.1, 0.1]).map_err(|e| CliError::Config(e.to_string()))?
        };
        Ok(Self { corpus, split })
    }

    pub fn indices(&self, which: SplitName) -> Vec<usize> {
        match which {
            SplitName::Train => self.split.train.clone(),
            SplitName::Dev => self.split.dev.clone(),
            SplitName::Test => self.split.test.clone(),
            SplitName::All => (0..self.corpus.utterances.len()).collect(),
        }
    }
}

/// `path` itself when it is a file, else `path/utterances.jsonl`.
pub fn utterances_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(UTTERANCES_FILE)
    } else {
        path.to_path_buf()
    }
}
