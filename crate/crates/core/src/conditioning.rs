//! Conditioning inputs: phoneme encoder outputs, per-token word features,
//! speaker vectors and the speech/pause rate scalars.

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::corpus::{Corpus, CorpusError, CorpusStats, SpeakerTable, TokenKind, Utterance, WordFeatureTable};
use crate::nn::{uniform_param, zero_padded_rows, Conv1d, Init};

/// rp assigned to utterances without any pause.
pub const DEFAULT_RP_MAX: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum ConditioningError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{what}: expected {expected} values, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub kernel: usize,
    /// Plain convolutions before the residual stack.
    pub conv_layers: usize,
    pub dilations: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            kernel: 3,
            conv_layers: 3,
            dilations: vec![1, 2, 4, 8],
        }
    }
}

/// Symbol embedding followed by convolutions and dilated residual layers.
///
/// `extra_channels` lets a caller append per-token inputs (for example a pause
/// label) to the embedding before the first convolution.
#[derive(Clone, Debug)]
pub struct PhonemeEncoder {
    pub embedding: ParamId,
    pub convs: Vec<Conv1d>,
    pub residual: Vec<Conv1d>,
    pub extra_channels: usize,
    pub config: EncoderConfig,
}

impl PhonemeEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        vocab: usize,
        extra_channels: usize,
        config: &EncoderConfig,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self, AutodiffError> {
        let e = config.dim;
        let embedding = uniform_param(store, &format!("{prefix}.embedding"), vocab, e, 1.0, rng)?;
        let mut convs = Vec::with_capacity(config.conv_layers);
        for i in 0..config.conv_layers {
            let cin = if i == 0 { e + extra_channels } else { e };
            convs.push(Conv1d::new(
                store,
                &format!("{prefix}.conv{i}"),
                cin,
                e,
                config.kernel,
                1,
                Init::Uniform,
                rng,
            )?);
        }
        let mut residual = Vec::with_capacity(config.dilations.len());
        for (i, &d) in config.dilations.iter().enumerate() {
            residual.push(Conv1d::new(
                store,
                &format!("{prefix}.res{i}"),
                e,
                e,
                config.kernel,
                d,
                Init::Uniform,
                rng,
            )?);
        }
        Ok(Self {
            embedding,
            convs,
            residual,
            extra_channels,
            config: config.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// Tokens on each side that can influence one output position.
    pub fn receptive_radius(&self) -> usize {
        // A centred layer reaches ceil((K-1)d/2) tokens on its wider side.
        let k = self.config.kernel - 1;
        let plain = self.convs.len() * k.div_ceil(2);
        plain + self.config.dilations.iter().map(|d| (k * d).div_ceil(2)).sum::<usize>()
    }

    /// `[P, dim]` encoding of symbol indices; rows with `valid[i] == false` are zeroed.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        indices: &[usize],
        extra: Option<Var>,
        valid: &[bool],
    ) -> Result<Var, AutodiffError> {
        let table = g.param(store, self.embedding);
        let mut x = g.embedding(table, indices.to_vec())?;
        match (extra, self.extra_channels) {
            (Some(v), n) if n > 0 => x = g.concat(&[x, v], 1)?,
            (None, 0) => {}
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "encoder",
                    detail: format!("expected {} extra channels", self.extra_channels),
                })
            }
        }
        x = zero_padded_rows(g, x, valid)?;
        for conv in &self.convs {
            x = conv.forward(g, store, x)?;
            x = g.tanh(x)?;
            x = zero_padded_rows(g, x, valid)?;
        }
        for conv in &self.residual {
            let h = conv.forward(g, store, x)?;
            let h = g.tanh(h)?;
            x = g.add(x, h)?;
            x = zero_padded_rows(g, x, valid)?;
        }
        Ok(x)
    }

    /// Encoder outputs as a plain tensor.
    pub fn encode(&self, store: &ParamStore, indices: &[usize], extra: Option<Tensor>) -> Result<Tensor, AutodiffError> {
        let mut g = Graph::new();
        let extra = extra.map(|t| g.constant(t));
        let valid = vec![true; indices.len()];
        let y = self.forward(&mut g, store, indices, extra, &valid)?;
        Ok(g.value(y).clone())
    }
}

/// `[P, D_w]` word features: every token takes the vector of its word; a
/// separator takes the vector of the word before it.
pub fn upsample_word_features(utt: &Utterance, table: &WordFeatureTable) -> Result<Tensor, CorpusError> {
    let mut data = Vec::with_capacity(utt.tokens.len() * table.dim);
    for t in &utt.tokens {
        let v = table.get(&utt.id, t.word_index).ok_or_else(|| CorpusError::MissingWordFeature {
            utterance: utt.id.clone(),
            word: t.word_index,
        })?;
        data.extend_from_slice(v);
    }
    Ok(Tensor::new(vec![utt.tokens.len(), table.dim], data).expect("row lengths match dim"))
}

/// Arithmetic mean of a speaker's utterance vectors.
pub fn mean_speaker_embedding(speaker: &str, table: &SpeakerTable) -> Result<Vec<f64>, CorpusError> {
    let vectors = table
        .vectors
        .get(speaker)
        .filter(|m| !m.is_empty())
        .ok_or_else(|| CorpusError::UnknownSpeaker(speaker.to_string()))?;
    let mut mean = vec![0.0; table.dim];
    for v in vectors.values() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Mean embedding of every speaker in the table.
pub fn mean_speaker_embeddings(table: &SpeakerTable) -> BTreeMap<String, Vec<f64>> {
    table
        .vectors
        .keys()
        .map(|s| (s.clone(), mean_speaker_embedding(s, table).expect("speaker present")))
        .collect()
}

/// Speech-rate deviation: words per second minus the training mean.
pub fn compute_rs(utt: &Utterance, stats: &CorpusStats) -> Result<f64, CorpusError> {
    let secs = utt.duration_seconds();
    if secs <= 0.0 {
        return Err(CorpusError::ZeroDuration(utt.id.clone()));
    }
    Ok(utt.word_count() as f64 / secs - stats.mean_speech_rate)
}

/// Pause-rate deviation: words per pause minus the training mean, or `rp_max` without pauses.
pub fn compute_rp(utt: &Utterance, stats: &CorpusStats, rp_max: f64) -> f64 {
    match utt.pause_count(stats.pause_threshold) {
        0 => rp_max,
        s => utt.word_count() as f64 / s as f64 - stats.mean_pause_rate,
    }
}

/// Optional inference-time replacements for rs and rp.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateOverrides {
    pub rs: Option<f64>,
    pub rp: Option<f64>,
}

/// Where conditioning values come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode<'a> {
    /// Measured rs/rp and the utterance's own speaker vector.
    Training,
    /// Overrides (or zero) and the speaker's mean vector.
    Inference {
        overrides: RateOverrides,
        speaker_means: &'a BTreeMap<String, Vec<f64>>,
    },
}

/// Everything the flow conditions on except learned encoder outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningInputs {
    pub symbols: Vec<usize>,
    pub kinds: Vec<TokenKind>,
    /// `[P, D_w]`.
    pub word_features: Tensor,
    pub speaker: Vec<f64>,
    pub rs: f64,
    pub rp: f64,
}

impl ConditioningInputs {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

pub fn conditioning_inputs(
    utt: &Utterance,
    corpus: &Corpus,
    stats: &CorpusStats,
    rp_max: f64,
    mode: Mode<'_>,
) -> Result<ConditioningInputs, CorpusError> {
    let symbols = corpus.inventory.encode(utt)?;
    let word_features = upsample_word_features(utt, &corpus.word_features)?;
    let (speaker, rs, rp) = match mode {
        Mode::Training => {
            let v = corpus
                .speakers
                .utterance_vector(&utt.speaker_id, &utt.id)
                .ok_or_else(|| CorpusError::MissingSpeakerVector(utt.speaker_id.clone()))?;
            (v.to_vec(), compute_rs(utt, stats)?, compute_rp(utt, stats, rp_max))
        }
        Mode::Inference {
            overrides,
            speaker_means,
        } => {
            let v = speaker_means
                .get(&utt.speaker_id)
                .ok_or_else(|| CorpusError::UnknownSpeaker(utt.speaker_id.clone()))?;
            (v.clone(), overrides.rs.unwrap_or(0.0), overrides.rp.unwrap_or(0.0))
        }
    };
    Ok(ConditioningInputs {
        symbols,
        kinds: utt.kinds(),
        word_features,
        speaker,
        rs,
        rp,
    })
}

/// The assembled condition for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningBundle {
    /// `[P, E]` encoder outputs.
    pub ph: Tensor,
    /// `[P, D_w]` upsampled word features.
    pub w: Tensor,
    pub spk: Vec<f64>,
    pub rs: f64,
    pub rp: f64,
    /// True on real tokens.
    pub mask: Vec<bool>,
}

pub fn assemble_conditioning(
    inputs: &ConditioningInputs,
    encoder: &PhonemeEncoder,
    store: &ParamStore,
) -> Result<ConditioningBundle, ConditioningError> {
    if inputs.word_features.rows() != inputs.len() {
        return Err(ConditioningError::Dimension {
            what: "word feature rows",
            expected: inputs.len(),
            got: inputs.word_features.rows(),
        });
    }
    let ph = encoder.encode(store, &inputs.symbols, None)?;
    Ok(ConditioningBundle {
        ph,
        w: inputs.word_features.clone(),
        spk: inputs.speaker.clone(),
        rs: inputs.rs,
        rp: inputs.rp,
        mask: vec![true; inputs.len()],
    })
}
