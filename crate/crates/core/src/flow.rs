//! Cauliflow: a conditional normalising flow over per-token durations.
//!
//! Durations are dequantised, optionally moved to `ln(1 + y)`, then squeezed
//! into `[P/g, g]` groups so that coupling layers have channels to split.
//! Each step is actnorm, then an LU-factored channel mixing, then an affine
//! coupling whose conditioner sees half the channels plus the projected
//! condition. Padded positions are kept at exactly zero throughout and
//! contribute nothing to the log-determinant.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Graph, ParamId, ParamStore, Tensor, Var};
use crate::conditioning::{
    conditioning_inputs, mean_speaker_embeddings, ConditioningInputs, EncoderConfig, Mode, PhonemeEncoder, RateOverrides,
    DEFAULT_RP_MAX,
};
use crate::corpus::{corpus_stats, Corpus, CorpusStats, TokenKind, Utterance, DEFAULT_PAUSE_THRESHOLD};
use crate::nn::{repeat_row, uniform_param, zero_padded_rows, Conv1d, Init};
use crate::rng::{streams, SeedTree};
use crate::train::{fit, load_meta, load_params_into, save_model, Contribution, ModelError, TrainConfig, TrainReport};

pub const LOG_SCALE_CLAMP: f64 = 7.0;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
/// Sampled durations are shifted down by the mean of the dequantisation noise.
pub const DEQUANT_OFFSET: f64 = 0.5;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Number of flow steps K.
    pub steps: usize,
    /// Squeeze group size g; must be even.
    pub group: usize,
    /// Per-token width of the projected condition.
    pub cond_channels: usize,
    /// Coupling conditioner width.
    pub hidden: usize,
    pub encoder: EncoderConfig,
    /// Model `ln(1 + y)` instead of `y`.
    pub log_domain: bool,
    pub rp_max: f64,
    /// Pause threshold (frames) used for the rate statistics.
    pub pause_threshold: f64,
    /// Utterances used for the data-dependent actnorm initialisation.
    pub init_utterances: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            group: 4,
            cond_channels: 16,
            hidden: 16,
            encoder: EncoderConfig::default(),
            log_domain: true,
            rp_max: DEFAULT_RP_MAX,
            pause_threshold: DEFAULT_PAUSE_THRESHOLD,
            init_utterances: 64,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps == 0 {
            return Err(ModelError::Invalid("flow needs at least one step".into()));
        }
        if self.group < 2 || self.group % 2 != 0 {
            return Err(ModelError::Invalid(format!("group size must be even and >= 2, got {}", self.group)));
        }
        if self.cond_channels == 0 || self.hidden == 0 {
            return Err(ModelError::Invalid("cond_channels and hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Input sizes the model is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDims {
    pub vocab: usize,
    pub word_dim: usize,
    pub speaker_dim: usize,
}

impl FlowDims {
    pub fn of(corpus: &Corpus) -> Self {
        Self {
            vocab: corpus.inventory.len(),
            word_dim: corpus.word_features.dim,
            speaker_dim: corpus.speakers.dim,
        }
    }
}

/// Regroups a length-P sequence into `[ceil(P/g), g]`, zero padded. The mask is
/// true on real entries.
pub fn squeeze(x: &[f64], g: usize) -> (Tensor, Vec<bool>) {
    let rows = x.len().div_ceil(g).max(1);
    let mut data = vec![0.0; rows * g];
    data[..x.len()].copy_from_slice(x);
    let mask = (0..rows * g).map(|i| i < x.len()).collect();
    (Tensor::new(vec![rows, g], data).expect("sizes agree"), mask)
}

pub fn unsqueeze(t: &Tensor, len: usize) -> Vec<f64> {
    t.data()[..len].to_vec()
}

/// `y = d + u`, `u ~ U[0, 1)` per token.
pub fn dequantize(durations: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
    durations.iter().map(|d| d + rng.random::<f64>()).collect()
}

/// Rounds to whole frames and enforces the per-kind floor; returns the
/// durations and how many were clamped.
pub fn postprocess(real: &[f64], kinds: &[TokenKind]) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let out = real
        .iter()
        .zip(kinds)
        .map(|(&y, kind)| {
            let floor = if *kind == TokenKind::Phoneme { 1.0 } else { 0.0 };
            let r = if y.is_finite() { y.round() } else { floor };
            if r < floor {
                clamped += 1;
                floor
            } else {
                // Normalises -0.0.
                r + 0.0
            }
        })
        .collect();
    (out, clamped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DurationSample {
    pub real: Vec<f64>,
    pub durations: Vec<f64>,
    pub temperature: f64,
    pub clamped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLikelihood {
    pub total: f64,
    pub per_token: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug)]
struct FlowStep {
    an_bias: ParamId,
    an_logs: ParamId,
    mix_lower: ParamId,
    mix_upper: ParamId,
    mix_logd: ParamId,
    cpl_in: Conv1d,
    cpl_rate: ParamId,
    cpl_out: Conv1d,
}

/// Per-utterance padding geometry.
struct Layout {
    len: usize,
    rows: usize,
    /// `[rows, g]`, true on padded entries.
    padded: Vec<bool>,
    row_valid: Vec<bool>,
    /// Real entries per channel, as a `[g, 1]` column.
    counts: Tensor,
}

impl Layout {
    fn new(len: usize, group: usize) -> Self {
        let rows = len.div_ceil(group).max(1);
        let padded: Vec<bool> = (0..rows * group).map(|i| i >= len).collect();
        let row_valid = (0..rows).map(|r| r * group < len).collect();
        let counts = (0..group)
            .map(|c| (0..rows).filter(|r| r * group + c < len).count() as f64)
            .collect();
        Self {
            len,
            rows,
            padded,
            row_valid,
            counts: Tensor::new(vec![group, 1], counts).expect("sizes agree"),
        }
    }

    /// Mask for a channel slice `[start, start + width)`.
    fn slice_padding(&self, group: usize, start: usize, width: usize) -> Vec<bool> {
        (0..self.rows)
            .flat_map(|r| (start..start + width).map(move |c| (r, c)))
            .map(|(r, c)| self.padded[r * group + c])
            .collect()
    }
}

fn mask_padding(g: &mut Graph, x: Var, mask: &[bool]) -> Result<Var, AutodiffError> {
    if mask.iter().any(|&m| m) {
        g.masked_fill(x, mask.to_vec(), 0.0)
    } else {
        Ok(x)
    }
}

fn strict_mask(n: usize, lower: bool) -> Tensor {
    let data = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n, i % n);
            if (lower && r > c) || (!lower && r < c) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(vec![n, n], data).expect("sizes agree")
}

/// Inverse of an `n x n` triangular matrix by substitution.
fn triangular_inverse(m: &[f64], n: usize, lower: bool) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        // Solve m * x = e_col.
        let order: Vec<usize> = if lower { (0..n).collect() } else { (0..n).rev().collect() };
        for &r in &order {
            let mut acc = if r == col { 1.0 } else { 0.0 };
            for &k in &order {
                if k == r {
                    break;
                }
                acc -= m[r * n + k] * inv[k * n + col];
            }
            inv[r * n + col] = acc / m[r * n + r];
        }
    }
    inv
}

fn map_step_err(step: usize) -> impl Fn(AutodiffError) -> ModelError {
    move |e| match e {
        AutodiffError::NonFinite { .. } => ModelError::NonFiniteStep { step },
        other => other.into(),
    }
}

/// Metadata stored next to the parameter checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowMeta {
    pub config: FlowConfig,
    pub dims: FlowDims,
    pub stats: CorpusStats,
    pub speaker_means: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct CauliflowModel {
    pub config: FlowConfig,
    pub dims: FlowDims,
    pub store: ParamStore,
    pub stats: CorpusStats,
    pub speaker_means: BTreeMap<String, Vec<f64>>,
    encoder: PhonemeEncoder,
    proj_tok: Conv1d,
    proj_spk: ParamId,
    steps: Vec<FlowStep>,
}

/// File stem of a saved flow (`flow.params`, `flow.json`).
pub const MODEL_STEM: &str = "flow";

impl CauliflowModel {
    /// A freshly initialised model: identity actnorm and mixing, zero coupling output.
    pub fn new(
        config: FlowConfig,
        dims: FlowDims,
        stats: CorpusStats,
        speaker_means: BTreeMap<String, Vec<f64>>,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = SeedTree::new(seed).stream(streams::INIT);
        let mut store = ParamStore::new();
        let encoder = PhonemeEncoder::new(&mut store, "enc", dims.vocab, 0, &config.encoder, &mut rng)?;
        let cp = config.cond_channels;
        let g = config.group;
        let h = config.hidden;
        let proj_tok = Conv1d::linear(&mut store, "proj.tok", encoder.dim() + dims.word_dim, cp, Init::Uniform, &mut rng)?;
        let bound = 1.0 / (dims.speaker_dim.max(1) as f64).sqrt();
        let proj_spk = uniform_param(&mut store, "proj.spk", dims.speaker_dim, cp, bound, &mut rng)?;
        let mut steps = Vec::with_capacity(config.steps);
        for k in 0..config.steps {
            let p = format!("step{k}");
            let an_bias = store.add(format!("{p}.an.bias"), Tensor::zeros(&[1, g]))?;
            let an_logs = store.add(format!("{p}.an.logs"), Tensor::zeros(&[1, g]))?;
            let mix_lower = store.add(format!("{p}.mix.lower"), Tensor::zeros(&[g, g]))?;
            let mix_upper = store.add(format!("{p}.mix.upper"), Tensor::zeros(&[g, g]))?;
            let mix_logd = store.add(format!("{p}.mix.logd"), Tensor::zeros(&[1, g]))?;
            let cpl_in = Conv1d::new(&mut store, &format!("{p}.cpl.in"), g / 2 + g * cp, 2 * h, 3, 1, Init::Uniform, &mut rng)?;
            let cpl_rate = uniform_param(&mut store, &format!("{p}.cpl.rate"), 2, 2 * h, 0.5, &mut rng)?;
            let cpl_out = Conv1d::new(&mut store, &format!("{p}.cpl.out"), h, g, 3, 2, Init::Zeros, &mut rng)?;
            steps.push(FlowStep {
                an_bias,
                an_logs,
                mix_lower,
                mix_upper,
                mix_logd,
                cpl_in,
                cpl_rate,
                cpl_out,
            });
        }
        Ok(Self {
            config,
            dims,
            store,
            stats,
            speaker_means,
            encoder,
            proj_tok,
            proj_spk,
            steps,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Adds `U(-scale, scale)` noise to every parameter. Used to test the
    /// transform away from its identity initialisation.
    pub fn randomize(&mut self, seed: u64, scale: f64) -> Result<(), ModelError> {
        let mut rng = SeedTree::new(seed).stream("randomize");
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let mut t = self.store.value(id).clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-scale..scale));
            self.store.set(id, t)?;
        }
        Ok(())
    }

    /// Conditioning for one utterance: `[rows, g * Cp]` plus the `[1, 2]` rate row.
    fn condition(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &ConditioningInputs,
        layout: &Layout,
    ) -> Result<(Var, Var), ModelError> {
        let p = inputs.len();
        let group = self.config.group;
        let padded_len = layout.rows * group;
        let valid: Vec<bool> = (0..padded_len).map(|i| i < layout.len).collect();
        let mut symbols = inputs.symbols.clone();
        symbols.resize(padded_len, 0);
        symbols.truncate(padded_len);
        let ph = self.encoder.forward(g, store, &symbols, None, &valid)?;
        let dw = self.dims.word_dim;
        let mut wdata = vec![0.0; padded_len * dw];
        let keep = layout.len.min(p);
        wdata[..keep * dw].copy_from_slice(&inputs.word_features.data()[..keep * dw]);
        let w = g.constant(Tensor::new(vec![padded_len, dw], wdata)?);
        let both = g.concat(&[ph, w], 1)?;
        let tok = self.proj_tok.forward(g, store, both)?;
        let spk = g.constant(Tensor::new(vec![1, self.dims.speaker_dim], inputs.speaker.clone())?);
        let ws = g.param(store, self.proj_spk);
        let spk = g.matmul(spk, ws)?;
        let spk = repeat_row(g, spk, padded_len)?;
        let c = g.add(tok, spk)?;
        let c = zero_padded_rows(g, c, &valid)?;
        let c = g.reshape(c, &[layout.rows, group * self.config.cond_channels])?;
        let rates = g.constant(Tensor::new(vec![1, 2], vec![inputs.rs, inputs.rp])?);
        Ok((c, rates))
    }

    fn actnorm_factors(&self, g: &mut Graph, store: &ParamStore, step: &FlowStep, rows: usize) -> Result<(Var, Var, Var), AutodiffError> {
        let b = g.param(store, step.an_bias);
        let logs = g.param(store, step.an_logs);
        let br = repeat_row(g, b, rows)?;
        let s = g.exp(logs)?;
        let sr = repeat_row(g, s, rows)?;
        Ok((br, sr, logs))
    }

    /// Mixing matrices `(A, B)` with `W = A B`.
    fn mixing(&self, g: &mut Graph, store: &ParamStore, step: &FlowStep) -> Result<(Var, Var, Var), AutodiffError> {
        let n = self.config.group;
        let lower = g.param(store, step.mix_lower);
        let lm = g.constant(strict_mask(n, true));
        let lower = g.mul(lower, lm)?;
        let logd = g.param(store, step.mix_logd);
        let d = g.exp(logd)?;
        let dr = repeat_row(g, d, n)?;
        let eye = g.constant(Tensor::eye(n));
        let diag = g.mul(dr, eye)?;
        let a = g.add(lower, diag)?;
        let upper = g.param(store, step.mix_upper);
        let um = g.constant(strict_mask(n, false));
        let upper = g.mul(upper, um)?;
        let b = g.add(upper, eye)?;
        Ok((a, b, logd))
    }

    /// Log-scale and shift for the transformed half, both `[rows, g/2]` and masked.
    #[allow(clippy::too_many_arguments)]
    fn coupling_params(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        step: &FlowStep,
        xa: Var,
        cond: Var,
        rates: Var,
        layout: &Layout,
        b_mask: &[bool],
    ) -> Result<(Var, Var), AutodiffError> {
        let h = self.config.hidden;
        let half = self.config.group / 2;
        let inp = g.concat(&[xa, cond], 1)?;
        let inp = zero_padded_rows(g, inp, &layout.row_valid)?;
        let hid = step.cpl_in.forward(g, store, inp)?;
        let wr = g.param(store, step.cpl_rate);
        let rb = g.matmul(rates, wr)?;
        let rb = repeat_row(g, rb, layout.rows)?;
        let hid = g.add(hid, rb)?;
        let ht = g.slice(hid, 1, 0, h)?;
        let ht = g.tanh(ht)?;
        let hs = g.slice(hid, 1, h, 2 * h)?;
        let hs = g.sigmoid(hs)?;
        let gated = g.mul(ht, hs)?;
        let gated = zero_padded_rows(g, gated, &layout.row_valid)?;
        let out = step.cpl_out.forward(g, store, gated)?;
        let raw = g.slice(out, 1, 0, half)?;
        let raw = g.scale(raw, 1.0 / LOG_SCALE_CLAMP)?;
        let raw = g.tanh(raw)?;
        let s = g.scale(raw, LOG_SCALE_CLAMP)?;
        let s = mask_padding(g, s, b_mask)?;
        let t = g.slice(out, 1, half, 2 * half)?;
        let t = mask_padding(g, t, b_mask)?;
        Ok((s, t))
    }

    fn halves(&self, k: usize) -> (usize, usize) {
        let half = self.config.group / 2;
        if k % 2 == 0 {
            (0, half)
        } else {
            (half, 0)
        }
    }

    /// One step in the data-to-latent direction; returns the output and its log-det.
    #[allow(clippy::too_many_arguments)]
    fn normalize_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        k: usize,
        x: Var,
        cond: Var,
        rates: Var,
        layout: &Layout,
    ) -> Result<(Var, Var), AutodiffError> {
        let step = &self.steps[k];
        let group = self.config.group;
        let half = group / 2;
        let counts = g.constant(layout.counts.clone());
        // actnorm
        let (br, sr, logs) = self.actnorm_factors(g, store, step, layout.rows)?;
        let x = g.add(x, br)?;
        let x = g.mul(x, sr)?;
        let x = mask_padding(g, x, &layout.padded)?;
        let ld_an = g.matmul(logs, counts)?;
        // mixing
        let (a, b, logd) = self.mixing(g, store, step)?;
        let x = g.matmul(x, a)?;
        let x = g.matmul(x, b)?;
        let x = mask_padding(g, x, &layout.padded)?;
        let ld_mix = g.matmul(logd, counts)?;
        // coupling
        let (a0, b0) = self.halves(k);
        let xa = g.slice(x, 1, a0, a0 + half)?;
        let xb = g.slice(x, 1, b0, b0 + half)?;
        let b_mask = layout.slice_padding(group, b0, half);
        let (s, t) = self.coupling_params(g, store, step, xa, cond, rates, layout, &b_mask)?;
        let es = g.exp(s)?;
        let yb = g.mul(xb, es)?;
        let yb = g.add(yb, t)?;
        let y = if a0 == 0 { g.concat(&[xa, yb], 1)? } else { g.concat(&[yb, xa], 1)? };
        let ld_cpl = g.sum(s)?;
        let ld = g.add(ld_an, ld_mix)?;
        let ld = g.sum(ld)?;
        let ld = g.add(ld, ld_cpl)?;
        Ok((y, ld))
    }

    /// Exact inverse of [`Self::normalize_step`].
    #[allow(clippy::too_many_arguments)]
    fn generate_step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        k: usize,
        y: Var,
        cond: Var,
        rates: Var,
        layout: &Layout,
    ) -> Result<Var, AutodiffError> {
        let step = &self.steps[k];
        let group = self.config.group;
        let half = group / 2;
        let (a0, b0) = self.halves(k);
        let ya = g.slice(y, 1, a0, a0 + half)?;
        let yb = g.slice(y, 1, b0, b0 + half)?;
        let b_mask = layout.slice_padding(group, b0, half);
        let (s, t) = self.coupling_params(g, store, step, ya, cond, rates, layout, &b_mask)?;
        let xb = g.sub(yb, t)?;
        let ns = g.scale(s, -1.0)?;
        let ens = g.exp(ns)?;
        let xb = g.mul(xb, ens)?;
        let x = if a0 == 0 { g.concat(&[ya, xb], 1)? } else { g.concat(&[xb, ya], 1)? };
        // mixing inverse: x = y B^-1 A^-1
        let (a, b, _) = self.mixing(g, store, step)?;
        let a_inv = triangular_inverse(g.value(a).data(), group, true);
        let b_inv = triangular_inverse(g.value(b).data(), group, false);
        let a_inv = g.constant(Tensor::new(vec![group, group], a_inv)?);
        let b_inv = g.constant(Tensor::new(vec![group, group], b_inv)?);
        let x = g.matmul(x, b_inv)?;
        let x = mask_padding(g, x, &layout.padded)?;
        let x = g.matmul(x, a_inv)?;
        let x = mask_padding(g, x, &layout.padded)?;
        // actnorm inverse
        let (br, sr, _) = self.actnorm_factors(g, store, step, layout.rows)?;
        let inv_s = g.value(sr).map(|v| 1.0 / v);
        let inv_s = g.constant(inv_s);
        let x = g.mul(x, inv_s)?;
        let x = g.sub(x, br)?;
        mask_padding(g, x, &layout.padded)
    }

    /// Maps dequantised durations to flow space; returns the values and the
    /// log-determinant of that map.
    fn pre_transform(&self, y: &[f64]) -> Result<(Vec<f64>, f64), ModelError> {
        if !self.config.log_domain {
            return Ok((y.to_vec(), 0.0));
        }
        if let Some(bad) = y.iter().find(|&&v| !(v > -1.0) || !v.is_finite()) {
            return Err(ModelError::Invalid(format!("duration {bad} outside the log-domain support")));
        }
        let ld = -y.iter().map(|v| v.ln_1p()).sum::<f64>();
        Ok((y.iter().map(|v| v.ln_1p()).collect(), ld))
    }

    fn post_transform(&self, x: &[f64]) -> Vec<f64> {
        if self.config.log_domain {
            x.iter().map(|v| v.exp_m1()).collect()
        } else {
            x.to_vec()
        }
    }

    /// Log-likelihood graph over the first `len` tokens. Returns the total
    /// log-density (a scalar node) including the constant pre-transform term.
    pub fn log_likelihood_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &ConditioningInputs,
        y: &[f64],
        len: usize,
    ) -> Result<Var, ModelError> {
        let (z, ld) = self.latent_graph(g, store, inputs, y, len)?;
        let zz = g.mul(z, z)?;
        let sq = g.sum(zz)?;
        let prior = g.scale(sq, -0.5)?;
        let total = g.add(prior, ld)?;
        let (_, pre_ld) = self.pre_transform(&y[..len])?;
        let konst = g.constant(Tensor::scalar(pre_ld - 0.5 * len as f64 * LN_2PI));
        Ok(g.add(total, konst)?)
    }

    /// `z` as a `[rows, g]` node and the summed flow log-det (without the pre-transform).
    fn latent_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        inputs: &ConditioningInputs,
        y: &[f64],
        len: usize,
    ) -> Result<(Var, Var), ModelError> {
        self.check_inputs(inputs, y, len)?;
        let layout = Layout::new(len, self.config.group);
        let (x, _) = self.pre_transform(&y[..len])?;
        let (xt, _) = squeeze(&x, self.config.group);
        let mut x = g.constant(xt);
        let (cond, rates) = self.condition(g, store, inputs, &layout)?;
        let mut ld = g.constant(Tensor::scalar(0.0));
        for k in 0..self.steps.len() {
            let (nx, sld) = self
                .normalize_step(g, store, k, x, cond, rates, &layout)
                .map_err(map_step_err(k))?;
            if !g.value(nx).is_finite() {
                return Err(ModelError::NonFiniteStep { step: k });
            }
            x = nx;
            ld = g.add(ld, sld)?;
        }
        Ok((x, ld))
    }

    fn check_inputs(&self, inputs: &ConditioningInputs, y: &[f64], len: usize) -> Result<(), ModelError> {
        if len == 0 || len > inputs.len() || y.len() < len {
            return Err(ModelError::Invalid(format!(
                "{} real tokens requested with {} inputs and {} durations",
                len,
                inputs.len(),
                y.len()
            )));
        }
        if inputs.speaker.len() != self.dims.speaker_dim || inputs.word_features.cols() != self.dims.word_dim {
            return Err(ModelError::Invalid("condition dimensions do not match the model".into()));
        }
        Ok(())
    }

    /// `z = f^-1(y | c)` and `log |det dz/dy|`.
    pub fn inverse_transform(&self, inputs: &ConditioningInputs, y: &[f64]) -> Result<(Vec<f64>, f64), ModelError> {
        let len = y.len();
        let mut g = Graph::new();
        let (z, ld) = self.latent_graph(&mut g, &self.store, inputs, y, len)?;
        let (_, pre_ld) = self.pre_transform(y)?;
        let ld = g.value(ld).item().unwrap_or(f64::NAN) + pre_ld;
        Ok((unsqueeze(g.value(z), len), ld))
    }

    /// `y = f(z | c)`.
    pub fn forward_transform(&self, inputs: &ConditioningInputs, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        let len = z.len();
        self.check_inputs(inputs, z, len)?;
        let layout = Layout::new(len, self.config.group);
        let mut g = Graph::new();
        let (cond, rates) = self.condition(&mut g, &self.store, inputs, &layout)?;
        let (zt, _) = squeeze(z, self.config.group);
        let mut y = g.constant(zt);
        for k in (0..self.steps.len()).rev() {
            y = self
                .generate_step(&mut g, &self.store, k, y, cond, rates, &layout)
                .map_err(map_step_err(k))?;
            if !g.value(y).is_finite() {
                return Err(ModelError::NonFiniteStep { step: k });
            }
        }
        Ok(self.post_transform(&unsqueeze(g.value(y), len)))
    }

    pub fn log_likelihood(&self, inputs: &ConditioningInputs, y: &[f64]) -> Result<LogLikelihood, ModelError> {
        let mut g = Graph::new();
        let v = self.log_likelihood_graph(&mut g, &self.store, inputs, y, y.len())?;
        let total = g.value(v).item().unwrap_or(f64::NAN);
        if !total.is_finite() {
            return Err(ModelError::NonFiniteStep { step: self.steps.len() });
        }
        Ok(LogLikelihood {
            total,
            per_token: total / y.len() as f64,
            tokens: y.len(),
        })
    }

    /// Same as [`Self::log_likelihood`] but only the first `len` entries are
    /// real; the rest of `inputs` and `y` is padding.
    pub fn log_likelihood_padded(
        &self,
        inputs: &ConditioningInputs,
        y: &[f64],
        len: usize,
    ) -> Result<LogLikelihood, ModelError> {
        let mut g = Graph::new();
        let v = self.log_likelihood_graph(&mut g, &self.store, inputs, y, len)?;
        let total = g.value(v).item().unwrap_or(f64::NAN);
        Ok(LogLikelihood {
            total,
            per_token: total / len as f64,
            tokens: len,
        })
    }

    /// Data-dependent actnorm initialisation: each step's actnorm is set so its
    /// output has zero mean and unit variance per channel over `batch`.
    pub fn init_actnorm(&mut self, batch: &[(ConditioningInputs, Vec<f64>)]) -> Result<(), ModelError> {
        if batch.is_empty() {
            return Ok(());
        }
        let group = self.config.group;
        for k in 0..self.steps.len() {
            let mut sums = vec![0.0; group];
            let mut sq = vec![0.0; group];
            let mut n = vec![0.0; group];
            for (inputs, y) in batch {
                let len = y.len();
                self.check_inputs(inputs, y, len)?;
                let layout = Layout::new(len, group);
                let mut g = Graph::new();
                let (x, _) = self.pre_transform(y)?;
                let (xt, _) = squeeze(&x, group);
                let mut x = g.constant(xt);
                let (cond, rates) = self.condition(&mut g, &self.store, inputs, &layout)?;
                for j in 0..k {
                    x = self
                        .normalize_step(&mut g, &self.store, j, x, cond, rates, &layout)
                        .map_err(map_step_err(j))?
                        .0;
                }
                let v = g.value(x);
                for (i, &val) in v.data().iter().enumerate() {
                    if !layout.padded[i] {
                        let c = i % group;
                        sums[c] += val;
                        sq[c] += val * val;
                        n[c] += 1.0;
                    }
                }
            }
            let mut bias = vec![0.0; group];
            let mut logs = vec![0.0; group];
            for c in 0..group {
                if n[c] < 2.0 {
                    continue;
                }
                let mean = sums[c] / n[c];
                let var = (sq[c] / n[c] - mean * mean).max(1e-6);
                bias[c] = -mean;
                logs[c] = -0.5 * var.ln();
            }
            let step = &self.steps[k];
            self.store.set(step.an_bias, Tensor::new(vec![1, group], bias)?)?;
            self.store.set(step.an_logs, Tensor::new(vec![1, group], logs)?)?;
        }
        Ok(())
    }

    /// Conditioning inputs for inference: mean speaker vector and the given
    /// rate overrides (zero when absent).
    pub fn inference_inputs(
        &self,
        utt: &Utterance,
        corpus: &Corpus,
        overrides: RateOverrides,
    ) -> Result<ConditioningInputs, ModelError> {
        Ok(conditioning_inputs(
            utt,
            corpus,
            &self.stats,
            self.config.rp_max,
            Mode::Inference {
                overrides,
                speaker_means: &self.speaker_means,
            },
        )?)
    }

    /// Draws `z ~ N(0, T^2 I)`, maps it through the flow and postprocesses.
    /// Always consumes one normal per token so that different temperatures
    /// share random numbers.
    pub fn sample_durations(
        &self,
        inputs: &ConditioningInputs,
        temperature: f64,
        rng: &mut ChaCha20Rng,
    ) -> Result<DurationSample, ModelError> {
        if !(temperature >= 0.0) {
            return Err(ModelError::Invalid(format!("temperature must be >= 0, got {temperature}")));
        }
        let z: Vec<f64> = (0..inputs.len())
            .map(|_| temperature * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = self.forward_transform(inputs, &z)?;
        let real: Vec<f64> = y.iter().map(|v| v - DEQUANT_OFFSET).collect();
        let (durations, clamped) = postprocess(&real, &inputs.kinds);
        Ok(DurationSample {
            real,
            durations,
            temperature,
            clamped,
        })
    }

    /// Samples every utterance in `indices`; utterance `i` always uses stream
    /// `seed / sample / i`, so sweeps over temperature or rates use common
    /// random numbers.
    pub fn predict(
        &self,
        corpus: &Corpus,
        indices: &[usize],
        temperature: f64,
        overrides: RateOverrides,
        seed: u64,
    ) -> Result<Vec<Utterance>, ModelError> {
        let tree = SeedTree::new(seed).fork(streams::SAMPLE);
        indices
            .iter()
            .map(|&i| {
                let utt = &corpus.utterances[i];
                let inputs = self.inference_inputs(utt, corpus, overrides)?;
                let s = self.sample_durations(&inputs, temperature, &mut tree.fork_index(i as u64).rng())?;
                Ok(utt.with_durations(&s.durations)?)
            })
            .collect()
    }

    pub fn meta(&self) -> FlowMeta {
        FlowMeta {
            config: self.config.clone(),
            dims: self.dims,
            stats: self.stats,
            speaker_means: self.speaker_means.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        save_model(dir, MODEL_STEM, &self.store, &self.meta())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let meta: FlowMeta = load_meta(dir, MODEL_STEM)?;
        let mut model = Self::new(meta.config, meta.dims, meta.stats, meta.speaker_means, 0)?;
        load_params_into(dir, MODEL_STEM, &mut model.store)?;
        Ok(model)
    }
}

/// Training data prepared once: conditioning inputs plus integer durations.
struct Prepared {
    inputs: Vec<ConditioningInputs>,
    durations: Vec<Vec<f64>>,
}

fn prepare(corpus: &Corpus, indices: &[usize], stats: &CorpusStats, rp_max: f64) -> Result<Prepared, ModelError> {
    let mut inputs = Vec::with_capacity(indices.len());
    let mut durations = Vec::with_capacity(indices.len());
    for &i in indices {
        let u = &corpus.utterances[i];
        inputs.push(conditioning_inputs(u, corpus, stats, rp_max, Mode::Training)?);
        durations.push(u.durations());
    }
    Ok(Prepared { inputs, durations })
}

/// Maximum-likelihood training with Adam; returns the best-dev model.
pub fn train_flow(
    corpus: &Corpus,
    train: &[usize],
    dev: &[usize],
    config: &FlowConfig,
    train_cfg: &TrainConfig,
) -> Result<(CauliflowModel, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let stats = corpus_stats(corpus.select(train), config.pause_threshold)?;
    let speaker_means = mean_speaker_embeddings(&corpus.speakers);
    let mut model = CauliflowModel::new(config.clone(), FlowDims::of(corpus), stats, speaker_means, train_cfg.seed)?;
    let tr = prepare(corpus, train, &stats, config.rp_max)?;
    let dv = prepare(corpus, dev, &stats, config.rp_max)?;
    let tree = SeedTree::new(train_cfg.seed);
    let deq = tree.fork(streams::DEQUANTIZE);
    let init_n = config.init_utterances.clamp(1, tr.inputs.len());
    let init_rng = deq.fork("actnorm");
    let batch: Vec<(ConditioningInputs, Vec<f64>)> = (0..init_n)
        .map(|i| {
            let y = dequantize(&tr.durations[i], &mut init_rng.fork_index(i as u64).rng());
            (tr.inputs[i].clone(), y)
        })
        .collect();
    model.init_actnorm(&batch)?;
    let dev_deq = deq.fork("dev");
    let dev_y: Vec<Vec<f64>> = dv
        .durations
        .iter()
        .enumerate()
        .map(|(i, d)| dequantize(d, &mut dev_deq.fork_index(i as u64).rng()))
        .collect();
    let tokens: f64 = dv.durations.iter().map(|d| d.len() as f64).sum();
    let m = &model;
    let mut store = model.store.clone();
    let report = fit(
        &mut store,
        train_cfg,
        tr.inputs.len(),
        |s, item, epoch| {
            let y = dequantize(
                &tr.durations[item],
                &mut deq.fork_index(epoch as u64).fork_index(item as u64).rng(),
            );
            let mut g = Graph::new();
            let ll = m.log_likelihood_graph(&mut g, s, &tr.inputs[item], &y, y.len())?;
            let nll = g.scale(ll, -1.0)?;
            let loss = g.value(nll).item().unwrap_or(f64::NAN);
            Ok(Contribution {
                grads: g.backward(nll)?,
                loss,
                weight: y.len() as f64,
            })
        },
        |s| {
            let mut total = 0.0;
            for (inputs, y) in dv.inputs.iter().zip(&dev_y) {
                let mut g = Graph::new();
                let ll = m.log_likelihood_graph(&mut g, s, inputs, y, y.len())?;
                total -= g.value(ll).item().unwrap_or(f64::NAN);
            }
            Ok(total / tokens)
        },
    )?;
    model.store = store;
    Ok((model, report))
}

/// Mean per-token NLL over `indices` with fixed dequantisation noise. With
/// `shuffle_conditions` each utterance is scored under another utterance's
/// speaker vector and rates (a control for conditioning relevance).
pub fn mean_nll(
    model: &CauliflowModel,
    corpus: &Corpus,
    indices: &[usize],
    seed: u64,
    shuffle_conditions: bool,
) -> Result<Vec<f64>, ModelError> {
    let data = prepare(corpus, indices, &model.stats, model.config.rp_max)?;
    let deq = SeedTree::new(seed).fork(streams::DEQUANTIZE);
    let n = data.inputs.len();
    (0..n)
        .map(|i| {
            let y = dequantize(&data.durations[i], &mut deq.fork_index(i as u64).rng());
            let mut inputs = data.inputs[i].clone();
            if shuffle_conditions && n > 1 {
                let other = &data.inputs[(i + n / 2) % n];
                inputs.speaker = other.speaker.clone();
                inputs.rs = other.rs;
                inputs.rp = other.rp;
                let p = inputs.len();
                let ow = &other.word_features;
                let dw = ow.cols();
                let data: Vec<f64> = (0..p).flat_map(|r| ow.row(r % ow.rows()).to_vec()).collect();
                inputs.word_features = Tensor::new(vec![p, dw], data)?;
            }
            Ok(-model.log_likelihood(&inputs, &y)?.per_token)
        })
        .collect()
}
