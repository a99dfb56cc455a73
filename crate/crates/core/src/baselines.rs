//! Deterministic duration baselines and the phrasing classifier.
//!
//! `Dur` regresses z-scored durations from phoneme context alone. `Dur+P`
//! adds one per-token input channel holding the pause label of the token's
//! word (oracle labels in training, classifier decisions at inference).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Tensor, Var};
use crate::conditioning::{EncoderConfig, PhonemeEncoder};
use crate::corpus::{extract_pause_labels, Corpus, Utterance, DEFAULT_PAUSE_THRESHOLD};
use crate::flow::postprocess;
use crate::metrics::{fbeta, F_BETA};
use crate::nn::{Conv1d, Init};
use crate::rng::{streams, SeedTree};
use crate::train::{fit, load_meta, load_params_into, save_model, Contribution, ModelError, TrainConfig, TrainReport};

/// Global z-score statistics of training durations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Normalizer {
    pub fn fit<'a>(utts: impl IntoIterator<Item = &'a Utterance>) -> Result<Self, ModelError> {
        let d: Vec<f64> = utts.into_iter().flat_map(|u| u.durations()).collect();
        if d.is_empty() {
            return Err(ModelError::EmptySplit("train"));
        }
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            // Constant data would otherwise divide by zero.
            std: var.sqrt().max(1e-6),
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurConfig {
    pub encoder: EncoderConfig,
    /// Pause threshold for the oracle labels used by Dur+P.
    pub pause_threshold: f64,
}

impl Default for DurConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            pause_threshold: DEFAULT_PAUSE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurMeta {
    pub config: DurConfig,
    pub vocab: usize,
    pub label_channel: bool,
    pub normalizer: Normalizer,
}

/// Phoneme encoder plus a per-token linear regression head.
#[derive(Clone, Debug)]
pub struct DurModel {
    pub config: DurConfig,
    pub store: ParamStore,
    pub normalizer: Normalizer,
    vocab: usize,
    label_channel: bool,
    encoder: PhonemeEncoder,
    head: Conv1d,
}

/// Per-token copy of the label of each token's word.
pub fn token_labels(utt: &Utterance, word_labels: &[bool]) -> Vec<f64> {
    utt.tokens
        .iter()
        .map(|t| if word_labels.get(t.word_index).copied().unwrap_or(false) { 1.0 } else { 0.0 })
        .collect()
}

impl DurModel {
    pub fn new(
        config: DurConfig,
        vocab: usize,
        label_channel: bool,
        normalizer: Normalizer,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let mut rng = SeedTree::new(seed).stream(streams::INIT);
        let mut store = ParamStore::new();
        let extra = usize::from(label_channel);
        let encoder = PhonemeEncoder::new(&mut store, "enc", vocab, extra, &config.encoder, &mut rng)?;
        let head = Conv1d::linear(&mut store, "head", encoder.dim(), 1, Init::Uniform, &mut rng)?;
        Ok(Self {
            config,
            store,
            normalizer,
            vocab,
            label_channel,
            encoder,
            head,
        })
    }

    pub fn has_label_channel(&self) -> bool {
        self.label_channel
    }

    /// `[P, 1]` normalised predictions.
    fn forward(&self, g: &mut Graph, store: &ParamStore, symbols: &[usize], labels: Option<&[f64]>) -> Result<Var, ModelError> {
        let extra = match (self.label_channel, labels) {
            (true, Some(l)) => Some(g.constant(Tensor::new(vec![l.len(), 1], l.to_vec())?)),
            (false, None) => None,
            (true, None) => return Err(ModelError::Invalid("Dur+P needs pause labels".into())),
            (false, Some(_)) => return Err(ModelError::Invalid("Dur takes no pause labels".into())),
        };
        let valid = vec![true; symbols.len()];
        let h = self.encoder.forward(g, store, symbols, extra, &valid)?;
        Ok(self.head.forward(g, store, h)?)
    }

    fn loss_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        symbols: &[usize],
        labels: Option<&[f64]>,
        targets: &[f64],
    ) -> Result<Var, ModelError> {
        let pred = self.forward(g, store, symbols, labels)?;
        let z: Vec<f64> = targets.iter().map(|&d| self.normalizer.normalize(d)).collect();
        let t = g.constant(Tensor::new(vec![z.len(), 1], z)?);
        let diff = g.sub(pred, t)?;
        let sq = g.mul(diff, diff)?;
        Ok(g.sum(sq)?)
    }

    /// De-normalised real-valued durations. `word_labels` is required exactly
    /// when the model has a label channel.
    pub fn predict_real(&self, utt: &Utterance, corpus: &Corpus, word_labels: Option<&[bool]>) -> Result<Vec<f64>, ModelError> {
        let symbols = corpus.inventory.encode(utt)?;
        let labels = word_labels.map(|w| token_labels(utt, w));
        let mut g = Graph::new();
        let out = self.forward(&mut g, &self.store, &symbols, labels.as_deref())?;
        Ok(g.value(out).data().iter().map(|&z| self.normalizer.denormalize(z)).collect())
    }

    /// Whole-frame durations after postprocessing.
    pub fn predict(&self, utt: &Utterance, corpus: &Corpus, word_labels: Option<&[bool]>) -> Result<Vec<f64>, ModelError> {
        let real = self.predict_real(utt, corpus, word_labels)?;
        Ok(postprocess(&real, &utt.kinds()).0)
    }

    pub fn meta(&self) -> DurMeta {
        DurMeta {
            config: self.config.clone(),
            vocab: self.vocab,
            label_channel: self.label_channel,
            normalizer: self.normalizer,
        }
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ModelError> {
        save_model(dir, stem, &self.store, &self.meta())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, ModelError> {
        let meta: DurMeta = load_meta(dir, stem)?;
        let mut m = Self::new(meta.config, meta.vocab, meta.label_channel, meta.normalizer, 0)?;
        load_params_into(dir, stem, &mut m.store)?;
        Ok(m)
    }
}

struct RegressionData {
    symbols: Vec<Vec<usize>>,
    labels: Vec<Option<Vec<f64>>>,
    targets: Vec<Vec<f64>>,
}

fn regression_data(corpus: &Corpus, indices: &[usize], labelled: Option<f64>) -> Result<RegressionData, ModelError> {
    let mut data = RegressionData {
        symbols: Vec::new(),
        labels: Vec::new(),
        targets: Vec::new(),
    };
    for &i in indices {
        let u = &corpus.utterances[i];
        data.symbols.push(corpus.inventory.encode(u)?);
        data.labels
            .push(labelled.map(|th| token_labels(u, &extract_pause_labels(u, th))));
        data.targets.push(u.durations());
    }
    Ok(data)
}

fn train_regressor(
    corpus: &Corpus,
    train: &[usize],
    dev: &[usize],
    config: &DurConfig,
    train_cfg: &TrainConfig,
    label_channel: bool,
) -> Result<(DurModel, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let normalizer = Normalizer::fit(corpus.select(train))?;
    let mut model = DurModel::new(config.clone(), corpus.inventory.len(), label_channel, normalizer, train_cfg.seed)?;
    let th = label_channel.then_some(config.pause_threshold);
    let tr = regression_data(corpus, train, th)?;
    let dv = regression_data(corpus, dev, th)?;
    let dev_tokens: f64 = dv.targets.iter().map(|t| t.len() as f64).sum();
    let m = &model;
    let mut store = model.store.clone();
    let report = fit(
        &mut store,
        train_cfg,
        tr.symbols.len(),
        |s, i, _| {
            let mut g = Graph::new();
            let l = m.loss_graph(&mut g, s, &tr.symbols[i], tr.labels[i].as_deref(), &tr.targets[i])?;
            let loss = g.value(l).item().unwrap_or(f64::NAN);
            Ok(Contribution {
                grads: g.backward(l)?,
                loss,
                weight: tr.targets[i].len() as f64,
            })
        },
        |s| {
            let mut total = 0.0;
            for i in 0..dv.symbols.len() {
                let mut g = Graph::new();
                let l = m.loss_graph(&mut g, s, &dv.symbols[i], dv.labels[i].as_deref(), &dv.targets[i])?;
                total += g.value(l).item().unwrap_or(f64::NAN);
            }
            Ok(total / dev_tokens)
        },
    )?;
    model.store = store;
    Ok((model, report))
}

/// L2 regression of z-scored durations from phonemes alone.
pub fn train_dur(
    corpus: &Corpus,
    train: &[usize],
    dev: &[usize],
    config: &DurConfig,
    train_cfg: &TrainConfig,
) -> Result<(DurModel, TrainReport), ModelError> {
    train_regressor(corpus, train, dev, config, train_cfg, false)
}

/// Dur+P: the same regressor with an oracle pause-label channel.
pub fn train_durp(
    corpus: &Corpus,
    train: &[usize],
    dev: &[usize],
    config: &DurConfig,
    train_cfg: &TrainConfig,
) -> Result<(DurPModel, TrainReport), ModelError> {
    let (dur, report) = train_regressor(corpus, train, dev, config, train_cfg, true)?;
    Ok((DurPModel { dur }, report))
}

/// Dur+P: a label-conditioned [`DurModel`].
#[derive(Clone, Debug)]
pub struct DurPModel {
    pub dur: DurModel,
}

impl DurPModel {
    /// Durations given per-word pause decisions.
    pub fn predict_with_labels(&self, utt: &Utterance, corpus: &Corpus, word_labels: &[bool]) -> Result<Vec<f64>, ModelError> {
        self.dur.predict(utt, corpus, Some(word_labels))
    }

    /// Durations with labels taken from the thresholded classifier.
    pub fn predict(&self, utt: &Utterance, corpus: &Corpus, classifier: &PhrasingClassifier) -> Result<Vec<f64>, ModelError> {
        let labels = classifier.predict_phrasing(utt, corpus)?;
        self.predict_with_labels(utt, corpus, &labels)
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ModelError> {
        self.dur.save(dir, stem)
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, ModelError> {
        let dur = DurModel::load(dir, stem)?;
        if !dur.has_label_channel() {
            return Err(ModelError::Metadata(format!("{stem} is a Dur model, not Dur+P")));
        }
        Ok(Self { dur })
    }
}

/// Predicted utterances (durations replaced) for `indices`.
pub fn predict_corpus(
    corpus: &Corpus,
    indices: &[usize],
    mut predict: impl FnMut(&Utterance) -> Result<Vec<f64>, ModelError>,
) -> Result<Vec<Utterance>, ModelError> {
    indices
        .iter()
        .map(|&i| {
            let u = &corpus.utterances[i];
            Ok(u.with_durations(&predict(u)?)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhrasingConfig {
    pub hidden: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub pause_threshold: f64,
}

impl Default for PhrasingConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            kernel: 3,
            dilations: vec![1, 2, 4],
            pause_threshold: DEFAULT_PAUSE_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhrasingMeta {
    pub config: PhrasingConfig,
    pub word_dim: usize,
    pub threshold: f64,
}

/// Word-level dilated conv stack with a sigmoid output per word.
#[derive(Clone, Debug)]
pub struct PhrasingClassifier {
    pub config: PhrasingConfig,
    pub store: ParamStore,
    /// Binarisation threshold; 0.5 until [`select_threshold`] is applied.
    pub threshold: f64,
    word_dim: usize,
    layers: Vec<Conv1d>,
    head: Conv1d,
}

/// `[W, D_w]` word features of one utterance.
pub fn word_matrix(utt: &Utterance, corpus: &Corpus) -> Result<Tensor, ModelError> {
    let dim = corpus.word_features.dim;
    let mut data = Vec::with_capacity(utt.word_count() * dim);
    for w in 0..utt.word_count() {
        let v = corpus.word_features.get(&utt.id, w).ok_or_else(|| {
            ModelError::Corpus(crate::corpus::CorpusError::MissingWordFeature {
                utterance: utt.id.clone(),
                word: w,
            })
        })?;
        data.extend_from_slice(v);
    }
    Ok(Tensor::new(vec![utt.word_count(), dim], data)?)
}

impl PhrasingClassifier {
    pub fn new(config: PhrasingConfig, word_dim: usize, seed: u64) -> Result<Self, ModelError> {
        let mut rng = SeedTree::new(seed).stream(streams::INIT);
        let mut store = ParamStore::new();
        let mut layers = Vec::with_capacity(config.dilations.len());
        let mut cin = word_dim;
        for (i, &d) in config.dilations.iter().enumerate() {
            layers.push(Conv1d::new(&mut store, &format!("cls.conv{i}"), cin, config.hidden, config.kernel, d, Init::Uniform, &mut rng)?);
            cin = config.hidden;
        }
        // Zero head: every probability starts at 0.5.
        let head = Conv1d::linear(&mut store, "cls.head", cin, 1, Init::Zeros, &mut rng)?;
        Ok(Self {
            config,
            store,
            threshold: 0.5,
            word_dim,
            layers,
            head,
        })
    }

    fn logits(&self, g: &mut Graph, store: &ParamStore, words: Tensor) -> Result<Var, ModelError> {
        let mut x = g.constant(words);
        for conv in &self.layers {
            x = conv.forward(g, store, x)?;
            x = g.tanh(x)?;
        }
        Ok(self.head.forward(g, store, x)?)
    }

    /// Summed binary cross-entropy over the words of one utterance.
    fn bce_graph(&self, g: &mut Graph, store: &ParamStore, words: Tensor, labels: &[bool]) -> Result<Var, ModelError> {
        let logits = self.logits(g, store, words)?;
        // softplus(-x) for positives, softplus(x) for negatives.
        let sign: Vec<f64> = labels.iter().map(|&l| if l { -1.0 } else { 1.0 }).collect();
        let sign = g.constant(Tensor::new(vec![labels.len(), 1], sign)?);
        let signed = g.mul(logits, sign)?;
        let sp = g.softplus(signed)?;
        Ok(g.sum(sp)?)
    }

    /// Pause probability after each word.
    pub fn probabilities(&self, utt: &Utterance, corpus: &Corpus) -> Result<Vec<f64>, ModelError> {
        let words = word_matrix(utt, corpus)?;
        let mut g = Graph::new();
        let l = self.logits(&mut g, &self.store, words)?;
        let p = g.sigmoid(l)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn decide(&self, probabilities: &[f64]) -> Vec<bool> {
        probabilities.iter().map(|&p| p >= self.threshold).collect()
    }

    pub fn predict_phrasing(&self, utt: &Utterance, corpus: &Corpus) -> Result<Vec<bool>, ModelError> {
        Ok(self.decide(&self.probabilities(utt, corpus)?))
    }

    /// `(probability, true label)` for every word of `indices`.
    pub fn scored_words(&self, corpus: &Corpus, indices: &[usize]) -> Result<Vec<(f64, bool)>, ModelError> {
        let mut out = Vec::new();
        for u in corpus.select(indices) {
            let p = self.probabilities(u, corpus)?;
            let l = extract_pause_labels(u, self.config.pause_threshold);
            out.extend(p.into_iter().zip(l));
        }
        Ok(out)
    }

    pub fn meta(&self) -> PhrasingMeta {
        PhrasingMeta {
            config: self.config.clone(),
            word_dim: self.word_dim,
            threshold: self.threshold,
        }
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), ModelError> {
        save_model(dir, stem, &self.store, &self.meta())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, ModelError> {
        let meta: PhrasingMeta = load_meta(dir, stem)?;
        let mut m = Self::new(meta.config, meta.word_dim, 0)?;
        m.threshold = meta.threshold;
        load_params_into(dir, stem, &mut m.store)?;
        Ok(m)
    }
}

/// Word-level binary cross-entropy training; the threshold stays at 0.5.
pub fn train_phrasing(
    corpus: &Corpus,
    train: &[usize],
    dev: &[usize],
    config: &PhrasingConfig,
    train_cfg: &TrainConfig,
) -> Result<(PhrasingClassifier, TrainReport), ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if dev.is_empty() {
        return Err(ModelError::EmptySplit("dev"));
    }
    let prep = |idx: &[usize]| -> Result<Vec<(Tensor, Vec<bool>)>, ModelError> {
        idx.iter()
            .map(|&i| {
                let u = &corpus.utterances[i];
                Ok((word_matrix(u, corpus)?, extract_pause_labels(u, config.pause_threshold)))
            })
            .collect()
    };
    let tr = prep(train)?;
    let dv = prep(dev)?;
    let positives = tr.iter().flat_map(|(_, l)| l).filter(|&&l| l).count();
    let total: usize = tr.iter().map(|(_, l)| l.len()).sum();
    if positives == 0 || positives == total {
        return Err(ModelError::DegenerateLabels(format!(
            "{positives} of {total} training words are followed by a pause at threshold {}",
            config.pause_threshold
        )));
    }
    let dev_words: f64 = dv.iter().map(|(_, l)| l.len() as f64).sum();
    let mut model = PhrasingClassifier::new(config.clone(), corpus.word_features.dim, train_cfg.seed)?;
    let m = &model;
    let mut store = model.store.clone();
    let report = fit(
        &mut store,
        train_cfg,
        tr.len(),
        |s, i, _| {
            let mut g = Graph::new();
            let l = m.bce_graph(&mut g, s, tr[i].0.clone(), &tr[i].1)?;
            let loss = g.value(l).item().unwrap_or(f64::NAN);
            Ok(Contribution {
                grads: g.backward(l)?,
                loss,
                weight: tr[i].1.len() as f64,
            })
        },
        |s| {
            let mut total = 0.0;
            for (w, l) in &dv {
                let mut g = Graph::new();
                let v = m.bce_graph(&mut g, s, w.clone(), l)?;
                total += g.value(v).item().unwrap_or(f64::NAN);
            }
            Ok(total / dev_words)
        },
    )?;
    model.store = store;
    Ok((model, report))
}

/// Grid of candidate thresholds: 0.01, 0.02, ..., 0.99.
pub fn threshold_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// F-beta of thresholding `scored` at `theta` (decision: probability >= theta).
pub fn fbeta_at(scored: &[(f64, bool)], theta: f64, beta: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for &(p, y) in scored {
        match (p >= theta, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    fbeta(tp, fp, fn_, beta).f
}

/// The grid threshold maximising F0.25; ties go to the higher threshold.
pub fn select_threshold(scored: &[(f64, bool)]) -> Result<f64, ModelError> {
    if !scored.iter().any(|s| s.1) {
        return Err(ModelError::DegenerateLabels("dev split has no pause labels".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0.0);
    for theta in threshold_grid() {
        let f = fbeta_at(scored, theta, F_BETA);
        if f >= best.0 {
            best = (f, theta);
        }
    }
    Ok(best.1)
}

/// Area under the ROC curve, counting ties as one half.
pub fn auc(scored: &[(f64, bool)]) -> f64 {
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pos = sorted.iter().filter(|s| s.1).count() as f64;
    let neg = sorted.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return f64::NAN;
    }
    // Mann-Whitney U with midranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        rank_sum += mid * sorted[i..j].iter().filter(|s| s.1).count() as f64;
        i = j;
    }
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}
