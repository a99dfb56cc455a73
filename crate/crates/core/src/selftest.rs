//! Invariant suites that can run outside the test harness.
//!
//! Each suite returns the worst error it saw so callers can compare against
//! their own tolerance. [`run`] bundles them into a pass/fail report.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{grad_check, grad_check_params, AutodiffError, GradCheckReport, Graph, Tensor, Var};
use crate::conditioning::{ConditioningInputs, EncoderConfig};
use crate::corpus::{CorpusStats, TokenKind, Utterance, UtteranceBuilder};
use crate::flow::{CauliflowModel, FlowConfig, FlowDims};
use crate::metrics::{self, F_BETA};
use crate::rng::SeedTree;
use crate::train::{fit, Contribution, ModelError, TrainConfig};

pub const ROUND_TRIP_TOL: f64 = 1e-6;
pub const LOG_DET_TOL: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-4;
pub const DENSITY_TOL: f64 = 0.02;
pub const METRIC_TOL: f64 = 1e-12;

/// Dimensions of the toy flows used by the suites.
pub const TOY_DIMS: FlowDims = FlowDims {
    vocab: 6,
    word_dim: 3,
    speaker_dim: 4,
};

fn toy_stats() -> CorpusStats {
    CorpusStats {
        mean_speech_rate: 2.5,
        mean_pause_rate: 6.0,
        pause_threshold: 20.0,
    }
}

/// A three-step flow small enough for exhaustive checks.
pub fn toy_config(log_domain: bool) -> FlowConfig {
    FlowConfig {
        steps: 3,
        group: 4,
        cond_channels: 3,
        hidden: 4,
        encoder: EncoderConfig {
            dim: 4,
            kernel: 3,
            conv_layers: 1,
            dilations: vec![1],
        },
        log_domain,
        ..FlowConfig::default()
    }
}

/// Toy flow; `noise > 0` perturbs every parameter so no layer is an identity.
pub fn toy_model(log_domain: bool, seed: u64, noise: f64) -> Result<CauliflowModel, ModelError> {
    let mut m = CauliflowModel::new(toy_config(log_domain), TOY_DIMS, toy_stats(), BTreeMap::new(), seed)?;
    if noise > 0.0 {
        m.randomize(seed + 100, noise)?;
    }
    Ok(m)
}

/// Random conditioning for `p` tokens; every third token is a word boundary.
pub fn toy_inputs(p: usize, seed: u64) -> ConditioningInputs {
    let mut rng = SeedTree::new(seed).rng();
    let kinds = (0..p)
        .map(|i| if i % 3 == 2 { TokenKind::WordBoundary } else { TokenKind::Phoneme })
        .collect();
    let word_features = (0..p * TOY_DIMS.word_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    ConditioningInputs {
        symbols: (0..p).map(|_| rng.random_range(0..TOY_DIMS.vocab)).collect(),
        kinds,
        word_features: Tensor::new(vec![p, TOY_DIMS.word_dim], word_features).expect("shape matches data"),
        speaker: (0..TOY_DIMS.speaker_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        rs: rng.random_range(-0.5..0.5),
        rp: rng.random_range(-2.0..2.0),
    }
}

/// Random real-valued durations in `[0, 12)`.
pub fn toy_durations(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeedTree::new(seed).fork("y").rng();
    (0..p).map(|_| rng.random_range(0.0..12.0)).collect()
}

/// `max |f(f^-1(y)) - y| / (1 + max |y|)` for one triple.
pub fn round_trip_error(m: &CauliflowModel, inp: &ConditioningInputs, y: &[f64]) -> Result<f64, ModelError> {
    let (z, _) = m.inverse_transform(inp, y)?;
    let back = m.forward_transform(inp, &z)?;
    let scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(back.iter().zip(y).fold(0.0f64, |a, (b, y)| a.max((b - y).abs())) / scale)
}

/// Worst round-trip error over `trials` random (model, input, condition) triples.
pub fn flow_round_trip(trials: usize, seed: u64) -> Result<f64, ModelError> {
    let tree = SeedTree::new(seed).fork("round-trip");
    let mut worst = 0.0f64;
    for t in 0..trials as u64 {
        let mut rng = tree.fork_index(t).rng();
        let p = rng.random_range(1..24);
        let log_domain = rng.random_bool(0.5);
        let s: u64 = rng.random();
        let m = toy_model(log_domain, s, 0.4)?;
        worst = worst.max(round_trip_error(&m, &toy_inputs(p, s ^ 1), &toy_durations(p, s ^ 2))?);
    }
    Ok(worst)
}

/// `ln |det A|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
        }
        let d = a[col * n + col];
        acc += d.abs().ln();
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
        }
    }
    acc
}

/// Analytic and central-difference `ln |det dz/dy|` for one triple.
pub fn log_det_pair(m: &CauliflowModel, inp: &ConditioningInputs, y: &[f64]) -> Result<(f64, f64), ModelError> {
    let p = y.len();
    let (_, analytic) = m.inverse_transform(inp, y)?;
    let h = 1e-5;
    let mut jac = vec![0.0; p * p];
    for j in 0..p {
        let mut yp = y.to_vec();
        yp[j] += h;
        let mut ym = y.to_vec();
        ym[j] -= h;
        let zp = m.inverse_transform(inp, &yp)?.0;
        let zm = m.inverse_transform(inp, &ym)?.0;
        for i in 0..p {
            jac[i * p + j] = (zp[i] - zm[i]) / (2.0 * h);
        }
    }
    Ok((analytic, log_abs_det(jac, p)))
}

/// Worst relative log-det error over `trials` toy flows with at most 8 tokens.
pub fn flow_log_det(trials: usize, seed: u64) -> Result<f64, ModelError> {
    let tree = SeedTree::new(seed).fork("log-det");
    let mut worst = 0.0f64;
    for t in 0..trials as u64 {
        let mut rng = tree.fork_index(t).rng();
        let p = rng.random_range(1..=8);
        let s: u64 = rng.random();
        let m = toy_model(rng.random_bool(0.5), s, 0.4)?;
        let (a, n) = log_det_pair(&m, &toy_inputs(p, s ^ 1), &toy_durations(p, s ^ 2))?;
        worst = worst.max((a - n).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha20Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape matches data")
}

// Contracts an output with fixed random weights so every coordinate matters.
fn contract(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var, AutodiffError> {
    let shape = g.shape(y).to_vec();
    let mut rng = SeedTree::new(rng_seed).rng();
    let w = g.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Gradient checks of every op kind against central differences.
pub fn op_grad_checks(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>, AutodiffError> {
    let mut rng = SeedTree::new(seed).fork("ops").rng();
    let a = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let b = random_tensor(&mut rng, &[3, 4], -1.5, 1.5);
    let pos = random_tensor(&mut rng, &[3, 4], 0.3, 2.0);
    let m2 = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let x = random_tensor(&mut rng, &[5, 2], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[3, 2, 3], -1.0, 1.0);
    let bias = random_tensor(&mut rng, &[3], -1.0, 1.0);
    let table = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let one = random_tensor(&mut rng, &[1], -1.0, 1.0);
    let mask: Vec<bool> = (0..12).map(|i| i % 3 == 1).collect();
    let k = seed ^ 0x5eed;

    type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>>);
    let cases: Vec<Case> = vec![
        ("add", vec![a.clone(), b.clone()], Box::new(move |g, v| {
            let y = g.add(v[0], v[1])?;
            contract(g, y, k)
        })),
        ("sub", vec![a.clone(), b.clone()], Box::new(move |g, v| {
            let y = g.sub(v[0], v[1])?;
            contract(g, y, k)
        })),
        ("mul", vec![a.clone(), b.clone()], Box::new(move |g, v| {
            let y = g.mul(v[0], v[1])?;
            contract(g, y, k)
        })),
        ("exp", vec![a.clone()], Box::new(move |g, v| {
            let y = g.exp(v[0])?;
            contract(g, y, k)
        })),
        ("log", vec![pos], Box::new(move |g, v| {
            let y = g.log(v[0])?;
            contract(g, y, k)
        })),
        ("tanh", vec![a.clone()], Box::new(move |g, v| {
            let y = g.tanh(v[0])?;
            contract(g, y, k)
        })),
        ("sigmoid", vec![a.clone()], Box::new(move |g, v| {
            let y = g.sigmoid(v[0])?;
            contract(g, y, k)
        })),
        ("softplus", vec![a.clone()], Box::new(move |g, v| {
            let y = g.softplus(v[0])?;
            contract(g, y, k)
        })),
        ("matmul", vec![a.clone(), m2], Box::new(move |g, v| {
            let y = g.matmul(v[0], v[1])?;
            contract(g, y, k)
        })),
        ("conv1d", vec![x.clone(), w, bias], Box::new(move |g, v| {
            let y = g.conv1d(v[0], v[1], v[2], 2)?;
            contract(g, y, k)
        })),
        ("embedding", vec![table], Box::new(move |g, v| {
            let y = g.embedding(v[0], vec![2, 0, 2, 3])?;
            contract(g, y, k)
        })),
        ("sum", vec![a.clone()], Box::new(move |g, v| {
            let s = g.sum(v[0])?;
            g.mul(s, s)
        })),
        ("mean", vec![a.clone()], Box::new(move |g, v| {
            let s = g.mean(v[0])?;
            g.mul(s, s)
        })),
        ("concat", vec![a.clone(), x.clone()], Box::new(move |g, v| {
            let t = g.reshape(v[1], &[2, 5])?;
            let t = g.slice(t, 1, 0, 4)?;
            let y = g.concat(&[v[0], t], 0)?;
            contract(g, y, k)
        })),
        ("slice", vec![a.clone()], Box::new(move |g, v| {
            let y = g.slice(v[0], 1, 1, 3)?;
            contract(g, y, k)
        })),
        ("masked_fill", vec![a.clone()], Box::new(move |g, v| {
            let y = g.masked_fill(v[0], mask.clone(), 0.7)?;
            contract(g, y, k)
        })),
        ("broadcast", vec![one], Box::new(move |g, v| {
            let y = g.broadcast(v[0], &[2, 3])?;
            let y = g.tanh(y)?;
            contract(g, y, k)
        })),
        ("scale", vec![a.clone()], Box::new(move |g, v| {
            let y = g.scale(v[0], -2.5)?;
            contract(g, y, k)
        })),
        ("reshape", vec![a], Box::new(move |g, v| {
            let y = g.reshape(v[0], &[2, 6])?;
            contract(g, y, k)
        })),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, f)| Ok((name, grad_check(|g, v| f(g, v), &inputs, GRAD_TOL)?)))
        .collect()
}

/// Gradient check of the full negative log-likelihood of a 2-token utterance.
pub fn flow_nll_grad_check(seed: u64) -> Result<GradCheckReport, ModelError> {
    let m = toy_model(true, seed, 0.3)?;
    let inp = toy_inputs(2, seed + 1);
    let y = vec![3.4, 0.6];
    let report = grad_check_params(
        &m.store,
        |g, s| {
            let ll = m.log_likelihood_graph(g, s, &inp, &y, 2).map_err(|e| match e {
                ModelError::Autodiff(a) => a,
                other => AutodiffError::Checkpoint(other.to_string()),
            })?;
            g.scale(ll, -1.0)
        },
        GRAD_TOL,
    )?;
    Ok(report)
}

/// Outcome of [`trained_density_mass`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityCheck {
    pub mass: f64,
    pub initial_nll: f64,
    pub trained_nll: f64,
}

/// Trains a toy flow on correlated two-token data and integrates its density
/// on a midpoint grid of `n x n` cells.
pub fn trained_density_mass(seed: u64, n: usize) -> Result<DensityCheck, ModelError> {
    let mut m = toy_model(false, seed, 0.0)?;
    let inp = toy_inputs(2, seed + 1);
    let mut rng = SeedTree::new(seed).fork("density-data").rng();
    let data: Vec<[f64; 2]> = (0..256)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let y0 = 3.0 + 1.5 * a;
            // Heteroscedastic second coordinate, so the flow must bend.
            [y0, 0.5 * y0 + (0.3 + 0.1 * y0.abs()) * b]
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 16,
        learning_rate: 1e-2,
        seed,
        ..TrainConfig::default()
    };
    let mut store = m.store.clone();
    let nll = |model: &CauliflowModel, s: &crate::ParamStore, y: &[f64; 2]| -> Result<(Graph, Var), ModelError> {
        let mut g = Graph::new();
        let ll = model.log_likelihood_graph(&mut g, s, &inp, y, 2)?;
        let l = g.scale(ll, -1.0)?;
        Ok((g, l))
    };
    let report = fit(
        &mut store,
        &cfg,
        data.len(),
        |s, i, _| {
            let (g, l) = nll(&m, s, &data[i])?;
            let loss = g.value(l).item().unwrap_or(f64::NAN);
            Ok(Contribution {
                grads: g.backward(l)?,
                loss,
                weight: 2.0,
            })
        },
        |s| {
            let mut tot = 0.0;
            for y in data.iter().take(64) {
                let (g, l) = nll(&m, s, y)?;
                tot += g.value(l).item().unwrap_or(f64::NAN);
            }
            Ok(tot / 128.0)
        },
    )?;
    m.store = store;
    Ok(DensityCheck {
        mass: integrate_two_token_density(&m, &inp, n)?,
        initial_nll: report.initial_dev_loss,
        trained_nll: report.best_dev_loss,
    })
}

/// Midpoint-rule mass of a two-token flow density over the image of `[-7, 7]^2`.
pub fn integrate_two_token_density(m: &CauliflowModel, inp: &ConditioningInputs, n: usize) -> Result<f64, ModelError> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for a in -28..=28 {
        for b in -28..=28 {
            let y = m.forward_transform(inp, &[a as f64 / 4.0, b as f64 / 4.0])?;
            for c in 0..2 {
                lo[c] = lo[c].min(y[c]);
                hi[c] = hi[c].max(y[c]);
            }
        }
    }
    let (dx, dy) = ((hi[0] - lo[0]) / n as f64, (hi[1] - lo[1]) / n as f64);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let y = [lo[0] + (i as f64 + 0.5) * dx, lo[1] + (j as f64 + 0.5) * dy];
            total += m.log_likelihood(inp, &y)?.total.exp() * dx * dy;
        }
    }
    Ok(total)
}

fn random_utterance(rng: &mut ChaCha20Rng, id: &str, words: usize) -> Utterance {
    let mut b = UtteranceBuilder::new(id, "s");
    for w in 0..words {
        b = b.word(format!("w{w}"), &[("a", rng.random_range(1..9) as f64)]);
        let d = if rng.random_bool(0.4) { rng.random_range(4..60) } else { rng.random_range(0..4) } as f64;
        b = if w + 1 == words || rng.random_bool(0.3) {
            b.punct(".", d)
        } else {
            b.boundary(d)
        };
    }
    b.build()
}

/// Largest disagreement between the metric implementations and direct
/// brute-force recomputations, per metric, over `trials` random instances.
pub fn metric_oracles(trials: usize, seed: u64) -> Result<[(&'static str, f64); 3], metrics::MetricError> {
    let tree = SeedTree::new(seed).fork("metrics");
    let (mut ef, mut ej, mut ep) = (0.0f64, 0.0f64, 0.0f64);
    for t in 0..trials as u64 {
        let mut rng = tree.fork_index(t).rng();
        let words = rng.random_range(1..12);
        let target = random_utterance(&mut rng, "u", words);
        let durations: Vec<f64> = target
            .tokens
            .iter()
            .map(|tok| if rng.random_bool(0.5) { tok.duration } else { rng.random_range(0..50) as f64 })
            .collect();
        let pred = target.with_durations(&durations)?;
        let thr = metrics_threshold(&mut rng);

        let (punct, word) = metrics::pause_counts(std::slice::from_ref(&pred), std::slice::from_ref(&target), thr)?;
        for (counts, kind) in [(punct, TokenKind::Punctuation), (word, TokenKind::WordBoundary)] {
            let got = counts.prf(F_BETA).f;
            ef = ef.max((got - brute_fbeta(&pred, &target, kind, thr)).abs());
        }

        let n = rng.random_range(1..80);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..230.0)).collect();
        let q: Vec<f64> = (0..rng.random_range(1..80)).map(|_| rng.random_range(-3.0..230.0)).collect();
        ej = ej.max((metrics::jsd_durations(&p, &q)? - brute_jsd(&p, &q)).abs());

        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
        let pct = rng.random_range(1..=100) as f64;
        ep = ep.max((metrics::percentile_l1(&p, &r, pct)? - brute_percentile(&p, &r, pct)).abs());
    }
    Ok([("fbeta", ef), ("jsd", ej), ("percentile_l1", ep)])
}

fn metrics_threshold(rng: &mut ChaCha20Rng) -> f64 {
    rng.random_range(2..8) as f64
}

fn brute_fbeta(pred: &Utterance, target: &Utterance, kind: TokenKind, thr: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, t) in pred.tokens.iter().zip(&target.tokens) {
        if p.kind != kind {
            continue;
        }
        match (p.duration >= thr, t.duration >= thr) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        return 0.0;
    }
    let (pr, rc) = (tp / (tp + fp), tp / (tp + fn_));
    let b2 = F_BETA * F_BETA;
    (1.0 + b2) * pr * rc / (b2 * pr + rc)
}

// Entropy form: H(M) - (H(P) + H(Q)) / 2 over rounded, clipped frame counts.
fn brute_jsd(p: &[f64], q: &[f64]) -> f64 {
    let hist = |d: &[f64]| {
        let mut h: BTreeMap<i64, f64> = BTreeMap::new();
        for &v in d {
            let bin = (v.round() as i64).clamp(0, metrics::HIST_MAX as i64 + 1);
            *h.entry(bin).or_default() += 1.0 / d.len() as f64;
        }
        h
    };
    let (hp, hq) = (hist(p), hist(q));
    let entropy = |h: &mut dyn Iterator<Item = f64>| -> f64 { h.filter(|v| *v > 0.0).map(|v| -v * v.ln()).sum() };
    let mut keys: Vec<i64> = hp.keys().chain(hq.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let get = |h: &BTreeMap<i64, f64>, k: i64| h.get(&k).copied().unwrap_or(0.0);
    let hm = entropy(&mut keys.iter().map(|&k| 0.5 * (get(&hp, k) + get(&hq, k))));
    (hm - 0.5 * entropy(&mut hp.values().copied()) - 0.5 * entropy(&mut hq.values().copied())).max(0.0)
}

// Smallest error e such that at least floor(q n / 100) + 1 errors are <= e.
fn brute_percentile(p: &[f64], t: &[f64], q: f64) -> f64 {
    let errs: Vec<f64> = p.iter().zip(t).map(|(a, b)| (a - b).abs()).collect();
    let need = ((q * errs.len() as f64 / 100.0).floor() as usize + 1).min(errs.len());
    errs.iter()
        .copied()
        .filter(|&e| errs.iter().filter(|&&o| o <= e).count() >= need)
        .fold(f64::INFINITY, f64::min)
}

/// One line of a selftest report.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.checks.push(Check {
            name: name.into(),
            passed: value <= limit,
            value,
            limit,
        });
    }
}

/// Runs every suite. Suite errors are recorded as failed checks.
pub fn run(seed: u64) -> SelftestReport {
    let mut r = SelftestReport::default();
    let fail = f64::INFINITY;
    r.push("flow.round_trip", flow_round_trip(100, seed).unwrap_or(fail), ROUND_TRIP_TOL);
    r.push("flow.log_det", flow_log_det(20, seed).unwrap_or(fail), LOG_DET_TOL);
    match op_grad_checks(seed) {
        Ok(ops) => ops
            .into_iter()
            .for_each(|(name, rep)| r.push(format!("grad.{name}"), rep.max_rel_err, GRAD_TOL)),
        Err(_) => r.push("grad.ops", fail, GRAD_TOL),
    }
    r.push(
        "grad.flow_nll",
        flow_nll_grad_check(seed).map(|g| g.max_rel_err).unwrap_or(fail),
        GRAD_TOL,
    );
    r.push(
        "flow.density_mass",
        trained_density_mass(seed, 200)
            .ok()
            .filter(|d| d.trained_nll < d.initial_nll)
            .map_or(fail, |d| (d.mass - 1.0).abs()),
        DENSITY_TOL,
    );
    match metric_oracles(1000, seed) {
        Ok(all) => all
            .into_iter()
            .for_each(|(name, err)| r.push(format!("metric.{name}"), err, METRIC_TOL)),
        Err(_) => r.push("metric.oracles", fail, METRIC_TOL),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_abs_det_of_a_permuted_diagonal() {
        let a = vec![0.0, 2.0, 0.0, 0.0, 0.0, -3.0, 0.5, 0.0, 0.0];
        assert!((log_abs_det(a, 3) - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn brute_percentile_counts_ranks() {
        let p: Vec<f64> = (0..100).map(f64::from).collect();
        let t = vec![0.0; 100];
        assert_eq!(brute_percentile(&p, &t, 99.0), 99.0);
        assert_eq!(brute_percentile(&p, &t, 50.0), 50.0);
    }

    #[test]
    fn brute_jsd_of_disjoint_histograms_is_ln2() {
        assert!((brute_jsd(&[1.0], &[5.0]) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn op_suite_covers_every_op_and_passes() {
        let ops = op_grad_checks(1).unwrap();
        assert_eq!(ops.len(), 19);
        for (name, rep) in ops {
            assert!(rep.passed(), "{name}: {}", rep.max_rel_err);
        }
    }

    #[test]
    fn trained_toy_density_learns_and_normalises() {
        let d = trained_density_mass(3, 120).unwrap();
        assert!(d.trained_nll < d.initial_nll - 0.5, "{d:?}");
        assert!((d.mass - 1.0).abs() < DENSITY_TOL, "{d:?}");
    }

    #[test]
    fn metric_oracles_agree() {
        for (name, err) in metric_oracles(200, 2).unwrap() {
            assert!(err <= METRIC_TOL, "{name}: {err}");
        }
    }
}
