use std::path::{Path, PathBuf};

use cauliflow_core::baselines::{predict_corpus, DurModel, DurPModel, PhrasingClassifier};
use cauliflow_core::conditioning::RateOverrides;
use cauliflow_core::flow::{CauliflowModel, DEFAULT_TEMPERATURE, MODEL_STEM as FLOW_STEM};
use cauliflow_core::{Corpus, Utterance};
use serde::{Deserialize, Serialize};

use super::require_path;
use super::train::{map_model_error, DURP_STEM, DUR_STEM, PHRASING_STEM};
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::data::{Dataset, SplitName};
use crate::{CliError, PredictArgs};

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub data: PathBuf,
    pub model: Option<PathBuf>,
    pub phrasing: Option<PathBuf>,
    pub split: SplitName,
    pub temperature: f64,
    pub rs: Option<f64>,
    pub rp: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            model: None,
            phrasing: None,
            split: SplitName::Test,
            temperature: DEFAULT_TEMPERATURE,
            rs: None,
            rp: None,
            seed: 0,
            out: PathBuf::from("predictions"),
        }
    }
}

impl RunConfig for PredictConfig {
    const SUBCOMMAND: &'static str = "predict";
    fn seed(&self) -> u64 {
        self.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(CliError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.rs.into_iter().chain(self.rp).any(|v| !v.is_finite()) {
            return Err(CliError::Config("rs and rp must be finite".into()));
        }
        Ok(())
    }
}

/// A loaded duration model of any kind.
pub enum AnyModel {
    Flow(Box<CauliflowModel>),
    Dur(DurModel),
    DurP(DurPModel, PhrasingClassifier),
}

fn has(dir: &Path, stem: &str) -> bool {
    dir.join(format!("{stem}.json")).is_file()
}

/// Detects the model kind from the files in `dir`.
pub fn load_model(dir: &Path, phrasing: Option<&Path>) -> Result<AnyModel, CliError> {
    if !dir.is_dir() {
        return Err(CliError::missing(dir, "model directory not found; train a model first"));
    }
    if has(dir, FLOW_STEM) {
        return Ok(AnyModel::Flow(Box::new(CauliflowModel::load(dir).map_err(map_model_error)?)));
    }
    if has(dir, DURP_STEM) {
        let cls_dir = match phrasing {
            Some(p) => p.to_path_buf(),
            None if has(dir, PHRASING_STEM) => dir.to_path_buf(),
            None => {
                return Err(CliError::missing(
                    dir.join(format!("{PHRASING_STEM}.json")),
                    "Dur+P needs a phrasing classifier; pass --phrasing DIR",
                ))
            }
        };
        if !has(&cls_dir, PHRASING_STEM) {
            return Err(CliError::missing(cls_dir.join(format!("{PHRASING_STEM}.json")), "no phrasing classifier here"));
        }
        let m = DurPModel::load(dir, DURP_STEM).map_err(map_model_error)?;
        let c = PhrasingClassifier::load(&cls_dir, PHRASING_STEM).map_err(map_model_error)?;
        return Ok(AnyModel::DurP(m, c));
    }
    if has(dir, DUR_STEM) {
        return Ok(AnyModel::Dur(DurModel::load(dir, DUR_STEM).map_err(map_model_error)?));
    }
    Err(CliError::missing(dir, "no flow.json, durp.json or dur.json in the model directory"))
}

impl AnyModel {
    pub fn predict(
        &self,
        corpus: &Corpus,
        indices: &[usize],
        temperature: f64,
        overrides: RateOverrides,
        seed: u64,
    ) -> Result<Vec<Utterance>, CliError> {
        let out = match self {
            AnyModel::Flow(m) => m.predict(corpus, indices, temperature, overrides, seed),
            AnyModel::Dur(m) => predict_corpus(corpus, indices, |u| m.predict(u, corpus, None)),
            AnyModel::DurP(m, c) => predict_corpus(corpus, indices, |u| m.predict(u, corpus, c)),
        };
        out.map_err(map_model_error)
    }

    pub fn as_flow(&self) -> Option<&CauliflowModel> {
        match self {
            AnyModel::Flow(m) => Some(m),
            _ => None,
        }
    }
}

pub fn run(a: PredictArgs) -> Result<(), CliError> {
    let mut c: PredictConfig = load_base(a.common.config.as_deref())?;
    set(&mut c.seed, a.common.seed);
    set(&mut c.out, a.common.out.clone());
    set(&mut c.data, a.data.clone());
    if a.model.is_some() {
        c.model = a.model.clone();
    }
    if a.phrasing.is_some() {
        c.phrasing = a.phrasing.clone();
    }
    if let Some(s) = &a.split {
        c.split = SplitName::parse(s)?;
    }
    set(&mut c.temperature, a.temperature);
    if a.rs.is_some() {
        c.rs = a.rs;
    }
    if a.rp.is_some() {
        c.rp = a.rp;
    }
    c.validate()?;
    let model_dir = require_path(&c.model, "model")?;
    let ds = Dataset::load(&c.data)?;
    let model = load_model(&model_dir, c.phrasing.as_deref())?;
    if model.as_flow().is_none() && (c.rs.is_some() || c.rp.is_some()) {
        eprintln!("warning: rs/rp only steer the flow model; ignored");
    }
    let idx = ds.indices(c.split);
    let overrides = RateOverrides { rs: c.rs, rp: c.rp };
    let pred = model.predict(&ds.corpus, &idx, c.temperature, overrides, c.seed)?;
    Corpus::save_utterances(&pred, &c.out).map_err(CliError::runtime)?;
    write_manifest(&c.out, &c)?;
    println!("predicted {} utterances into {}", pred.len(), c.out.display());
    Ok(())
}
