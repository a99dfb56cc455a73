use std::path::PathBuf;

use cauliflow_core::baselines::{
    auc, fbeta_at, select_threshold, train_dur, train_durp, train_phrasing, DurConfig, PhrasingConfig,
};
use cauliflow_core::flow::{train_flow, FlowConfig};
use cauliflow_core::metrics::F_BETA;
use cauliflow_core::train::{TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};

use super::write_json;
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::data::Dataset;
use crate::{CliError, CommonArgs, DurArgs, FlowArgs, PhrasingArgs, TrainArgs};

pub const DUR_STEM: &str = "dur";
pub const DURP_STEM: &str = "durp";
pub const PHRASING_STEM: &str = "phrasing";
pub const REPORT_FILE: &str = "report.json";

fn apply_train(train: &mut TrainConfig, data: &mut PathBuf, out: &mut PathBuf, common: &CommonArgs, a: &TrainArgs) {
    set(&mut train.seed, common.seed);
    set(&mut train.epochs, a.epochs);
    set(&mut train.batch_size, a.batch_size);
    set(&mut train.learning_rate, a.learning_rate);
    set(data, a.data.clone());
    set(out, common.out.clone());
}

fn check_train(t: &TrainConfig) -> Result<(), CliError> {
    if t.batch_size == 0 || !(t.learning_rate > 0.0) || !t.learning_rate.is_finite() {
        return Err(CliError::Config("batch_size must be positive and learning_rate a positive number".into()));
    }
    Ok(())
}

fn print_report(name: &str, r: &TrainReport) {
    for e in &r.curve {
        println!("{name} epoch {:>3}  train {:.5}  dev {:.5}", e.epoch, e.train_loss, e.dev_loss);
    }
    println!("{name} best epoch {} dev {:.5} (initial {:.5})", r.best_epoch, r.best_dev_loss, r.initial_dev_loss);
}

pub(crate) fn map_model_error(e: cauliflow_core::train::ModelError) -> CliError {
    use cauliflow_core::train::ModelError as M;
    match e {
        M::Invalid(m) => CliError::Config(m),
        M::DegenerateLabels(m) => CliError::Config(format!("degenerate labels: {m}")),
        M::EmptySplit(s) => CliError::Config(format!("{s} split is empty")),
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: DurConfig,
    pub train: TrainConfig,
}

impl Default for DurRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("models/dur"),
            model: DurConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Same fields as [`DurRunConfig`]; a separate type keeps manifests of the
/// two regressors from being swapped by accident.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurPRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: DurConfig,
    pub train: TrainConfig,
}

impl Default for DurPRunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("models/durp"),
            ..DurPRunConfig::from(DurRunConfig::default())
        }
    }
}

impl From<DurRunConfig> for DurPRunConfig {
    fn from(c: DurRunConfig) -> Self {
        Self {
            data: c.data,
            out: c.out,
            model: c.model,
            train: c.train,
        }
    }
}

fn check_dur(model: &DurConfig, train: &TrainConfig) -> Result<(), CliError> {
    check_train(train)?;
    if model.encoder.dim == 0 || model.encoder.kernel % 2 == 0 {
        return Err(CliError::Config("encoder dim must be positive and kernel odd".into()));
    }
    Ok(())
}

impl RunConfig for DurRunConfig {
    const SUBCOMMAND: &'static str = "train-dur";
    fn seed(&self) -> u64 {
        self.train.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        check_dur(&self.model, &self.train)
    }
}

impl RunConfig for DurPRunConfig {
    const SUBCOMMAND: &'static str = "train-durp";
    fn seed(&self) -> u64 {
        self.train.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        check_dur(&self.model, &self.train)
    }
}

fn apply_dur(model: &mut DurConfig, a: &DurArgs) {
    set(&mut model.encoder.dim, a.encoder_dim);
    set(&mut model.encoder.kernel, a.kernel);
    set(&mut model.pause_threshold, a.train.pause_threshold);
}

pub fn run_dur(a: DurArgs, with_labels: bool) -> Result<(), CliError> {
    let (data, out, model, train) = if with_labels {
        let mut c: DurPRunConfig = load_base(a.common.config.as_deref())?;
        apply_train(&mut c.train, &mut c.data, &mut c.out, &a.common, &a.train);
        apply_dur(&mut c.model, &a);
        c.validate()?;
        write_manifest(&c.out, &c)?;
        (c.data, c.out, c.model, c.train)
    } else {
        let mut c: DurRunConfig = load_base(a.common.config.as_deref())?;
        apply_train(&mut c.train, &mut c.data, &mut c.out, &a.common, &a.train);
        apply_dur(&mut c.model, &a);
        c.validate()?;
        write_manifest(&c.out, &c)?;
        (c.data, c.out, c.model, c.train)
    };
    let ds = Dataset::load(&data)?;
    let (train_idx, dev_idx) = (&ds.split.train, &ds.split.dev);
    let report = if with_labels {
        let (m, r) = train_durp(&ds.corpus, train_idx, dev_idx, &model, &train).map_err(map_model_error)?;
        m.save(&out, DURP_STEM).map_err(CliError::runtime)?;
        r
    } else {
        let (m, r) = train_dur(&ds.corpus, train_idx, dev_idx, &model, &train).map_err(map_model_error)?;
        m.save(&out, DUR_STEM).map_err(CliError::runtime)?;
        r
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    print_report(if with_labels { "durp" } else { "dur" }, &report);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhrasingRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: PhrasingConfig,
    pub train: TrainConfig,
}

impl Default for PhrasingRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("models/phrasing"),
            model: PhrasingConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig for PhrasingRunConfig {
    const SUBCOMMAND: &'static str = "train-phrasing";
    fn seed(&self) -> u64 {
        self.train.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        check_train(&self.train)?;
        if self.model.hidden == 0 || self.model.kernel % 2 == 0 || self.model.dilations.is_empty() {
            return Err(CliError::Config("phrasing classifier needs hidden > 0, an odd kernel and at least one layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct PhrasingReport<'a> {
    train: &'a TrainReport,
    threshold: f64,
    dev_auc: f64,
    dev_f: f64,
}

pub fn run_phrasing(a: PhrasingArgs) -> Result<(), CliError> {
    let mut c: PhrasingRunConfig = load_base(a.common.config.as_deref())?;
    apply_train(&mut c.train, &mut c.data, &mut c.out, &a.common, &a.train);
    set(&mut c.model.hidden, a.hidden);
    set(&mut c.model.pause_threshold, a.train.pause_threshold);
    c.validate()?;
    write_manifest(&c.out, &c)?;
    let ds = Dataset::load(&c.data)?;
    let (mut m, report) = train_phrasing(&ds.corpus, &ds.split.train, &ds.split.dev, &c.model, &c.train).map_err(map_model_error)?;
    let scored = m.scored_words(&ds.corpus, &ds.split.dev).map_err(map_model_error)?;
    m.threshold = select_threshold(&scored).map_err(map_model_error)?;
    m.save(&c.out, PHRASING_STEM).map_err(CliError::runtime)?;
    let summary = PhrasingReport {
        train: &report,
        threshold: m.threshold,
        dev_auc: auc(&scored),
        dev_f: 100.0 * fbeta_at(&scored, m.threshold, F_BETA),
    };
    write_json(&c.out.join(REPORT_FILE), &summary)?;
    print_report("phrasing", &report);
    println!(
        "phrasing threshold {:.2}  dev AUC {:.4}  dev F{F_BETA} {:.2}",
        summary.threshold, summary.dev_auc, summary.dev_f
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowRunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: FlowConfig,
    pub train: TrainConfig,
}

impl Default for FlowRunConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("models/flow"),
            model: FlowConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig for FlowRunConfig {
    const SUBCOMMAND: &'static str = "train-flow";
    fn seed(&self) -> u64 {
        self.train.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        check_train(&self.train)?;
        self.model.validate().map_err(map_model_error)
    }
}

pub fn run_flow(a: FlowArgs) -> Result<(), CliError> {
    let mut c: FlowRunConfig = load_base(a.common.config.as_deref())?;
    apply_train(&mut c.train, &mut c.data, &mut c.out, &a.common, &a.train);
    set(&mut c.model.steps, a.steps);
    set(&mut c.model.group, a.group);
    set(&mut c.model.cond_channels, a.cond_channels);
    set(&mut c.model.hidden, a.hidden);
    set(&mut c.model.encoder.dim, a.encoder_dim);
    set(&mut c.model.encoder.kernel, a.kernel);
    set(&mut c.model.pause_threshold, a.train.pause_threshold);
    if a.linear_domain {
        c.model.log_domain = false;
    }
    c.validate()?;
    write_manifest(&c.out, &c)?;
    let ds = Dataset::load(&c.data)?;
    let (m, report) = train_flow(&ds.corpus, &ds.split.train, &ds.split.dev, &c.model, &c.train).map_err(map_model_error)?;
    m.save(&c.out).map_err(CliError::runtime)?;
    write_json(&c.out.join(REPORT_FILE), &report)?;
    print_report("flow", &report);
    Ok(())
}
