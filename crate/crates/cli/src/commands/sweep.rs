use std::fmt::Write as _;
use std::path::PathBuf;

use cauliflow_core::flow::DEFAULT_TEMPERATURE;
use cauliflow_core::metrics::{pearson, MetricReport};
use cauliflow_core::sweep::{rate_sweep, temperature_sweep, RateControl, SweepError};
use cauliflow_core::Utterance;
use serde::{Deserialize, Serialize};

use super::evaluate::{check_percentile, write_histograms, DEFAULT_PERCENTILE};
use super::predict::load_model;
use super::train::map_model_error;
use super::{require_path, write_text};
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::data::{Dataset, SplitName};
use crate::{CliError, SweepRateArgs, SweepTemperatureArgs};

pub const TEMPERATURE_CSV: &str = "sweep_temperature.csv";
pub const RATE_CSV: &str = "sweep_rate.csv";

fn sweep_error(e: SweepError) -> CliError {
    match e {
        SweepError::Model(m) => map_model_error(m),
        SweepError::NoValues => CliError::Config("a sweep needs at least one value".into()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn flow_model(dir: &Option<PathBuf>) -> Result<cauliflow_core::flow::CauliflowModel, CliError> {
    let dir = require_path(dir, "model")?;
    match load_model(&dir, None)? {
        super::predict::AnyModel::Flow(m) => Ok(*m),
        _ => Err(CliError::Config(format!("{} is not a flow model; sweeps need one", dir.display()))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTemperatureConfig {
    pub data: PathBuf,
    pub model: Option<PathBuf>,
    pub split: SplitName,
    pub values: Vec<f64>,
    pub percentile: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SweepTemperatureConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            model: None,
            split: SplitName::Test,
            values: vec![0.3, 0.5, 0.7, 1.0],
            percentile: DEFAULT_PERCENTILE,
            seed: 0,
            out: PathBuf::from("sweeps/temperature"),
        }
    }
}

impl RunConfig for SweepTemperatureConfig {
    const SUBCOMMAND: &'static str = "sweep-temperature";
    fn seed(&self) -> u64 {
        self.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        check_percentile(self.percentile)?;
        if self.values.is_empty() || self.values.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(CliError::Config("temperatures must be a non-empty list of values >= 0".into()));
        }
        Ok(())
    }
}

fn temperature_csv(points: &[(f64, MetricReport)]) -> String {
    let mut s = String::from("temperature");
    if let Some((_, r)) = points.first() {
        for (k, _) in r.entries() {
            let _ = write!(s, ",{k}");
        }
    }
    s.push('\n');
    for (t, r) in points {
        let _ = write!(s, "{t}");
        for (_, v) in r.entries() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn run_temperature(a: SweepTemperatureArgs) -> Result<(), CliError> {
    let mut c: SweepTemperatureConfig = load_base(a.common.config.as_deref())?;
    set(&mut c.seed, a.common.seed);
    set(&mut c.out, a.common.out.clone());
    set(&mut c.data, a.data.clone());
    set(&mut c.values, a.values.clone());
    set(&mut c.percentile, a.percentile);
    if a.model.is_some() {
        c.model = a.model.clone();
    }
    if let Some(s) = &a.split {
        c.split = SplitName::parse(s)?;
    }
    c.validate()?;
    let model = flow_model(&c.model)?;
    let ds = Dataset::load(&c.data)?;
    let idx = ds.indices(c.split);
    let points = temperature_sweep(&model, &ds.corpus, &idx, &c.values, c.seed, c.percentile).map_err(sweep_error)?;
    let rows: Vec<(f64, MetricReport)> = points.iter().map(|p| (p.temperature, p.report.clone())).collect();
    write_text(&c.out.join(TEMPERATURE_CSV), &temperature_csv(&rows))?;

    let target: Vec<Utterance> = ds.corpus.select(&idx).cloned().collect();
    let samples = c
        .values
        .iter()
        .map(|&t| {
            model
                .predict(&ds.corpus, &idx, t, Default::default(), c.seed)
                .map(|u| (format!("T={t}"), u))
                .map_err(map_model_error)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let runs: Vec<(String, &[Utterance])> = samples.iter().map(|(n, u)| (n.clone(), u.as_slice())).collect();
    write_histograms(&c.out, &target, &runs)?;
    write_manifest(&c.out, &c)?;
    for (t, r) in &rows {
        println!(
            "T={t:<5} jsd_pause {:.4}  jsd_nonpause {:.4}  p{} L1 {}  word F {:.2}",
            r.jsd_pause, r.jsd_nonpause, r.percentile, r.percentile_l1, r.word_f
        );
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepRateConfig {
    pub data: PathBuf,
    pub model: Option<PathBuf>,
    pub split: SplitName,
    pub control: RateControl,
    /// Empty means the control's default seven-point grid.
    pub values: Vec<f64>,
    pub temperature: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for SweepRateConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            model: None,
            split: SplitName::Test,
            control: RateControl::Rs,
            values: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            seed: 0,
            out: PathBuf::from("sweeps/rate"),
        }
    }
}

impl RunConfig for SweepRateConfig {
    const SUBCOMMAND: &'static str = "sweep-rate";
    fn seed(&self) -> u64 {
        self.seed
    }
    fn validate(&self) -> Result<(), CliError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(CliError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("sweep values must be finite".into()));
        }
        Ok(())
    }
}

/// Seven evenly spaced points symmetric around zero.
pub fn default_values(control: RateControl) -> Vec<f64> {
    let step = match control {
        RateControl::Rs => 0.3,
        RateControl::Rp => 2.0,
    };
    (-3..=3).map(|i| f64::from(i) * step).collect()
}

pub fn run_rate(a: SweepRateArgs) -> Result<(), CliError> {
    let mut c: SweepRateConfig = load_base(a.common.config.as_deref())?;
    set(&mut c.seed, a.common.seed);
    set(&mut c.out, a.common.out.clone());
    set(&mut c.data, a.data.clone());
    set(&mut c.values, a.values.clone());
    set(&mut c.temperature, a.temperature);
    if a.model.is_some() {
        c.model = a.model.clone();
    }
    if let Some(s) = &a.split {
        c.split = SplitName::parse(s)?;
    }
    if let Some(ctl) = &a.control {
        c.control = match ctl.as_str() {
            "rs" => RateControl::Rs,
            "rp" => RateControl::Rp,
            other => return Err(CliError::Usage(format!("unknown control `{other}`; expected rs or rp"))),
        };
    }
    if c.values.is_empty() {
        c.values = default_values(c.control);
    }
    c.validate()?;
    let model = flow_model(&c.model)?;
    let ds = Dataset::load(&c.data)?;
    let idx = ds.indices(c.split);
    let points = rate_sweep(&model, &ds.corpus, &idx, c.control, &c.values, c.temperature, c.seed).map_err(sweep_error)?;
    let mut csv = String::from("control,requested,measured,speech_rate,pause_rate,pauses\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.control.name(),
            p.requested,
            p.measured,
            p.speech_rate,
            p.pause_rate,
            p.pauses
        );
    }
    write_text(&c.out.join(RATE_CSV), &csv)?;
    write_manifest(&c.out, &c)?;
    let req: Vec<f64> = points.iter().map(|p| p.requested).collect();
    let got: Vec<f64> = points.iter().map(|p| p.measured).collect();
    for p in &points {
        println!("{} {:>6} -> measured {:+.4}  pauses {}", c.control.name(), p.requested, p.measured, p.pauses);
    }
    println!("pearson(requested, measured) = {:.4}", pearson(&req, &got));
    Ok(())
}
