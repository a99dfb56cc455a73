use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cauliflow_core::corpus::DEFAULT_PAUSE_THRESHOLD;
use cauliflow_core::metrics::{self, duration_histogram, filtered_durations, MetricReport, TokenFilter, HIST_MAX};
use cauliflow_core::{Corpus, Utterance};
use serde::{Deserialize, Serialize};

use super::{require_path, write_text};
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::data::{utterances_path, Dataset};
use crate::{CliError, EvaluateArgs};

pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const HIST_PAUSE: &str = "hist_pause.csv";
pub const HIST_NONPAUSE: &str = "hist_nonpause.csv";
pub const DEFAULT_PERCENTILE: f64 = 99.0;

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub data: PathBuf,
    pub predicted: Option<PathBuf>,
    pub pause_threshold: f64,
    pub percentile: f64,
    pub out: PathBuf,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            predicted: None,
            pause_threshold: DEFAULT_PAUSE_THRESHOLD,
            percentile: DEFAULT_PERCENTILE,
            out: PathBuf::from("evaluation"),
        }
    }
}

impl RunConfig for EvaluateConfig {
    const SUBCOMMAND: &'static str = "evaluate";
    fn seed(&self) -> u64 {
        0
    }
    fn validate(&self) -> Result<(), CliError> {
        check_percentile(self.percentile)?;
        if !(self.pause_threshold > 0.0) {
            return Err(CliError::Config("pause_threshold must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_percentile(q: f64) -> Result<(), CliError> {
    if q > 0.0 && q <= 100.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("percentile must lie in (0, 100], got {q}")))
    }
}

/// Reference utterances in the order of `predicted`, matched by id.
pub(crate) fn references(corpus: &Corpus, predicted: &[Utterance]) -> Result<Vec<Utterance>, CliError> {
    predicted
        .iter()
        .map(|p| {
            corpus
                .find(&p.id)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("utterance {} is not in the reference corpus", p.id)))
        })
        .collect()
}

pub(crate) fn report_text(r: &MetricReport) -> String {
    let mut s = String::new();
    for (k, v) in r.entries() {
        let _ = writeln!(s, "{k}={v}");
    }
    s
}

pub(crate) fn report_csv(r: &MetricReport) -> String {
    let mut s = String::from("metric,value\n");
    for (k, v) in r.entries() {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

/// Histogram table with one column per named duration list. The last row
/// collects everything above `HIST_MAX` frames.
pub(crate) fn histogram_csv(columns: &[(String, Vec<f64>)]) -> Result<String, CliError> {
    let hists = columns
        .iter()
        .map(|(_, d)| duration_histogram(d).map_err(CliError::runtime))
        .collect::<Result<Vec<_>, _>>()?;
    let mut s = String::from("frames");
    for (name, _) in columns {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for bin in 0..=HIST_MAX + 1 {
        let _ = write!(s, "{bin}");
        for h in &hists {
            let _ = write!(s, ",{}", h[bin]);
        }
        s.push('\n');
    }
    Ok(s)
}

pub(crate) fn write_histograms(dir: &Path, target: &[Utterance], runs: &[(String, &[Utterance])]) -> Result<(), CliError> {
    for (file, filter) in [(HIST_PAUSE, TokenFilter::PauseCapable), (HIST_NONPAUSE, TokenFilter::Phonemes)] {
        let mut cols = vec![("target".to_string(), filtered_durations(target, filter))];
        cols.extend(runs.iter().map(|(n, u)| (n.clone(), filtered_durations(*u, filter))));
        write_text(&dir.join(file), &histogram_csv(&cols)?)?;
    }
    Ok(())
}

pub fn run(a: EvaluateArgs) -> Result<(), CliError> {
    let mut c: EvaluateConfig = load_base(a.common.config.as_deref())?;
    set(&mut c.data, a.data.clone());
    set(&mut c.out, a.common.out.clone());
    set(&mut c.pause_threshold, a.pause_threshold);
    set(&mut c.percentile, a.percentile);
    if a.predicted.is_some() {
        c.predicted = a.predicted.clone();
    }
    if a.common.seed.is_some() {
        eprintln!("warning: evaluate is deterministic; --seed ignored");
    }
    c.validate()?;
    let pred_path = utterances_path(&require_path(&c.predicted, "predicted")?);
    if !pred_path.is_file() {
        return Err(CliError::missing(&pred_path, "predicted utterances not found; run `cauliflow predict` first"));
    }
    let ds = Dataset::load(&c.data)?;
    let predicted = Corpus::load_utterances(&pred_path).map_err(|e| CliError::Config(e.to_string()))?;
    let target = references(&ds.corpus, &predicted)?;
    let report = metrics::evaluate(&predicted, &target, c.pause_threshold, c.percentile)
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&c.out.join(REPORT_TXT), &report_text(&report))?;
    write_text(&c.out.join(REPORT_CSV), &report_csv(&report))?;
    write_histograms(&c.out, &target, &[("predicted".to_string(), &predicted)])?;
    write_manifest(&c.out, &c)?;
    print!("{}", report_text(&report));
    Ok(())
}
