mod evaluate;
mod gen;
mod predict;
mod selftest;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use crate::{CliError, Command};

pub(crate) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => gen::run(a),
        Command::TrainDur(a) => train::run_dur(a, false),
        Command::TrainDurp(a) => train::run_dur(a, true),
        Command::TrainPhrasing(a) => train::run_phrasing(a),
        Command::TrainFlow(a) => train::run_flow(a),
        Command::Predict(a) => predict::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::SweepTemperature(a) => sweep::run_temperature(a),
        Command::SweepRate(a) => sweep::run_rate(a),
        Command::Selftest(a) => selftest::run(a),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    write_text(path, &(text + "\n"))
}

pub(crate) fn require_path(p: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    p.clone()
        .ok_or_else(|| CliError::Usage(format!("--{flag} is required (or set `{flag}` in --config)")))
}
