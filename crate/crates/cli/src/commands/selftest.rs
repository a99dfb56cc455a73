use std::fmt::Write as _;
use std::path::PathBuf;

use cauliflow_core::selftest;
use serde::{Deserialize, Serialize};

use super::write_text;
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::{CliError, SelftestArgs};

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelftestConfig {
    pub seed: u64,
    /// When set, the report and manifest are written here.
    pub out: Option<PathBuf>,
}

impl RunConfig for SelftestConfig {
    const SUBCOMMAND: &'static str = "selftest";
    fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn run(a: SelftestArgs) -> Result<(), CliError> {
    let mut c: SelftestConfig = load_base(a.common.config.as_deref())?;
    set(&mut c.seed, a.common.seed);
    if a.common.out.is_some() {
        c.out = a.common.out.clone();
    }
    let report = selftest::run(c.seed);
    let mut text = String::new();
    for ch in &report.checks {
        let status = if ch.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(text, "{status} {:<24} {:.3e} (limit {:.0e})", ch.name, ch.value, ch.limit);
    }
    print!("{text}");
    if let Some(dir) = &c.out {
        write_text(&dir.join("selftest.txt"), &text)?;
        write_manifest(dir, &c)?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::SelftestFailed(failed));
    }
    println!("all {} checks passed", report.checks.len());
    Ok(())
}
