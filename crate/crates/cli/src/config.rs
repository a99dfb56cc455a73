//! Config resolution and run manifests.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TOOL: &str = "cauliflow";

/// A fully resolved subcommand configuration.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    const SUBCOMMAND: &'static str;

    fn seed(&self) -> u64;

    fn validate(&self) -> Result<(), CliError> {
        Ok(())
    }
}

/// Written next to every run's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest<C> {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub config: C,
}

/// Defaults, then the config file if any. Flags are applied by the caller.
pub fn load_base<C: RunConfig>(path: Option<&Path>) -> Result<C, CliError> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, format!("cannot read config: {e}")))?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        return toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())));
    }
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let body = match value.get("subcommand").and_then(|s| s.as_str()) {
        Some(sub) if sub != C::SUBCOMMAND => {
            return Err(CliError::Config(format!(
                "{} is a manifest for `{sub}`, not `{}`",
                path.display(),
                C::SUBCOMMAND
            )))
        }
        Some(_) => value
            .get("config")
            .cloned()
            .ok_or_else(|| CliError::Config(format!("{}: manifest has no `config`", path.display())))?,
        None => value,
    };
    serde_json::from_value(body).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_manifest<C: RunConfig>(dir: &Path, config: &C) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::runtime)?;
    let manifest = Manifest {
        tool: TOOL.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        subcommand: C::SUBCOMMAND.to_string(),
        seed: config.seed(),
        config,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
    std::fs::write(&path, text + "\n").map_err(CliError::runtime)?;
    Ok(path)
}

/// Overwrites `slot` when the flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Toy {
        seed: u64,
        name: String,
    }

    impl RunConfig for Toy {
        const SUBCOMMAND: &'static str = "toy";
        fn seed(&self) -> u64 {
            self.seed
        }
    }

    #[test]
    fn manifests_round_trip_and_check_the_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = Toy {
            seed: 9,
            name: "x".into(),
        };
        let path = write_manifest(dir.path(), &cfg).unwrap();
        assert_eq!(load_base::<Toy>(Some(&path)).unwrap(), cfg);

        let other = dir.path().join("other.json");
        std::fs::write(&other, r#"{"subcommand": "predict", "config": {}}"#).unwrap();
        assert!(matches!(load_base::<Toy>(Some(&other)), Err(CliError::Config(_))));
    }

    #[test]
    fn toml_files_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("c.toml");
        std::fs::write(&good, "seed = 3\n").unwrap();
        assert_eq!(load_base::<Toy>(Some(&good)).unwrap().seed, 3);
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "sed = 3\n").unwrap();
        assert!(matches!(load_base::<Toy>(Some(&bad)), Err(CliError::Config(_))));
        let missing = dir.path().join("nope.toml");
        assert!(matches!(load_base::<Toy>(Some(&missing)), Err(CliError::MissingInput { .. })));
    }
}
