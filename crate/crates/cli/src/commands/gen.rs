use std::path::PathBuf;

use cauliflow_core::synthdata::{CorpusSizes, Generator, GeneratorSpec};
use serde::{Deserialize, Serialize};

use super::{write_json, write_text};
use crate::config::{load_base, set, write_manifest, RunConfig};
use crate::data::{CORPUS_DIR, GENERATOR_FILE, LATENTS_FILE, SPLIT_FILE};
use crate::{CliError, GenDataArgs};

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataConfig {
    pub out: PathBuf,
    pub sizes: CorpusSizes,
    /// The generator's own `seed` is the run seed.
    pub generator: GeneratorSpec,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("data"),
            sizes: CorpusSizes::default(),
            generator: GeneratorSpec::default(),
        }
    }
}

impl RunConfig for GenDataConfig {
    const SUBCOMMAND: &'static str = "gen-data";

    fn seed(&self) -> u64 {
        self.generator.seed
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.sizes.train == 0 {
            return Err(CliError::Config("the train split must not be empty".into()));
        }
        self.generator.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

pub fn resolve(a: &GenDataArgs) -> Result<GenDataConfig, CliError> {
    let mut cfg: GenDataConfig = load_base(a.common.config.as_deref())?;
    if let Some(p) = &a.spec {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::missing(p, format!("cannot read spec: {e}")))?;
        cfg.generator = GeneratorSpec::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    }
    set(&mut cfg.generator.seed, a.common.seed);
    set(&mut cfg.out, a.common.out.clone());
    set(&mut cfg.sizes.train, a.train);
    set(&mut cfg.sizes.dev, a.dev);
    set(&mut cfg.sizes.test, a.test);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(a: GenDataArgs) -> Result<(), CliError> {
    let cfg = resolve(&a)?;
    let generator = Generator::new(cfg.generator.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    let data = generator.generate(cfg.sizes).map_err(CliError::runtime)?;
    data.corpus.save(&cfg.out.join(CORPUS_DIR)).map_err(CliError::runtime)?;
    write_json(&cfg.out.join(SPLIT_FILE), &data.split)?;
    let mut latents = String::new();
    for l in &data.latents {
        latents.push_str(&serde_json::to_string(l).map_err(CliError::runtime)?);
        latents.push('\n');
    }
    write_text(&cfg.out.join(LATENTS_FILE), &latents)?;
    write_text(&cfg.out.join(GENERATOR_FILE), &cfg.generator.to_toml_string())?;
    write_manifest(&cfg.out, &cfg)?;
    println!(
        "wrote {} utterances ({} train / {} dev / {} test) to {}",
        data.corpus.utterances.len(),
        cfg.sizes.train,
        cfg.sizes.dev,
        cfg.sizes.test,
        cfg.out.display()
    );
    Ok(())
}
