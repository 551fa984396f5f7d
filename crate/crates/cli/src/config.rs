//! Run configuration: strict JSON plus `NAHT_SEED` / `NAHT_OUT` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use naht_core::env::EnvConfig;
use naht_core::poam::{PpoHyper, VariantName};
use naht_core::registry::{Registry, RegistryEntry, TRAIN_TAG};
use serde::{Deserialize, Serialize};

pub const SEED_VAR: &str = "NAHT_SEED";
pub const OUT_VAR: &str = "NAHT_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub variant: VariantName,
    #[serde(default)]
    pub hyper: PpoHyper,
    #[serde(default = "default_width")]
    pub embed_dim: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default)]
    pub precision: Precision,
    pub total_env_steps: u64,
    /// Checkpoint every this many iterations; the initial and final
    /// parameters are always written.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    /// Seeds whose self-play teams are held out (`registry build`).
    #[serde(default)]
    pub holdout_seeds: Vec<u64>,
    /// Registry manifest; relative paths are taken from the config's directory.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    /// Teammates listed inline, added to the registry's.
    #[serde(default)]
    pub teammates: Vec<RegistryEntry>,
    /// Registry tag selecting the uncontrolled training set.
    #[serde(default = "default_tag")]
    pub teammate_tag: String,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_width() -> usize {
    64
}

fn default_eval_episodes() -> usize {
    128
}

fn default_tag() -> String {
    TRAIN_TAG.to_string()
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).with_context(|| format!("invalid config {origin}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(r) = &cfg.registry {
            cfg.registry = Some(base.join(r));
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        for t in &mut cfg.teammates {
            if let Some(p) = &t.checkpoint_path {
                t.checkpoint_path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.hyper.validate()?;
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        if self.width == 0 || (self.variant.variant().use_agent_modeling && self.embed_dim == 0) {
            bail!("width and embed_dim must be positive");
        }
        if self.eval_episodes == 0 || self.workers == 0 {
            bail!("eval_episodes and workers must be positive");
        }
        if let Some(s) = self.holdout_seeds.iter().find(|s| self.seeds.contains(s)) {
            bail!("seed {s} is both a training and a held-out seed");
        }
        Ok(())
    }

    /// Apply `--seed`/`--out` flags, falling back to the environment.
    pub fn apply_overrides(&mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
        let seed = match seed {
            Some(s) => Some(s),
            None => match std::env::var(SEED_VAR) {
                Ok(v) => Some(v.trim().parse().with_context(|| format!("{SEED_VAR}={v} is not a seed"))?),
                Err(_) => None,
            },
        };
        if let Some(s) = seed {
            self.seeds = vec![s];
        }
        if let Some(o) = out.or_else(|| std::env::var_os(OUT_VAR).map(PathBuf::from)) {
            self.out_dir = o;
        }
        Ok(())
    }

    /// Registry file entries followed by the inline ones.
    pub fn registry(&self) -> Result<Registry> {
        let mut reg = match &self.registry {
            Some(p) => Registry::load(p)?,
            None => Registry::default(),
        };
        reg.entries.extend(self.teammates.iter().cloned());
        Ok(Registry::new(reg.entries, reg.base)?)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "env": {"name": "bitgame"},
        "variant": "poam",
        "total_env_steps": 1000,
        "seeds": [1],
        "out_dir": "out"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::from_json(MINIMAL, "t").unwrap();
        assert_eq!((c.width, c.embed_dim, c.eval_episodes), (64, 64, 128));
        assert_eq!(c.hyper, PpoHyper::default());
        assert_eq!(c.precision, Precision::F32);
    }

    #[test]
    fn unknown_hyper_key_is_named() {
        let text = MINIMAL.replace("\"seeds\"", "\"hyper\": {\"entropy_ceof\": 0.1}, \"seeds\"");
        let err = format!("{:#}", RunConfig::from_json(&text, "t").unwrap_err());
        assert!(err.contains("entropy_ceof"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_top_level_key_is_named() {
        let text = MINIMAL.replace("\"seeds\"", "\"sedes\": [1], \"seeds\"");
        let err = format!("{:#}", RunConfig::from_json(&text, "t").unwrap_err());
        assert!(err.contains("sedes"), "{err}");
    }

    #[test]
    fn semantic_checks() {
        let text = MINIMAL.replace("\"seeds\": [1]", "\"seeds\": []");
        assert!(RunConfig::from_json(&text, "t").is_err());
        let text = MINIMAL.replace("\"seeds\": [1]", "\"seeds\": [1], \"holdout_seeds\": [1]");
        assert!(RunConfig::from_json(&text, "t").is_err());
        let text = MINIMAL.replace("\"seeds\"", "\"hyper\": {\"clip\": 1.5}, \"seeds\"");
        assert!(RunConfig::from_json(&text, "t").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_json(MINIMAL, "t").unwrap();
        assert_eq!(RunConfig::from_json(&c.to_pretty_json(), "echo").unwrap(), c);
    }

    #[test]
    fn flag_overrides_win() {
        let mut c = RunConfig::from_json(MINIMAL, "t").unwrap();
        c.apply_overrides(Some(9), Some(PathBuf::from("/tmp/x"))).unwrap();
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }
}
