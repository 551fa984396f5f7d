//! JSON manifest of the policies available as teammates.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{config_err, Result};
use crate::poam::load_policy_handle;
use crate::scripted::{asymmetric_bit_handle, bernoulli_handle, pursuit_convention_handle, Convention};
use crate::teams::{PolicyHandle, PolicyKind};

pub const TRAIN_TAG: &str = "train";
pub const HOLDOUT_TAG: &str = "holdout";

/// How to build a non-network policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScriptedParams {
    Bernoulli { p: f64 },
    AsymmetricBits,
    PursuitConvention { convention: Convention, noise: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    pub id: String,
    pub kind: PolicyKind,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Fingerprint of the environment the policy was built for.
    pub env: String,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ScriptedParams>,
}

impl RegistryEntry {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// Build the rollout handle. Relative checkpoint paths are resolved
    /// against `base`.
    pub fn resolve(&self, env: &EnvConfig, base: &Path) -> Result<PolicyHandle> {
        let fingerprint = env.spec().fingerprint();
        if self.env != fingerprint {
            return config_err(format!(
                "registry entry {} targets {} but the run uses {fingerprint}",
                self.id, self.env
            ));
        }
        let handle = match (self.kind, &self.params, &self.checkpoint_path) {
            (PolicyKind::Network, None, Some(path)) => load_policy_handle(&base.join(path), false)?,
            (PolicyKind::Bernoulli, Some(ScriptedParams::Bernoulli { p }), None) => {
                if !(0.0..=1.0).contains(p) {
                    return config_err(format!("registry entry {}: p={p} outside [0, 1]", self.id));
                }
                bernoulli_handle(*p)
            }
            (PolicyKind::Scripted, Some(ScriptedParams::AsymmetricBits), None) => asymmetric_bit_handle(),
            (PolicyKind::Scripted, Some(ScriptedParams::PursuitConvention { convention, noise }), None) => {
                let EnvConfig::Pursuit(cfg) = env else {
                    return config_err(format!("registry entry {}: pursuit conventions need the pursuit env", self.id));
                };
                pursuit_convention_handle(*convention, cfg, *noise)
            }
            _ => {
                return config_err(format!(
                    "registry entry {}: kind {:?} needs {}",
                    self.id,
                    self.kind,
                    match self.kind {
                        PolicyKind::Network => "a checkpoint_path and no params",
                        _ => "matching params and no checkpoint_path",
                    }
                ))
            }
        };
        let mut handle = handle;
        handle.id = self.id.clone();
        handle.seed = self.seed.or(handle.seed);
        handle.tags = self.tags.clone();
        Ok(handle)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Registry {
    pub entries: Vec<RegistryEntry>,
    /// Directory that relative checkpoint paths are resolved against.
    pub base: PathBuf,
}

impl Registry {
    pub fn new(entries: Vec<RegistryEntry>, base: impl Into<PathBuf>) -> Result<Self> {
        let mut ids = std::collections::BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.id.as_str()) {
                return config_err(format!("duplicate registry id {}", e.id));
            }
        }
        Ok(Registry {
            entries,
            base: base.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Config(format!("cannot read registry {}: {e}", path.display())))?;
        let entries: Vec<RegistryEntry> = serde_json::from_str(&text)
            .map_err(|e| crate::Error::Config(format!("registry {}: {e}", path.display())))?;
        Registry::new(entries, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.entries)? + "\n")?;
        Ok(())
    }

    /// Handles for every entry carrying `tag` (all entries when `None`).
    pub fn handles(&self, env: &EnvConfig, tag: Option<&str>) -> Result<Vec<PolicyHandle>> {
        self.entries
            .iter()
            .filter(|e| tag.is_none_or(|t| e.has_tag(t)))
            .map(|e| e.resolve(env, &self.base))
            .collect()
    }
}
