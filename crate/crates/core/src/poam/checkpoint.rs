//! Network checkpoints: the parameter container written by `naht-nn` plus a
//! JSON sidecar (`<path>.json`) describing how to rebuild the networks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use naht_nn::{FloatWidth, ParamStore, Real};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learner::{Learner, TrainVariant, ValueNorm};
use super::nets::{NetConfig, PoamNets};
use super::policy::PoamPolicy;
use crate::env::EnvConfig;
use crate::error::{config_err, Result};
use crate::teams::{PolicyHandle, PolicyKind};

pub const META_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub id: String,
    pub float_bytes: u32,
    pub net: NetConfig,
    pub env: EnvConfig,
    pub env_fingerprint: String,
    pub variant: TrainVariant,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub value_norm: ValueNorm,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl<T: Real> Learner<T> {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            version: META_VERSION,
            id: self.id.clone(),
            float_bytes: T::WIDTH.bytes() as u32,
            net: self.nets.cfg.clone(),
            env: self.env.clone(),
            env_fingerprint: self.env.spec().fingerprint(),
            variant: self.variant,
            seed: self.seed,
            iteration: self.iteration,
            env_steps: self.env_steps,
            value_norm: self.value_norm,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.store.save(path)?;
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&self.meta())?)?;
        Ok(())
    }
}

/// A loaded network policy at whichever precision it was saved in.
#[derive(Debug, Clone)]
pub enum LoadedPolicy {
    F32(PoamPolicy<f32>),
    F64(PoamPolicy<f64>),
}

impl LoadedPolicy {
    pub fn nets(&self) -> &PoamNets {
        match self {
            LoadedPolicy::F32(p) => &p.nets,
            LoadedPolicy::F64(p) => &p.nets,
        }
    }

    pub fn into_handle(self, id: impl Into<String>) -> PolicyHandle {
        let arc: Arc<dyn crate::runner::Policy> = match self {
            LoadedPolicy::F32(p) => Arc::new(p),
            LoadedPolicy::F64(p) => Arc::new(p),
        };
        PolicyHandle::new(id, PolicyKind::Network, arc)
    }

    pub fn set_greedy(&mut self, greedy: bool) {
        match self {
            LoadedPolicy::F32(p) => p.greedy = greedy,
            LoadedPolicy::F64(p) => p.greedy = greedy,
        }
    }
}

fn load_as<T: Real>(meta: &CheckpointMeta, path: &Path) -> Result<PoamPolicy<T>> {
    let mut store = ParamStore::<T>::new();
    let nets = PoamNets::new(meta.net.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    store.load(path)?;
    Ok(PoamPolicy::new(nets, store, meta.env_fingerprint.clone()))
}

pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side)
        .map_err(|e| crate::Error::Config(format!("cannot read checkpoint metadata {}: {e}", side.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)?;
    if meta.version != META_VERSION {
        return config_err(format!("unsupported checkpoint metadata version {}", meta.version));
    }
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, LoadedPolicy)> {
    let meta = read_meta(path)?;
    let policy = match FloatWidth::from_bytes(meta.float_bytes) {
        Some(FloatWidth::F32) => LoadedPolicy::F32(load_as(&meta, path)?),
        Some(FloatWidth::F64) => LoadedPolicy::F64(load_as(&meta, path)?),
        None => return config_err(format!("unsupported float width {}", meta.float_bytes)),
    };
    Ok((meta, policy))
}

/// Load a checkpoint as a rollout handle.
pub fn load_policy_handle(path: &Path, greedy: bool) -> Result<PolicyHandle> {
    let (meta, mut policy) = load_checkpoint(path)?;
    policy.set_greedy(greedy);
    Ok(policy.into_handle(meta.id).with_seed(meta.seed))
}
