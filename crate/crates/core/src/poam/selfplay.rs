use std::path::Path;

use super::checkpoint::load_policy_handle;
use super::learner::{IterationMetrics, Learner, PpoHyper, VariantName};
use crate::env::EnvConfig;
use crate::error::Result;
use crate::teams::PolicyHandle;

/// Outcome of training one self-play team.
#[derive(Debug)]
pub struct SelfplayRun {
    pub seed: u64,
    pub handle: Result<PolicyHandle>,
    pub metrics: Vec<IterationMetrics>,
}

/// Train one fully controlled IPPO team per seed for `total_env_steps` and
/// write each to `<out_dir>/selfplay_seed<seed>.naht`. A seed that diverges
/// is reported in its own entry and does not stop the others.
pub fn train_selfplay_teammates(
    env: &EnvConfig,
    hyper: &PpoHyper,
    width: usize,
    total_env_steps: u64,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Vec<SelfplayRun>> {
    std::fs::create_dir_all(out_dir)?;
    let mut runs = Vec::new();
    for &seed in seeds {
        let mut metrics = Vec::new();
        let handle = (|| {
            let variant = VariantName::IppoSelfplay.variant();
            let mut learner = Learner::<f32>::new(format!("selfplay_seed{seed}"), env.clone(), width, 0, hyper.clone(), variant, seed)?;
            learner.dump_dir = Some(out_dir.to_path_buf());
            while learner.env_steps < total_env_steps {
                metrics.push(learner.train_iteration(&[])?);
            }
            let path = out_dir.join(format!("selfplay_seed{seed}.naht"));
            learner.save(&path)?;
            load_policy_handle(&path, false)
        })();
        runs.push(SelfplayRun { seed, handle, metrics });
    }
    Ok(runs)
}
