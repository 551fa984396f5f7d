//! The environment contract and the two built-in tasks.

pub mod bitgame;
pub mod pursuit;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
pub use bitgame::{BitGame, BitGameConfig};
pub use pursuit::{Pursuit, PursuitConfig};

/// Static description of a task. All agents share observation and action
/// dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub num_agents: usize,
    pub obs_dim: usize,
    pub num_actions: usize,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents < 2 {
            return config_err(format!("{}: need at least 2 agents", self.name));
        }
        if self.horizon == 0 || self.obs_dim == 0 || self.num_actions == 0 {
            return config_err(format!("{}: horizon, obs_dim and num_actions must be positive", self.name));
        }
        Ok(())
    }

    /// Compact identity string; network checkpoints carry it so a policy is
    /// never run in an environment with different shapes.
    pub fn fingerprint(&self) -> String {
        format!(
            "{}/M{}/obs{}/act{}/T{}",
            self.name, self.num_agents, self.obs_dim, self.num_actions, self.horizon
        )
    }
}

/// Result of one joint step. The reward is shared by the whole team.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub done: bool,
    pub t: usize,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Start a new episode and return the initial per-agent observations.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>>;

    fn step(&mut self, actions: &[usize], rng: &mut ChaCha8Rng) -> Transition;
}

/// Serializable environment selection, tagged by `name`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EnvConfig {
    Bitgame(BitGameConfig),
    Pursuit(PursuitConfig),
}

impl EnvConfig {
    pub fn spec(&self) -> EnvSpec {
        match self {
            EnvConfig::Bitgame(c) => c.spec(),
            EnvConfig::Pursuit(c) => c.spec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvConfig::Bitgame(c) => c.validate()?,
            EnvConfig::Pursuit(c) => c.validate()?,
        }
        self.spec().validate()
    }

    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            EnvConfig::Bitgame(c) => Box::new(BitGame::new(c.clone())),
            EnvConfig::Pursuit(c) => Box::new(Pursuit::new(c.clone())),
        }
    }
}
