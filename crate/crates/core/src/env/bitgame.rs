//! The M-agent bit matrix game.
//!
//! Every step each agent emits a bit and the team earns `reward` when exactly
//! one bit is set. Agents observe their own one-hot index followed by the
//! previous joint action (all zeros before the first step).
//!
//! The closed-form win probabilities below assume every agent plays an
//! independent Bernoulli policy each step; [`brute_force_win_prob`] is the
//! enumeration oracle they are checked against.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, Transition};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitGameConfig {
    pub num_agents: usize,
    pub horizon: usize,
    pub reward: f64,
}

impl Default for BitGameConfig {
    fn default() -> Self {
        BitGameConfig {
            num_agents: 3,
            horizon: 25,
            reward: 3.0,
        }
    }
}

impl BitGameConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "bitgame".into(),
            num_agents: self.num_agents,
            obs_dim: 2 * self.num_agents,
            num_actions: 2,
            horizon: self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.reward.is_finite() {
            return config_err("bitgame reward must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitGameState {
    pub t: usize,
    pub prev_joint: Vec<u8>,
}

impl BitGameState {
    pub fn new(num_agents: usize) -> Self {
        BitGameState {
            t: 0,
            prev_joint: vec![0; num_agents],
        }
    }
}

pub fn bitgame_observe(state: &BitGameState, agent: usize) -> Vec<f64> {
    let m = state.prev_joint.len();
    let mut o = vec![0.0; 2 * m];
    o[agent] = 1.0;
    for (dst, &b) in o[m..].iter_mut().zip(&state.prev_joint) {
        *dst = f64::from(b);
    }
    o
}

/// Apply one joint action. Any nonzero action counts as bit 1.
pub fn bitgame_step(cfg: &BitGameConfig, state: &mut BitGameState, joint: &[usize]) -> Transition {
    assert_eq!(joint.len(), state.prev_joint.len(), "joint action width");
    assert!(state.t < cfg.horizon, "step past the horizon");
    let ones = joint.iter().filter(|&&a| a != 0).count();
    let reward = if ones == 1 { cfg.reward } else { 0.0 };
    for (b, &a) in state.prev_joint.iter_mut().zip(joint) {
        *b = u8::from(a != 0);
    }
    let t = state.t;
    state.t += 1;
    Transition {
        obs: (0..joint.len()).map(|i| bitgame_observe(state, i)).collect(),
        actions: joint.to_vec(),
        reward,
        done: state.t == cfg.horizon,
        t,
    }
}

pub struct BitGame {
    cfg: BitGameConfig,
    spec: EnvSpec,
    state: BitGameState,
}

impl BitGame {
    pub fn new(cfg: BitGameConfig) -> Self {
        let spec = cfg.spec();
        let state = BitGameState::new(cfg.num_agents);
        BitGame { cfg, spec, state }
    }

    pub fn state(&self) -> &BitGameState {
        &self.state
    }
}

impl Environment for BitGame {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        self.state = BitGameState::new(self.cfg.num_agents);
        (0..self.cfg.num_agents).map(|i| bitgame_observe(&self.state, i)).collect()
    }

    fn step(&mut self, actions: &[usize], _rng: &mut ChaCha8Rng) -> Transition {
        bitgame_step(&self.cfg, &mut self.state, actions)
    }
}

/// Probability that exactly one of `m` agents, each playing 1 with
/// probability `p`, plays 1.
pub fn static_win_prob(m: usize, p: f64) -> f64 {
    m as f64 * p * (1.0 - p).powi(m as i32 - 1)
}

/// One controlled agent playing 1 with probability `p_aht` alongside two
/// uncontrolled agents at `1/3`: the team wins when the controlled agent's
/// bit is the only 1 or the only 0 among zeros.
pub fn aht_win_prob(p_aht: f64) -> f64 {
    let q = 1.0 / 3.0;
    let others_one_one = 2.0 * q * (1.0 - q);
    let others_none = (1.0 - q) * (1.0 - q);
    (1.0 - p_aht) * others_one_one + p_aht * others_none
}

/// Two controlled agents sharing `p` with one uncontrolled agent at `1/3`.
pub fn shared_naht_win_prob(p: f64) -> f64 {
    (1.0 - p) * (1.0 / 3.0 + p)
}

/// Two controlled agents where one always plays 0 and the other plays 1 with
/// probability `p_naht`, with one uncontrolled agent at `1/3`.
pub fn asym_naht_win_prob(p_naht: f64) -> f64 {
    1.0 / 3.0 + p_naht / 3.0
}

pub const BRUTE_FORCE_MAX_AGENTS: usize = 20;

/// Exact probability that exactly one agent plays 1, by enumerating all
/// `2^M` joint outcomes.
pub fn brute_force_win_prob(ps: &[f64]) -> Result<f64> {
    if ps.len() > BRUTE_FORCE_MAX_AGENTS {
        return config_err(format!(
            "brute force limited to {BRUTE_FORCE_MAX_AGENTS} agents, got {}",
            ps.len()
        ));
    }
    if let Some(p) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return config_err(format!("probability {p} outside [0, 1]"));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << ps.len()) {
        let prob: f64 = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| if mask >> i & 1 == 1 { p } else { 1.0 - p })
            .product();
        if mask.count_ones() == 1 {
            total += prob;
        }
    }
    Ok(total)
}
