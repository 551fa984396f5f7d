use naht_nn::Tensor;

use crate::env::EnvSpec;
use crate::error::{config_err, Result};

/// Episode-major record of a rollout. Per-step arrays are padded to the
/// horizon; `lengths` holds the true episode lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub spec: EnvSpec,
    pub gamma: f64,
    pub lengths: Vec<usize>,
    /// `[episode, t, agent, obs_dim]`
    pub obs: Vec<f64>,
    /// `[episode, t, agent]`
    pub actions: Vec<usize>,
    /// `[episode, t]`
    pub rewards: Vec<f64>,
    /// `[episode, t]`
    pub dones: Vec<bool>,
    /// `[episode, agent]`
    pub controlled: Vec<bool>,
    /// Log-probability of each action under the policy that took it.
    pub behavior_log_prob: Vec<f64>,
    /// Per-episode team label.
    pub team_labels: Vec<String>,
    /// `[episode, agent]` policy id per slot.
    pub policy_ids: Vec<String>,
}

impl EpisodeBatch {
    pub fn empty(spec: EnvSpec) -> Self {
        EpisodeBatch {
            spec,
            gamma: 1.0,
            lengths: Vec::new(),
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            controlled: Vec::new(),
            behavior_log_prob: Vec::new(),
            team_labels: Vec::new(),
            policy_ids: Vec::new(),
        }
    }

    /// Append zeroed storage for one episode and return its index.
    pub(crate) fn push_episode(&mut self, controlled: &[bool], policy_ids: Vec<String>, label: String) -> usize {
        let (t, m, d) = (self.spec.horizon, self.spec.num_agents, self.spec.obs_dim);
        self.lengths.push(0);
        self.obs.resize(self.obs.len() + t * m * d, 0.0);
        self.actions.resize(self.actions.len() + t * m, 0);
        self.behavior_log_prob.resize(self.behavior_log_prob.len() + t * m, 0.0);
        self.rewards.resize(self.rewards.len() + t, 0.0);
        self.dones.resize(self.dones.len() + t, false);
        self.controlled.extend_from_slice(controlled);
        self.policy_ids.extend(policy_ids);
        self.team_labels.push(label);
        self.lengths.len() - 1
    }

    pub fn num_episodes(&self) -> usize {
        self.lengths.len()
    }

    pub fn num_agents(&self) -> usize {
        self.spec.num_agents
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn total_steps(&self) -> usize {
        self.lengths.iter().sum()
    }

    fn step_index(&self, e: usize, t: usize, i: usize) -> usize {
        (e * self.spec.horizon + t) * self.spec.num_agents + i
    }

    pub fn obs(&self, e: usize, t: usize, i: usize) -> &[f64] {
        let d = self.spec.obs_dim;
        let k = self.step_index(e, t, i) * d;
        &self.obs[k..k + d]
    }

    pub(crate) fn obs_mut(&mut self, e: usize, t: usize, i: usize) -> &mut [f64] {
        let d = self.spec.obs_dim;
        let k = self.step_index(e, t, i) * d;
        &mut self.obs[k..k + d]
    }

    pub fn action(&self, e: usize, t: usize, i: usize) -> usize {
        self.actions[self.step_index(e, t, i)]
    }

    pub(crate) fn set_action(&mut self, e: usize, t: usize, i: usize, a: usize, log_prob: f64) {
        let k = self.step_index(e, t, i);
        self.actions[k] = a;
        self.behavior_log_prob[k] = log_prob;
    }

    pub fn behavior_log_prob(&self, e: usize, t: usize, i: usize) -> f64 {
        self.behavior_log_prob[self.step_index(e, t, i)]
    }

    /// Previous action of agent `i`, `None` at `t = 0`.
    pub fn prev_action(&self, e: usize, t: usize, i: usize) -> Option<usize> {
        (t > 0).then(|| self.action(e, t - 1, i))
    }

    pub fn reward(&self, e: usize, t: usize) -> f64 {
        self.rewards[e * self.spec.horizon + t]
    }

    pub fn done(&self, e: usize, t: usize) -> bool {
        self.dones[e * self.spec.horizon + t]
    }

    pub(crate) fn set_step(&mut self, e: usize, t: usize, reward: f64, done: bool) {
        let k = e * self.spec.horizon + t;
        self.rewards[k] = reward;
        self.dones[k] = done;
        self.lengths[e] = self.lengths[e].max(t + 1);
    }

    pub fn is_controlled(&self, e: usize, i: usize) -> bool {
        self.controlled[e * self.spec.num_agents + i]
    }

    pub fn num_controlled(&self, e: usize) -> usize {
        (0..self.spec.num_agents).filter(|&i| self.is_controlled(e, i)).count()
    }

    pub fn policy_id(&self, e: usize, i: usize) -> &str {
        &self.policy_ids[e * self.spec.num_agents + i]
    }

    /// Observations of every agent except `i`, ascending slot order.
    pub fn teammate_obs(&self, e: usize, t: usize, i: usize) -> Vec<f64> {
        (0..self.spec.num_agents)
            .filter(|&j| j != i)
            .flat_map(|j| self.obs(e, t, j).iter().copied())
            .collect()
    }

    /// Actions of every agent except `i`, ascending slot order.
    pub fn teammate_actions(&self, e: usize, t: usize, i: usize) -> Vec<usize> {
        (0..self.spec.num_agents)
            .filter(|&j| j != i)
            .map(|j| self.action(e, t, j))
            .collect()
    }

    /// Undiscounted sum of team rewards.
    pub fn episode_return(&self, e: usize) -> f64 {
        (0..self.lengths[e]).map(|t| self.reward(e, t)).sum()
    }

    pub fn returns(&self) -> Vec<f64> {
        (0..self.num_episodes()).map(|e| self.episode_return(e)).collect()
    }

    /// Concatenate batches recorded on the same task.
    pub fn concat(parts: Vec<EpisodeBatch>) -> Result<EpisodeBatch> {
        let mut it = parts.into_iter();
        let Some(mut out) = it.next() else {
            return config_err("cannot concatenate zero batches");
        };
        for b in it {
            if b.spec != out.spec {
                return config_err("cannot concatenate batches from different tasks");
            }
            out.lengths.extend(b.lengths);
            out.obs.extend(b.obs);
            out.actions.extend(b.actions);
            out.rewards.extend(b.rewards);
            out.dones.extend(b.dones);
            out.controlled.extend(b.controlled);
            out.behavior_log_prob.extend(b.behavior_log_prob);
            out.team_labels.extend(b.team_labels);
            out.policy_ids.extend(b.policy_ids);
        }
        Ok(out)
    }

    /// Numeric arrays as named tensors, for [`naht_nn::write_tensors`].
    pub fn to_tensors(&self) -> Vec<(String, Tensor<f64>)> {
        let (e, t, m, d) = (self.num_episodes(), self.spec.horizon, self.spec.num_agents, self.spec.obs_dim);
        let f = |b: &bool| if *b { 1.0 } else { 0.0 };
        let mk = |shape: &[usize], v: Vec<f64>| Tensor::from_vec(shape, v).expect("batch layout");
        vec![
            ("obs".into(), mk(&[e, t, m, d], self.obs.clone())),
            ("actions".into(), mk(&[e, t, m], self.actions.iter().map(|&a| a as f64).collect())),
            ("rewards".into(), mk(&[e, t], self.rewards.clone())),
            ("dones".into(), mk(&[e, t], self.dones.iter().map(f).collect())),
            ("controlled".into(), mk(&[e, m], self.controlled.iter().map(f).collect())),
            ("behavior_log_prob".into(), mk(&[e, t, m], self.behavior_log_prob.clone())),
            ("lengths".into(), mk(&[e], self.lengths.iter().map(|&l| l as f64).collect())),
        ]
    }
}
