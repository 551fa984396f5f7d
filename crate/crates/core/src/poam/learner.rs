use std::path::PathBuf;
use std::sync::Arc;

use naht_nn::{AdamConfig, ParamStore, Real};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{
    actor_log_probs, actor_loss, critic_loss, critic_values, ed_loss, embedding_grads, encoder_backward, normalize,
    td_lambda_targets, EdStats, StepTable,
};
use super::nets::{
    compute_embeddings, is_actor_param, is_critic_param, is_ed_param, is_encoder_param, lanes_where, Embeddings, Lane,
    NetConfig, PoamNets,
};
use super::policy::PoamPolicy;
use crate::batch::EpisodeBatch;
use crate::env::EnvConfig;
use crate::error::{config_err, Error, Result};
use crate::rng::SeedStream;
use crate::runner::run_team_episodes;
use crate::teams::{sample_team, PolicyHandle, PolicyKind, SamplingMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub buffer_episodes: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub clip: f64,
    pub clip_value_loss: bool,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub ed_epochs: usize,
    pub ed_minibatches: usize,
    pub ed_lr: f64,
    pub max_grad_norm: f64,
    /// Let actor and critic gradients reach the encoder.
    pub encoder_rl_grad: bool,
    /// Train the critic on running-normalized targets.
    pub value_normalization: bool,
}

impl Default for PpoHyper {
    fn default() -> Self {
        PpoHyper {
            buffer_episodes: 256,
            epochs: 4,
            minibatches: 3,
            entropy_coef: 0.05,
            clip: 0.1,
            clip_value_loss: false,
            gamma: 0.99,
            lambda: 0.95,
            lr: 5e-4,
            ed_epochs: 1,
            ed_minibatches: 1,
            ed_lr: 5e-4,
            max_grad_norm: 10.0,
            encoder_rl_grad: false,
            value_normalization: true,
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("buffer_episodes", self.buffer_episodes),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("ed_epochs", self.ed_epochs),
            ("ed_minibatches", self.ed_minibatches),
        ];
        for (name, v) in counts {
            if v == 0 {
                return config_err(format!("{name} must be positive"));
            }
        }
        if self.minibatches > self.buffer_episodes || self.ed_minibatches > self.buffer_episodes {
            return config_err("more minibatches than episodes in the buffer");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return config_err(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        let positive = [
            ("lr", self.lr),
            ("ed_lr", self.ed_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return config_err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.gamma > 1.0 || self.lambda > 1.0 {
            return config_err("gamma and lambda must not exceed 1");
        }
        if !(self.entropy_coef.is_finite() && self.entropy_coef >= 0.0) {
            return config_err("entropy_coef must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Poam,
    IppoNaht,
    PoamAht,
    PoamNoUcd,
    /// Every slot controlled; used to train uncontrolled teams.
    IppoSelfplay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainVariant {
    pub use_agent_modeling: bool,
    pub sampling: SamplingMode,
    pub critic_uses_uncontrolled_data: bool,
}

impl VariantName {
    pub fn variant(self) -> TrainVariant {
        let (use_agent_modeling, sampling, critic_uses_uncontrolled_data) = match self {
            VariantName::Poam => (true, SamplingMode::NahtUniform, true),
            VariantName::IppoNaht => (false, SamplingMode::NahtUniform, true),
            VariantName::PoamAht => (true, SamplingMode::AhtFixedN1, true),
            VariantName::PoamNoUcd => (true, SamplingMode::NahtUniform, false),
            VariantName::IppoSelfplay => (false, SamplingMode::SelfplayFull, true),
        };
        TrainVariant {
            use_agent_modeling,
            sampling,
            critic_uses_uncontrolled_data,
        }
    }
}

/// Exponentially weighted, bias-corrected mean and variance of value targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueNorm {
    pub beta: f64,
    pub mean: f64,
    pub mean_sq: f64,
    pub debias: f64,
}

impl Default for ValueNorm {
    fn default() -> Self {
        ValueNorm {
            beta: 0.9,
            mean: 0.0,
            mean_sq: 0.0,
            debias: 0.0,
        }
    }
}

impl ValueNorm {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        self.mean = self.beta * self.mean + (1.0 - self.beta) * m;
        self.mean_sq = self.beta * self.mean_sq + (1.0 - self.beta) * m2;
        self.debias = self.beta * self.debias + (1.0 - self.beta);
    }

    fn stats(&self) -> (f64, f64) {
        if self.debias == 0.0 {
            return (0.0, 1.0);
        }
        let mean = self.mean / self.debias;
        let var = (self.mean_sq / self.debias - mean * mean).max(1e-4);
        (mean, var.sqrt())
    }

    pub fn normalize(&self, x: f64) -> f64 {
        let (m, s) = self.stats();
        (x - m) / s
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        let (m, s) = self.stats();
        x * s + m
    }
}

/// One row of the training metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_return: f64,
    pub ed_obs_mse: Option<f64>,
    pub ed_act_nll: Option<f64>,
    pub value_loss: f64,
    pub actor_loss: f64,
    pub entropy: f64,
    pub ed_grad_norm: Option<f64>,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
}

impl IterationMetrics {
    pub const CSV_HEADER: &'static str = "iteration,env_steps,mean_return,ed_obs_mse,ed_act_nll,value_loss,actor_loss,entropy";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_return,
            opt(self.ed_obs_mse),
            opt(self.ed_act_nll),
            self.value_loss,
            self.actor_loss,
            self.entropy
        )
    }
}

/// Per-iteration quantities fixed before the RL epochs.
pub struct Prepared<T> {
    pub embeddings: Option<Embeddings<T>>,
    pub old_values: StepTable,
    pub targets: StepTable,
    pub advantages: StepTable,
    pub old_log_probs: StepTable,
}

#[derive(Clone)]
pub struct Learner<T: Real> {
    pub id: String,
    pub env: EnvConfig,
    pub nets: PoamNets,
    pub store: ParamStore<T>,
    pub hyper: PpoHyper,
    pub variant: TrainVariant,
    pub value_norm: ValueNorm,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub workers: usize,
    /// Where to write the offending minibatch if training diverges.
    pub dump_dir: Option<PathBuf>,
    stream: SeedStream,
}

impl<T: Real> Learner<T> {
    pub fn new(
        id: impl Into<String>,
        env: EnvConfig,
        width: usize,
        embed_dim: usize,
        hyper: PpoHyper,
        variant: TrainVariant,
        seed: u64,
    ) -> Result<Self> {
        env.validate()?;
        hyper.validate()?;
        let spec = env.spec();
        let cfg = NetConfig::for_env(&spec, width, embed_dim, variant.use_agent_modeling);
        let stream = SeedStream::new(seed);
        let mut store = ParamStore::new();
        let nets = PoamNets::new(cfg, &mut store, &mut stream.derive("init").rng())?;
        Ok(Learner {
            id: id.into(),
            env,
            nets,
            store,
            hyper,
            variant,
            value_norm: ValueNorm::default(),
            seed,
            iteration: 0,
            env_steps: 0,
            workers: 1,
            dump_dir: None,
            stream,
        })
    }

    /// Frozen copy of the current policy.
    pub fn policy(&self) -> PoamPolicy<T> {
        PoamPolicy::new(self.nets.clone(), self.store.snapshot(), self.env.spec().fingerprint())
    }

    pub fn handle(&self) -> PolicyHandle {
        PolicyHandle::new(self.id.clone(), PolicyKind::Network, Arc::new(self.policy())).with_seed(self.seed)
    }

    /// Roll out one buffer with a fresh team per episode.
    pub fn collect(&self, uncontrolled: &[PolicyHandle]) -> Result<EpisodeBatch> {
        let me = self.handle();
        let m = self.env.spec().num_agents;
        let it = self.stream.derive("sample").index(self.iteration);
        let teams = (0..self.hyper.buffer_episodes)
            .map(|e| sample_team(self.variant.sampling, uncontrolled, &me, m, &mut it.index(e as u64).rng()))
            .collect::<Result<Vec<_>>>()?;
        let mut batch = run_team_episodes(&self.env, &teams, self.stream.derive("rollout").index(self.iteration), self.workers)?;
        batch.gamma = self.hyper.gamma;
        Ok(batch)
    }

    pub fn train_iteration(&mut self, uncontrolled: &[PolicyHandle]) -> Result<IterationMetrics> {
        let batch = self.collect(uncontrolled)?;
        self.update(&batch)
    }

    fn episodes(batch: &EpisodeBatch) -> Vec<usize> {
        (0..batch.num_episodes()).collect()
    }

    fn critic_lanes(&self, batch: &EpisodeBatch, episodes: &[usize]) -> Vec<Lane> {
        lanes_where(batch, episodes, !self.variant.critic_uses_uncontrolled_data)
    }

    fn check_finite(&self, what: &str, v: f64, batch: &EpisodeBatch, episodes: &[usize]) -> Result<()> {
        if v.is_finite() {
            return Ok(());
        }
        let mut msg = format!("{what} became {v} at iteration {}", self.iteration);
        if let Some(dir) = &self.dump_dir {
            let path = dir.join(format!("diverged_iter{}.naht", self.iteration));
            let tensors = batch.to_tensors();
            let refs: Vec<(&str, &naht_nn::Tensor<f64>)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
            let dumped = std::fs::File::create(&path)
                .map_err(Error::from)
                .and_then(|mut f| naht_nn::write_tensors(&mut f, &refs).map_err(Error::from));
            match dumped {
                Ok(()) => msg.push_str(&format!("; minibatch episodes {episodes:?} of the buffer dumped to {}", path.display())),
                Err(e) => msg.push_str(&format!("; dump failed: {e}")),
            }
        }
        Err(Error::Diverged(msg))
    }

    /// Teammate-model update: `ed_epochs` passes over `ed_minibatches`
    /// shuffled groups of episodes. Returns the loss statistics of the first
    /// pass and the mean pre-clip gradient norm.
    pub fn ed_update(&mut self, batch: &EpisodeBatch) -> Result<Option<(EdStats, f64)>> {
        if !self.variant.use_agent_modeling {
            return Ok(None);
        }
        let adam = AdamConfig::with_lr(self.hyper.ed_lr);
        let mut rng = self.stream.derive("ed_shuffle").index(self.iteration).rng();
        let mut first = None;
        let mut sums = EdStats::default();
        let (mut norm, mut updates) = (0.0, 0usize);
        for epoch in 0..self.hyper.ed_epochs {
            let mut eps = Self::episodes(batch);
            eps.shuffle(&mut rng);
            for chunk in split(&eps, self.hyper.ed_minibatches) {
                let lanes = lanes_where(batch, &chunk, true);
                if lanes.is_empty() {
                    continue;
                }
                let stats = ed_loss(&self.nets, &mut self.store, batch, &lanes, true)?;
                self.check_finite("teammate-model loss", stats.loss, batch, &chunk)?;
                let g = self.store.clip_grad_norm(is_ed_param, self.hyper.max_grad_norm);
                self.check_finite("teammate-model gradient norm", g, batch, &chunk)?;
                norm += g;
                updates += 1;
                self.store.adam_step_where(&adam, is_ed_param)?;
                if epoch == 0 {
                    sums.sq_err += stats.sq_err;
                    sums.nll += stats.nll;
                    sums.steps += stats.steps;
                }
            }
            if epoch == 0 && sums.steps > 0 {
                sums.loss = (sums.sq_err + sums.nll) / sums.steps as f64;
                first = Some(sums);
            }
        }
        Ok(first.map(|s| (s, norm / updates.max(1) as f64)))
    }

    /// Embeddings, values, TD(λ) targets, normalized advantages and old
    /// log-probabilities under the current parameters.
    pub fn prepare(&mut self, batch: &EpisodeBatch) -> Result<Prepared<T>> {
        let all = Self::episodes(batch);
        let all_lanes = lanes_where(batch, &all, false);
        let controlled = lanes_where(batch, &all, true);
        if controlled.is_empty() {
            return config_err("the buffer holds no controlled agents");
        }
        let embeddings = if self.variant.use_agent_modeling {
            Some(compute_embeddings(&self.nets, &self.store, batch, &all_lanes)?)
        } else {
            None
        };
        let emb = embeddings.as_ref();
        let old_values = critic_values(&self.nets, &self.store, batch, emb, &all_lanes)?;
        let old_log_probs = actor_log_probs(&self.nets, &self.store, batch, emb, &controlled)?;

        let mut targets = StepTable::zeros(batch);
        let mut raw_targets = Vec::new();
        for l in &all_lanes {
            let len = batch.lengths[l.episode];
            let mut values: Vec<f64> = (0..len)
                .map(|t| self.denorm(old_values.get(l.episode, t, l.slot)))
                .collect();
            values.push(0.0);
            let rewards: Vec<f64> = (0..len).map(|t| batch.reward(l.episode, t)).collect();
            let dones: Vec<bool> = (0..len).map(|t| t + 1 == len || batch.done(l.episode, t)).collect();
            let tgt = td_lambda_targets(&values, &rewards, &dones, self.hyper.gamma, self.hyper.lambda);
            for (t, &v) in tgt.iter().enumerate() {
                targets.set(l.episode, t, l.slot, v);
            }
            if self.variant.critic_uses_uncontrolled_data || batch.is_controlled(l.episode, l.slot) {
                raw_targets.extend_from_slice(&tgt);
            }
        }

        let mut adv: Vec<f64> = Vec::new();
        for l in &controlled {
            for t in 0..batch.lengths[l.episode] {
                adv.push(targets.get(l.episode, t, l.slot) - self.denorm(old_values.get(l.episode, t, l.slot)));
            }
        }
        normalize(&mut adv);
        let mut advantages = StepTable::zeros(batch);
        let mut k = 0;
        for l in &controlled {
            for t in 0..batch.lengths[l.episode] {
                advantages.set(l.episode, t, l.slot, adv[k]);
                k += 1;
            }
        }

        if self.hyper.value_normalization {
            self.value_norm.update(&raw_targets);
        }
        for l in &all_lanes {
            for t in 0..batch.lengths[l.episode] {
                let v = targets.get(l.episode, t, l.slot);
                targets.set(l.episode, t, l.slot, self.norm(v));
            }
        }
        Ok(Prepared {
            embeddings,
            old_values,
            targets,
            advantages,
            old_log_probs,
        })
    }

    fn norm(&self, v: f64) -> f64 {
        if self.hyper.value_normalization {
            self.value_norm.normalize(v)
        } else {
            v
        }
    }

    fn denorm(&self, v: f64) -> f64 {
        if self.hyper.value_normalization {
            self.value_norm.denormalize(v)
        } else {
            v
        }
    }

    /// Full update from a collected buffer.
    pub fn update(&mut self, batch: &EpisodeBatch) -> Result<IterationMetrics> {
        let ed = self.ed_update(batch)?;
        let prep = self.prepare(batch)?;
        let adam = AdamConfig::with_lr(self.hyper.lr);
        let joint = self.variant.use_agent_modeling && self.hyper.encoder_rl_grad;
        let mut rng = self.stream.derive("rl_shuffle").index(self.iteration).rng();
        let (mut v_loss, mut a_loss, mut ent, mut n_mb) = (0.0, 0.0, 0.0, 0usize);
        let (mut a_norm, mut c_norm) = (0.0, 0.0);
        for _ in 0..self.hyper.epochs {
            let mut eps = Self::episodes(batch);
            eps.shuffle(&mut rng);
            for chunk in split(&eps, self.hyper.minibatches) {
                let actor_lanes = lanes_where(batch, &chunk, true);
                let critic_lanes = self.critic_lanes(batch, &chunk);
                if actor_lanes.is_empty() || critic_lanes.is_empty() {
                    continue;
                }
                let fresh_emb;
                let emb = if joint {
                    let lanes = lanes_where(batch, &chunk, false);
                    fresh_emb = compute_embeddings(&self.nets, &self.store, batch, &lanes)?;
                    Some(&fresh_emb)
                } else {
                    prep.embeddings.as_ref()
                };
                let clip = self.hyper.clip_value_loss.then_some((&prep.old_values, self.hyper.clip));
                let c = critic_loss(
                    &self.nets,
                    &mut self.store,
                    batch,
                    emb,
                    &critic_lanes,
                    &prep.targets,
                    clip,
                    true,
                    joint,
                )?;
                let a = actor_loss(
                    &self.nets,
                    &mut self.store,
                    batch,
                    emb,
                    &actor_lanes,
                    &prep.advantages,
                    &prep.old_log_probs,
                    self.hyper.clip,
                    self.hyper.entropy_coef,
                    true,
                    joint,
                )?;
                self.check_finite("value loss", c.loss, batch, &chunk)?;
                self.check_finite("actor loss", a.loss, batch, &chunk)?;
                if joint {
                    let lanes = lanes_where(batch, &chunk, false);
                    let mut d_emb = Embeddings::zeros(batch, self.nets.cfg.embed_dim);
                    if let Some(d) = &c.d_inputs {
                        embedding_grads(&self.nets.cfg, batch, &critic_lanes, d, &mut d_emb);
                    }
                    if let Some(d) = &a.d_inputs {
                        embedding_grads(&self.nets.cfg, batch, &actor_lanes, d, &mut d_emb);
                    }
                    encoder_backward(&self.nets, &mut self.store, batch, &lanes, &d_emb)?;
                    let g = self.store.clip_grad_norm(is_encoder_param, self.hyper.max_grad_norm);
                    self.check_finite("encoder gradient norm", g, batch, &chunk)?;
                }
                let ga = self.store.clip_grad_norm(is_actor_param, self.hyper.max_grad_norm);
                let gc = self.store.clip_grad_norm(is_critic_param, self.hyper.max_grad_norm);
                self.check_finite("actor gradient norm", ga, batch, &chunk)?;
                self.check_finite("critic gradient norm", gc, batch, &chunk)?;
                a_norm += ga;
                c_norm += gc;
                let select = |name: &str| is_actor_param(name) || is_critic_param(name) || (joint && is_encoder_param(name));
                self.store.adam_step_where(&adam, select)?;
                // value loss reported in return units
                let scale = if self.hyper.value_normalization {
                    let s = self.value_norm.denormalize(1.0) - self.value_norm.denormalize(0.0);
                    s * s
                } else {
                    1.0
                };
                v_loss += c.loss * scale;
                a_loss += a.loss;
                ent += a.entropy;
                n_mb += 1;
            }
        }
        self.iteration += 1;
        self.env_steps += batch.total_steps() as u64;
        let k = n_mb.max(1) as f64;
        let returns = batch.returns();
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return: returns.iter().sum::<f64>() / returns.len() as f64,
            ed_obs_mse: ed.map(|(s, _)| s.obs_mse(&self.nets.cfg)),
            ed_act_nll: ed.map(|(s, _)| s.act_nll(&self.nets.cfg)),
            value_loss: v_loss / k,
            actor_loss: a_loss / k,
            entropy: ent / k,
            ed_grad_norm: ed.map(|(_, n)| n),
            actor_grad_norm: a_norm / k,
            critic_grad_norm: c_norm / k,
        })
    }
}

/// Split `items` into `parts` contiguous groups of near-equal size.
pub fn split(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let n = items.len();
    (0..parts)
        .map(|k| items[k * n / parts..(k + 1) * n / parts].to_vec())
        .filter(|c| !c.is_empty())
        .collect()
}
