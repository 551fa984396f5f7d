use naht_nn::{Activation, Mlp, ParamStore, Real, RecurrentNet, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batch::EpisodeBatch;
use crate::env::EnvSpec;
use crate::error::{config_err, Result};

pub const ENCODER: &str = "enc";
pub const OBS_DECODER: &str = "dec_obs";
pub const ACT_DECODER: &str = "dec_act";
pub const ACTOR: &str = "actor";
pub const CRITIC: &str = "critic";

fn in_group(name: &str, group: &str) -> bool {
    name.strip_prefix(group).is_some_and(|rest| rest.starts_with('.'))
}

/// Encoder and both decoders.
pub fn is_ed_param(name: &str) -> bool {
    in_group(name, ENCODER) || in_group(name, OBS_DECODER) || in_group(name, ACT_DECODER)
}

pub fn is_encoder_param(name: &str) -> bool {
    in_group(name, ENCODER)
}

pub fn is_actor_param(name: &str) -> bool {
    in_group(name, ACTOR)
}

pub fn is_critic_param(name: &str) -> bool {
    in_group(name, CRITIC)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub obs_dim: usize,
    pub num_actions: usize,
    pub num_agents: usize,
    pub width: usize,
    pub embed_dim: usize,
    pub trunk_layers: usize,
    pub agent_modeling: bool,
}

impl NetConfig {
    pub fn for_env(spec: &EnvSpec, width: usize, embed_dim: usize, agent_modeling: bool) -> Self {
        NetConfig {
            obs_dim: spec.obs_dim,
            num_actions: spec.num_actions,
            num_agents: spec.num_agents,
            width,
            embed_dim,
            trunk_layers: 2,
            agent_modeling,
        }
    }

    pub fn encoder_in(&self) -> usize {
        self.obs_dim + self.num_actions
    }

    /// Actor and critic input: observation, embedding (when modeling) and
    /// one-hot slot id.
    pub fn policy_in(&self) -> usize {
        self.obs_dim + if self.agent_modeling { self.embed_dim } else { 0 } + self.num_agents
    }

    pub fn teammates(&self) -> usize {
        self.num_agents - 1
    }
}

/// Encoder-decoder teammate model plus actor and critic, all registered in
/// one parameter store under the prefixes above.
#[derive(Debug, Clone)]
pub struct PoamNets {
    pub cfg: NetConfig,
    pub encoder: Option<RecurrentNet>,
    pub obs_decoder: Option<Mlp>,
    pub act_decoder: Option<Mlp>,
    pub actor: RecurrentNet,
    pub critic: RecurrentNet,
}

impl PoamNets {
    pub fn new<T: Real, R: Rng + ?Sized>(cfg: NetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        if cfg.num_agents < 2 || cfg.width == 0 || cfg.trunk_layers == 0 {
            return config_err("networks need at least two agents, positive width and one trunk layer");
        }
        if cfg.agent_modeling && cfg.embed_dim == 0 {
            return config_err("agent modeling needs a positive embedding size");
        }
        let (w, l) = (cfg.width, cfg.trunk_layers);
        let (encoder, obs_decoder, act_decoder) = if cfg.agent_modeling {
            let enc = RecurrentNet::new(store, ENCODER, cfg.encoder_in(), w, l, cfg.embed_dim, Activation::Tanh, 1.0, rng)?;
            let dec_o = Mlp::new(
                store,
                OBS_DECODER,
                cfg.embed_dim,
                &[w],
                cfg.teammates() * cfg.obs_dim,
                Activation::Identity,
                1.0,
                rng,
            )?;
            let dec_a = Mlp::new(
                store,
                ACT_DECODER,
                cfg.embed_dim,
                &[w],
                cfg.teammates() * cfg.num_actions,
                Activation::Identity,
                0.01,
                rng,
            )?;
            (Some(enc), Some(dec_o), Some(dec_a))
        } else {
            (None, None, None)
        };
        let actor = RecurrentNet::new(store, ACTOR, cfg.policy_in(), w, l, cfg.num_actions, Activation::Identity, 0.01, rng)?;
        let critic = RecurrentNet::new(store, CRITIC, cfg.policy_in(), w, l, 1, Activation::Identity, 1.0, rng)?;
        Ok(PoamNets {
            cfg,
            encoder,
            obs_decoder,
            act_decoder,
            actor,
            critic,
        })
    }

    pub fn encoder(&self) -> Result<&RecurrentNet> {
        self.encoder
            .as_ref()
            .ok_or_else(|| crate::Error::Config("this variant has no teammate model".into()))
    }
}

/// One agent's trajectory inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lane {
    pub episode: usize,
    pub slot: usize,
}

pub fn lanes_where(batch: &EpisodeBatch, episodes: &[usize], controlled_only: bool) -> Vec<Lane> {
    let mut out = Vec::new();
    for &episode in episodes {
        for slot in 0..batch.num_agents() {
            if !controlled_only || batch.is_controlled(episode, slot) {
                out.push(Lane { episode, slot });
            }
        }
    }
    out
}

pub fn max_len(batch: &EpisodeBatch, lanes: &[Lane]) -> usize {
    lanes.iter().map(|l| batch.lengths[l.episode]).max().unwrap_or(0)
}

/// Per-step `[L, width]` inputs for `lanes`, filled row by row.
pub fn sequence<T: Real>(
    lanes: &[Lane],
    steps: usize,
    width: usize,
    mut fill: impl FnMut(Lane, usize, &mut [T]),
) -> Vec<Tensor<T>> {
    (0..steps)
        .map(|t| {
            let mut x = Tensor::zeros(&[lanes.len(), width]);
            for (r, &lane) in lanes.iter().enumerate() {
                fill(lane, t, x.row_mut(r));
            }
            x
        })
        .collect()
}

pub fn encoder_row<T: Real>(cfg: &NetConfig, obs: &[f64], prev_action: Option<usize>, out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(obs) {
        *o = T::lit(v);
    }
    out[cfg.obs_dim..].fill(T::zero());
    if let Some(a) = prev_action {
        out[cfg.obs_dim + a] = T::one();
    }
}

pub fn policy_row<T: Real>(cfg: &NetConfig, obs: &[f64], embedding: Option<&[T]>, slot: usize, out: &mut [T]) {
    for (o, &v) in out.iter_mut().zip(obs) {
        *o = T::lit(v);
    }
    let mut k = cfg.obs_dim;
    if cfg.agent_modeling {
        let e = embedding.expect("agent modeling needs an embedding");
        out[k..k + cfg.embed_dim].copy_from_slice(e);
        k += cfg.embed_dim;
    }
    out[k..].fill(T::zero());
    out[k + slot] = T::one();
}

/// Per-step embeddings `[episode, t, agent, n]`; only computed lanes are filled.
#[derive(Debug, Clone)]
pub struct Embeddings<T> {
    n: usize,
    m: usize,
    horizon: usize,
    data: Vec<T>,
}

impl<T: Real> Embeddings<T> {
    pub fn zeros(batch: &EpisodeBatch, n: usize) -> Self {
        let (m, horizon) = (batch.num_agents(), batch.horizon());
        Embeddings {
            n,
            m,
            horizon,
            data: vec![T::zero(); batch.num_episodes() * horizon * m * n],
        }
    }

    fn offset(&self, e: usize, t: usize, i: usize) -> usize {
        ((e * self.horizon + t) * self.m + i) * self.n
    }

    pub fn get(&self, e: usize, t: usize, i: usize) -> &[T] {
        let k = self.offset(e, t, i);
        &self.data[k..k + self.n]
    }

    pub fn get_mut(&mut self, e: usize, t: usize, i: usize) -> &mut [T] {
        let k = self.offset(e, t, i);
        &mut self.data[k..k + self.n]
    }

    /// Store encoder outputs `ys[t]` (rows aligned with `lanes`).
    pub fn scatter(&mut self, lanes: &[Lane], ys: &[Tensor<T>]) {
        for (t, y) in ys.iter().enumerate() {
            for (r, l) in lanes.iter().enumerate() {
                self.get_mut(l.episode, t, l.slot).copy_from_slice(y.row(r));
            }
        }
    }
}

/// Encoder inputs for `lanes` from a recorded batch.
pub fn encoder_inputs<T: Real>(cfg: &NetConfig, batch: &EpisodeBatch, lanes: &[Lane]) -> Vec<Tensor<T>> {
    sequence(lanes, max_len(batch, lanes), cfg.encoder_in(), |l, t, row| {
        if t < batch.lengths[l.episode] {
            encoder_row(cfg, batch.obs(l.episode, t, l.slot), batch.prev_action(l.episode, t, l.slot), row);
        }
    })
}

/// Actor/critic inputs for `lanes` from a recorded batch.
pub fn policy_inputs<T: Real>(
    cfg: &NetConfig,
    batch: &EpisodeBatch,
    emb: Option<&Embeddings<T>>,
    lanes: &[Lane],
) -> Vec<Tensor<T>> {
    sequence(lanes, max_len(batch, lanes), cfg.policy_in(), |l, t, row| {
        if t < batch.lengths[l.episode] {
            let e = emb.map(|e| e.get(l.episode, t, l.slot));
            policy_row(cfg, batch.obs(l.episode, t, l.slot), e, l.slot, row);
        }
    })
}

/// Run the encoder over `lanes` from a zero state.
pub fn compute_embeddings<T: Real>(
    nets: &PoamNets,
    store: &ParamStore<T>,
    batch: &EpisodeBatch,
    lanes: &[Lane],
) -> Result<Embeddings<T>> {
    let enc = nets.encoder()?;
    let mut out = Embeddings::zeros(batch, nets.cfg.embed_dim);
    let xs = encoder_inputs(&nets.cfg, batch, lanes);
    let mut h = enc.initial_state(lanes.len());
    let mut ys = Vec::with_capacity(xs.len());
    for x in &xs {
        let (y, h2) = enc.step(store, x, &h)?;
        ys.push(y);
        h = h2;
    }
    out.scatter(lanes, &ys);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(modeling: bool) -> NetConfig {
        NetConfig {
            obs_dim: 6,
            num_actions: 2,
            num_agents: 3,
            width: 8,
            embed_dim: 4,
            trunk_layers: 2,
            agent_modeling: modeling,
        }
    }

    #[test]
    fn parameter_groups_and_shapes() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let nets = PoamNets::new(cfg(true), &mut store, &mut rng).unwrap();
        assert_eq!(nets.obs_decoder.as_ref().unwrap().out_dim(), 12);
        assert_eq!(nets.act_decoder.as_ref().unwrap().out_dim(), 4);
        assert_eq!(nets.actor.in_dim(), 6 + 4 + 3);
        for e in store.entries() {
            let groups = [
                is_ed_param(&e.name),
                is_actor_param(&e.name),
                is_critic_param(&e.name),
            ];
            assert_eq!(groups.iter().filter(|&&g| g).count(), 1, "{}", e.name);
        }
        let mut plain = ParamStore::<f64>::new();
        let nets = PoamNets::new(cfg(false), &mut plain, &mut rng).unwrap();
        assert!(nets.encoder.is_none());
        assert_eq!(nets.actor.in_dim(), 6 + 3);
        assert!(plain.entries().iter().all(|e| !is_ed_param(&e.name)));
    }

    #[test]
    fn group_prefixes_need_a_separator() {
        assert!(is_actor_param("actor.fc0.lin.w"));
        assert!(!is_actor_param("actors.fc0"));
        assert!(is_ed_param("dec_obs.out.lin.b"));
    }

    #[test]
    fn zero_encoder_gives_zero_embeddings() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let nets = PoamNets::new(cfg(true), &mut store, &mut rng).unwrap();
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        for name in names.iter().filter(|n| is_encoder_param(n)) {
            let id = store.id(name).unwrap();
            store.value_mut(id).fill(0.0);
        }
        let enc = nets.encoder().unwrap();
        let x = Tensor::full(&[2, 8], 0.7);
        let (y, _) = enc.step(&store, &x, &enc.initial_state(2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn early_differences_persist_in_embeddings() {
        let c = cfg(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let mut store = ParamStore::<f64>::new();
            let nets = PoamNets::new(c.clone(), &mut store, &mut rng).unwrap();
            let enc = nets.encoder().unwrap();
            let mut xs: Vec<Tensor<f64>> = (0..6)
                .map(|t| {
                    let mut x = Tensor::zeros(&[2, 8]);
                    for r in 0..2 {
                        encoder_row(&c, &[1.0, 0.0, 0.0, (t % 2) as f64, 0.0, 1.0], Some(t % 2), x.row_mut(r));
                    }
                    x
                })
                .collect();
            xs[0].row_mut(1)[3] = 1.0 - xs[0].row(1)[3];
            let (ys, _) = enc.forward_seq(&store, &xs).unwrap();
            for y in &ys {
                assert_ne!(y.row(0), y.row(1));
            }
        }
    }
}
