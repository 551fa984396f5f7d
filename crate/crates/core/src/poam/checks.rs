//! Self-checks of the learner's gradients and data masks on small random
//! batches, shared by the unit tests and the acceptance suite.

use naht_nn::{finite_diff_check, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::learner::{Learner, PpoHyper, VariantName};
use super::losses::{actor_log_probs, actor_loss, critic_loss, ed_loss, embedding_grads, encoder_backward, StepTable};
use super::nets::{
    compute_embeddings, is_actor_param, is_critic_param, is_ed_param, lanes_where, Embeddings, PoamNets,
};
use crate::batch::EpisodeBatch;
use crate::env::{BitGameConfig, EnvConfig};
use crate::error::Result;
use crate::rng::SeedStream;
use crate::runner::run_team_episodes;
use crate::scripted::bernoulli_handle;
use crate::teams::team_with_n;

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest relative error for gradient checks, 0/1 for exact checks.
    pub value: f64,
}

/// A 64-bit learner and a 5-step bit-game batch with teams of every size.
pub struct Fixture {
    pub learner: Learner<f64>,
    pub batch: EpisodeBatch,
}

impl Fixture {
    pub fn new(variant: VariantName, seed: u64) -> Result<Self> {
        let env = EnvConfig::Bitgame(BitGameConfig {
            horizon: 5,
            ..BitGameConfig::default()
        });
        let hyper = PpoHyper {
            buffer_episodes: 6,
            ..PpoHyper::default()
        };
        let learner = Learner::<f64>::new("fixture", env.clone(), 8, 4, hyper, variant.variant(), seed)?;
        let me = learner.handle();
        let other = bernoulli_handle(0.4);
        let stream = SeedStream::new(seed).derive("fixture");
        let teams = [1, 2, 1, 2, 3, 1]
            .iter()
            .enumerate()
            .map(|(e, &n)| {
                let u = (n < 3).then_some(&other);
                team_with_n(&me, u, 3, n, &mut stream.index(e as u64).rng())
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = run_team_episodes(&env, &teams, stream.derive("rollout"), 1)?;
        Ok(Fixture { learner, batch })
    }

    fn nets(&self) -> &PoamNets {
        &self.learner.nets
    }
}

/// Current log-probabilities shifted so the importance ratio differs from 1,
/// some inside and some outside the clip range, never near its edges.
fn shifted_old_log_probs(
    nets: &PoamNets,
    store: &ParamStore<f64>,
    batch: &EpisodeBatch,
    emb: &Embeddings<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<StepTable> {
    let controlled = lanes_where(batch, &all(batch), true);
    let mut old = actor_log_probs(nets, store, batch, Some(emb), &controlled)?;
    for lane in controlled {
        for t in 0..batch.lengths[lane.episode] {
            let mag = if rng.gen_bool(0.5) { rng.gen_range(0.02..0.06) } else { rng.gen_range(0.2..0.4) };
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let v = old.get(lane.episode, t, lane.slot);
            old.set(lane.episode, t, lane.slot, v + sign * mag);
        }
    }
    Ok(old)
}

fn all(batch: &EpisodeBatch) -> Vec<usize> {
    (0..batch.num_episodes()).collect()
}

fn random_table(batch: &EpisodeBatch, rng: &mut ChaCha8Rng) -> StepTable {
    let mut t = StepTable::zeros(batch);
    for e in 0..batch.num_episodes() {
        for s in 0..batch.lengths[e] {
            for i in 0..batch.num_agents() {
                t.set(e, s, i, rng.gen_range(-2.0..2.0));
            }
        }
    }
    t
}

/// Copy of `store` with every scalar moved by up to ±0.3, so that small-gain
/// output layers do not leave gradients near round-off level.
fn jittered(store: &ParamStore<f64>, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    let mut out = store.clone();
    let names: Vec<String> = out.entries().iter().map(|e| e.name.clone()).collect();
    for name in names {
        let id = out.id(&name).expect("listed");
        for v in out.value_mut(id).data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    out
}

fn grads_where(store: &ParamStore<f64>, select: impl Fn(&str) -> bool) -> Vec<f64> {
    store
        .entries()
        .iter()
        .filter(|e| select(&e.name))
        .flat_map(|e| e.grad.data().iter().copied())
        .collect()
}

fn all_zero(store: &ParamStore<f64>, select: impl Fn(&str) -> bool) -> bool {
    grads_where(store, select).iter().all(|&g| g == 0.0)
}

/// Finite-difference checks of the composite losses in 64-bit precision.
pub fn gradient_checks(probes: usize, seed: u64, tolerance: f64) -> Result<Vec<CheckResult>> {
    let fx = Fixture::new(VariantName::Poam, seed)?;
    let batch = &fx.batch;
    let nets = fx.nets().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut store = jittered(&fx.learner.store, &mut rng);
    let eps = all(batch);
    let controlled = lanes_where(batch, &eps, true);
    let everyone = lanes_where(batch, &eps, false);
    let emb = compute_embeddings(&nets, &store, batch, &everyone)?;
    let targets = random_table(batch, &mut rng);
    let advantages = random_table(batch, &mut rng);
    let old = shifted_old_log_probs(&nets, &store, batch, &emb, &mut rng)?;
    let ent = 0.05;
    let mut out = Vec::new();

    let mut record = |name, err: f64| {
        out.push(CheckResult {
            name,
            passed: err < tolerance,
            value: err,
        })
    };

    let err = finite_diff_check(
        |s| ed_loss(&nets, s, batch, &controlled, true).expect("ed loss").loss,
        &mut store,
        probes,
        &mut rng,
    );
    record("teammate-model loss", err);

    let err = finite_diff_check(
        |s| {
            critic_loss(&nets, s, batch, Some(&emb), &everyone, &targets, None, true, false)
                .expect("value loss")
                .loss
        },
        &mut store,
        probes,
        &mut rng,
    );
    record("value loss", err);

    let err = finite_diff_check(
        |s| {
            actor_loss(&nets, s, batch, Some(&emb), &controlled, &advantages, &old, 0.1, ent, true, false)
                .expect("actor loss")
                .loss
        },
        &mut store,
        probes,
        &mut rng,
    );
    record("PPO actor loss", err);

    let err = finite_diff_check(
        |s| {
            let emb = compute_embeddings(&nets, s, batch, &everyone).expect("embeddings");
            let a = actor_loss(&nets, s, batch, Some(&emb), &controlled, &advantages, &old, 0.1, ent, true, true)
                .expect("actor loss");
            let c = critic_loss(&nets, s, batch, Some(&emb), &everyone, &targets, None, true, true).expect("value loss");
            let mut d = Embeddings::zeros(batch, nets.cfg.embed_dim);
            embedding_grads(&nets.cfg, batch, &controlled, a.d_inputs.as_ref().expect("requested"), &mut d);
            embedding_grads(&nets.cfg, batch, &everyone, c.d_inputs.as_ref().expect("requested"), &mut d);
            encoder_backward(&nets, s, batch, &everyone, &d).expect("encoder backward");
            a.loss + c.loss
        },
        &mut store,
        probes,
        &mut rng,
    );
    record("actor and value loss through the encoder", err);
    Ok(out)
}

/// Gradient separation and data masking properties.
pub fn invariant_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut record = |name, ok: bool| {
        out.push(CheckResult {
            name,
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
        })
    };

    let fx = Fixture::new(VariantName::Poam, seed)?;
    let batch = &fx.batch;
    let nets = fx.nets().clone();
    let mut store = fx.learner.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf10);
    let eps = all(batch);
    let controlled = lanes_where(batch, &eps, true);
    let everyone = lanes_where(batch, &eps, false);
    let targets = random_table(batch, &mut rng);
    let advantages = random_table(batch, &mut rng);
    let emb = compute_embeddings(&nets, &store, batch, &everyone)?;
    let old = shifted_old_log_probs(&nets, &store, batch, &emb, &mut rng)?;

    store.zero_grad();
    ed_loss(&nets, &mut store, batch, &controlled, true)?;
    let ed_moved = !all_zero(&store, is_ed_param);
    let rl_zero = all_zero(&store, |n| is_actor_param(n) || is_critic_param(n));
    record("teammate-model backward leaves actor and critic gradients at zero", ed_moved && rl_zero);

    store.zero_grad();
    critic_loss(&nets, &mut store, batch, Some(&emb), &everyone, &targets, None, true, false)?;
    actor_loss(&nets, &mut store, batch, Some(&emb), &controlled, &advantages, &old, 0.1, 0.05, true, false)?;
    let rl_moved = !all_zero(&store, is_actor_param) && !all_zero(&store, is_critic_param);
    record(
        "actor and critic backward leave teammate-model gradients at zero",
        rl_moved && all_zero(&store, is_ed_param),
    );

    // perturbed copy: uncontrolled observations and actions replaced by noise
    let mut noisy = batch.clone();
    for e in 0..noisy.num_episodes() {
        for i in 0..noisy.num_agents() {
            if noisy.is_controlled(e, i) {
                continue;
            }
            for t in 0..noisy.lengths[e] {
                for v in noisy.obs_mut(e, t, i) {
                    *v += rng.gen_range(-3.0..3.0);
                }
                let a = noisy.action(e, t, i);
                noisy.set_action(e, t, i, 1 - a, -0.1);
            }
        }
    }

    let mut no_ucd = Fixture::new(VariantName::PoamNoUcd, seed)?.learner;
    no_ucd.store = fx.learner.store.clone();
    let critic_grads = |b: &EpisodeBatch| -> Result<(Vec<f64>, StepTable)> {
        let mut l = no_ucd.clone();
        let prep = l.prepare(b)?;
        let lanes = lanes_where(b, &all(b), true);
        l.store.zero_grad();
        critic_loss(&l.nets, &mut l.store, b, prep.embeddings.as_ref(), &lanes, &prep.targets, None, true, false)?;
        Ok((grads_where(&l.store, is_critic_param), prep.advantages))
    };
    let (g_clean, adv_clean) = critic_grads(batch)?;
    let (g_noisy, adv_noisy) = critic_grads(&noisy)?;
    let any = g_clean.iter().any(|&g| g != 0.0);
    record(
        "controlled-only critic ignores uncontrolled observations",
        any && g_clean == g_noisy && adv_clean == adv_noisy,
    );

    let actor = |b: &EpisodeBatch| -> Result<(f64, Vec<f64>)> {
        let mut s = fx.learner.store.clone();
        s.zero_grad();
        let emb = compute_embeddings(&nets, &s, b, &lanes_where(b, &all(b), false))?;
        let lanes = lanes_where(b, &all(b), true);
        let out = actor_loss(&nets, &mut s, b, Some(&emb), &lanes, &advantages, &old, 0.1, 0.05, true, false)?;
        Ok((out.loss, grads_where(&s, is_actor_param)))
    };
    let (l_clean, g_clean) = actor(batch)?;
    let (l_noisy, g_noisy) = actor(&noisy)?;
    record(
        "actor loss ignores uncontrolled observations and actions",
        l_clean.to_bits() == l_noisy.to_bits() && g_clean == g_noisy,
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_has_mixed_teams() {
        let fx = Fixture::new(VariantName::Poam, 3).unwrap();
        let ns: Vec<usize> = (0..6).map(|e| fx.batch.num_controlled(e)).collect();
        assert_eq!(ns, vec![1, 2, 1, 2, 3, 1]);
        assert!(fx.batch.lengths.iter().all(|&l| l == 5));
    }
}
