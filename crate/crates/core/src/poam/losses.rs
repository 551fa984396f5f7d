//! Teammate-model, critic and actor losses with their gradients.
//!
//! Every network-level loss is a mean over the valid agent-steps of the
//! lanes it is given. With `backward` set, gradients of that mean are
//! accumulated into the parameter store.

use naht_nn::{log_softmax_row, ParamStore, Real, Tensor};

use super::nets::{encoder_inputs, max_len, policy_inputs, Embeddings, Lane, NetConfig, PoamNets};
use crate::batch::EpisodeBatch;
use crate::error::{config_err, Result};

/// Dense per-step scalar table `[episode, t, agent]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTable {
    m: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl StepTable {
    pub fn zeros(batch: &EpisodeBatch) -> Self {
        StepTable {
            m: batch.num_agents(),
            horizon: batch.horizon(),
            data: vec![0.0; batch.num_episodes() * batch.horizon() * batch.num_agents()],
        }
    }

    pub fn get(&self, e: usize, t: usize, i: usize) -> f64 {
        self.data[(e * self.horizon + t) * self.m + i]
    }

    pub fn set(&mut self, e: usize, t: usize, i: usize, v: f64) {
        self.data[(e * self.horizon + t) * self.m + i] = v;
    }
}

fn valid_steps(batch: &EpisodeBatch, lanes: &[Lane]) -> usize {
    lanes.iter().map(|l| batch.lengths[l.episode]).sum()
}

/// `V̂_t = r_t + γ (1 - done_t) [(1 - λ) V_{t+1} + λ V̂_{t+1}]`, where `values`
/// carries one entry past the end used as the final bootstrap.
pub fn td_lambda_targets(values: &[f64], rewards: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values need one bootstrap entry");
    assert_eq!(dones.len(), n);
    let mut out = vec![0.0; n];
    let mut next_target = values[n];
    for t in (0..n).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        out[t] = rewards[t] + gamma * cont * ((1.0 - lambda) * values[t + 1] + lambda * next_target);
        next_target = out[t];
    }
    out
}

/// Shift and scale to zero mean and unit (population) standard deviation.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

/// `½ (v - target)²` and its derivative in `v`. With `clip = Some((old, eps))`
/// the larger of the plain and the clipped-prediction loss is used.
pub fn value_loss_terms(v: f64, target: f64, clip: Option<(f64, f64)>) -> (f64, f64) {
    let plain = 0.5 * (v - target) * (v - target);
    if let Some((old, eps)) = clip {
        let vc = old + (v - old).clamp(-eps, eps);
        let clipped = 0.5 * (vc - target) * (vc - target);
        if clipped > plain {
            let inside = (v - old).abs() < eps;
            return (clipped, if inside { vc - target } else { 0.0 });
        }
    }
    (plain, v - target)
}

/// Clipped surrogate `-min(ρA, clip(ρ, 1-ε, 1+ε)A)` and its derivative in
/// the new log-probability.
pub fn ppo_surrogate(logp_new: f64, logp_old: f64, adv: f64, clip: f64) -> (f64, f64, bool) {
    let ratio = (logp_new - logp_old).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (-unclipped, -unclipped, false)
    } else {
        (-clipped, 0.0, true)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdTerms {
    pub sq_err: f64,
    pub nll: f64,
}

/// Squared error of the teammate-observation prediction and NLL of the
/// teammate actions for one agent-step. Writes `d/dpred` and `d/dlogits` of
/// `sq_err + nll` when buffers are given.
pub fn ed_step_terms<T: Real>(
    cfg: &NetConfig,
    pred_obs: &[T],
    target_obs: &[f64],
    logits: &[T],
    target_actions: &[usize],
    d_obs: Option<&mut [T]>,
    d_logits: Option<&mut [T]>,
) -> EdTerms {
    let mut terms = EdTerms::default();
    let mut d_obs = d_obs;
    for (k, (&p, &y)) in pred_obs.iter().zip(target_obs).enumerate() {
        let diff = p.as_f64() - y;
        terms.sq_err += diff * diff;
        if let Some(d) = d_obs.as_deref_mut() {
            d[k] = T::lit(2.0 * diff);
        }
    }
    let a = cfg.num_actions;
    let mut lp = vec![T::zero(); a];
    let mut d_logits = d_logits;
    for (j, &act) in target_actions.iter().enumerate() {
        let block = &logits[j * a..(j + 1) * a];
        log_softmax_row(block, &mut lp);
        terms.nll -= lp[act].as_f64();
        if let Some(d) = d_logits.as_deref_mut() {
            for (c, dv) in d[j * a..(j + 1) * a].iter_mut().enumerate() {
                *dv = lp[c].exp() - if c == act { T::one() } else { T::zero() };
            }
        }
    }
    terms
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EdStats {
    pub loss: f64,
    pub sq_err: f64,
    pub nll: f64,
    pub steps: usize,
}

impl EdStats {
    /// Squared error per predicted coordinate.
    pub fn obs_mse(&self, cfg: &NetConfig) -> f64 {
        self.sq_err / (self.steps * cfg.teammates() * cfg.obs_dim) as f64
    }

    /// NLL per predicted teammate action.
    pub fn act_nll(&self, cfg: &NetConfig) -> f64 {
        self.nll / (self.steps * cfg.teammates()) as f64
    }
}

/// Per-prediction diagnostics for one agent-step and one teammate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdPrediction {
    pub episode: usize,
    pub slot: usize,
    pub t: usize,
    pub teammate: usize,
    pub obs_mse: f64,
    pub act_prob: f64,
}

/// Encoder-decoder loss: mean over the lanes' steps of the squared error on
/// teammates' observations plus the NLL of their actions.
pub fn ed_loss<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    lanes: &[Lane],
    backward: bool,
) -> Result<EdStats> {
    ed_pass(nets, store, batch, lanes, backward, None)
}

/// Decoder predictions for every teammate of every lane-step.
pub fn ed_predictions<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    lanes: &[Lane],
) -> Result<Vec<EdPrediction>> {
    let mut out = Vec::new();
    ed_pass(nets, store, batch, lanes, false, Some(&mut out))?;
    Ok(out)
}

fn ed_pass<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    lanes: &[Lane],
    backward: bool,
    mut predictions: Option<&mut Vec<EdPrediction>>,
) -> Result<EdStats> {
    let cfg = &nets.cfg;
    let enc = nets.encoder()?;
    let (dec_o, dec_a) = (
        nets.obs_decoder.as_ref().expect("modeling nets have decoders"),
        nets.act_decoder.as_ref().expect("modeling nets have decoders"),
    );
    let steps = valid_steps(batch, lanes);
    if steps == 0 {
        return config_err("teammate-model loss over an empty set of agent-steps");
    }
    let scale = T::lit(1.0 / steps as f64);
    let xs = encoder_inputs::<T>(cfg, batch, lanes);
    let (embs, enc_cache) = enc.forward_seq(store, &xs)?;
    let mut stats = EdStats {
        steps,
        ..Default::default()
    };
    let mut d_embs = Vec::with_capacity(embs.len());
    let (od, ad) = (cfg.teammates() * cfg.obs_dim, cfg.teammates() * cfg.num_actions);
    for (t, emb) in embs.iter().enumerate() {
        let (pred, cache_o) = dec_o.forward_cached(store, emb)?;
        let (logits, cache_a) = dec_a.forward_cached(store, emb)?;
        let mut d_pred = Tensor::<T>::zeros(&[lanes.len(), od]);
        let mut d_logits = Tensor::<T>::zeros(&[lanes.len(), ad]);
        for (r, l) in lanes.iter().enumerate() {
            if t >= batch.lengths[l.episode] {
                continue;
            }
            let target_obs = batch.teammate_obs(l.episode, t, l.slot);
            let target_act = batch.teammate_actions(l.episode, t, l.slot);
            let terms = ed_step_terms(
                cfg,
                pred.row(r),
                &target_obs,
                logits.row(r),
                &target_act,
                Some(d_pred.row_mut(r)),
                Some(d_logits.row_mut(r)),
            );
            stats.sq_err += terms.sq_err;
            stats.nll += terms.nll;
            if let Some(out) = predictions.as_deref_mut() {
                let mates = (0..cfg.num_agents).filter(|&j| j != l.slot);
                for (k, j) in mates.enumerate() {
                    let d = cfg.obs_dim;
                    let mse = pred.row(r)[k * d..(k + 1) * d]
                        .iter()
                        .zip(&target_obs[k * d..(k + 1) * d])
                        .map(|(p, y)| (p.as_f64() - y) * (p.as_f64() - y))
                        .sum::<f64>()
                        / d as f64;
                    let a = cfg.num_actions;
                    let mut lp = vec![T::zero(); a];
                    log_softmax_row(&logits.row(r)[k * a..(k + 1) * a], &mut lp);
                    out.push(EdPrediction {
                        episode: l.episode,
                        slot: l.slot,
                        t,
                        teammate: j,
                        obs_mse: mse,
                        act_prob: lp[target_act[k]].as_f64().exp(),
                    });
                }
            }
        }
        if backward {
            d_pred.data_mut().iter_mut().for_each(|v| *v *= scale);
            d_logits.data_mut().iter_mut().for_each(|v| *v *= scale);
            let mut de = dec_o.backward(store, &cache_o, &d_pred, true).expect("requested");
            de.add_assign(&dec_a.backward(store, &cache_a, &d_logits, true).expect("requested"));
            d_embs.push(de);
        }
    }
    if backward {
        enc.backward_seq(store, &enc_cache, &d_embs, false);
    }
    stats.loss = (stats.sq_err + stats.nll) / steps as f64;
    Ok(stats)
}

/// Raw critic outputs for `lanes`.
pub fn critic_values<T: Real>(
    nets: &PoamNets,
    store: &ParamStore<T>,
    batch: &EpisodeBatch,
    emb: Option<&Embeddings<T>>,
    lanes: &[Lane],
) -> Result<StepTable> {
    let xs = policy_inputs(&nets.cfg, batch, emb, lanes);
    let mut out = StepTable::zeros(batch);
    let mut h = nets.critic.initial_state(lanes.len());
    for (t, x) in xs.iter().enumerate() {
        let (y, h2) = nets.critic.step(store, x, &h)?;
        for (r, l) in lanes.iter().enumerate() {
            if t < batch.lengths[l.episode] {
                out.set(l.episode, t, l.slot, y.row(r)[0].as_f64());
            }
        }
        h = h2;
    }
    Ok(out)
}

/// Log-probabilities of the recorded actions under the current actor.
pub fn actor_log_probs<T: Real>(
    nets: &PoamNets,
    store: &ParamStore<T>,
    batch: &EpisodeBatch,
    emb: Option<&Embeddings<T>>,
    lanes: &[Lane],
) -> Result<StepTable> {
    let xs = policy_inputs(&nets.cfg, batch, emb, lanes);
    let mut out = StepTable::zeros(batch);
    let mut h = nets.actor.initial_state(lanes.len());
    let mut lp = vec![T::zero(); nets.cfg.num_actions];
    for (t, x) in xs.iter().enumerate() {
        let (y, h2) = nets.actor.step(store, x, &h)?;
        for (r, l) in lanes.iter().enumerate() {
            if t < batch.lengths[l.episode] {
                log_softmax_row(y.row(r), &mut lp);
                let a = batch.action(l.episode, t, l.slot);
                out.set(l.episode, t, l.slot, lp[a].as_f64());
            }
        }
        h = h2;
    }
    Ok(out)
}

/// Loss value plus, when requested, gradients with respect to the inputs.
pub struct LossOutput<T> {
    pub loss: f64,
    pub entropy: f64,
    pub clip_frac: f64,
    pub d_inputs: Option<Vec<Tensor<T>>>,
}

/// Mean `½ (V - V̂)²` over the lanes' steps. `targets` are in the critic's
/// output units.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    emb: Option<&Embeddings<T>>,
    lanes: &[Lane],
    targets: &StepTable,
    clip: Option<(&StepTable, f64)>,
    backward: bool,
    need_dx: bool,
) -> Result<LossOutput<T>> {
    let steps = valid_steps(batch, lanes);
    if steps == 0 {
        return config_err("value loss over an empty mask");
    }
    let xs = policy_inputs(&nets.cfg, batch, emb, lanes);
    let (ys, cache) = nets.critic.forward_seq(store, &xs)?;
    let mut loss = 0.0;
    let mut dys = Vec::with_capacity(ys.len());
    for (t, y) in ys.iter().enumerate() {
        let mut dy = Tensor::<T>::zeros(&[lanes.len(), 1]);
        for (r, l) in lanes.iter().enumerate() {
            if t >= batch.lengths[l.episode] {
                continue;
            }
            let v = y.row(r)[0].as_f64();
            let old = clip.map(|(table, eps)| (table.get(l.episode, t, l.slot), eps));
            let (lv, dv) = value_loss_terms(v, targets.get(l.episode, t, l.slot), old);
            loss += lv;
            dy.row_mut(r)[0] = T::lit(dv / steps as f64);
        }
        dys.push(dy);
    }
    let d_inputs = if backward {
        nets.critic.backward_seq(store, &cache, &dys, need_dx)
    } else {
        None
    };
    Ok(LossOutput {
        loss: loss / steps as f64,
        entropy: 0.0,
        clip_frac: 0.0,
        d_inputs,
    })
}

/// Mean clipped PPO surrogate minus `ent_coef` times the policy entropy.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    emb: Option<&Embeddings<T>>,
    lanes: &[Lane],
    advantages: &StepTable,
    old_log_probs: &StepTable,
    clip: f64,
    ent_coef: f64,
    backward: bool,
    need_dx: bool,
) -> Result<LossOutput<T>> {
    let steps = valid_steps(batch, lanes);
    if steps == 0 {
        return config_err("actor loss over an empty set of controlled agent-steps");
    }
    let k = nets.cfg.num_actions;
    let xs = policy_inputs(&nets.cfg, batch, emb, lanes);
    let (ys, cache) = nets.actor.forward_seq(store, &xs)?;
    let (mut loss, mut entropy, mut clipped) = (0.0, 0.0, 0usize);
    let mut lp = vec![T::zero(); k];
    let mut dys = Vec::with_capacity(ys.len());
    let inv = 1.0 / steps as f64;
    for (t, y) in ys.iter().enumerate() {
        let mut dy = Tensor::<T>::zeros(&[lanes.len(), k]);
        for (r, l) in lanes.iter().enumerate() {
            if t >= batch.lengths[l.episode] {
                continue;
            }
            log_softmax_row(y.row(r), &mut lp);
            let a = batch.action(l.episode, t, l.slot);
            let (surr, d_logp, was_clipped) = ppo_surrogate(
                lp[a].as_f64(),
                old_log_probs.get(l.episode, t, l.slot),
                advantages.get(l.episode, t, l.slot),
                clip,
            );
            let h: f64 = -lp.iter().map(|&v| v.as_f64().exp() * v.as_f64()).sum::<f64>();
            loss += surr - ent_coef * h;
            entropy += h;
            clipped += usize::from(was_clipped);
            // d logp_a / dz_j = 1[j = a] - p_j ;  d H / dz_j = -p_j (log p_j + H)
            for (j, d) in dy.row_mut(r).iter_mut().enumerate() {
                let p = lp[j].as_f64().exp();
                let onehot = if j == a { 1.0 } else { 0.0 };
                let g = d_logp * (onehot - p) + ent_coef * p * (lp[j].as_f64() + h);
                *d = T::lit(g * inv);
            }
        }
        dys.push(dy);
    }
    let d_inputs = if backward {
        nets.actor.backward_seq(store, &cache, &dys, need_dx)
    } else {
        None
    };
    Ok(LossOutput {
        loss: loss * inv,
        entropy: entropy * inv,
        clip_frac: clipped as f64 * inv,
        d_inputs,
    })
}

/// Fold gradients with respect to actor/critic inputs back onto the
/// embedding slots they were built from.
pub fn embedding_grads<T: Real>(
    cfg: &NetConfig,
    batch: &EpisodeBatch,
    lanes: &[Lane],
    d_inputs: &[Tensor<T>],
    into: &mut Embeddings<T>,
) {
    let n = cfg.embed_dim;
    for (t, d) in d_inputs.iter().enumerate() {
        for (r, l) in lanes.iter().enumerate() {
            if t < batch.lengths[l.episode] {
                let src = &d.row(r)[cfg.obs_dim..cfg.obs_dim + n];
                for (g, &s) in into.get_mut(l.episode, t, l.slot).iter_mut().zip(src) {
                    *g += s;
                }
            }
        }
    }
}

/// Backpropagate embedding gradients through the encoder for `lanes`.
pub fn encoder_backward<T: Real>(
    nets: &PoamNets,
    store: &mut ParamStore<T>,
    batch: &EpisodeBatch,
    lanes: &[Lane],
    d_emb: &Embeddings<T>,
) -> Result<()> {
    let enc = nets.encoder()?;
    let xs = encoder_inputs::<T>(&nets.cfg, batch, lanes);
    let (_, cache) = enc.forward_seq(store, &xs)?;
    let steps = max_len(batch, lanes);
    let dys: Vec<Tensor<T>> = (0..steps)
        .map(|t| {
            let mut d = Tensor::zeros(&[lanes.len(), nets.cfg.embed_dim]);
            for (r, l) in lanes.iter().enumerate() {
                if t < batch.lengths[l.episode] {
                    d.row_mut(r).copy_from_slice(d_emb.get(l.episode, t, l.slot));
                }
            }
            d
        })
        .collect();
    enc.backward_seq(store, &cache, &dys, false);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg5() -> NetConfig {
        NetConfig {
            obs_dim: 2,
            num_actions: 5,
            num_agents: 3,
            width: 4,
            embed_dim: 2,
            trunk_layers: 1,
            agent_modeling: true,
        }
    }

    #[test]
    fn td_lambda_examples() {
        let v = td_lambda_targets(&[0.0, 0.0, 0.0], &[1.0, 1.0], &[false, true], 0.99, 1.0);
        assert!((v[0] - 1.99).abs() < 1e-12);
        let v = td_lambda_targets(&[0.0, 0.5, 0.0], &[1.0, 1.0], &[false, true], 0.99, 0.0);
        assert!((v[0] - 1.495).abs() < 1e-12);
        let v = td_lambda_targets(&[0.5, 0.5, 0.0], &[1.0, 1.0], &[false, true], 0.99, 0.95);
        assert!((v[1] - 1.0).abs() < 1e-12);
        assert!((v[0] - 1.96525).abs() < 1e-12);
    }

    #[test]
    fn td_lambda_bootstraps_unfinished_episodes() {
        let v = td_lambda_targets(&[0.0, 2.0], &[1.0], &[false], 0.5, 0.3);
        assert!((v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss_terms(2.5, 2.5, None).0, 0.0);
        assert_eq!(value_loss_terms(1.0, 3.0, None), (2.0, -2.0));
        // clipped prediction stays farther from the target than the raw one
        let (l, d) = value_loss_terms(2.9, 3.0, Some((1.0, 0.5)));
        assert!((l - 0.5 * 1.5 * 1.5).abs() < 1e-12);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn ppo_examples() {
        let (l, _, _) = ppo_surrogate(1.5f64.ln(), 0.0, 1.0, 0.1);
        assert!((l + 1.1).abs() < 1e-12);
        let (l, _, _) = ppo_surrogate(0.5f64.ln(), 0.0, -1.0, 0.1);
        assert!((l - 0.9).abs() < 1e-12);
        let mut adv = vec![0.3, -1.0, 2.0, 0.7];
        normalize(&mut adv);
        let loss: f64 = adv.iter().map(|&a| ppo_surrogate(0.2, 0.2, a, 0.1).0).sum::<f64>() / 4.0;
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn ppo_gradient_matches_finite_difference() {
        for &(lp, adv) in &[(0.05, 1.0), (-0.02, -0.7), (0.3, 1.0), (-0.4, -1.0)] {
            let (_, d, _) = ppo_surrogate(lp, 0.0, adv, 0.1);
            let h = 1e-6;
            let num = (ppo_surrogate(lp + h, 0.0, adv, 0.1).0 - ppo_surrogate(lp - h, 0.0, adv, 0.1).0) / (2.0 * h);
            assert!((d - num).abs() < 1e-6, "{lp} {adv}: {d} vs {num}");
        }
    }

    #[test]
    fn normalization_statistics() {
        let mut xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.3 - 4.0).collect();
        normalize(&mut xs);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn ed_terms_perfect_prediction() {
        let cfg = cfg5();
        let target = [0.5, -1.0, 2.0, 0.0];
        let mut logits = vec![0.0f64; 10];
        logits[3] = 1000.0;
        logits[5 + 1] = 1000.0;
        let t = ed_step_terms(&cfg, &target, &target, &logits, &[3, 1], None, None);
        assert!(t.sq_err + t.nll < 1e-12);
    }

    #[test]
    fn ed_terms_uniform_logits() {
        let cfg = cfg5();
        let target = [0.5, -1.0, 2.0, 0.0];
        let t = ed_step_terms(&cfg, &target, &target, &[0.0f64; 10], &[0, 4], None, None);
        assert!((t.sq_err + t.nll - 2.0 * 5f64.ln()).abs() < 1e-12);
        assert!((2.0 * 5f64.ln() - 3.2189).abs() < 1e-4);
    }

    #[test]
    fn ed_terms_single_coordinate_error() {
        let cfg = cfg5();
        let target = [0.5, -1.0, 2.0, 0.0];
        let pred = [0.5, -1.0, 3.0, 0.0];
        let mut logits = vec![0.0f64; 10];
        logits[0] = 1000.0;
        logits[5] = 1000.0;
        let t = ed_step_terms(&cfg, &pred, &target, &logits, &[0, 0], None, None);
        assert!((t.sq_err + t.nll - 1.0).abs() < 1e-12);
    }
}
