use naht_nn::{log_softmax_row, sample_row, ParamStore, Real, Tensor};

use super::nets::{encoder_row, policy_row, PoamNets};
use crate::error::Result;
use crate::runner::{uniform, ActOutput, AgentQuery, Policy, PolicySession};

/// Frozen POAM (or IPPO) actor used for rollouts.
#[derive(Debug, Clone)]
pub struct PoamPolicy<T> {
    pub nets: PoamNets,
    pub store: ParamStore<T>,
    pub fingerprint: String,
    /// Pick the most likely action instead of sampling.
    pub greedy: bool,
}

impl<T: Real> PoamPolicy<T> {
    pub fn new(nets: PoamNets, store: ParamStore<T>, fingerprint: String) -> Self {
        PoamPolicy {
            nets,
            store,
            fingerprint,
            greedy: false,
        }
    }
}

struct PoamSession<'a, T> {
    policy: &'a PoamPolicy<T>,
    enc_h: Vec<T>,
    act_h: Vec<T>,
}

impl<T: Real> Policy for PoamPolicy<T> {
    fn env_fingerprint(&self) -> Option<String> {
        Some(self.fingerprint.clone())
    }

    fn session(&self, lanes: usize) -> Box<dyn PolicySession + '_> {
        let enc = self.nets.encoder.as_ref().map_or(0, |e| e.hidden());
        Box::new(PoamSession {
            policy: self,
            enc_h: vec![T::zero(); lanes * enc],
            act_h: vec![T::zero(); lanes * self.nets.actor.hidden()],
        })
    }
}

fn gather<T: Real>(states: &[T], width: usize, queries: &[AgentQuery<'_>]) -> Tensor<T> {
    let mut h = Tensor::zeros(&[queries.len(), width]);
    for (r, q) in queries.iter().enumerate() {
        if q.t > 0 {
            h.row_mut(r).copy_from_slice(&states[q.lane * width..(q.lane + 1) * width]);
        }
    }
    h
}

fn scatter<T: Real>(states: &mut [T], width: usize, queries: &[AgentQuery<'_>], h: &Tensor<T>) {
    for (r, q) in queries.iter().enumerate() {
        states[q.lane * width..(q.lane + 1) * width].copy_from_slice(h.row(r));
    }
}

impl<T: Real> PolicySession for PoamSession<'_, T> {
    fn act(&mut self, queries: &mut [AgentQuery<'_>]) -> Result<Vec<ActOutput>> {
        let p = self.policy;
        let cfg = &p.nets.cfg;
        let rows = queries.len();
        let emb = match &p.nets.encoder {
            Some(enc) => {
                let mut x = Tensor::zeros(&[rows, cfg.encoder_in()]);
                for (r, q) in queries.iter().enumerate() {
                    encoder_row(cfg, q.obs, q.prev_action, x.row_mut(r));
                }
                let h = gather(&self.enc_h, enc.hidden(), queries);
                let (e, h2) = enc.step(&p.store, &x, &h)?;
                scatter(&mut self.enc_h, enc.hidden(), queries, &h2);
                Some(e)
            }
            None => None,
        };
        let mut x = Tensor::zeros(&[rows, cfg.policy_in()]);
        for (r, q) in queries.iter().enumerate() {
            policy_row(cfg, q.obs, emb.as_ref().map(|e| e.row(r)), q.slot, x.row_mut(r));
        }
        let width = p.nets.actor.hidden();
        let h = gather(&self.act_h, width, queries);
        let (logits, h2) = p.nets.actor.step(&p.store, &x, &h)?;
        scatter(&mut self.act_h, width, queries, &h2);
        let mut lp = vec![T::zero(); cfg.num_actions];
        Ok(queries
            .iter_mut()
            .enumerate()
            .map(|(r, q)| {
                let row = logits.row(r);
                log_softmax_row(row, &mut lp);
                let u = uniform(q);
                let action = if p.greedy {
                    (0..lp.len()).fold(0, |best, k| if lp[k] > lp[best] { k } else { best })
                } else {
                    sample_row(row, u)
                };
                ActOutput {
                    action,
                    log_prob: lp[action].as_f64(),
                }
            })
            .collect())
    }
}
