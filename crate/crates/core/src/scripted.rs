//! Hand-written teammates: Bernoulli bit players for the matrix game and
//! pursuit conventions.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::pursuit::{integrate, Body, PursuitConfig, NUM_ACTIONS};
use crate::runner::{uniform, ActOutput, AgentQuery, Policy, PolicySession, StatelessPolicy, StatelessSession};
use crate::teams::{PolicyHandle, PolicyKind};

/// Plays action 1 with probability `p`, independently every step.
#[derive(Debug, Clone, Copy)]
pub struct BernoulliPolicy {
    pub p: f64,
}

impl StatelessPolicy for BernoulliPolicy {
    fn act_one(&self, q: &mut AgentQuery<'_>) -> ActOutput {
        let one = uniform(q) < self.p;
        let prob = if one { self.p } else { 1.0 - self.p };
        ActOutput {
            action: usize::from(one),
            log_prob: prob.ln(),
        }
    }
}

impl Policy for BernoulliPolicy {
    fn session(&self, _lanes: usize) -> Box<dyn PolicySession + '_> {
        Box::new(StatelessSession(self))
    }
}

pub fn bernoulli_handle(p: f64) -> PolicyHandle {
    PolicyHandle::new(format!("bernoulli_p{p:.4}"), PolicyKind::Bernoulli, Arc::new(BernoulliPolicy { p }))
}

/// `size` independent Bernoulli(`p`) handles.
pub fn make_bernoulli_team(p: f64, size: usize) -> Vec<PolicyHandle> {
    (0..size)
        .map(|k| {
            let mut h = bernoulli_handle(p);
            h.id = format!("{}_{k}", h.id);
            h
        })
        .collect()
}

/// Deterministic action by role: the first slot bound to this policy plays
/// `first`, all later ones play `rest`.
#[derive(Debug, Clone, Copy)]
pub struct RolePolicy {
    pub first: usize,
    pub rest: usize,
}

impl StatelessPolicy for RolePolicy {
    fn act_one(&self, q: &mut AgentQuery<'_>) -> ActOutput {
        ActOutput {
            action: if q.role == 0 { self.first } else { self.rest },
            log_prob: 0.0,
        }
    }
}

impl Policy for RolePolicy {
    fn session(&self, _lanes: usize) -> Box<dyn PolicySession + '_> {
        Box::new(StatelessSession(self))
    }
}

/// The optimal controlled pair for the matrix game: one agent always plays
/// 1 and every other controlled agent plays 0.
pub fn asymmetric_bit_handle() -> PolicyHandle {
    PolicyHandle::new("asymmetric_bits", PolicyKind::Scripted, Arc::new(RolePolicy { first: 1, rest: 0 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Minimize next-step distance to the prey.
    GreedyChaser,
    /// Head for where the prey will be after one step at its current velocity.
    Interceptor,
    /// Approach from the side of the prey opposite the nearest other predator.
    Flanker,
    /// Uniformly random actions.
    Random,
}

impl Convention {
    pub fn name(self) -> &'static str {
        match self {
            Convention::GreedyChaser => "greedy_chaser",
            Convention::Interceptor => "interceptor",
            Convention::Flanker => "flanker",
            Convention::Random => "random",
        }
    }
}

/// A predator following a fixed convention, taking a uniformly random
/// action with probability `noise`.
#[derive(Debug, Clone)]
pub struct PursuitScripted {
    pub convention: Convention,
    pub cfg: PursuitConfig,
    pub noise: f64,
}

/// Egocentric observation decoded back into world quantities.
struct View {
    me: Body,
    others: [[f64; 2]; 2],
    prey_pos: [f64; 2],
    prey_vel: [f64; 2],
}

fn decode(cfg: &PursuitConfig, o: &[f64]) -> View {
    let me = Body {
        pos: [o[0], o[1]],
        vel: [o[2] * cfg.predator_max_speed, o[3] * cfg.predator_max_speed],
    };
    let abs = |k: usize| [me.pos[0] + o[k], me.pos[1] + o[k + 1]];
    View {
        me,
        others: [abs(4), abs(6)],
        prey_pos: abs(8),
        prey_vel: [o[10] * cfg.prey_max_speed, o[11] * cfg.prey_max_speed],
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl PursuitScripted {
    /// Point the convention steers toward.
    fn target(&self, v: &View) -> [f64; 2] {
        match self.convention {
            Convention::GreedyChaser | Convention::Random => v.prey_pos,
            Convention::Interceptor => [v.prey_pos[0] + v.prey_vel[0], v.prey_pos[1] + v.prey_vel[1]],
            Convention::Flanker => {
                let nearest = if dist(v.others[0], v.prey_pos) <= dist(v.others[1], v.prey_pos) {
                    v.others[0]
                } else {
                    v.others[1]
                };
                let away = [v.prey_pos[0] - nearest[0], v.prey_pos[1] - nearest[1]];
                let norm = away[0].hypot(away[1]);
                if norm < 1e-12 {
                    return v.prey_pos;
                }
                let reach = 0.25 * dist(v.me.pos, v.prey_pos);
                [
                    v.prey_pos[0] + away[0] / norm * reach,
                    v.prey_pos[1] + away[1] / norm * reach,
                ]
            }
        }
    }

    /// The convention's action before noise.
    pub fn base_action(&self, obs: &[f64]) -> usize {
        let v = decode(&self.cfg, obs);
        let target = self.target(&v);
        let mut best = (0, f64::INFINITY);
        for a in 0..NUM_ACTIONS {
            let d = dist(integrate(&self.cfg, &v.me, a, self.cfg.predator_max_speed).pos, target);
            if d < best.1 {
                best = (a, d);
            }
        }
        best.0
    }
}

impl StatelessPolicy for PursuitScripted {
    fn act_one(&self, q: &mut AgentQuery<'_>) -> ActOutput {
        let k = NUM_ACTIONS as f64;
        if self.convention == Convention::Random {
            return ActOutput {
                action: q.rng.gen_range(0..NUM_ACTIONS),
                log_prob: -k.ln(),
            };
        }
        let base = self.base_action(q.obs);
        let action = if self.noise > 0.0 && uniform(q) < self.noise {
            q.rng.gen_range(0..NUM_ACTIONS)
        } else {
            base
        };
        let p_base = 1.0 - self.noise + self.noise / k;
        let prob = if action == base { p_base } else { self.noise / k };
        ActOutput {
            action,
            log_prob: prob.ln(),
        }
    }
}

impl Policy for PursuitScripted {
    fn env_fingerprint(&self) -> Option<String> {
        Some(self.cfg.spec().fingerprint())
    }

    fn session(&self, _lanes: usize) -> Box<dyn PolicySession + '_> {
        Box::new(StatelessSession(self))
    }
}

pub fn pursuit_convention_handle(convention: Convention, cfg: &PursuitConfig, noise: f64) -> PolicyHandle {
    let policy = PursuitScripted {
        convention,
        cfg: cfg.clone(),
        noise,
    };
    PolicyHandle::new(convention.name(), PolicyKind::Scripted, Arc::new(policy))
}

/// Greedy-chaser, interceptor and flanker teams.
pub fn scripted_pursuit_policies(cfg: &PursuitConfig, noise: f64) -> Vec<PolicyHandle> {
    [Convention::GreedyChaser, Convention::Interceptor, Convention::Flanker]
        .into_iter()
        .map(|c| pursuit_convention_handle(c, cfg, noise))
        .collect()
}

pub fn random_pursuit_handle() -> PolicyHandle {
    pursuit_convention_handle(Convention::Random, &PursuitConfig::default(), 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::pursuit::{pursuit_observe, PursuitState};
    use crate::env::{EnvConfig, PursuitConfig};
    use crate::runner::run_episodes;
    use crate::teams::TeamSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn query<'a>(obs: &'a [f64], rng: &'a mut ChaCha8Rng) -> AgentQuery<'a> {
        AgentQuery {
            lane: 0,
            slot: 0,
            role: 0,
            t: 0,
            obs,
            prev_action: None,
            rng,
        }
    }

    #[test]
    fn bernoulli_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = [0.0];
        for (p, lo, hi) in [(1.0 / 3.0, 0.323, 0.343), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)] {
            let pol = BernoulliPolicy { p };
            let ones: usize = (0..10_000).map(|_| pol.act_one(&mut query(&o, &mut rng)).action).sum();
            let f = ones as f64 / 10_000.0;
            assert!(f >= lo && f <= hi, "p={p} f={f}");
        }
    }

    #[test]
    fn team_helper_gives_distinct_ids() {
        let team = make_bernoulli_team(0.25, 3);
        assert_eq!(team.len(), 3);
        assert_ne!(team[0].id, team[1].id);
    }

    fn world(me: [f64; 2], others: [[f64; 2]; 2], prey: [f64; 2]) -> PursuitState {
        let b = |p: [f64; 2]| Body { pos: p, vel: [0.0; 2] };
        PursuitState {
            predators: [b(me), b(others[0]), b(others[1])],
            prey: b(prey),
            t: 0,
        }
    }

    #[test]
    fn greedy_chaser_heads_east() {
        let cfg = PursuitConfig::default();
        let s = world([0.0, 0.0], [[-0.9, 0.9], [-0.9, -0.9]], [0.5, 0.0]);
        let pol = PursuitScripted {
            convention: Convention::GreedyChaser,
            cfg: cfg.clone(),
            noise: 0.0,
        };
        assert_eq!(pol.base_action(&pursuit_observe(&cfg, &s, 0)), 1);
    }

    #[test]
    fn flanker_avoids_the_teammate_side() {
        let cfg = PursuitConfig::default();
        // teammate due north of the prey, flanker due east: it should drift south
        let s = world([0.6, 0.0], [[0.0, 0.3], [-0.9, -0.9]], [0.0, 0.0]);
        let mk = |c| PursuitScripted {
            convention: c,
            cfg: cfg.clone(),
            noise: 0.0,
        };
        let o = pursuit_observe(&cfg, &s, 0);
        let flank = mk(Convention::Flanker).base_action(&o);
        assert!(flank == 2 || flank == 4, "{flank}");

        // mean angular separation from the nearest teammate, seen from the prey
        let angle = |a: [f64; 2], b: [f64; 2]| {
            let dot = a[0] * b[0] + a[1] * b[1];
            (dot / (a[0].hypot(a[1]) * b[0].hypot(b[1])).max(1e-12)).clamp(-1.0, 1.0).acos()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (mut sum_f, mut sum_g) = (0.0, 0.0);
        for _ in 0..1000 {
            let s = PursuitState::random(&mut rng);
            let o = pursuit_observe(&cfg, &s, 0);
            let prey = s.prey.pos;
            let nearest = if dist(s.predators[1].pos, prey) <= dist(s.predators[2].pos, prey) {
                s.predators[1].pos
            } else {
                s.predators[2].pos
            };
            let rel = |p: [f64; 2]| [p[0] - prey[0], p[1] - prey[1]];
            for (c, sum) in [(Convention::Flanker, &mut sum_f), (Convention::GreedyChaser, &mut sum_g)] {
                let a = mk(c).base_action(&o);
                let next = integrate(&cfg, &s.predators[0], a, cfg.predator_max_speed);
                *sum += angle(rel(next.pos), rel(nearest));
            }
        }
        assert!(sum_f > sum_g, "flanker {sum_f} greedy {sum_g}");
    }

    #[test]
    fn noiseless_conventions_are_deterministic() {
        let cfg = PursuitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for h in scripted_pursuit_policies(&cfg, 0.0) {
            let s = PursuitState::random(&mut rng);
            let o = pursuit_observe(&cfg, &s, 1);
            let mut r1 = ChaCha8Rng::seed_from_u64(1);
            let mut r2 = ChaCha8Rng::seed_from_u64(99);
            let mut s1 = h.policy.session(1);
            let mut s2 = h.policy.session(1);
            let a = s1.act(&mut [query(&o, &mut r1)]).unwrap();
            let b = s2.act(&mut [query(&o, &mut r2)]).unwrap();
            assert_eq!(a, b);
            assert_eq!(a[0].log_prob, 0.0);
        }
    }

    #[test]
    fn chasers_beat_random_play() {
        let cfg = PursuitConfig::default();
        let env = EnvConfig::Pursuit(cfg.clone());
        let mean = |h: &PolicyHandle| {
            let b = run_episodes(&env, &TeamSpec::uniform(h, 3, false), 256, 17).unwrap();
            b.returns().iter().sum::<f64>() / 256.0
        };
        let chase = mean(&pursuit_convention_handle(Convention::GreedyChaser, &cfg, 0.0));
        let random = mean(&random_pursuit_handle());
        assert!(chase > random, "chasers {chase} random {random}");
    }
}
