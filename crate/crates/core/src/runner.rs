//! Lockstep rollout of many independent episodes.
//!
//! Each episode owns its environment and one action stream per slot, all
//! derived from the rollout seed and the episode's global index. Splitting
//! the episodes across workers therefore cannot change any recorded value.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::batch::EpisodeBatch;
use crate::env::EnvConfig;
use crate::error::{config_err, Result};
use crate::rng::SeedStream;
use crate::teams::TeamSpec;

/// One agent's decision request.
pub struct AgentQuery<'a> {
    /// Index of the agent's recurrent state within the session.
    pub lane: usize,
    pub slot: usize,
    /// Rank of this slot among the slots bound to the same policy.
    pub role: usize,
    pub t: usize,
    pub obs: &'a [f64],
    pub prev_action: Option<usize>,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
}

pub trait Policy: Send + Sync {
    /// Fingerprint of the task the policy was built for, if it is tied to one.
    fn env_fingerprint(&self) -> Option<String> {
        None
    }

    /// Open a session able to serve `lanes` concurrent agents. Recurrent
    /// policies reset a lane's state whenever it is queried with `t = 0`.
    fn session(&self, lanes: usize) -> Box<dyn PolicySession + '_>;
}

pub trait PolicySession {
    fn act(&mut self, queries: &mut [AgentQuery<'_>]) -> Result<Vec<ActOutput>>;
}

/// Stateless per-query decision rule.
pub trait StatelessPolicy: Send + Sync {
    fn act_one(&self, q: &mut AgentQuery<'_>) -> ActOutput;
}

pub struct StatelessSession<'a, P: ?Sized>(pub &'a P);

impl<P: StatelessPolicy + ?Sized> PolicySession for StatelessSession<'_, P> {
    fn act(&mut self, queries: &mut [AgentQuery<'_>]) -> Result<Vec<ActOutput>> {
        Ok(queries.iter_mut().map(|q| self.0.act_one(q)).collect())
    }
}

/// `count` episodes of one team from master seed `seed`.
pub fn run_episodes(env: &EnvConfig, team: &TeamSpec, count: usize, seed: u64) -> Result<EpisodeBatch> {
    let teams = vec![team.clone(); count];
    run_team_episodes(env, &teams, SeedStream::new(seed), 1)
}

/// One episode per entry of `teams`, split over `workers` threads.
pub fn run_team_episodes(
    env: &EnvConfig,
    teams: &[TeamSpec],
    seed: SeedStream,
    workers: usize,
) -> Result<EpisodeBatch> {
    let spec = env.spec();
    for team in teams {
        team.check_against(&spec)?;
    }
    let workers = workers.clamp(1, teams.len().max(1));
    if workers == 1 {
        return run_chunk(env, teams, seed, 0);
    }
    let chunk = teams.len().div_ceil(workers);
    let parts: Vec<Result<EpisodeBatch>> = std::thread::scope(|scope| {
        let handles: Vec<_> = teams
            .chunks(chunk)
            .enumerate()
            .map(|(k, part)| scope.spawn(move || run_chunk(env, part, seed, (k * chunk) as u64)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
    });
    EpisodeBatch::concat(parts.into_iter().collect::<Result<Vec<_>>>()?)
}

fn policy_key(team: &TeamSpec, slot: usize) -> usize {
    std::sync::Arc::as_ptr(&team.slots[slot].policy) as *const () as usize
}

fn run_chunk(env: &EnvConfig, teams: &[TeamSpec], seed: SeedStream, first_episode: u64) -> Result<EpisodeBatch> {
    let spec = env.spec();
    let m = spec.num_agents;
    let n_ep = teams.len();
    let mut batch = EpisodeBatch::empty(spec.clone());

    // One session per distinct policy, in order of first appearance.
    let mut keys: Vec<usize> = Vec::new();
    let mut sessions: Vec<Box<dyn PolicySession + '_>> = Vec::new();
    let mut group = vec![0usize; n_ep * m];
    let mut roles = vec![0usize; n_ep * m];
    for (e, team) in teams.iter().enumerate() {
        for slot in 0..m {
            let key = policy_key(team, slot);
            let g = match keys.iter().position(|&k| k == key) {
                Some(g) => g,
                None => {
                    keys.push(key);
                    sessions.push(team.slots[slot].policy.session(n_ep * m));
                    keys.len() - 1
                }
            };
            group[e * m + slot] = g;
            roles[e * m + slot] = (0..slot).filter(|&s| policy_key(team, s) == key).count();
        }
        let ids = team.slots.iter().map(|h| h.id.clone()).collect();
        batch.push_episode(&team.controlled, ids, team.label.clone());
    }

    let mut envs: Vec<_> = (0..n_ep).map(|_| env.build()).collect();
    let mut env_rngs: Vec<ChaCha8Rng> = (0..n_ep)
        .map(|e| seed.derive("env").index(first_episode + e as u64).rng())
        .collect();
    let mut act_rngs: Vec<ChaCha8Rng> = (0..n_ep * m)
        .map(|lane| {
            let (e, slot) = (lane / m, lane % m);
            seed.derive("act").index(first_episode + e as u64).index(slot as u64).rng()
        })
        .collect();
    let mut obs: Vec<Vec<Vec<f64>>> = envs
        .iter_mut()
        .zip(env_rngs.iter_mut())
        .map(|(env, rng)| env.reset(rng))
        .collect();
    let mut active = vec![true; n_ep];

    for t in 0..spec.horizon {
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut joint = vec![0usize; n_ep * m];
        {
            let mut queries: Vec<Vec<AgentQuery<'_>>> = (0..sessions.len()).map(|_| Vec::new()).collect();
            for (lane, rng) in act_rngs.iter_mut().enumerate() {
                let (e, slot) = (lane / m, lane % m);
                if !active[e] {
                    continue;
                }
                queries[group[lane]].push(AgentQuery {
                    lane,
                    slot,
                    role: roles[lane],
                    t,
                    obs: &obs[e][slot],
                    prev_action: batch.prev_action(e, t, slot),
                    rng,
                });
            }
            for (session, qs) in sessions.iter_mut().zip(queries.iter_mut()) {
                if qs.is_empty() {
                    continue;
                }
                let outs = session.act(qs)?;
                for (q, out) in qs.iter().zip(outs) {
                    if out.action >= spec.num_actions {
                        return config_err(format!(
                            "policy chose action {} but the task has {}",
                            out.action, spec.num_actions
                        ));
                    }
                    joint[q.lane] = out.action;
                    batch.set_action(q.lane / m, t, q.slot, out.action, out.log_prob);
                }
            }
        }
        for e in 0..n_ep {
            if !active[e] {
                continue;
            }
            for (slot, o) in obs[e].iter().enumerate() {
                batch.obs_mut(e, t, slot).copy_from_slice(o);
            }
            let tr = envs[e].step(&joint[e * m..(e + 1) * m], &mut env_rngs[e]);
            batch.set_step(e, t, tr.reward, tr.done);
            obs[e] = tr.obs;
            if tr.done {
                active[e] = false;
            }
        }
    }
    Ok(batch)
}

/// Uniform draw in `[0, 1)` from a query's stream.
pub fn uniform(q: &mut AgentQuery<'_>) -> f64 {
    q.rng.gen::<f64>()
}
