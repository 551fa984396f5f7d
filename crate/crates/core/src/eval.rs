//! Evaluation protocols: M−N scores, cross-play matrices, seed-holdout
//! evaluation, varying-N curves and within-episode teammate-model
//! diagnostics. Every function is a pure function of its inputs and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use naht_nn::{ParamStore, Real};
use rand::Rng;

use crate::env::EnvConfig;
use crate::error::{config_err, Result};
use crate::poam::losses::ed_predictions;
use crate::poam::nets::lanes_where;
use crate::poam::{LoadedPolicy, PoamNets};
use crate::rng::SeedStream;
use crate::runner::run_team_episodes;
use crate::teams::{sample_team, team_with_n, PolicyHandle, SamplingMode, TeamSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Episodes per evaluated slice (per N, per cell, per team).
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
}

impl EvalOptions {
    pub fn new(episodes: usize, seed: u64) -> Self {
        EvalOptions {
            episodes,
            seed,
            workers: 1,
        }
    }

    fn stream(&self, what: &str) -> SeedStream {
        SeedStream::new(self.seed).derive("eval").derive(what)
    }
}

/// Mean with a normal-approximation 95% interval half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub mean: f64,
    pub ci95: f64,
    pub count: usize,
}

impl Score {
    /// `1.96 · s / √n` with the sample standard deviation `s`.
    pub fn from_returns(xs: &[f64]) -> Score {
        let n = xs.len();
        if n == 0 {
            return Score {
                mean: f64::NAN,
                ci95: f64::NAN,
                count: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Score {
            mean,
            ci95: 1.96 * var.sqrt() / (n as f64).sqrt(),
            count: n,
        }
    }
}

/// Returns of `opts.episodes` episodes with `controlled` in `n` slots and a
/// team drawn uniformly from `uncontrolled` in the others. `n` may be 0
/// (uncontrolled self-play) or `M` (controlled self-play).
pub fn returns_at_n(
    controlled: &PolicyHandle,
    uncontrolled: &[PolicyHandle],
    env: &EnvConfig,
    n: usize,
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    let m = env.spec().num_agents;
    if opts.episodes == 0 {
        return config_err("evaluation needs at least one episode");
    }
    if n < m && uncontrolled.is_empty() {
        return config_err("the uncontrolled set is empty");
    }
    let draw = opts.stream("team").index(n as u64);
    let teams = (0..opts.episodes)
        .map(|e| {
            let mut rng = draw.index(e as u64).rng();
            if n == m {
                return team_with_n(controlled, None, m, n, &mut rng);
            }
            let u = &uncontrolled[rng.gen_range(0..uncontrolled.len())];
            team_with_n(controlled, Some(u), m, n, &mut rng)
        })
        .collect::<Result<Vec<TeamSpec>>>()?;
    let batch = run_team_episodes(env, &teams, opts.stream("rollout").index(n as u64), opts.workers)?;
    Ok(batch.returns())
}

/// Raw returns for every N in 1..M−1 and their pooled score.
#[derive(Debug, Clone, PartialEq)]
pub struct MnScore {
    pub per_n: Vec<(usize, Vec<f64>)>,
    pub score: Score,
}

impl MnScore {
    pub fn raw_count(&self) -> usize {
        self.per_n.iter().map(|(_, r)| r.len()).sum()
    }

    pub fn slice(&self, n: usize) -> Option<Score> {
        self.per_n
            .iter()
            .find(|(k, _)| *k == n)
            .map(|(_, r)| Score::from_returns(r))
    }

    /// `N,episode,return` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("N,episode,return\n");
        for (n, returns) in &self.per_n {
            for (e, r) in returns.iter().enumerate() {
                writeln!(out, "{n},{e},{r}").expect("writing to a string");
            }
        }
        out
    }
}

/// M−N score over the given slices of N.
pub fn mn_score_for(
    controlled: &PolicyHandle,
    uncontrolled: &[PolicyHandle],
    env: &EnvConfig,
    ns: &[usize],
    opts: &EvalOptions,
) -> Result<MnScore> {
    let per_n = ns
        .iter()
        .map(|&n| Ok((n, returns_at_n(controlled, uncontrolled, env, n, opts)?)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<f64> = per_n.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    Ok(MnScore {
        score: Score::from_returns(&all),
        per_n,
    })
}

/// M−N score: `opts.episodes` episodes for each N in 1..M−1.
pub fn mn_score(
    controlled: &PolicyHandle,
    uncontrolled: &[PolicyHandle],
    env: &EnvConfig,
    opts: &EvalOptions,
) -> Result<MnScore> {
    let m = env.spec().num_agents;
    let ns: Vec<usize> = (1..m).collect();
    mn_score_for(controlled, uncontrolled, env, &ns, opts)
}

/// Which off-diagonal pairs of a cross-play matrix are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pairing {
    #[default]
    All,
    /// Each team only meets its successor (cyclically): linear in the number
    /// of teams.
    Ring,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub labels: Vec<String>,
    /// `cells[i][j]`; `None` for pairs skipped by the pairing scheme.
    pub cells: Vec<Vec<Option<Score>>>,
}

impl ScoreMatrix {
    fn mean_where(&self, diagonal: bool) -> f64 {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |(j, _)| (i == *j) == diagonal)
                    .filter_map(|(_, c)| c.map(|s| s.mean))
            })
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Mean of the self-play cells.
    pub fn self_play_mean(&self) -> f64 {
        self.mean_where(true)
    }

    /// Mean of the evaluated cross-play cells.
    pub fn cross_play_mean(&self) -> f64 {
        self.mean_where(false)
    }

    /// `row_team,col_team,mean,ci95,kind` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_team,col_team,mean,ci95,kind\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if let Some(s) = cell {
                    let kind = if i == j { "self" } else { "cross" };
                    writeln!(out, "{},{},{},{},{kind}", self.labels[i], self.labels[j], s.mean, s.ci95)
                        .expect("writing to a string");
                }
            }
        }
        out
    }
}

/// Self-play scores on the diagonal, M−N scores of merged pairs off it. A
/// pair's cell is computed once and mirrored, since sweeping N covers both
/// orientations.
pub fn crossplay_matrix(
    teams: &[PolicyHandle],
    env: &EnvConfig,
    opts: &EvalOptions,
    pairing: Pairing,
) -> Result<ScoreMatrix> {
    let k = teams.len();
    if k < 2 {
        return config_err("cross-play needs at least two teams");
    }
    let m = env.spec().num_agents;
    let mut cells = vec![vec![None; k]; k];
    for i in 0..k {
        let returns = returns_at_n(&teams[i], &[], env, m, opts)?;
        cells[i][i] = Some(Score::from_returns(&returns));
    }
    for i in 0..k {
        for j in i + 1..k {
            let wanted = match pairing {
                Pairing::All => true,
                Pairing::Ring => j == i + 1 || (i == 0 && j == k - 1),
            };
            if wanted {
                let s = mn_score(&teams[i], std::slice::from_ref(&teams[j]), env, opts)?.score;
                cells[i][j] = Some(s);
                cells[j][i] = Some(s);
            }
        }
    }
    Ok(ScoreMatrix {
        labels: teams.iter().map(|t| t.id.clone()).collect(),
        cells,
    })
}

pub const SPLIT_TRAIN: &str = "train";
pub const SPLIT_HOLDOUT: &str = "holdout";

#[derive(Debug, Clone, PartialEq)]
pub struct OodRow {
    pub team_id: String,
    pub split: &'static str,
    pub score: Score,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodReport {
    pub rows: Vec<OodRow>,
}

impl OodReport {
    /// Score over all raw returns of one split.
    pub fn split_score(&self, split: &str) -> Score {
        let all: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.split == split)
            .flat_map(|r| r.returns.iter().copied())
            .collect();
        Score::from_returns(&all)
    }

    /// `team_id,split,mean,ci95` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("team_id,split,mean,ci95\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.team_id, r.split, r.score.mean, r.score.ci95).expect("writing to a string");
        }
        out
    }
}

fn overlap(train: &[PolicyHandle], holdout: &[PolicyHandle]) -> Option<String> {
    for a in train {
        for b in holdout {
            if a.id == b.id {
                return Some(format!("team {} is in both splits", a.id));
            }
            if let (Some(x), Some(y)) = (a.seed, b.seed) {
                if x == y {
                    return Some(format!("teams {} and {} share seed {x}", a.id, b.id));
                }
            }
        }
    }
    None
}

/// M−N score against each training team and each held-out team.
pub fn ood_eval(
    controlled: &PolicyHandle,
    train: &[PolicyHandle],
    holdout: &[PolicyHandle],
    env: &EnvConfig,
    opts: &EvalOptions,
    allow_overlap: bool,
) -> Result<OodReport> {
    if !allow_overlap {
        if let Some(msg) = overlap(train, holdout) {
            return config_err(format!("training and held-out teammates overlap: {msg}"));
        }
    }
    let mut rows = Vec::new();
    for (split, teams) in [(SPLIT_TRAIN, train), (SPLIT_HOLDOUT, holdout)] {
        for team in teams {
            let mn = mn_score(controlled, std::slice::from_ref(team), env, opts)?;
            rows.push(OodRow {
                team_id: team.id.clone(),
                split,
                score: mn.score,
                returns: mn.per_n.into_iter().flat_map(|(_, r)| r).collect(),
            });
        }
    }
    Ok(OodReport { rows })
}

/// Mean return for each N in 0..=M.
pub fn varying_n_curve(
    controlled: &PolicyHandle,
    uncontrolled: &[PolicyHandle],
    env: &EnvConfig,
    opts: &EvalOptions,
) -> Result<Vec<(usize, Score)>> {
    let m = env.spec().num_agents;
    (0..=m)
        .map(|n| Ok((n, Score::from_returns(&returns_at_n(controlled, uncontrolled, env, n, opts)?))))
        .collect()
}

pub fn varying_n_csv(curve: &[(usize, Score)]) -> String {
    let mut out = String::from("N,mean,ci95\n");
    for (n, s) in curve {
        writeln!(out, "{n},{},{}", s.mean, s.ci95).expect("writing to a string");
    }
    out
}

pub const TARGET_CONTROLLED: &str = "controlled";
pub const TARGET_UNCONTROLLED: &str = "uncontrolled";
pub const TARGET_ALL: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct EdDiagRow {
    pub checkpoint: String,
    pub t: usize,
    pub target: &'static str,
    pub obs_mse: f64,
    pub act_prob: f64,
    pub count: usize,
}

fn predictions_for<T: Real>(
    nets: &PoamNets,
    store: &ParamStore<T>,
    batch: &crate::EpisodeBatch,
) -> Result<Vec<crate::poam::losses::EdPrediction>> {
    let all: Vec<usize> = (0..batch.num_episodes()).collect();
    let lanes = lanes_where(batch, &all, true);
    ed_predictions(nets, &mut store.clone(), batch, &lanes)
}

/// Per checkpoint, per timestep: mean teammate observation error and mean
/// probability of the teammates' taken actions, split by whether the
/// predicted teammate was controlled. Each checkpoint is rolled out with its
/// own policy against teams drawn from `uncontrolled`, with identical team
/// draws across checkpoints.
pub fn within_episode_ed_diag(
    env: &EnvConfig,
    checkpoints: &[(String, LoadedPolicy)],
    uncontrolled: &[PolicyHandle],
    opts: &EvalOptions,
) -> Result<Vec<EdDiagRow>> {
    let m = env.spec().num_agents;
    let mut rows = Vec::new();
    for (label, policy) in checkpoints {
        if !policy.nets().cfg.agent_modeling {
            return config_err(format!("checkpoint {label} has no teammate model"));
        }
        let handle = policy.clone().into_handle(label.clone());
        let draw = opts.stream("ed_team");
        let teams = (0..opts.episodes)
            .map(|e| sample_team(SamplingMode::NahtUniform, uncontrolled, &handle, m, &mut draw.index(e as u64).rng()))
            .collect::<Result<Vec<_>>>()?;
        let batch = run_team_episodes(env, &teams, opts.stream("ed_rollout"), opts.workers)?;
        let preds = match policy {
            LoadedPolicy::F32(p) => predictions_for(&p.nets, &p.store, &batch)?,
            LoadedPolicy::F64(p) => predictions_for(&p.nets, &p.store, &batch)?,
        };
        // (t, target) -> (mse sum, prob sum, count)
        let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
        for p in &preds {
            let kind = if batch.is_controlled(p.episode, p.teammate) { 0 } else { 1 };
            for k in [kind, 2] {
                let a = acc.entry((p.t, k)).or_default();
                a.0 += p.obs_mse;
                a.1 += p.act_prob;
                a.2 += 1;
            }
        }
        let names = [TARGET_CONTROLLED, TARGET_UNCONTROLLED, TARGET_ALL];
        for ((t, k), (mse, prob, count)) in acc {
            rows.push(EdDiagRow {
                checkpoint: label.clone(),
                t,
                target: names[k],
                obs_mse: mse / count as f64,
                act_prob: prob / count as f64,
                count,
            });
        }
    }
    Ok(rows)
}

/// `act_prob` by timestep for one checkpoint and target.
pub fn ed_curve(rows: &[EdDiagRow], checkpoint: &str, target: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.checkpoint == checkpoint && r.target == target)
        .map(|r| r.act_prob)
        .collect()
}

/// `checkpoint,t,target,obs_mse,act_prob` rows.
pub fn ed_diag_csv(rows: &[EdDiagRow]) -> String {
    let mut out = String::from("checkpoint,t,target,obs_mse,act_prob\n");
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.checkpoint, r.t, r.target, r.obs_mse, r.act_prob).expect("writing to a string");
    }
    out
}
