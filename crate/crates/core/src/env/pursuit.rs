//! Three predators chasing a scripted evasive prey on the square `[-1, 1]^2`.
//!
//! Every entity is a point mass with five discrete actions: no-op, `+x`,
//! `-x`, `+y`, `-y`. Each step the velocity is damped, the action's
//! acceleration is added, the speed is capped, and the position advances by
//! the new velocity (semi-implicit Euler). Positions leaving the square are
//! clamped and the offending velocity component is zeroed.
//!
//! The team earns 1 whenever at least two predators are within
//! `collision_radius` of the prey, minus `shaping` times the summed
//! predator-prey distances.
//!
//! Observation of predator `i` (12 values):
//!
//! | slots  | content                                              |
//! |--------|------------------------------------------------------|
//! | 0..2   | own position                                         |
//! | 2..4   | own velocity / predator max speed                    |
//! | 4..8   | other predators' positions minus own, ascending index |
//! | 8..10  | prey position minus own                              |
//! | 10..12 | prey velocity / prey max speed                       |

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvSpec, Environment, Transition};
use crate::error::{config_err, Result};

pub const NUM_PREDATORS: usize = 3;
pub const OBS_DIM: usize = 12;
pub const NUM_ACTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitConfig {
    pub collision_radius: f64,
    pub predator_max_speed: f64,
    pub prey_max_speed: f64,
    pub accel: f64,
    pub damping: f64,
    pub shaping: f64,
    pub horizon: usize,
    /// Predators farther than this are ignored by the prey.
    pub perception_range: f64,
    /// When false the prey never moves.
    pub evasive_prey: bool,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        PursuitConfig {
            collision_radius: 0.1,
            predator_max_speed: 0.08,
            prey_max_speed: 0.104,
            accel: 0.1,
            damping: 0.75,
            shaping: 0.01,
            horizon: 100,
            perception_range: 4.0,
            evasive_prey: true,
        }
    }
}

impl PursuitConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            name: "pursuit".into(),
            num_agents: NUM_PREDATORS,
            obs_dim: OBS_DIM,
            num_actions: NUM_ACTIONS,
            horizon: self.horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("collision_radius", self.collision_radius),
            ("predator_max_speed", self.predator_max_speed),
            ("prey_max_speed", self.prey_max_speed),
            ("accel", self.accel),
            ("damping", self.damping),
            ("perception_range", self.perception_range),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return config_err(format!("pursuit {name} must be positive, got {v}"));
            }
        }
        if !(self.shaping.is_finite() && self.shaping >= 0.0) {
            return config_err("pursuit shaping must be non-negative");
        }
        if self.prey_max_speed <= self.predator_max_speed {
            return config_err("pursuit prey must be faster than the predators");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Body {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitState {
    pub predators: [Body; NUM_PREDATORS],
    pub prey: Body,
    pub t: usize,
}

impl PursuitState {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut body = || Body {
            pos: [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)],
            vel: [0.0; 2],
        };
        let predators = [body(), body(), body()];
        PursuitState {
            predators,
            prey: body(),
            t: 0,
        }
    }
}

pub fn action_dir(action: usize) -> [f64; 2] {
    match action {
        0 => [0.0, 0.0],
        1 => [1.0, 0.0],
        2 => [-1.0, 0.0],
        3 => [0.0, 1.0],
        4 => [0.0, -1.0],
        _ => panic!("pursuit action {action} out of range"),
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Advance one body by one step under `action`.
pub fn integrate(cfg: &PursuitConfig, body: &Body, action: usize, max_speed: f64) -> Body {
    let dir = action_dir(action);
    let mut vel = [
        cfg.damping * body.vel[0] + cfg.accel * dir[0],
        cfg.damping * body.vel[1] + cfg.accel * dir[1],
    ];
    let speed = vel[0].hypot(vel[1]);
    if speed > max_speed {
        vel = [vel[0] * max_speed / speed, vel[1] * max_speed / speed];
    }
    let mut pos = [body.pos[0] + vel[0], body.pos[1] + vel[1]];
    for k in 0..2 {
        if pos[k].abs() > 1.0 {
            pos[k] = pos[k].clamp(-1.0, 1.0);
            vel[k] = 0.0;
        }
    }
    Body { pos, vel }
}

/// One-step lookahead evasion: the action whose resulting position is
/// farthest from the nearest perceived predator, lowest index on ties.
pub fn prey_policy(cfg: &PursuitConfig, state: &PursuitState) -> usize {
    let perceived: Vec<[f64; 2]> = state
        .predators
        .iter()
        .map(|p| p.pos)
        .filter(|&p| dist(p, state.prey.pos) <= cfg.perception_range)
        .collect();
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..NUM_ACTIONS {
        let next = integrate(cfg, &state.prey, a, cfg.prey_max_speed);
        let score = perceived
            .iter()
            .map(|&p| dist(p, next.pos))
            .fold(f64::INFINITY, f64::min);
        if score > best.1 {
            best = (a, score);
        }
    }
    best.0
}

/// Collision indicator and (non-positive) shaping term of the reward.
pub fn pursuit_reward_terms(cfg: &PursuitConfig, state: &PursuitState) -> (f64, f64) {
    let dists: Vec<f64> = state.predators.iter().map(|p| dist(p.pos, state.prey.pos)).collect();
    let caught = dists.iter().filter(|&&d| d <= cfg.collision_radius).count() >= 2;
    let shaping = -cfg.shaping * dists.iter().sum::<f64>();
    (if caught { 1.0 } else { 0.0 }, shaping)
}

pub fn pursuit_observe(cfg: &PursuitConfig, state: &PursuitState, agent: usize) -> Vec<f64> {
    let me = &state.predators[agent];
    let mut o = Vec::with_capacity(OBS_DIM);
    o.extend_from_slice(&me.pos);
    o.extend(me.vel.iter().map(|v| v / cfg.predator_max_speed));
    for (j, other) in state.predators.iter().enumerate() {
        if j != agent {
            o.extend((0..2).map(|k| other.pos[k] - me.pos[k]));
        }
    }
    o.extend((0..2).map(|k| state.prey.pos[k] - me.pos[k]));
    o.extend(state.prey.vel.iter().map(|v| v / cfg.prey_max_speed));
    o
}

/// Step with an explicitly chosen prey action.
pub fn pursuit_step_with_prey(
    cfg: &PursuitConfig,
    state: &mut PursuitState,
    actions: &[usize],
    prey_action: usize,
) -> Transition {
    assert_eq!(actions.len(), NUM_PREDATORS, "joint action width");
    assert!(state.t < cfg.horizon, "step past the horizon");
    for (body, &a) in state.predators.iter_mut().zip(actions) {
        *body = integrate(cfg, body, a, cfg.predator_max_speed);
    }
    state.prey = integrate(cfg, &state.prey, prey_action, cfg.prey_max_speed);
    let (caught, shaping) = pursuit_reward_terms(cfg, state);
    let t = state.t;
    state.t += 1;
    Transition {
        obs: (0..NUM_PREDATORS).map(|i| pursuit_observe(cfg, state, i)).collect(),
        actions: actions.to_vec(),
        reward: caught + shaping,
        done: state.t == cfg.horizon,
        t,
    }
}

pub fn pursuit_step(cfg: &PursuitConfig, state: &mut PursuitState, actions: &[usize]) -> Transition {
    let prey_action = if cfg.evasive_prey { prey_policy(cfg, state) } else { 0 };
    pursuit_step_with_prey(cfg, state, actions, prey_action)
}

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: usize,
    pub entity: String,
    pub body: Body,
    pub action: usize,
    pub reward: f64,
}

pub fn write_trajectory_csv<W: Write>(w: &mut W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(w, "t,entity,x,y,vx,vy,action,reward")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.t, r.entity, r.body.pos[0], r.body.pos[1], r.body.vel[0], r.body.vel[1], r.action, r.reward
        )?;
    }
    Ok(())
}

pub struct Pursuit {
    cfg: PursuitConfig,
    spec: EnvSpec,
    state: PursuitState,
    record: bool,
    trajectory: Vec<TrajectoryRow>,
}

impl Pursuit {
    pub fn new(cfg: PursuitConfig) -> Self {
        let spec = cfg.spec();
        let state = PursuitState {
            predators: [Body::default(); NUM_PREDATORS],
            prey: Body::default(),
            t: 0,
        };
        Pursuit {
            cfg,
            spec,
            state,
            record: false,
            trajectory: Vec::new(),
        }
    }

    /// Keep a per-step record of every entity for [`write_trajectory_csv`].
    pub fn with_recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn state(&self) -> &PursuitState {
        &self.state
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }
}

impl Environment for Pursuit {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        self.state = PursuitState::random(rng);
        self.trajectory.clear();
        (0..NUM_PREDATORS).map(|i| pursuit_observe(&self.cfg, &self.state, i)).collect()
    }

    fn step(&mut self, actions: &[usize], _rng: &mut ChaCha8Rng) -> Transition {
        let prey_action = if self.cfg.evasive_prey { prey_policy(&self.cfg, &self.state) } else { 0 };
        let tr = pursuit_step_with_prey(&self.cfg, &mut self.state, actions, prey_action);
        if self.record {
            let entities = self.state.predators.iter().zip(actions).enumerate();
            for (i, (body, &action)) in entities {
                self.trajectory.push(TrajectoryRow {
                    t: tr.t,
                    entity: format!("predator{i}"),
                    body: *body,
                    action,
                    reward: tr.reward,
                });
            }
            self.trajectory.push(TrajectoryRow {
                t: tr.t,
                entity: "prey".into(),
                body: self.state.prey,
                action: prey_action,
                reward: tr.reward,
            });
        }
        tr
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn at(x: f64, y: f64) -> Body {
        Body {
            pos: [x, y],
            vel: [0.0; 2],
        }
    }

    fn state(preds: [Body; 3], prey: Body) -> PursuitState {
        PursuitState {
            predators: preds,
            prey,
            t: 0,
        }
    }

    #[test]
    fn two_on_prey_catch() {
        let cfg = PursuitConfig::default();
        let mut s = state([at(0.2, 0.2), at(0.2, 0.2), at(-0.8, -0.8)], at(0.2, 0.2));
        let tr = pursuit_step_with_prey(&cfg, &mut s, &[0, 0, 0], 0);
        let far = 2f64.sqrt();
        assert!((tr.reward - (1.0 - 0.01 * far)).abs() < 1e-12);
    }

    #[test]
    fn one_on_prey_no_catch() {
        let cfg = PursuitConfig::default();
        let mut s = state([at(0.2, 0.2), at(0.9, 0.2), at(-0.8, 0.2)], at(0.2, 0.2));
        let tr = pursuit_step_with_prey(&cfg, &mut s, &[0, 0, 0], 0);
        assert!((tr.reward - (0.0 - 0.01 * (0.7 + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn degenerate_overlap_is_a_fixed_point() {
        let cfg = PursuitConfig {
            shaping: 0.0,
            ..Default::default()
        };
        let mut s = state([at(0.3, -0.1); 3], at(0.3, -0.1));
        let before = s.clone();
        let tr = pursuit_step_with_prey(&cfg, &mut s, &[0, 0, 0], 0);
        assert_eq!(tr.reward, 1.0);
        assert_eq!(s.predators, before.predators);
        assert_eq!(s.prey, before.prey);
    }

    #[test]
    fn observation_examples() {
        let cfg = PursuitConfig::default();
        let s = state([at(0.0, 0.0); 3], at(0.0, 0.0));
        assert_eq!(pursuit_observe(&cfg, &s, 1), vec![0.0; 12]);
        let s = state([at(0.5, 0.0), at(0.0, 0.0), at(0.0, 0.0)], at(-0.5, 0.0));
        let o = pursuit_observe(&cfg, &s, 0);
        assert_eq!(&o[8..10], &[-1.0, 0.0]);
    }

    #[test]
    fn swapping_other_predators_permutes_their_slots() {
        let cfg = PursuitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = PursuitState::random(&mut rng);
        s.predators[1].vel = [0.03, -0.02];
        let a = pursuit_observe(&cfg, &s, 0);
        s.predators.swap(1, 2);
        let b = pursuit_observe(&cfg, &s, 0);
        assert_eq!(&a[..4], &b[..4]);
        assert_eq!(&a[4..6], &b[6..8]);
        assert_eq!(&a[6..8], &b[4..6]);
        assert_eq!(&a[8..], &b[8..]);
    }

    #[test]
    fn prey_flees_a_predator_on_its_left() {
        let cfg = PursuitConfig::default();
        let s = state([at(-0.3, 0.0); 3], at(0.0, 0.0));
        assert_eq!(prey_policy(&cfg, &s), 1);
    }

    #[test]
    fn prey_without_perceived_predators_stays() {
        let cfg = PursuitConfig {
            perception_range: 0.05,
            ..Default::default()
        };
        let s = state([at(-0.9, -0.9), at(0.9, 0.9), at(0.9, -0.9)], at(0.0, 0.0));
        assert_eq!(prey_policy(&cfg, &s), 0);
    }

    #[test]
    fn cornered_prey_improves_on_standing_still() {
        let cfg = PursuitConfig::default();
        let s = state([at(0.7, 0.7); 3], at(0.9, 0.9));
        let a = prey_policy(&cfg, &s);
        let d = |act| {
            let b = integrate(&cfg, &s.prey, act, cfg.prey_max_speed);
            dist(b.pos, [0.7, 0.7])
        };
        assert!(d(a) > d(0));
    }

    #[test]
    fn prey_choice_is_the_lookahead_argmax() {
        let cfg = PursuitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let s = PursuitState::random(&mut rng);
            let score = |a| {
                let b = integrate(&cfg, &s.prey, a, cfg.prey_max_speed);
                s.predators.iter().map(|p| dist(p.pos, b.pos)).fold(f64::INFINITY, f64::min)
            };
            let chosen = score(prey_policy(&cfg, &s));
            assert!((0..NUM_ACTIONS).all(|a| score(a) <= chosen));
        }
    }

    #[test]
    fn bounds_and_speed_caps_hold() {
        let cfg = PursuitConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = PursuitState::random(&mut rng);
        for _ in 0..10_000 {
            if s.t == cfg.horizon {
                s.t = 0;
            }
            let acts: Vec<usize> = (0..3).map(|_| rng.gen_range(0..NUM_ACTIONS)).collect();
            let tr = pursuit_step(&cfg, &mut s, &acts);
            let (caught, shaping) = pursuit_reward_terms(&cfg, &s);
            assert!(caught == 0.0 || caught == 1.0);
            assert!(shaping <= 0.0);
            assert!((tr.reward - caught - shaping).abs() < 1e-12);
            for (b, cap) in s
                .predators
                .iter()
                .map(|b| (b, cfg.predator_max_speed))
                .chain([(&s.prey, cfg.prey_max_speed)])
            {
                assert!(b.pos.iter().all(|p| p.abs() <= 1.0));
                assert!(b.vel[0].hypot(b.vel[1]) <= cap + 1e-12);
            }
            for i in 0..3 {
                assert!(pursuit_observe(&cfg, &s, i).iter().all(|v| v.abs() <= 2.0 + 1e-12));
            }
        }
    }

    #[test]
    fn horizon_and_recording() {
        let cfg = PursuitConfig::default();
        let mut env = Pursuit::new(cfg).with_recording();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.reset(&mut rng);
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&[1, 2, 3], &mut rng).done {
                break;
            }
        }
        assert_eq!(steps, 100);
        assert_eq!(env.trajectory().len(), 400);
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, env.trajectory()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,entity,x,y,vx,vy,action,reward\n0,predator0,"));
        assert_eq!(text.lines().count(), 401);
    }

    #[test]
    fn validation_requires_faster_prey() {
        let cfg = PursuitConfig {
            prey_max_speed: 0.05,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        assert!(PursuitConfig::default().validate().is_ok());
    }
}
