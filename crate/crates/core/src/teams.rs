//! Policy handles, team composition and the per-episode team sampler.
//!
//! An uncontrolled "team" is a single handle: all of its members run the
//! same policy and tell themselves apart by slot and role, so filling the
//! free slots of an episode with one drawn handle keeps that team's
//! conventions intact.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvSpec;
use crate::error::{config_err, Result};
use crate::runner::Policy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Scripted,
    Bernoulli,
    Network,
}

#[derive(Clone)]
pub struct PolicyHandle {
    pub id: String,
    pub kind: PolicyKind,
    pub seed: Option<u64>,
    pub tags: Vec<String>,
    pub policy: Arc<dyn Policy>,
}

impl fmt::Debug for PolicyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyHandle")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .field("tags", &self.tags)
            .finish_non_exhaustive()
    }
}

impl PolicyHandle {
    pub fn new(id: impl Into<String>, kind: PolicyKind, policy: Arc<dyn Policy>) -> Self {
        PolicyHandle {
            id: id.into(),
            kind,
            seed: None,
            tags: Vec::new(),
            policy,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_tags(mut self, tags: &[&str]) -> Self {
        self.tags = tags.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }

    /// True when both handles run the very same policy object.
    pub fn same_policy(&self, other: &PolicyHandle) -> bool {
        Arc::ptr_eq(&self.policy, &other.policy)
    }
}

/// Assignment of policies to the `M` slots of one episode.
#[derive(Debug, Clone)]
pub struct TeamSpec {
    pub slots: Vec<PolicyHandle>,
    pub controlled: Vec<bool>,
    pub label: String,
}

impl TeamSpec {
    pub fn new(slots: Vec<PolicyHandle>, controlled: Vec<bool>, label: impl Into<String>) -> Result<Self> {
        if slots.len() != controlled.len() {
            return config_err(format!(
                "team has {} slots but {} controlled flags",
                slots.len(),
                controlled.len()
            ));
        }
        Ok(TeamSpec {
            slots,
            controlled,
            label: label.into(),
        })
    }

    /// The whole team runs one policy.
    pub fn uniform(handle: &PolicyHandle, m: usize, controlled: bool) -> Self {
        TeamSpec {
            slots: vec![handle.clone(); m],
            controlled: vec![controlled; m],
            label: handle.id.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.controlled.iter().filter(|&&c| c).count()
    }

    pub fn check_against(&self, spec: &EnvSpec) -> Result<()> {
        if self.slots.len() != spec.num_agents {
            return config_err(format!(
                "team '{}' has {} slots, task needs {}",
                self.label,
                self.slots.len(),
                spec.num_agents
            ));
        }
        let want = spec.fingerprint();
        for h in &self.slots {
            if let Some(fp) = h.policy.env_fingerprint() {
                if fp != want {
                    return config_err(format!(
                        "policy '{}' was built for {fp} but the task is {want}",
                        h.id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `N ~ Uniform{1..M-1}`.
    NahtUniform,
    AhtFixedN1,
    /// Every slot is controlled.
    SelfplayFull,
}

/// Controlled policy in `n` uniformly placed slots, `uncontrolled` in the rest.
pub fn team_with_n<R: Rng + ?Sized>(
    controlled: &PolicyHandle,
    uncontrolled: Option<&PolicyHandle>,
    m: usize,
    n: usize,
    rng: &mut R,
) -> Result<TeamSpec> {
    if n > m {
        return config_err(format!("cannot control {n} of {m} slots"));
    }
    let Some(u) = uncontrolled.or((n == m).then_some(controlled)) else {
        return config_err("an uncontrolled team is required when N < M");
    };
    let mut mask = vec![false; m];
    for k in sample(rng, m, n) {
        mask[k] = true;
    }
    let slots = mask
        .iter()
        .map(|&c| if c { controlled.clone() } else { u.clone() })
        .collect();
    let label = if n == m {
        format!("{}|N={n}", controlled.id)
    } else {
        format!("{}|N={n}", u.id)
    };
    TeamSpec::new(slots, mask, label)
}

/// Draw one episode's team.
pub fn sample_team<R: Rng + ?Sized>(
    mode: SamplingMode,
    uncontrolled: &[PolicyHandle],
    controlled: &PolicyHandle,
    m: usize,
    rng: &mut R,
) -> Result<TeamSpec> {
    if m < 2 {
        return config_err("teams need at least two slots");
    }
    let n = match mode {
        SamplingMode::NahtUniform => rng.gen_range(1..m),
        SamplingMode::AhtFixedN1 => 1,
        SamplingMode::SelfplayFull => m,
    };
    if n == m {
        return team_with_n(controlled, None, m, n, rng);
    }
    if uncontrolled.is_empty() {
        return config_err("the uncontrolled set is empty");
    }
    let u = &uncontrolled[rng.gen_range(0..uncontrolled.len())];
    team_with_n(controlled, Some(u), m, n, rng)
}
