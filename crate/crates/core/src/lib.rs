//! Environments, team sampling, the POAM learner and evaluation protocols
//! for N-agent ad hoc teamwork.

pub mod batch;
pub mod env;
pub mod error;
pub mod eval;
pub mod poam;
pub mod registry;
pub mod rng;
pub mod runner;
pub mod scripted;
pub mod teams;

pub use batch::EpisodeBatch;
pub use error::{Error, Result};
pub use rng::SeedStream;
pub use runner::{run_episodes, run_team_episodes, ActOutput, AgentQuery, Policy, PolicySession};
pub use teams::{sample_team, team_with_n, PolicyHandle, PolicyKind, SamplingMode, TeamSpec};
