//! The POAM learner and its ablations.
//!
//! A recurrent encoder turns each controlled agent's own observation and
//! action history into an embedding, trained by decoders that predict the
//! teammates' current observations and actions. Actor and critic are
//! recurrent networks over the observation, the (detached) embedding and a
//! one-hot slot id; all controlled slots share one parameter set. The actor
//! is trained with clipped PPO on controlled agents' data only, while the
//! critic may also learn from uncontrolled agents' trajectories.

pub mod checkpoint;
pub mod checks;
pub mod learner;
pub mod losses;
pub mod nets;
pub mod policy;
pub mod selfplay;

pub use checkpoint::{load_checkpoint, load_policy_handle, CheckpointMeta, LoadedPolicy};
pub use learner::{IterationMetrics, Learner, PpoHyper, TrainVariant, ValueNorm, VariantName};
pub use nets::{Lane, NetConfig, PoamNets};
pub use policy::PoamPolicy;
pub use selfplay::{train_selfplay_teammates, SelfplayRun};
