//! Learners and baseline policies.
//!
//! The learner is a discrete soft actor-critic whose joint caching action is
//! factorized per satellite: each node picks one `C`-subset of the catalog
//! from a categorical head on its embedding. With the message-passing
//! encoder this is GT-SAC; with the per-node MLP encoder and one-hop
//! retrieval it is the neighbor-only SAC baseline.

mod action;
mod baselines;
pub mod nets;
mod replay;
mod sac;
pub mod toy;

pub use action::ActionSpace;
pub use baselines::{cloud_policy, pcf_policy};
pub use nets::{encode_state, soft_update, Batch, EncoderKind, NetShape, Observation};
pub use replay::ReplayBuffer;
pub use sac::{train, SacAgent, SacConfig, SlotHook, Transition, UpdateStats};
