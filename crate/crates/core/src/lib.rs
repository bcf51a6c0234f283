//! Discrete-time simulator of content caching and inter-satellite routing in a
//! LEO satellite edge network, together with a graph soft actor-critic learner
//! (GT-SAC) and the PCF, cloud and neighbor-only SAC baselines.
//!
//! The crate is organised bottom-up:
//!
//! * [`constellation`] propagates a Walker constellation and exposes the
//!   4-neighbor ISL grid.
//! * [`channel`] holds the ISL and downlink link budgets and rain fading.
//! * [`workload`] generates Zipf-distributed requests.
//! * [`netgraph`] builds the per-slot graph and answers min-delay routing queries.
//! * [`nn`] is a small reverse-mode autodiff layer with message passing.
//! * [`env`] is the caching MDP: delay, success, traffic and reward accounting.
//! * [`agents`] contains the discrete SAC learner and the baselines.
//! * [`runner`] loads experiment configs, runs schemes and writes metrics.

pub mod agents;
pub mod channel;
pub mod constellation;
pub mod env;
mod error;
pub mod netgraph;
pub mod nn;
pub mod runner;
pub mod workload;

pub use error::{Error, Result};
