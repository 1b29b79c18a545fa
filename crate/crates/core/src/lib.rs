//! Robot/cloud compute offloading under a network query budget.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: the episodic offloading MDP driven by a prediction trace.
//! * [`tracegen`] and [`trace`]: synthetic coherent streams and the trace file format.
//! * [`policies`]: baseline policies plus the exact clairvoyant oracle.
//! * [`a2c`]: recurrent advantage actor-critic, written from scratch.
//! * [`eval`]: benchmark harness and CSV reports.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the benchmark and CLI use.

pub mod a2c;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod policies;
pub mod scalar;
pub mod trace;
pub mod tracegen;

pub use error::{OffloadError, Result};
pub use mdp::{encode_state, loss01, reset, reward, Action, EpisodeTally, FEATURE_DIM};
pub use scalar::Scalar;
pub use trace::{load_traces, save_traces, Label, Trace, TraceStep};
pub use tracegen::{generate_dataset, generate_trace, GenConfig};

pub type RewardParams = mdp::RewardParams<f64>;
pub type OffloadState = mdp::OffloadState<f64>;
pub type CachedPrediction = mdp::CachedPrediction<f64>;
pub type EpisodeEnv<'a> = mdp::EpisodeEnv<'a, f64>;
pub type OraclePlan = policies::OraclePlan<f64>;
