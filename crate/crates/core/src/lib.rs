//! Distributed sign-momentum optimization: a deterministic simulator of
//! local-step training with a global sign-momentum step, its baselines,
//! and executable versions of the accompanying convergence bounds.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod base_opt;
pub mod engine;
pub mod problems;
pub mod reductions;
pub mod rng;
pub mod schedule;
pub mod sign_ops;
pub mod theory;
pub mod vector;

pub use engine::{run, run_with, EngineError, HyperConfig, RunTrace, Variant};
pub use base_opt::{BaseOptKind, BaseOptParams, BaseOptState};
pub use problems::{Objective, Problem, ProblemError};
pub use rng::{derive_stream, Phase, RngStream, StreamId};
pub use schedule::{cosine_schedule, Schedule, ScheduleError, ScheduleKind};
pub use sign_ops::{SignError, SignMode, SignVariant};
pub use vector::{ParamVector, VectorError};
