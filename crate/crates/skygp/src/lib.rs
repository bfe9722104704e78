//! Streaming Gaussian-process regression with a bounded, dynamically
//! generated pool of exact GP experts.
//!
//! Incoming samples are localized against kernel-induced expert centers held
//! in an ordered list, predicted by aggregating a handful of nearby experts
//! (MoE, PoE, gPoE, BCM or rBCM), and then folded into the pool: appended to
//! a non-full expert, swapped into a full one (Dense mode), or used to spawn
//! a new expert. Per-step cost stays bounded regardless of stream length.
//!
//! The crate also ships the two evaluation harnesses built on top of the
//! pool: a sequential regression benchmark (SMSE/MSLL plus timing) and a
//! closed-loop tracking-control simulation with an online-learned
//! feedforward model and a high-probability error bound.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values;
// indexed loops mirror the triangular-solve math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod aggregate;
pub mod bench;
pub mod bound;
mod chol;
pub mod control;
pub mod error;
pub mod expert;
pub mod kernel;
pub mod pool;
pub mod seed;

pub use aggregate::{Aggregation, Contribution, ExpertPosterior, Prediction};
pub use bench::{Dataset, RunReport, SyntheticKind};
pub use bound::BoundParams;
pub use control::{ControllerConfig, ModelSource, PlantState, TrialResult};
pub use error::{Result, SkyGpError};
pub use expert::Expert;
pub use kernel::Hyperparameters;
pub use pool::{Mode, Pool, PoolConfig, UpdateEvent, Weighting};
