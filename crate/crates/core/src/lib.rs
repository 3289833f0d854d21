//! Experiential group-relative policy optimization on a tabular softmax
//! policy with verifiable rewards.
//!
//! The pieces, bottom-up:
//!
//! - [`policy`]: the autoregressive softmax policy, sampling and scoring.
//! - [`task`]: synthetic exact-match tasks stratified by answer length.
//! - [`grpo`]: group-relative advantages and the on-policy objective.
//! - [`experience`]: the replay buffer, bucketed question sampling and
//!   trajectory selection.
//! - [`optimizer`]: the mixed objective, the delayed-start gate and the
//!   training loop.
//! - [`oracle`] and [`verify`]: brute-force checks on enumerable spaces.
//! - [`experiment`], [`metrics`] and [`snapshot`]: multi-seed runs and their
//!   on-disk artifacts.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experience;
pub mod experiment;
pub mod grpo;
pub mod metrics;
pub mod optimizer;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod snapshot;
pub mod task;
pub mod verify;

pub use config::{Arm, ExperimentSpec, TrainConfig};
pub use error::{Error, Result};
pub use policy::{ClassId, Gradient, PolicyParams, Token, Trajectory, Vocabulary};
pub use task::{Question, QuestionId, SuiteSpec, TaskSuite};
