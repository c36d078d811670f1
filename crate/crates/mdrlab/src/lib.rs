//! mdrlab: a desk-scale PPO laboratory for studying what mode-dependent
//! layers (batch normalization, dropout) do to on-policy optimization.
//!
//! The crate trains small actor-critic policies on two built-in
//! environments, measures the divergence between the Train-mode and
//! Eval-mode views of the same policy, and implements a dual-phase
//! "rectification" update schedule that closes that gap without extra
//! optimization steps. Everything is f64 and deterministic given a seed.

pub mod agent;
pub mod config;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod plot;
pub mod report;
pub mod rollout;
pub mod seeding;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
