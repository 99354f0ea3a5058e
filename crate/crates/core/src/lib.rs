//! Multi-agent active-tracking arena.
//!
//! A tracker follows a target while distractors try to steal its attention.
//! The crate provides the simulator, the distraction-aware reward, grounded
//! and detection observations, a small recurrent network library with exact
//! gradients, self-play actor-critic training, teacher-student distillation,
//! and evaluation harnesses.

pub mod arena;
pub mod cli;
pub mod config;
pub mod distill;
pub mod error;
pub mod geometry;
pub mod nn;
pub mod obs;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod trace;
pub mod train;
pub mod eval;

pub use error::{Error, Result};
