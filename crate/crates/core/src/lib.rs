// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interpretability tooling for a square-per-token chess policy transformer:
//! a hookable forward pass, patching and ablation experiments, corruption
//! search, puzzle filtering, bilinear probes and error bars.

pub mod chess;
pub mod corruption;
pub mod error;
pub mod heads;
pub mod interventions;
pub mod model;
pub mod probes;
pub mod puzzles;
pub mod selfcheck;
pub mod stats;

pub use error::{Error, Result};
