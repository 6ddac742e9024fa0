//! Experiment harness: environment suite, operator/learning/control
//! studies with deterministic CSV output, the acceptance battery and the
//! `copkit` command line.

pub mod cli;
pub mod config;
pub mod describe;
pub mod envs;
pub mod error;
pub mod output;
pub mod studies;
pub mod suite;

pub use error::{HarnessError, HarnessResult};
