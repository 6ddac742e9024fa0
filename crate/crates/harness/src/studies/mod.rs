//! The three study types. Every study is a pure function of the config:
//! cells own their RNGs and results are merged in cell order.

mod control;
mod learning;
mod operator;

use std::path::{Path, PathBuf};

use copkit_core::mdp::{episodic_visitation, induce_chain, stationary_distribution};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, PolicyFile, StudyKind};
use crate::envs::{generate_env, Environment};
use crate::error::{HarnessError, HarnessResult};

pub use control::control_study;
pub use learning::learning_study;
pub use operator::{episodic_fixed_point, operator_study};

/// Outcome of one study cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Ok,
    Diverged,
    Failed,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged => "diverged",
            CellStatus::Failed => "failed",
        }
    }
}

/// Files written by a study and how many cells failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyReport {
    pub files: Vec<PathBuf>,
    pub cells: usize,
    /// `(cell label, error message)` for every failed cell.
    pub failures: Vec<(String, String)>,
}

impl StudyReport {
    /// Turns recorded cell failures into an error after the files are flushed.
    pub fn into_result(self) -> HarnessResult<Self> {
        match self.failures.first() {
            None => Ok(self),
            Some((cell, msg)) => Err(HarnessError::StudyFailed(format!(
                "{} of {} cells failed; first: {cell}: {msg}",
                self.failures.len(),
                self.cells
            ))),
        }
    }
}

/// Runs the study described by `config`, writing its CSVs under `out_dir`.
/// Failed cells get marker rows and turn into an error once all files are
/// written.
pub fn run_study(
    config: &ExperimentConfig,
    out_dir: &Path,
    parallel: usize,
) -> HarnessResult<StudyReport> {
    config.validate()?;
    let env = prepare_env(config)?;
    info!(
        "{} study on {} ({} seeds, {} gamma_hat values)",
        config.study.as_str(),
        config.env.name(),
        config.budget.seeds.len(),
        config.algorithm.gamma_hats.len()
    );
    let report = match config.study {
        StudyKind::Operator => operator_study(config, &env, out_dir, parallel)?,
        StudyKind::Learning => learning_study(config, &env, out_dir, parallel)?,
        StudyKind::Control => control_study(config, &env, out_dir, parallel)?,
    };
    for (cell, msg) in &report.failures {
        warn!("cell {cell} failed: {msg}");
    }
    report.into_result()
}

/// Generates the environment, applies the policy file, and enforces the
/// coverage threshold.
pub fn prepare_env(config: &ExperimentConfig) -> HarnessResult<Environment> {
    let mut env = generate_env(&config.env, config.env_seed)?;
    if let Some(path) = &config.policies {
        let (b, t) = PolicyFile::load(path)?;
        let mdp = env.mdp();
        for (name, p) in [("behavior", &b), ("target", &t)] {
            if p.n_states() != mdp.n_states() || p.n_actions() != mdp.n_actions() {
                return Err(HarnessError::Config(format!(
                    "{name} policy is {}x{}, environment has {} states and {} actions",
                    p.n_states(),
                    p.n_actions(),
                    mdp.n_states(),
                    mdp.n_actions()
                )));
            }
        }
        match &mut env {
            Environment::Continuing {
                behavior, target, ..
            }
            | Environment::Episodic {
                behavior, target, ..
            } => {
                *behavior = b;
                *target = t;
            }
        }
    }
    if let Some(threshold) = config.coverage_threshold {
        let coverage = behavior_coverage(&env)?;
        if coverage < threshold {
            return Err(HarnessError::InvalidSpec(format!(
                "behavior coverage {coverage:e} of {} is below the threshold {threshold:e}",
                config.env.name()
            )));
        }
    }
    Ok(env)
}

/// Smallest normalized behavior visitation probability over states.
pub fn behavior_coverage(env: &Environment) -> HarnessResult<f64> {
    let d = match env {
        Environment::Continuing { mdp, behavior, .. } => {
            stationary_distribution(&induce_chain(mdp, behavior)?)?
                .probs()
                .clone()
        }
        Environment::Episodic { emdp, behavior, .. } => {
            let v = episodic_visitation(emdp, behavior)?;
            &v / v.sum()
        }
    };
    Ok(d.min())
}

/// Cartesian product of `gamma_hats` and `seeds`, in that nesting order.
fn grid(gamma_hats: &[f64], seeds: &[u64]) -> Vec<(f64, u64)> {
    gamma_hats
        .iter()
        .flat_map(|&g| seeds.iter().map(move |&s| (g, s)))
        .collect()
}

/// Maps `f` over `cells` on up to `parallel` threads, preserving order.
fn map_cells<C, T, F>(cells: &[C], parallel: usize, f: F) -> HarnessResult<Vec<T>>
where
    C: Sync,
    T: Send,
    F: Fn(&C) -> T + Sync + Send,
{
    if parallel <= 1 {
        return Ok(cells.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| HarnessError::StudyFailed(e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(f).collect()))
}

fn require_continuing(env: &Environment, study: &str) -> HarnessResult<()> {
    match env {
        Environment::Continuing { .. } => Ok(()),
        Environment::Episodic { .. } => Err(HarnessError::Config(format!(
            "the {study} study needs a continuing environment"
        ))),
    }
}
