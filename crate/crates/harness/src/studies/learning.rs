//! Sample-based tabular COP-TD learning curves.

use std::path::Path;

use copkit_core::learning::{run_tabular_cop_td, TabularCopTdConfig, TransitionSampler};
use copkit_core::mdp::{discounted_stationary, induce_chain, ratio_of, stationary_distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{grid, map_cells, require_continuing, CellStatus, StudyReport};
use crate::config::ExperimentConfig;
use crate::envs::Environment;
use crate::error::HarnessResult;
use crate::output::Table;
use crate::row;

pub const LEARNING_HEADER: [&str; 7] = [
    "gamma_hat",
    "seed",
    "step",
    "max_error",
    "weighted_error",
    "loss",
    "status",
];

/// Renormalization period used for `gamma_hat = 1` when none is configured.
pub const DEFAULT_RENORMALIZE_EVERY: u64 = 1000;

/// One learning curve per `(gamma_hat, seed)` cell. `gamma_hat < 1` is
/// measured against the discounted ratio, `gamma_hat = 1` against
/// `d_pi / d_mu` with periodic renormalization. A zero-step budget writes
/// the header only.
pub fn learning_study(
    config: &ExperimentConfig,
    env: &Environment,
    out_dir: &Path,
    parallel: usize,
) -> HarnessResult<StudyReport> {
    require_continuing(env, "learning")?;
    let path = out_dir.join("learning_curves.csv");
    let mut table = Table::new(&LEARNING_HEADER);
    let cells = grid(&config.algorithm.gamma_hats, &config.budget.seeds);
    let mut report = StudyReport {
        cells: cells.len(),
        files: vec![path.clone()],
        ..StudyReport::default()
    };
    if config.budget.steps == 0 {
        table.write(&path)?;
        return Ok(report);
    }

    let sampler = TransitionSampler::new(
        env.mdp().clone(),
        env.behavior().clone(),
        env.target().clone(),
    )?;
    let chain = induce_chain(env.mdp(), env.target())?;
    let d_mu = sampler.d_mu().clone();
    let d_pi = stationary_distribution(&chain)?;

    let outputs = map_cells(&cells, parallel, |&(g, seed)| -> HarnessResult<Vec<Vec<String>>> {
        let (reference, renormalize_every) = if g < 1.0 {
            (
                ratio_of(&discounted_stationary(&chain, &d_mu, g)?, &d_mu)?,
                config.algorithm.renormalize_every,
            )
        } else {
            (
                ratio_of(&d_pi, &d_mu)?,
                Some(
                    config
                        .algorithm
                        .renormalize_every
                        .unwrap_or(DEFAULT_RENORMALIZE_EVERY),
                ),
            )
        };
        let run_config = TabularCopTdConfig {
            gamma_hat: g,
            steps: config.budget.steps,
            schedule: config.algorithm.schedule,
            renormalize_every,
            record_every: config.budget.record_every(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let run = run_tabular_cop_td(&sampler, &reference, &run_config, &mut rng)?;
        Ok(run
            .curve
            .iter()
            .map(|p| {
                row!(
                    g,
                    seed,
                    p.step,
                    p.max_error,
                    p.weighted_error,
                    p.loss,
                    run.status.as_str()
                )
            })
            .collect())
    })?;

    for ((g, seed), out) in cells.iter().zip(outputs) {
        match out {
            Ok(rows) => table.extend(rows),
            Err(e) => {
                table.push(row!(
                    *g,
                    *seed,
                    0u64,
                    f64::NAN,
                    f64::NAN,
                    f64::NAN,
                    CellStatus::Failed.as_str()
                ));
                report
                    .failures
                    .push((format!("gamma_hat={g} seed={seed}"), e.to_string()));
            }
        }
    }
    table.write(&path)?;
    Ok(report)
}
