//! Expectation-level iteration of the COP operators: residual series and
//! contraction measurements.

use std::path::Path;

use copkit_core::mdp::{
    discounted_stationary, episodic_visitation, induce_chain, ratio_of, stationary_distribution,
    EpisodicMdp, Policy, RatioVector, StateDistribution,
};
use copkit_core::operators::{
    concentration, contraction_check, iterate_operator, CopOperator, EpisodicCopOperator,
    RatioOperator,
};
use copkit_core::Error as CoreError;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grid, map_cells, CellStatus, StudyReport};
use crate::config::ExperimentConfig;
use crate::envs::Environment;
use crate::error::HarnessResult;
use crate::output::Table;
use crate::row;

pub const RESIDUAL_HEADER: [&str; 8] = [
    "env",
    "gamma_hat",
    "seed",
    "step",
    "residual",
    "distance",
    "max_entry",
    "status",
];

pub const CONTRACTION_HEADER: [&str; 11] = [
    "env",
    "gamma_hat",
    "seed",
    "n",
    "k_n",
    "k_bound",
    "safe_gamma",
    "max_ratio",
    "bound",
    "contracts",
    "status",
];

struct CellOutput {
    residuals: Vec<Vec<String>>,
    contraction: Vec<Vec<String>>,
    failure: Option<String>,
}

/// Iterates the (discounted, normalized or episodic) COP operator from a
/// seed-dependent start with unit `d_mu`-mass and records
/// `||c^{k+1} - c^k||_{d_mu}` and the distance to the fixed point. For
/// continuing environments with `gamma_hat < 1` it also measures the
/// `n`-step contraction factor against `gamma_hat^n sqrt(K_n)`.
pub fn operator_study(
    config: &ExperimentConfig,
    env: &Environment,
    out_dir: &Path,
    parallel: usize,
) -> HarnessResult<StudyReport> {
    let name = config.env.name();
    let cells = grid(&config.algorithm.gamma_hats, &config.budget.seeds);
    let outputs = map_cells(&cells, parallel, |&(g, seed)| {
        let result = match env {
            Environment::Continuing {
                mdp,
                behavior,
                target,
            } => continuing_cell(config, &name, mdp, behavior, target, g, seed),
            Environment::Episodic {
                emdp,
                behavior,
                target,
            } => episodic_cell(config, &name, emdp, behavior, target, g, seed),
        };
        result.unwrap_or_else(|e| CellOutput {
            residuals: vec![marker(&name, g, seed, 0, CellStatus::Failed)],
            contraction: Vec::new(),
            failure: Some(e.to_string()),
        })
    })?;

    let mut residuals = Table::new(&RESIDUAL_HEADER);
    let mut contraction = Table::new(&CONTRACTION_HEADER);
    let mut report = StudyReport {
        cells: cells.len(),
        ..StudyReport::default()
    };
    for ((g, seed), out) in cells.iter().zip(outputs) {
        residuals.extend(out.residuals);
        contraction.extend(out.contraction);
        if let Some(msg) = out.failure {
            report.failures.push((format!("gamma_hat={g} seed={seed}"), msg));
        }
    }
    for (table, file) in [
        (&residuals, "operator_residuals.csv"),
        (&contraction, "operator_contraction.csv"),
    ] {
        let path = out_dir.join(file);
        table.write(&path)?;
        report.files.push(path);
    }
    Ok(report)
}

fn marker(env: &str, g: f64, seed: u64, step: u64, status: CellStatus) -> Vec<String> {
    row!(env, g, seed, step, f64::NAN, f64::NAN, f64::NAN, status.as_str())
}

/// Positive start vector with unit `weights`-mass drawn from `seed`.
fn start_vector(weights: &DVector<f64>, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = DVector::from_fn(weights.len(), |_, _| rng.random_range(0.5..1.5));
    let mass = c.dot(weights);
    c / mass
}

#[allow(clippy::too_many_arguments)]
fn trajectory_rows<O: RatioOperator>(
    op: &O,
    c0: DVector<f64>,
    fixed: &DVector<f64>,
    weights: &StateDistribution,
    steps: u64,
    record_every: u64,
    env: &str,
    g: f64,
    seed: u64,
) -> HarnessResult<Vec<Vec<String>>> {
    if steps == 0 {
        return Ok(Vec::new());
    }
    let c0 = RatioVector::new(c0)?;
    match iterate_operator(op, &c0, steps as usize, record_every as usize, weights) {
        Ok(traj) => Ok(traj
            .rows(Some(fixed), weights)
            .into_iter()
            .map(|r| {
                row!(
                    env,
                    g,
                    seed,
                    r.step as u64,
                    r.residual,
                    r.distance,
                    r.max_entry,
                    CellStatus::Ok.as_str()
                )
            })
            .collect()),
        Err(CoreError::Diverged { step, .. }) => {
            Ok(vec![marker(env, g, seed, step as u64, CellStatus::Diverged)])
        }
        Err(e) => Err(e.into()),
    }
}

fn continuing_cell(
    config: &ExperimentConfig,
    env: &str,
    mdp: &copkit_core::Mdp,
    behavior: &Policy,
    target: &Policy,
    g: f64,
    seed: u64,
) -> HarnessResult<CellOutput> {
    let chain = induce_chain(mdp, target)?;
    let d_mu = stationary_distribution(&induce_chain(mdp, behavior)?)?;
    let d_pi = stationary_distribution(&chain)?;
    let c0 = start_vector(d_mu.probs(), seed);
    let budget = &config.budget;
    let cop = CopOperator::new(&chain, &d_mu)?;

    let residuals = if g < 1.0 {
        let fixed = ratio_of(&discounted_stationary(&chain, &d_mu, g)?, &d_mu)?;
        let op = cop.discounted(g)?;
        trajectory_rows(
            &op,
            c0,
            fixed.values(),
            &d_mu,
            budget.steps,
            budget.record_every(),
            env,
            g,
            seed,
        )?
    } else {
        let fixed = ratio_of(&d_pi, &d_mu)?;
        let op = cop.normalized();
        trajectory_rows(
            &op,
            c0,
            fixed.values(),
            &d_mu,
            budget.steps,
            budget.record_every(),
            env,
            g,
            seed,
        )?
    };

    let mut contraction = Vec::new();
    if g < 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &n in &config.algorithm.contraction_steps {
            let k = concentration(&chain, &d_mu, &d_pi, n)?;
            let r = contraction_check(
                &chain,
                &d_mu,
                g,
                n,
                config.algorithm.contraction_trials,
                &mut rng,
            )?;
            contraction.push(row!(
                env,
                g,
                seed,
                n,
                k.k_n,
                k.k_bound,
                k.safe_gamma,
                r.max_ratio,
                r.bound,
                r.bound < 1.0,
                CellStatus::Ok.as_str()
            ));
        }
    }
    Ok(CellOutput {
        residuals,
        contraction,
        failure: None,
    })
}

fn episodic_cell(
    config: &ExperimentConfig,
    env: &str,
    emdp: &EpisodicMdp,
    behavior: &Policy,
    target: &Policy,
    g: f64,
    seed: u64,
) -> HarnessResult<CellOutput> {
    let visits = episodic_visitation(emdp, behavior)?;
    let weights = StateDistribution::new(&visits / visits.sum())?;
    let op = EpisodicCopOperator::new(emdp, target, &visits, g)?;
    let fixed = episodic_fixed_point(emdp, target, &visits, g)?;
    let s0 = emdp.start_state();
    let mut c0 = start_vector(weights.probs(), seed);
    c0[s0] = 1.0;
    let residuals = trajectory_rows(
        &op,
        c0,
        &fixed,
        &weights,
        config.budget.steps,
        config.budget.record_every(),
        env,
        g,
        seed,
    )?;
    Ok(CellOutput {
        residuals,
        contraction: Vec::new(),
        failure: None,
    })
}

/// Fixed point of the episodic operator by a direct solve: `c(s_0) = 1` and
/// `c = g (M c) + (1 - g) e` elsewhere, with `M = D_mu^{-1} P_pi^T D_mu`.
pub fn episodic_fixed_point(
    emdp: &EpisodicMdp,
    target: &Policy,
    visits: &DVector<f64>,
    g: f64,
) -> HarnessResult<DVector<f64>> {
    let p = emdp.induce(target)?.transition;
    let n = emdp.n_states();
    let s0 = emdp.start_state();
    let mut a = DMatrix::from_fn(n, n, |i, j| {
        let m = p[(j, i)] * visits[j] / visits[i];
        f64::from(u8::from(i == j)) - g * m
    });
    let mut b = DVector::from_element(n, 1.0 - g);
    a.row_mut(s0).fill(0.0);
    a[(s0, s0)] = 1.0;
    b[s0] = 1.0;
    a.lu().solve(&b).ok_or_else(|| {
        crate::error::HarnessError::StudyFailed("singular episodic fixed-point system".into())
    })
}
