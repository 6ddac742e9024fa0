//! The acceptance battery. Each criterion computes its oracle independently
//! of the code under test, writes a CSV of the per-instance numbers and
//! reports pass or fail.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use copkit_core::learning::{
    normalization_grad_estimate, reweighted_td_step, run_tabular_cop_td, LinearValueModel,
    StepSchedule, TabularCopTdConfig, TransitionSample, TransitionSampler,
};
use copkit_core::mdp::{
    discounted_reset_chain, discounted_stationary, episodic_visitation, induce_chain, ratio_of,
    stationary_distribution, EpisodicMdp, InducedChain, Policy, RatioVector, StateDistribution,
};
use copkit_core::operators::{
    approximation_error_bound, concentration, contraction_check, iterate_operator,
    projected_cop_iterate, value_function, CopOperator, EpisodicCopOperator, FeatureMap,
    ProjectedOutcome, WeightedProjector,
};
use copkit_core::replay::{
    run_control, ControlConfig, PriorityMode, ReplayBuffer, SumTree, TrainerConfig,
};
use copkit_core::{Error as CoreError, Mdp};
use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::envs::{divergence_features, flat_dirichlet, generate_env, EnvSpec, Environment};
use crate::error::{HarnessError, HarnessResult};
use crate::output::Table;
use crate::row;

/// Result of one criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl CriterionOutcome {
    /// One human-readable status line.
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {} {}: {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Numerical verdict of a criterion before timing is applied.
struct Check {
    passed: bool,
    detail: String,
    table: Table,
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> HarnessResult<Check>,
}

const CRITERIA: [Criterion; 11] = [
    Criterion {
        id: 1,
        name: "cop fixed-point convergence",
        limit: Some(Duration::from_secs(10)),
        run: cop_convergence,
    },
    Criterion {
        id: 2,
        name: "discounted cop limit",
        limit: Some(Duration::from_secs(10)),
        run: discounted_limit,
    },
    Criterion {
        id: 3,
        name: "contraction and concentration",
        limit: None,
        run: contraction,
    },
    Criterion {
        id: 4,
        name: "projected bellman error bound",
        limit: None,
        run: approximation_bound,
    },
    Criterion {
        id: 5,
        name: "unbiased normalization gradient",
        limit: None,
        run: normalization_unbiased,
    },
    Criterion {
        id: 6,
        name: "projected cop collapse",
        limit: None,
        run: projected_collapse,
    },
    Criterion {
        id: 7,
        name: "stochastic cop-td",
        limit: None,
        run: stochastic_cop_td,
    },
    Criterion {
        id: 8,
        name: "off-policy divergence",
        limit: None,
        run: divergence,
    },
    Criterion {
        id: 9,
        name: "replay correctness",
        limit: None,
        run: replay_correctness,
    },
    Criterion {
        id: 10,
        name: "gridworld control",
        limit: Some(Duration::from_secs(600)),
        run: gridworld_control,
    },
    Criterion {
        id: 11,
        name: "episodic operator",
        limit: None,
        run: episodic,
    },
];

/// Identifier of the determinism criterion, which reruns the others.
pub const DETERMINISM_ID: u8 = 12;

/// Ids of all criteria in order.
pub fn criterion_ids() -> Vec<u8> {
    CRITERIA
        .iter()
        .map(|c| c.id)
        .chain(std::iter::once(DETERMINISM_ID))
        .collect()
}

fn csv_name(id: u8) -> String {
    format!("criterion_{id:02}.csv")
}

/// Runs criterion `id` (1 to 11) and writes its CSV under `out_dir`.
pub fn run_criterion(id: u8, out_dir: &Path) -> HarnessResult<CriterionOutcome> {
    let criterion = CRITERIA
        .iter()
        .find(|c| c.id == id)
        .ok_or_else(|| HarnessError::Config(format!("no criterion {id}")))?;
    let start = Instant::now();
    let check = (criterion.run)()?;
    let elapsed = start.elapsed();
    check.table.write(&out_dir.join(csv_name(id)))?;
    let mut detail = check.detail;
    let in_time = criterion.limit.is_none_or(|l| elapsed <= l);
    if !in_time {
        detail.push_str(&format!("; over the {:?} limit", criterion.limit.unwrap()));
    }
    Ok(CriterionOutcome {
        id,
        name: criterion.name,
        passed: check.passed && in_time,
        detail,
        elapsed,
    })
}

/// Runs criteria 1 to 11 and writes `suite_summary.csv`; the callback sees
/// each outcome as soon as it is known.
pub fn run_checks(
    out_dir: &Path,
    mut on_outcome: impl FnMut(&CriterionOutcome),
) -> HarnessResult<Vec<CriterionOutcome>> {
    let mut outcomes = Vec::new();
    let mut summary = Table::new(&["criterion", "name", "passed", "detail"]);
    for c in &CRITERIA {
        let outcome = run_criterion(c.id, out_dir)?;
        on_outcome(&outcome);
        summary.push(row!(
            u64::from(outcome.id),
            outcome.name,
            outcome.passed,
            outcome.detail.clone()
        ));
        outcomes.push(outcome);
    }
    summary.write(&out_dir.join("suite_summary.csv"))?;
    Ok(outcomes)
}

/// Full battery: criteria 1 to 11 into `out_dir`, then criterion 12 reruns
/// them into a scratch directory and compares every CSV byte for byte.
pub fn run_suite(
    out_dir: &Path,
    mut on_outcome: impl FnMut(&CriterionOutcome),
) -> HarnessResult<Vec<CriterionOutcome>> {
    let mut outcomes = run_checks(out_dir, &mut on_outcome)?;
    let start = Instant::now();
    let rerun = out_dir.join("rerun");
    run_checks(&rerun, |_| {})?;
    let (passed, detail) = compare_csv_dirs(out_dir, &rerun)?;
    fs::remove_dir_all(&rerun)?;
    let outcome = CriterionOutcome {
        id: DETERMINISM_ID,
        name: "determinism",
        passed,
        detail,
        elapsed: start.elapsed(),
    };
    on_outcome(&outcome);
    outcomes.push(outcome);
    Ok(outcomes)
}

/// Runs criteria 1 to 11 twice into fresh subdirectories of `scratch` and
/// compares the CSVs.
pub fn determinism(scratch: &Path) -> HarnessResult<CriterionOutcome> {
    let start = Instant::now();
    let (a, b) = (scratch.join("first"), scratch.join("second"));
    run_checks(&a, |_| {})?;
    run_checks(&b, |_| {})?;
    let (passed, detail) = compare_csv_dirs(&a, &b)?;
    Ok(CriterionOutcome {
        id: DETERMINISM_ID,
        name: "determinism",
        passed,
        detail,
        elapsed: start.elapsed(),
    })
}

/// Compares every CSV directly inside `a` with its namesake in `b`.
/// `suite_summary.csv` is excluded because its verdicts include wall-clock
/// limits.
fn compare_csv_dirs(a: &Path, b: &Path) -> HarnessResult<(bool, String)> {
    let mut names: Vec<String> = fs::read_dir(a)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv") && n != "suite_summary.csv")
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let left = fs::read(a.join(name))?;
        let right = fs::read(b.join(name)).unwrap_or_default();
        if left != right {
            differing.push(name.clone());
        }
    }
    let passed = differing.is_empty() && !names.is_empty();
    let detail = if passed {
        format!("{} CSV files byte-identical across two runs", names.len())
    } else {
        format!("differing files: {differing:?} of {}", names.len())
    };
    Ok((passed, detail))
}

// Instance helpers.

fn continuing(spec: &EnvSpec, seed: u64) -> HarnessResult<(Mdp, Policy, Policy)> {
    match generate_env(spec, seed)? {
        Environment::Continuing {
            mdp,
            behavior,
            target,
        } => Ok((mdp, behavior, target)),
        Environment::Episodic { .. } => Err(HarnessError::InvalidSpec(format!(
            "{} is not continuing",
            spec.name()
        ))),
    }
}

fn episodic_env(spec: &EnvSpec) -> HarnessResult<(EpisodicMdp, Policy, Policy)> {
    match generate_env(spec, 0)? {
        Environment::Episodic {
            emdp,
            behavior,
            target,
        } => Ok((emdp, behavior, target)),
        Environment::Continuing { .. } => Err(HarnessError::InvalidSpec(format!(
            "{} is not episodic",
            spec.name()
        ))),
    }
}

fn random_ergodic(n_states: usize) -> EnvSpec {
    EnvSpec::RandomErgodic {
        n_states,
        n_actions: 3,
        mixing: 0.05,
        gamma: 0.9,
    }
}

/// Target chain, `d_mu` and `d_pi` of a continuing instance.
struct Instance {
    label: String,
    chain: InducedChain,
    d_mu: StateDistribution,
    d_pi: StateDistribution,
    behavior_chain: InducedChain,
}

fn instance(spec: &EnvSpec, seed: u64) -> HarnessResult<Instance> {
    let (mdp, behavior, target) = continuing(spec, seed)?;
    let chain = induce_chain(&mdp, &target)?;
    let behavior_chain = induce_chain(&mdp, &behavior)?;
    Ok(Instance {
        label: format!("{}/{seed}", spec.name()),
        d_mu: stationary_distribution(&behavior_chain)?,
        d_pi: stationary_distribution(&chain)?,
        chain,
        behavior_chain,
    })
}

/// Continuing instances used wherever "every suite instance" is required.
fn suite_instances() -> HarnessResult<Vec<Instance>> {
    let mut out = vec![instance(&EnvSpec::Chain { n_states: 5 }, 0)?];
    for n in [5, 10] {
        for seed in 0..3 {
            out.push(instance(&random_ergodic(n), seed)?);
        }
    }
    out.push(instance(&EnvSpec::DivergenceExample, 0)?);
    Ok(out)
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

// Criterion 1.

fn cop_convergence() -> HarnessResult<Check> {
    let mut table = Table::new(&["instance", "mass", "max_error"]);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let inst = instance(&random_ergodic(10), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let c0 = DVector::from_vec(flat_dirichlet(10, &mut rng));
        let mass = inst.d_mu.probs().dot(&c0);
        let op = CopOperator::new(&inst.chain, &inst.d_mu)?;
        let traj = iterate_operator(&op, &RatioVector::new(c0)?, 10_000, 10_000, &inst.d_mu)?;
        let expected = ratio_of(&inst.d_pi, &inst.d_mu)?.into_values() * mass;
        let err = max_abs_diff(traj.last(), &expected);
        worst = worst.max(err);
        table.push(row!(inst.label, mass, err));
    }
    Ok(Check {
        passed: worst < 1e-6,
        detail: format!("20 chains, max |c - C d_pi/d_mu| = {worst:.3e} (< 1e-6)"),
        table,
    })
}

// Criterion 2.

fn discounted_limit() -> HarnessResult<Check> {
    let mut table = Table::new(&["instance", "gamma_hat", "closed_form_error", "reset_chain_error"]);
    let mut instances = vec![instance(&EnvSpec::Chain { n_states: 5 }, 0)?];
    for seed in 0..5 {
        instances.push(instance(&random_ergodic(10), seed)?);
    }
    let mut worst: f64 = 0.0;
    for inst in &instances {
        for g in [0.3, 0.9, 0.99] {
            let op = CopOperator::new(&inst.chain, &inst.d_mu)?.discounted(g)?;
            let n = inst.chain.n_states();
            let traj = iterate_operator(&op, &RatioVector::ones(n), 20_000, 20_000, &inst.d_mu)?;
            let closed = ratio_of(&discounted_stationary(&inst.chain, &inst.d_mu, g)?, &inst.d_mu)?;
            let reset = stationary_distribution(&discounted_reset_chain(&inst.chain, &inst.d_mu, g)?)?;
            let reset = ratio_of(&reset, &inst.d_mu)?;
            let e1 = max_abs_diff(traj.last(), closed.values());
            let e2 = max_abs_diff(traj.last(), reset.values());
            worst = worst.max(e1).max(e2);
            table.push(row!(inst.label.clone(), g, e1, e2));
        }
    }
    Ok(Check {
        passed: worst < 1e-8,
        detail: format!(
            "{} instances x 3 gamma_hat, max error vs closed form and reset chain = {worst:.3e} (< 1e-8)",
            instances.len()
        ),
        table,
    })
}

// Criterion 3.

fn contraction() -> HarnessResult<Check> {
    let mut table = Table::new(&[
        "instance",
        "gamma_hat",
        "n",
        "max_ratio",
        "bound",
        "k_n",
        "k_bound",
        "k_n_on_policy",
    ]);
    let mut violations = 0usize;
    let mut ordering_failures = 0usize;
    let mut on_policy_error: f64 = 0.0;
    let mut worst_slack = f64::INFINITY;
    for (i, inst) in suite_instances()?.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3_000 + i as u64);
        for n in [1, 2, 4] {
            let k = concentration(&inst.chain, &inst.d_mu, &inst.d_pi, n)?;
            if k.k_n > k.k_bound * (1.0 + 1e-12) {
                ordering_failures += 1;
            }
            let same = concentration(&inst.behavior_chain, &inst.d_mu, &inst.d_mu, n)?;
            on_policy_error = on_policy_error
                .max((same.k_n - 1.0).abs())
                .max((same.k_bound - 1.0).abs());
            for g in [0.5, 0.9, 0.99] {
                let (max_ratio, bound) =
                    match contraction_check(&inst.chain, &inst.d_mu, g, n, 100, &mut rng) {
                        Ok(r) => (r.max_ratio, r.bound),
                        Err(CoreError::BoundViolated { measured, bound }) => {
                            violations += 1;
                            (measured, bound)
                        }
                        Err(e) => return Err(e.into()),
                    };
                worst_slack = worst_slack.min(bound - max_ratio);
                table.push(row!(
                    inst.label.clone(),
                    g,
                    n,
                    max_ratio,
                    bound,
                    k.k_n,
                    k.k_bound,
                    same.k_n
                ));
            }
        }
    }
    Ok(Check {
        passed: violations == 0 && ordering_failures == 0 && on_policy_error < 1e-10,
        detail: format!(
            "bound violations {violations}, smallest slack {worst_slack:.3e}; K_n > K on {ordering_failures}; \
             |K - 1| for pi = mu up to {on_policy_error:.1e}"
        ),
        table,
    })
}

// Criterion 4.

fn approximation_bound() -> HarnessResult<Check> {
    let mut table = Table::new(&["instance", "outcome", "actual", "bound", "operator_norm"]);
    let mut passing = 0usize;
    let mut bound_failures = 0usize;
    let mut violated = 0usize;
    let mut seed = 0u64;
    while passing < 20 && seed < 1_000 {
        let inst = instance(&random_ergodic(5), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(4_000 + seed);
        let phi = gaussian_matrix(5, 2, &mut rng);
        let d = flat_dirichlet(5, &mut rng);
        let label = inst.label.to_string();
        seed += 1;
        let outcome = bound_instance(&inst.chain, 0.9, phi, &d, &inst.d_pi)?;
        match outcome {
            BoundOutcome::Holds { actual, bound, norm } => {
                passing += 1;
                table.push(row!(label, "holds", actual, bound, norm));
            }
            BoundOutcome::Violated { actual, bound } => {
                bound_failures += 1;
                table.push(row!(label, "bound_violated", actual, bound, f64::NAN));
            }
            BoundOutcome::Precondition { norm } => {
                violated += 1;
                table.push(row!(label, "precondition_violated", f64::NAN, f64::NAN, norm));
            }
            BoundOutcome::Skipped => {}
        }
    }

    // Adversarial search: one feature, near-degenerate weighting, gamma near 1.
    let mut adversarial = None;
    let gamma = 0.99;
    let shape = Gamma::<f64>::new(0.2, 1.0).expect("valid gamma shape");
    for attempt in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(40_000 + attempt);
        let mut rows = DMatrix::zeros(3, 3);
        for i in 0..3 {
            let row = flat_dirichlet(3, &mut rng);
            for j in 0..3 {
                rows[(i, j)] = 0.05 / 3.0 + 0.95 * row[j];
            }
        }
        let chain = InducedChain::new(rows, DVector::from_fn(3, |_, _| rng.random()))?;
        let d_pi = stationary_distribution(&chain)?;
        let phi = gaussian_matrix(3, 1, &mut rng);
        let raw: Vec<f64> = (0..3).map(|_| f64::max(shape.sample(&mut rng), 1e-6)).collect();
        let total: f64 = raw.iter().sum();
        let d: Vec<f64> = raw.iter().map(|x| x / total).collect();
        if let BoundOutcome::Precondition { norm } = bound_instance(&chain, gamma, phi, &d, &d_pi)? {
            adversarial = Some((attempt, norm));
            table.push(row!(
                format!("adversarial3/{attempt}"),
                "precondition_violated",
                f64::NAN,
                f64::NAN,
                norm
            ));
            break;
        }
    }
    let violated_total = violated + usize::from(adversarial.is_some());
    Ok(Check {
        passed: passing == 20 && bound_failures == 0 && violated_total >= 1,
        detail: format!(
            "{passing} instances within the bound, {bound_failures} violations; \
             precondition violated on {violated} random and {} adversarial instances{}",
            usize::from(adversarial.is_some()),
            adversarial.map_or(String::new(), |(a, n)| format!(
                " (attempt {a}, norm {n:.3} >= 1/gamma)"
            ))
        ),
        table,
    })
}

enum BoundOutcome {
    Holds { actual: f64, bound: f64, norm: f64 },
    Violated { actual: f64, bound: f64 },
    Precondition { norm: f64 },
    Skipped,
}

fn bound_instance(
    chain: &InducedChain,
    gamma: f64,
    phi: DMatrix<f64>,
    d: &[f64],
    d_pi: &StateDistribution,
) -> HarnessResult<BoundOutcome> {
    let (features, weights) = match (FeatureMap::new(phi), StateDistribution::from_slice(d)) {
        (Ok(f), Ok(w)) => (f, w),
        _ => return Ok(BoundOutcome::Skipped),
    };
    let proj = match WeightedProjector::new(features, weights) {
        Ok(p) => p,
        Err(_) => return Ok(BoundOutcome::Skipped),
    };
    let v_pi = value_function(chain, gamma)?;
    Ok(
        match approximation_error_bound(chain, gamma, &proj, d_pi, &v_pi) {
            Ok(r) => BoundOutcome::Holds {
                actual: r.actual,
                bound: r.bound,
                norm: r.operator_norm,
            },
            Err(CoreError::PreconditionViolated { norm, .. }) => BoundOutcome::Precondition { norm },
            Err(CoreError::BoundViolated { measured, bound }) => BoundOutcome::Violated {
                actual: measured,
                bound,
            },
            Err(e) => return Err(e.into()),
        },
    )
}

// Criterion 5.

fn normalization_unbiased() -> HarnessResult<Check> {
    const BATCHES: usize = 1_000_000;
    const M: usize = 8;
    let mut table = Table::new(&["seed", "coordinate", "analytic", "mean", "std_error", "z"]);
    let c = RatioVector::from_slice(&[0.5, 1.5, 2.0, 0.8])?;
    let mut worst_z: f64 = 0.0;
    for seed in [5u64, 6] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_mu = StateDistribution::from_slice(&flat_dirichlet(4, &mut rng))?;
        let analytic = d_mu.probs() * (d_mu.probs().dot(c.values()) - 1.0);
        let index = WeightedIndex::new(d_mu.probs().iter().copied())
            .map_err(|e| HarnessError::StudyFailed(e.to_string()))?;
        let mut mean = DVector::zeros(4);
        let mut m2 = DVector::zeros(4);
        let mut states = [0usize; M];
        for k in 0..BATCHES {
            for s in states.iter_mut() {
                *s = index.sample(&mut rng);
            }
            let g = normalization_grad_estimate(&c, &states)?;
            let delta = &g - &mean;
            mean += &delta / (k + 1) as f64;
            m2 += delta.component_mul(&(&g - &mean));
        }
        for i in 0..4 {
            let se = (m2[i] / (BATCHES - 1) as f64 / BATCHES as f64).sqrt();
            let z = (mean[i] - analytic[i]).abs() / se;
            worst_z = worst_z.max(z);
            table.push(row!(seed, i, analytic[i], mean[i], se, z));
        }
    }
    Ok(Check {
        passed: worst_z <= 3.0,
        detail: format!(
            "2 seeds x 4 coordinates over {BATCHES} batches of {M}, worst |mean - grad| = {worst_z:.2} standard errors (<= 3)"
        ),
        table,
    })
}

// Criterion 6.

/// Reversible chain with a symmetric COP operator: `P` is a row-normalized
/// symmetric `W` and `d_mu` is proportional to `sqrt(d_pi)`.
fn reversible_instance<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
) -> HarnessResult<(InducedChain, StateDistribution, DVector<f64>)> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let x: f64 = rng.random_range(0.1..1.0);
            w[(i, j)] = x;
            w[(j, i)] = x;
        }
    }
    let r = DVector::from_fn(n, |i, _| w.row(i).sum());
    let p = DMatrix::from_fn(n, n, |i, j| w[(i, j)] / r[i]);
    let sqrt_r = r.map(f64::sqrt);
    let d_mu = StateDistribution::new(&sqrt_r / sqrt_r.sum())?;
    let ratio = r.component_div(&sqrt_r);
    Ok((InducedChain::from_transition(p)?, d_mu, ratio))
}

fn projected_collapse() -> HarnessResult<Check> {
    let mut table = Table::new(&[
        "instance",
        "excluded_residual",
        "symmetry_error",
        "outcome",
        "steps",
        "final_max_entry",
    ]);
    let mut all_ok = true;
    for k in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6_000 + k);
        let (chain, d_mu, ratio) = reversible_instance(6, &mut rng)?;
        let y = DMatrix::from_fn(6, 6, |i, j| {
            chain.transition()[(j, i)] * d_mu.get(j) / d_mu.get(i)
        });
        let symmetry = (&y - y.transpose()).amax();
        let proj = WeightedProjector::euclidean(FeatureMap::new(gaussian_matrix(6, 2, &mut rng))?)?;
        let excluded = (&ratio - proj.apply(&ratio)).norm() / ratio.norm();
        let run = projected_cop_iterate(&chain, &d_mu, &proj, &RatioVector::ones(6), 1_000_000)?;
        let outcome = match run.outcome {
            ProjectedOutcome::ConvergedToZero => "converged_to_zero",
            ProjectedOutcome::Diverged => "diverged",
            ProjectedOutcome::Other => "other",
        };
        all_ok &= run.outcome != ProjectedOutcome::Other && excluded > 1e-6 && symmetry < 1e-12;
        table.push(row!(
            format!("reversible6/{k}"),
            excluded,
            symmetry,
            outcome,
            run.steps,
            *run.max_entries.last().unwrap_or(&f64::NAN)
        ));
    }
    Ok(Check {
        passed: all_ok,
        detail: format!(
            "5 reversible instances, every projected iteration {} (ratio outside span, Y symmetric)",
            if all_ok { "collapsed to 0 or diverged" } else { "did NOT all collapse or diverge" }
        ),
        table,
    })
}

// Criterion 7.

/// Robbins-Monro schedule used for the stochastic COP-TD criterion.
pub const COP_TD_SCHEDULE: StepSchedule = StepSchedule::RobbinsMonro {
    alpha0: 0.5,
    t0: 1e3,
};

fn stochastic_cop_td() -> HarnessResult<Check> {
    let mut table = Table::new(&["arm", "instance", "seed", "max_error", "status"]);
    let envs = [EnvSpec::Chain { n_states: 5 }, random_ergodic(5)];
    let mut verdicts = Vec::new();
    let mut passed = true;
    for (arm, gamma_hat, renormalize_every) in
        [("discounted", 0.9, None), ("undiscounted", 1.0, Some(1_000))]
    {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        for spec in &envs {
            let (mdp, behavior, target) = continuing(spec, 0)?;
            let sampler = TransitionSampler::new(mdp.clone(), behavior, target.clone())?;
            let chain = induce_chain(&mdp, &target)?;
            let d_mu = sampler.d_mu();
            let reference = if gamma_hat < 1.0 {
                ratio_of(&discounted_stationary(&chain, d_mu, gamma_hat)?, d_mu)?
            } else {
                ratio_of(&stationary_distribution(&chain)?, d_mu)?
            };
            let config = TabularCopTdConfig {
                gamma_hat,
                steps: 1_000_000,
                schedule: COP_TD_SCHEDULE,
                renormalize_every,
                record_every: 1_000_000,
            };
            for seed in 0..3u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let run = run_tabular_cop_td(&sampler, &reference, &config, &mut rng)?;
                let err = run.curve.last().map_or(f64::NAN, |p| p.max_error);
                worst = worst.max(err);
                passed &= err < 0.05 && run.status.as_str() == "ok";
                table.push(row!(arm, spec.name(), seed, err, run.status.as_str()));
            }
        }
        let secs = start.elapsed().as_secs_f64();
        passed &= secs < 120.0;
        verdicts.push(format!("{arm} max error {worst:.4} in {secs:.1} s"));
    }
    Ok(Check {
        passed,
        detail: format!("{} (< 0.05, < 120 s per arm)", verdicts.join(", ")),
        table,
    })
}

// Criterion 8.

fn divergence() -> HarnessResult<Check> {
    let (mdp, behavior, target) = continuing(&EnvSpec::DivergenceExample, 0)?;
    let sampler = TransitionSampler::new(mdp.clone(), behavior, target.clone())?;
    let chain = induce_chain(&mdp, &target)?;
    let d_pi = stationary_distribution(&chain)?;
    let ratio = ratio_of(&d_pi, sampler.d_mu())?;
    let gamma = mdp.discount();
    let phi = divergence_features();

    // Projected fixed point: Phi^T D_pi (I - gamma P) Phi theta = Phi^T D_pi r.
    let m = phi.matrix();
    let dpi = DMatrix::from_diagonal(d_pi.probs());
    let a = m.transpose() * &dpi * (DMatrix::identity(2, 2) - chain.transition() * gamma) * m;
    let b = m.transpose() * &dpi * chain.expected_reward();
    let theta_star = a
        .lu()
        .solve(&b)
        .ok_or_else(|| HarnessError::StudyFailed("singular projected system".into()))?;

    let mut table = Table::new(&["arm", "step", "theta"]);
    let mut run = |arm: &str, corrected: bool, seed: u64| -> f64 {
        let mut model = LinearValueModel::zeros(phi.clone());
        model.weights[0] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 1..=10_000u64 {
            let sample = sampler.sample(&mut rng);
            let c = if corrected { ratio.get(sample.state) } else { 1.0 };
            reweighted_td_step(&mut model, &sample, c, gamma, 0.01);
            if t % 1_000 == 0 {
                table.push(row!(arm, t, model.weights[0]));
            }
        }
        model.weights[0]
    };
    let uncorrected = run("uncorrected", false, 8);
    let corrected = run("corrected", true, 9);
    let growth = uncorrected.abs();
    let error = (corrected - theta_star[0]).abs();
    Ok(Check {
        passed: growth > 10.0 && error < 1e-3,
        detail: format!(
            "uncorrected |theta| grew {growth:.3e}x (> 10); corrected |theta - theta*| = {error:.3e} (< 1e-3)"
        ),
        table,
    })
}

// Criterion 9.

fn replay_correctness() -> HarnessResult<Check> {
    let mut table = Table::new(&["check", "index", "expected", "observed", "tolerance"]);

    const DRAWS: usize = 100_000;
    let priorities = [0.5, 1.0, 2.0, 0.0, 3.0, 1.5, 0.25, 4.0];
    let mut tree = SumTree::new(priorities.len())?;
    for (slot, &p) in priorities.iter().enumerate() {
        tree.set(slot, p)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = [0usize; 8];
    for _ in 0..DRAWS {
        let u: f64 = rng.random();
        counts[tree.find(u * tree.total())] += 1;
    }
    let total: f64 = priorities.iter().sum();
    let mut frequency_ok = true;
    for (slot, &p) in priorities.iter().enumerate() {
        let q = p / total;
        let expected = DRAWS as f64 * q;
        let sigma = (DRAWS as f64 * q * (1.0 - q)).sqrt();
        let observed = counts[slot] as f64;
        frequency_ok &= (observed - expected).abs() <= 3.0 * sigma;
        table.push(row!("frequency", slot, expected, observed, 3.0 * sigma));
    }

    // Enumeration: every (s, a, s') is one buffer slot whose priority is its
    // behavior probability mass times the exact ratio c(s).
    let (mdp, behavior, target) = continuing(&random_ergodic(4), 9)?;
    let gamma = mdp.discount();
    let chain = induce_chain(&mdp, &target)?;
    let d_mu = stationary_distribution(&induce_chain(&mdp, &behavior)?)?;
    let d_pi = stationary_distribution(&chain)?;
    let c = ratio_of(&d_pi, &d_mu)?;
    let phi = gaussian_matrix(4, 2, &mut rng);
    let theta = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let v = &phi * &theta;

    let n = mdp.n_states();
    let a_count = mdp.n_actions();
    let mut buffer = ReplayBuffer::new(n * a_count * n)?;
    for s in 0..n {
        for a in 0..a_count {
            for next in 0..n {
                let p = mdp.prob(s, a, next);
                if p == 0.0 {
                    continue;
                }
                let sample = TransitionSample::new(
                    s,
                    a,
                    next,
                    mdp.reward(s, a),
                    behavior.prob(s, a),
                    target.prob(s, a),
                    false,
                )?;
                let slot = buffer.push(sample);
                let mass = d_mu.get(s) * behavior.prob(s, a) * p;
                buffer.set_priority(slot, mass * c.get(s))?;
            }
        }
    }
    let probs = buffer.sampling_probabilities();
    let mut prioritized = DVector::zeros(2);
    for (slot, &q) in probs.iter().enumerate() {
        let t = buffer.get(slot).expect("slot is filled");
        let delta = t.reward + gamma * v[t.next_state] - v[t.state];
        prioritized += phi.row(t.state).transpose() * (q * t.importance_ratio() * delta);
    }
    let td = chain.expected_reward() + chain.transition() * &v * gamma - &v;
    let on_policy = phi.transpose() * d_pi.probs().component_mul(&td);
    let diff = (&prioritized - &on_policy).amax();
    for i in 0..2 {
        table.push(row!("reweighting", i, on_policy[i], prioritized[i], 1e-12));
    }
    Ok(Check {
        passed: frequency_ok && diff <= 1e-12,
        detail: format!(
            "sum-tree frequencies within 3 sigma over {DRAWS} draws: {frequency_ok}; \
             prioritized vs d_pi-weighted expected update differ by {diff:.3e} (<= 1e-12)"
        ),
        table,
    })
}

// Criterion 10.

/// Settings of the gridworld control comparison.
pub fn gridworld_control_config(priority: PriorityMode, learn_ratio: bool) -> ControlConfig {
    ControlConfig {
        trainer: TrainerConfig {
            gamma_hat: 0.99,
            eta: 0.02,
            priority,
            learn_ratio,
            ..TrainerConfig::default()
        },
        steps: 200_000,
        train_every: 1,
        learning_starts: 0,
        eval_every: 5_000,
    }
}

fn gridworld_control() -> HarnessResult<Check> {
    let mut table = Table::new(&["seed", "corrected_mean_return", "uniform_mean_return", "corrected_wins"]);
    let (emdp, behavior, _) = episodic_env(&EnvSpec::from_name("gridworld_sparse")?)?;
    let n = emdp.n_states();
    let mut wins = 0;
    let mut summary = Vec::new();
    for seed in 0..3u64 {
        let mean = |priority, learn_ratio| -> HarnessResult<f64> {
            let run = run_control(
                &emdp,
                &behavior,
                FeatureMap::identity(n),
                FeatureMap::identity(n),
                &gridworld_control_config(priority, learn_ratio),
                seed,
            )?;
            Ok(run.mean_eval_return())
        };
        let corrected = mean(PriorityMode::Ratio, true)?;
        let uniform = mean(PriorityMode::Uniform, false)?;
        let win = corrected > uniform;
        wins += usize::from(win);
        summary.push(format!("{corrected:.3} vs {uniform:.3}"));
        table.push(row!(seed, corrected, uniform, win));
    }
    Ok(Check {
        passed: wins >= 2,
        detail: format!(
            "ratio-prioritized beats uniform on {wins}/3 seeds (need 2); mean eval return {}",
            summary.join(", ")
        ),
        table,
    })
}

// Criterion 11.

fn episodic() -> HarnessResult<Check> {
    let mut table = Table::new(&[
        "instance",
        "residual_mu",
        "residual_pi",
        "fixed_point_error",
        "start_pinned",
    ]);
    let specs = [
        EnvSpec::from_name("episodic_chain4")?,
        EnvSpec::from_name("episodic_chain6")?,
        EnvSpec::from_name("gridworld_sparse")?,
    ];
    let mut worst_residual: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    let mut pinned = true;
    for spec in &specs {
        let (emdp, behavior, target) = episodic_env(spec)?;
        let s0 = emdp.start_state();
        let residual = |policy: &Policy| -> HarnessResult<(DVector<f64>, f64)> {
            let d = episodic_visitation(&emdp, policy)?;
            let p = emdp.induce(policy)?.transition;
            let mut rhs = p.tr_mul(&d);
            rhs[s0] += 1.0;
            let r = (&d - rhs).amax();
            Ok((d, r))
        };
        let (visits_mu, r_mu) = residual(&behavior)?;
        let (visits_pi, r_pi) = residual(&target)?;
        worst_residual = worst_residual.max(r_mu).max(r_pi);

        let weights = StateDistribution::new(&visits_mu / visits_mu.sum())?;
        let op = EpisodicCopOperator::new(&emdp, &target, &visits_mu, 1.0)?;
        let traj = iterate_operator(&op, &RatioVector::ones(emdp.n_states()), 5_000, 1, &weights)?;
        let spec_pinned = traj.iterates.iter().all(|(_, c)| c[s0] == 1.0);
        pinned &= spec_pinned;
        let oracle = visits_pi.component_div(&visits_mu);
        let err = max_abs_diff(traj.last(), &oracle);
        worst_fixed = worst_fixed.max(err);
        table.push(row!(spec.name(), r_mu, r_pi, err, spec_pinned));
    }
    Ok(Check {
        passed: worst_residual < 1e-10 && worst_fixed < 1e-9 && pinned,
        detail: format!(
            "visitation residual {worst_residual:.3e} (< 1e-10), fixed point error {worst_fixed:.3e} (< 1e-9), c(s0) = 1 throughout: {pinned}"
        ),
        table,
    })
}
