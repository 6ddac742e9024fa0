//! Expectation-level operators on values and ratios.
//!
//! The COP operator `Y = D_mu^{-1} P_pi^T D_mu` describes the expected
//! behavior of ratio learning; its fixed points are the multiples of
//! `d_pi / d_mu`. The discounted variant `Y_g = g Y + (1 - g) e` has the
//! unique fixed point `d_hat_pi / d_mu`.

mod bounds;
mod projection;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{check_len, EpisodicMdp, InducedChain, Policy, RatioVector, StateDistribution};
use crate::tolerances;

pub use bounds::{
    approximation_error_bound, concentration, concentration_coefficient, contraction_check,
    ApproximationReport, ConcentrationReport, ContractionReport,
};
pub use projection::{weighted_project, FeatureMap, WeightedProjector};

/// `T_pi v = r_pi + gamma P_pi v`.
pub fn bellman_apply(chain: &InducedChain, gamma: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("value vector", chain.n_states(), v.len())?;
    check_discount(gamma)?;
    Ok(chain.expected_reward() + chain.transition() * v * gamma)
}

/// `V^pi = (I - gamma P_pi)^{-1} r_pi`.
pub fn value_function(chain: &InducedChain, gamma: f64) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidDiscount(gamma));
    }
    let n = chain.n_states();
    linalg::solve(
        DMatrix::identity(n, n) - chain.transition() * gamma,
        chain.expected_reward(),
    )
}

fn check_discount(g: f64) -> Result<()> {
    if (0.0..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(Error::InvalidDiscount(g))
    }
}

/// Anything that maps a ratio vector to a new ratio vector.
pub trait RatioOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> RatioOperator for F
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        self(c)
    }
}

/// `Y = D_mu^{-1} P_pi^T D_mu`, materialized once.
#[derive(Debug, Clone)]
pub struct CopOperator {
    matrix: DMatrix<f64>,
    d_mu: StateDistribution,
}

impl CopOperator {
    pub fn new(chain: &InducedChain, d_mu: &StateDistribution) -> Result<Self> {
        Ok(Self {
            matrix: cop_matrix(chain.transition(), d_mu.probs())?,
            d_mu: d_mu.clone(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn d_mu(&self) -> &StateDistribution {
        &self.d_mu
    }

    /// `Y_g c = g Y c + (1 - g) e`.
    pub fn discounted(self, gamma_hat: f64) -> Result<DiscountedCopOperator> {
        check_discount(gamma_hat)?;
        Ok(DiscountedCopOperator {
            cop: self,
            gamma_hat,
        })
    }

    /// Divides `Y c` by its `d_mu`-weighted mass.
    pub fn normalized(self) -> NormalizedCopOperator {
        NormalizedCopOperator { cop: self }
    }
}

impl RatioOperator for CopOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("ratio", self.matrix.nrows(), c.len())?;
        Ok(&self.matrix * c)
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedCopOperator {
    cop: CopOperator,
}

impl RatioOperator for NormalizedCopOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.cop.apply(c)?;
        let mass = y.dot(self.cop.d_mu.probs());
        if mass <= tolerances::DEGENERATE_MASS {
            return Err(Error::DegenerateMass(mass));
        }
        Ok(y / mass)
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedCopOperator {
    cop: CopOperator,
    gamma_hat: f64,
}

impl DiscountedCopOperator {
    pub fn gamma_hat(&self) -> f64 {
        self.gamma_hat
    }
}

impl RatioOperator for DiscountedCopOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.cop.apply(c)?;
        Ok(y * self.gamma_hat + DVector::from_element(c.len(), 1.0 - self.gamma_hat))
    }
}

/// Leaves its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOperator;

impl RatioOperator for IdentityOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(c.clone())
    }
}

/// `Pi Y` for an inner operator `Y`.
#[derive(Debug, Clone)]
pub struct ProjectedOperator<O> {
    pub projector: WeightedProjector,
    pub inner: O,
}

impl<O: RatioOperator> RatioOperator for ProjectedOperator<O> {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.projector.apply(&self.inner.apply(c)?))
    }
}

fn cop_matrix(p: &DMatrix<f64>, d_mu: &DVector<f64>) -> Result<DMatrix<f64>> {
    check_len("d_mu", p.nrows(), d_mu.len())?;
    if let Some(state) = d_mu.iter().position(|d| *d <= 0.0) {
        return Err(Error::ZeroDenominator { state });
    }
    let n = p.nrows();
    Ok(DMatrix::from_fn(n, n, |next, s| {
        d_mu[s] * p[(s, next)] / d_mu[next]
    }))
}

/// `Y c = D_mu^{-1} P_pi^T D_mu c`.
pub fn cop_apply(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    c: &RatioVector,
) -> Result<RatioVector> {
    RatioVector::new(CopOperator::new(chain, d_mu)?.apply(c.values())?)
}

/// `Y c / sum_s d_mu(s) (Y c)(s)`.
pub fn normalized_cop_apply(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    c: &RatioVector,
) -> Result<RatioVector> {
    RatioVector::new(
        CopOperator::new(chain, d_mu)?
            .normalized()
            .apply(c.values())?,
    )
}

/// `Y_g c = g Y c + (1 - g) e`.
pub fn discounted_cop_apply(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    c: &RatioVector,
    gamma_hat: f64,
) -> Result<RatioVector> {
    RatioVector::new(
        CopOperator::new(chain, d_mu)?
            .discounted(gamma_hat)?
            .apply(c.values())?,
    )
}

/// Episodic COP operator
/// `g (D_mu^{-1} P_pi^T D_mu c + d_0) + (1 - g) e`, with the start-state
/// entry pinned to one.
#[derive(Debug, Clone)]
pub struct EpisodicCopOperator {
    matrix: DMatrix<f64>,
    start_state: usize,
    gamma_hat: f64,
}

impl EpisodicCopOperator {
    /// `d_mu` is the unnormalized behavior visitation vector.
    pub fn new(
        emdp: &EpisodicMdp,
        policy: &Policy,
        d_mu: &DVector<f64>,
        gamma_hat: f64,
    ) -> Result<Self> {
        check_discount(gamma_hat)?;
        let chain = emdp.induce(policy)?;
        Ok(Self {
            matrix: cop_matrix(&chain.transition, d_mu)?,
            start_state: emdp.start_state(),
            gamma_hat,
        })
    }
}

impl RatioOperator for EpisodicCopOperator {
    fn apply(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("ratio", self.matrix.nrows(), c.len())?;
        let s0 = self.start_state;
        if (c[s0] - 1.0).abs() > tolerances::CONSTRUCTION {
            return Err(Error::InvalidValue {
                what: "episodic ratio",
                detail: format!("c(s_0) = {} must be pinned to 1", c[s0]),
            });
        }
        let mut y = &self.matrix * c;
        y[s0] += 1.0;
        let mut out = y * self.gamma_hat + DVector::from_element(c.len(), 1.0 - self.gamma_hat);
        out[s0] = 1.0;
        Ok(out)
    }
}

pub fn episodic_cop_apply(
    emdp: &EpisodicMdp,
    policy: &Policy,
    d_mu_unnormalized: &DVector<f64>,
    c: &RatioVector,
    gamma_hat: f64,
) -> Result<RatioVector> {
    RatioVector::new(
        EpisodicCopOperator::new(emdp, policy, d_mu_unnormalized, gamma_hat)?.apply(c.values())?,
    )
}

/// Iterates recorded by [`iterate_operator`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `(step, c^step)` for step 0, every `record_every` steps, and the last step.
    pub iterates: Vec<(usize, DVector<f64>)>,
    /// `residuals[k] = || c^{k+1} - c^k ||_{d_mu}`.
    pub residuals: Vec<f64>,
}

/// One CSV record of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub residual: f64,
    pub distance: f64,
    pub max_entry: f64,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        &self.iterates.last().expect("trajectory holds c^0").1
    }

    /// Rows for every recorded step after the first; `distance` is NaN when
    /// no fixed point is supplied.
    pub fn rows(
        &self,
        fixed_point: Option<&DVector<f64>>,
        weights: &StateDistribution,
    ) -> Vec<TrajectoryRow> {
        self.iterates
            .iter()
            .filter(|(step, _)| *step > 0)
            .map(|(step, c)| TrajectoryRow {
                step: *step,
                residual: self.residuals[step - 1],
                distance: fixed_point
                    .map_or(f64::NAN, |fp| linalg::weighted_norm(&(c - fp), weights.probs())),
                max_entry: linalg::max_abs(c),
            })
            .collect()
    }
}

/// Runs `c^{k+1} = op(c^k)` for `steps` steps.
pub fn iterate_operator<O: RatioOperator + ?Sized>(
    op: &O,
    c0: &RatioVector,
    steps: usize,
    record_every: usize,
    weights: &StateDistribution,
) -> Result<Trajectory> {
    if steps == 0 || record_every == 0 {
        return Err(Error::InvalidValue {
            what: "iteration",
            detail: "steps and record_every must be positive".into(),
        });
    }
    check_len("weights", c0.len(), weights.len())?;
    let mut c = c0.values().clone();
    let mut iterates = vec![(0, c.clone())];
    let mut residuals = Vec::with_capacity(steps);
    for k in 1..=steps {
        let next = op.apply(&c)?;
        let magnitude = linalg::max_abs(&next);
        if magnitude.is_nan() || magnitude > tolerances::DIVERGENCE_THRESHOLD {
            return Err(Error::Diverged { step: k, magnitude });
        }
        residuals.push(linalg::weighted_norm(&(&next - &c), weights.probs()));
        c = next;
        if k % record_every == 0 || k == steps {
            iterates.push((k, c.clone()));
        }
    }
    Ok(Trajectory {
        iterates,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectedOutcome {
    ConvergedToZero,
    Diverged,
    Other,
}

#[derive(Debug, Clone)]
pub struct ProjectedRun {
    pub outcome: ProjectedOutcome,
    pub steps: usize,
    /// `max |c^k|` for every step taken.
    pub max_entries: Vec<f64>,
    /// `|| c^{k+1} - c^k ||_{d_mu}` for every step taken.
    pub residuals: Vec<f64>,
    pub last: DVector<f64>,
}

/// Repeatedly applies `Pi Y` (no normalization) and classifies the outcome.
pub fn projected_cop_iterate(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    proj: &WeightedProjector,
    c0: &RatioVector,
    steps: usize,
) -> Result<ProjectedRun> {
    let op = ProjectedOperator {
        projector: proj.clone(),
        inner: CopOperator::new(chain, d_mu)?,
    };
    check_len("ratio", chain.n_states(), c0.len())?;
    let mut c = c0.values().clone();
    let mut max_entries = Vec::new();
    let mut residuals = Vec::new();
    let mut outcome = ProjectedOutcome::Other;
    for _ in 0..steps {
        let next = op.apply(&c)?;
        let magnitude = linalg::max_abs(&next);
        residuals.push(linalg::weighted_norm(&(&next - &c), d_mu.probs()));
        max_entries.push(magnitude);
        c = next;
        if magnitude.is_nan() || magnitude > tolerances::DIVERGENCE_THRESHOLD {
            outcome = ProjectedOutcome::Diverged;
            break;
        }
        if magnitude < tolerances::CONVERGENCE_THRESHOLD {
            outcome = ProjectedOutcome::ConvergedToZero;
            break;
        }
    }
    Ok(ProjectedRun {
        outcome,
        steps: max_entries.len(),
        max_entries,
        residuals,
        last: c,
    })
}
