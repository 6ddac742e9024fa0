use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{CopOperator, RatioOperator, WeightedProjector};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{check_len, discounted_stationary, ratio_of, InducedChain, StateDistribution};

/// Concentration coefficients of the `n`-step COP operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationReport {
    pub n: usize,
    /// `max_{s'} sum_s d_mu(s) / d_mu(s') P_pi^n(s'|s)`; bounds `||Y^n||^2_{d_mu}`.
    pub k_n: f64,
    /// `||d_mu / d_pi||_inf ||d_pi / d_mu||_inf`.
    pub k_bound: f64,
    /// `k_n^{-1/(2n)}`: below this `gamma_hat` the `n`-step discounted operator contracts.
    pub safe_gamma: f64,
}

/// `K_{pi,mu,n}` alone; needs only `d_mu`.
pub fn concentration_coefficient(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    n: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidValue {
            what: "concentration step count",
            detail: "n must be at least 1".into(),
        });
    }
    check_len("d_mu", chain.n_states(), d_mu.len())?;
    if let Some(state) = d_mu.probs().iter().position(|d| *d <= 0.0) {
        return Err(Error::ZeroDenominator { state });
    }
    let pn = linalg::matrix_power(chain.transition(), n);
    let d = d_mu.probs();
    let k_n = (0..chain.n_states())
        .map(|next| {
            (0..chain.n_states())
                .map(|s| d[s] / d[next] * pn[(s, next)])
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(k_n)
}

pub fn concentration(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    d_pi: &StateDistribution,
    n: usize,
) -> Result<ConcentrationReport> {
    let k_n = concentration_coefficient(chain, d_mu, n)?;
    let forward = ratio_of(d_pi, d_mu)?;
    let backward = ratio_of(d_mu, d_pi)?;
    let k_bound = forward.values().max() * backward.values().max();
    Ok(ConcentrationReport {
        n,
        k_n,
        k_bound,
        safe_gamma: k_n.powf(-1.0 / (2.0 * n as f64)),
    })
}

/// Worst observed contraction of `Y_g^n` around its fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub gamma_hat: f64,
    pub n: usize,
    pub k_n: f64,
    /// `max ||Y_g^n c - c*||_{d_mu} / ||c - c*||_{d_mu}` over the trials.
    pub max_ratio: f64,
    /// `g^n sqrt(K_{pi,mu,n})`.
    pub bound: f64,
}

/// Measures `||Y_g^n c - c*||_{d_mu} / ||c - c*||_{d_mu}` on `trials` random
/// `c` (entries `c*(s) + 3 z`, `z` standard normal) and compares the worst
/// case with `g^n sqrt(K_{pi,mu,n})`.
pub fn contraction_check<R: Rng + ?Sized>(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    gamma_hat: f64,
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<ContractionReport> {
    if trials == 0 {
        return Err(Error::InvalidValue {
            what: "contraction trials",
            detail: "need at least one trial".into(),
        });
    }
    let k_n = concentration_coefficient(chain, d_mu, n)?;
    let d_hat = discounted_stationary(chain, d_mu, gamma_hat)?;
    let fixed = ratio_of(&d_hat, d_mu)?.into_values();
    let op = CopOperator::new(chain, d_mu)?.discounted(gamma_hat)?;
    let w = d_mu.probs();

    let mut max_ratio: f64 = 0.0;
    for _ in 0..trials {
        let c = DVector::from_fn(fixed.len(), |i, _| {
            fixed[i] + 3.0 * rng.sample::<f64, _>(StandardNormal)
        });
        let before = linalg::weighted_norm(&(&c - &fixed), w);
        if before <= f64::MIN_POSITIVE {
            continue;
        }
        let mut y = c;
        for _ in 0..n {
            y = op.apply(&y)?;
        }
        max_ratio = max_ratio.max(linalg::weighted_norm(&(y - &fixed), w) / before);
    }

    let bound = gamma_hat.powi(n as i32) * k_n.sqrt();
    if max_ratio > bound + 1e-9 {
        return Err(Error::BoundViolated {
            measured: max_ratio,
            bound,
        });
    }
    Ok(ContractionReport {
        gamma_hat,
        n,
        k_n,
        max_ratio,
        bound,
    })
}

/// Error of the projected Bellman fixed point against its a-priori bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationReport {
    /// `||Pi_d V^pi - V^pi||_{d_pi} / (1 - gamma ||Pi_d P_pi||_{d_pi})`.
    pub bound: f64,
    /// `||V_hat - V^pi||_{d_pi}` for the projected fixed point `V_hat`.
    pub actual: f64,
    /// `||Pi_d P_pi||_{d_pi}`.
    pub operator_norm: f64,
    /// `||Pi_d V^pi - V^pi||_{d_pi}`.
    pub numerator: f64,
}

/// `||Pi_d P_pi||_{d_pi}` as the largest singular value of
/// `D^{1/2} Pi_d P_pi D^{-1/2}` with `D = diag(d_pi)`.
pub fn projected_transition_norm(
    chain: &InducedChain,
    proj: &WeightedProjector,
    d_pi: &StateDistribution,
) -> Result<f64> {
    check_len("d_pi", chain.n_states(), d_pi.len())?;
    if let Some(state) = d_pi.probs().iter().position(|d| *d <= 0.0) {
        return Err(Error::ZeroDenominator { state });
    }
    let sqrt_d = d_pi.probs().map(f64::sqrt);
    let m = proj.matrix() * chain.transition();
    let n = chain.n_states();
    let similar = DMatrix::from_fn(n, n, |i, j| sqrt_d[i] * m[(i, j)] / sqrt_d[j]);
    Ok(linalg::singular_values(&similar).max())
}

pub fn approximation_error_bound(
    chain: &InducedChain,
    gamma: f64,
    proj: &WeightedProjector,
    d_pi: &StateDistribution,
    v_pi: &DVector<f64>,
) -> Result<ApproximationReport> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidDiscount(gamma));
    }
    check_len("v_pi", chain.n_states(), v_pi.len())?;
    let operator_norm = projected_transition_norm(chain, proj, d_pi)?;
    let limit = 1.0 / gamma;
    if operator_norm >= limit {
        return Err(Error::PreconditionViolated {
            norm: operator_norm,
            limit,
        });
    }

    let n = chain.n_states();
    let pi = proj.matrix();
    let system = DMatrix::identity(n, n) - pi * chain.transition() * gamma;
    let v_hat = linalg::solve(system, &(pi * chain.expected_reward()))?;

    let w = d_pi.probs();
    let numerator = linalg::weighted_norm(&(pi * v_pi - v_pi), w);
    let actual = linalg::weighted_norm(&(v_hat - v_pi), w);
    let bound = numerator / (1.0 - gamma * operator_norm);
    if actual > bound * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::BoundViolated {
            measured: actual,
            bound,
        });
    }
    Ok(ApproximationReport {
        bound,
        actual,
        operator_norm,
        numerator,
    })
}
