use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::{check_len, validate_row};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tolerances;

/// State-to-state chain `P_pi` with expected rewards `r_pi`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    transition: DMatrix<f64>,
    expected_reward: DVector<f64>,
}

impl InducedChain {
    pub fn new(transition: DMatrix<f64>, expected_reward: DVector<f64>) -> Result<Self> {
        check_len("chain columns", transition.nrows(), transition.ncols())?;
        check_len("expected reward", transition.nrows(), expected_reward.len())?;
        for s in 0..transition.nrows() {
            let row: Vec<f64> = transition.row(s).iter().copied().collect();
            validate_row(&row, false).map_err(|detail| Error::InvalidProbability {
                what: "chain",
                detail: format!("row {s}: {detail}"),
            })?;
        }
        Ok(Self {
            transition,
            expected_reward,
        })
    }

    /// A reward-free chain.
    pub fn from_transition(transition: DMatrix<f64>) -> Result<Self> {
        let n = transition.nrows();
        Self::new(transition, DVector::zeros(n))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            check_len("chain row", n, row.len())?;
        }
        Self::from_transition(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn expected_reward(&self) -> &DVector<f64> {
        &self.expected_reward
    }
}

/// A probability distribution over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(DVector<f64>);

impl StateDistribution {
    /// Validates `sum d = 1` (within 1e-10) and non-negativity. Entries in
    /// `[-1e-12, 0)` are treated as round-off and set to zero.
    pub fn new(mut probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbability {
                what: "distribution",
                detail: "empty".into(),
            });
        }
        for (s, p) in probs.iter_mut().enumerate() {
            if !p.is_finite() || *p < -tolerances::CONSTRUCTION {
                return Err(Error::InvalidProbability {
                    what: "distribution",
                    detail: format!("d({s}) = {p}"),
                });
            }
            if *p < 0.0 {
                *p = 0.0;
            }
        }
        let sum = probs.sum();
        if (sum - 1.0).abs() > tolerances::SOLVER_RESIDUAL {
            return Err(Error::InvalidProbability {
                what: "distribution",
                detail: format!("sums to {sum}"),
            });
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    pub fn total_variation(&self, other: &StateDistribution) -> f64 {
        0.5 * (&self.0 - &other.0).abs().sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|p| *p > 0.0)
    }
}

/// A per-state ratio estimate `c`, typically approximating `d_pi / d_mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVector(DVector<f64>);

impl RatioVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if let Some((s, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidValue {
                what: "ratio",
                detail: format!("c({s}) = {v}"),
            });
        }
        Ok(Self(values))
    }

    /// A ratio vector that must satisfy `sum_s d_mu(s) c(s) = 1`.
    pub fn normalized(values: DVector<f64>, d_mu: &StateDistribution) -> Result<Self> {
        let c = Self::new(values)?;
        check_len("ratio", d_mu.len(), c.len())?;
        let mass = c.mass(d_mu);
        if (mass - 1.0).abs() > tolerances::NORMALIZED_MASS {
            return Err(Error::InvalidValue {
                what: "normalized ratio",
                detail: format!("d_mu-weighted mass is {mass}"),
            });
        }
        Ok(c)
    }

    /// The all-ones vector `e`.
    pub fn ones(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }

    pub fn into_values(self) -> DVector<f64> {
        self.0
    }

    pub fn get(&self, s: usize) -> f64 {
        self.0[s]
    }

    /// `sum_s d(s) c(s)`.
    pub fn mass(&self, d: &StateDistribution) -> f64 {
        self.0.dot(d.probs())
    }

    pub fn is_normalized(&self, d_mu: &StateDistribution) -> bool {
        (self.mass(d_mu) - 1.0).abs() <= tolerances::NORMALIZED_MASS
    }
}

/// Strong connectivity plus aperiodicity of the nonzero pattern.
pub fn check_ergodic(chain: &InducedChain) -> bool {
    let p = chain.transition();
    let n = p.nrows();
    let succ: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect())
        .collect();

    let levels = bfs_levels(n, |u| succ[u].clone());
    if levels.iter().any(Option::is_none) {
        return false;
    }
    let reverse = bfs_levels(n, |u| (0..n).filter(|&v| p[(v, u)] > 0.0).collect());
    if reverse.iter().any(Option::is_none) {
        return false;
    }

    // Period = gcd over edges (u, v) of level(u) + 1 - level(v).
    let mut period = 0_i64;
    for (u, next) in succ.iter().enumerate() {
        let lu = levels[u].unwrap() as i64;
        for &v in next {
            let lv = levels[v].unwrap() as i64;
            period = gcd(period, (lu + 1 - lv).abs());
        }
    }
    period == 1
}

fn bfs_levels<F: Fn(usize) -> Vec<usize>>(n: usize, neighbours: F) -> Vec<Option<usize>> {
    let mut level = vec![None; n];
    let mut queue = VecDeque::new();
    level[0] = Some(0);
    queue.push_back(0);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for v in neighbours(u) {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Solves `d = d P` with `sum d = 1`.
///
/// Uses a direct solve with the normalization row substituted for the last
/// balance equation; chains with more than
/// [`tolerances::DIRECT_SOLVE_MAX_STATES`] states fall back to power
/// iteration.
pub fn stationary_distribution(chain: &InducedChain) -> Result<StateDistribution> {
    if !check_ergodic(chain) {
        return Err(Error::NonErgodic);
    }
    let p = chain.transition();
    let n = p.nrows();
    let d = if n <= tolerances::DIRECT_SOLVE_MAX_STATES {
        let mut a = p.transpose() - DMatrix::identity(n, n);
        a.row_mut(n - 1).fill(1.0);
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        linalg::solve(a, &b)?
    } else {
        power_iteration(p)?
    };
    finish_distribution(d, |d| linalg::max_abs(&(p.tr_mul(d) - d)))
}

fn power_iteration(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..tolerances::POWER_ITERATION_MAX_STEPS {
        let next = p.tr_mul(&d);
        let delta = linalg::max_abs(&(&next - &d));
        d = next;
        if delta < tolerances::SOLVER_RESIDUAL * 1e-2 {
            return Ok(d);
        }
    }
    Err(Error::SolverFailure {
        detail: "power iteration did not converge".into(),
    })
}

fn finish_distribution<F>(mut d: DVector<f64>, residual: F) -> Result<StateDistribution>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let sum = d.sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(Error::SolverFailure {
            detail: format!("distribution mass {sum}"),
        });
    }
    d /= sum;
    let r = residual(&d);
    if r > tolerances::SOLVER_RESIDUAL {
        return Err(Error::SolverFailure {
            detail: format!("stationary residual {r:e}"),
        });
    }
    StateDistribution::new(d).map_err(|e| Error::SolverFailure {
        detail: e.to_string(),
    })
}

/// `P_hat = gamma_hat P_pi + (1 - gamma_hat) e d_mu^T`: follow the chain with
/// probability `gamma_hat`, otherwise reset to `d_mu`.
pub fn discounted_reset_chain(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    gamma_hat: f64,
) -> Result<InducedChain> {
    if !(0.0..=1.0).contains(&gamma_hat) {
        return Err(Error::InvalidDiscount(gamma_hat));
    }
    let n = chain.n_states();
    check_len("d_mu", n, d_mu.len())?;
    let reset = DMatrix::from_fn(n, n, |_, j| d_mu.get(j));
    let p = chain.transition() * gamma_hat + reset * (1.0 - gamma_hat);
    InducedChain::new(p, chain.expected_reward().clone())
}

/// Stationary distribution of the discounted reset chain in closed form,
/// `(1 - gamma_hat) (I - gamma_hat P_pi^T)^{-1} d_mu`.
pub fn discounted_stationary(
    chain: &InducedChain,
    d_mu: &StateDistribution,
    gamma_hat: f64,
) -> Result<StateDistribution> {
    if !(0.0..1.0).contains(&gamma_hat) {
        return Err(Error::InvalidDiscount(gamma_hat));
    }
    let n = chain.n_states();
    check_len("d_mu", n, d_mu.len())?;
    let p = chain.transition();
    let a = DMatrix::identity(n, n) - p.transpose() * gamma_hat;
    let d = linalg::solve(a, d_mu.probs())? * (1.0 - gamma_hat);
    let sum = d.sum();
    // The solve loses accuracy in proportion to the condition number of
    // `I - gamma_hat P^T`, which grows like `1 / (1 - gamma_hat)`.
    if (sum - 1.0).abs() > tolerances::SOLVER_RESIDUAL / (1.0 - gamma_hat) {
        return Err(Error::SolverFailure {
            detail: format!("discounted stationary distribution sums to {sum}"),
        });
    }
    finish_distribution(d, |d| {
        let fixed = p.tr_mul(d) * gamma_hat + d_mu.probs() * (1.0 - gamma_hat);
        linalg::max_abs(&(fixed - d))
    })
}

/// Elementwise `numerator / denominator`.
pub fn ratio_of(
    numerator: &StateDistribution,
    denominator: &StateDistribution,
) -> Result<RatioVector> {
    check_len("ratio denominator", numerator.len(), denominator.len())?;
    if let Some(state) = denominator.probs().iter().position(|d| *d <= 0.0) {
        return Err(Error::ZeroDenominator { state });
    }
    RatioVector::new(numerator.probs().component_div(denominator.probs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(rows: &[&[f64]]) -> InducedChain {
        InducedChain::from_rows(rows).unwrap()
    }

    #[test]
    fn ergodicity_examples() {
        assert!(check_ergodic(&chain(&[&[0.5, 0.5], &[0.5, 0.5]])));
        assert!(!check_ergodic(&chain(&[&[0.0, 1.0], &[1.0, 0.0]])));
        assert!(!check_ergodic(&chain(&[&[1.0, 0.0], &[0.5, 0.5]])));
        assert!(check_ergodic(&chain(&[&[1.0]])));
        // 3-cycle with a chord giving a 2-cycle: gcd(3, 2) = 1.
        assert!(check_ergodic(&chain(&[
            &[0.0, 1.0, 0.0],
            &[0.5, 0.0, 0.5],
            &[1.0, 0.0, 0.0]
        ])));
        // Pure 3-cycle.
        assert!(!check_ergodic(&chain(&[
            &[0.0, 1.0, 0.0],
            &[0.0, 0.0, 1.0],
            &[1.0, 0.0, 0.0]
        ])));
    }

    #[test]
    fn stationary_examples() {
        let d = stationary_distribution(&chain(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert!((d.get(0) - 0.5).abs() < 1e-15 && (d.get(1) - 0.5).abs() < 1e-15);

        // Oracle: for a 2-state chain, d = (b, a) / (a + b) with a = P01, b = P10.
        let d = stationary_distribution(&chain(&[&[0.9, 0.1], &[0.2, 0.8]])).unwrap();
        assert!((d.get(0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((d.get(1) - 1.0 / 3.0).abs() < 1e-12);

        let err = stationary_distribution(&chain(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap_err();
        assert_eq!(err, Error::NonErgodic);
    }

    #[test]
    fn power_iteration_matches_direct_solve() {
        let c = chain(&[&[0.9, 0.1, 0.0], &[0.1, 0.5, 0.4], &[0.3, 0.0, 0.7]]);
        let direct = stationary_distribution(&c).unwrap();
        let iter = power_iteration(c.transition()).unwrap();
        assert!(linalg::max_abs(&(iter - direct.probs())) < 1e-10);
    }

    #[test]
    fn discounted_reset_examples() {
        let c = chain(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let d_mu = StateDistribution::from_slice(&[0.3, 0.7]).unwrap();
        assert_eq!(
            discounted_reset_chain(&c, &d_mu, 1.0).unwrap().transition(),
            c.transition()
        );
        let zero = discounted_reset_chain(&c, &d_mu, 0.0).unwrap();
        for i in 0..2 {
            assert_eq!(zero.transition()[(i, 0)], 0.3);
            assert_eq!(zero.transition()[(i, 1)], 0.7);
        }
        let id = chain(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let half = discounted_reset_chain(&id, &StateDistribution::uniform(2), 0.5).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((half.transition() - expected).amax() < 1e-15);
        assert_eq!(
            discounted_reset_chain(&c, &d_mu, 1.5).unwrap_err(),
            Error::InvalidDiscount(1.5)
        );
    }

    #[test]
    fn discounted_stationary_edges() {
        let c = chain(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let d_mu = StateDistribution::from_slice(&[0.3, 0.7]).unwrap();
        let d0 = discounted_stationary(&c, &d_mu, 0.0).unwrap();
        assert!((d0.probs() - d_mu.probs()).amax() < 1e-15);
        assert_eq!(
            discounted_stationary(&c, &d_mu, 1.0).unwrap_err(),
            Error::InvalidDiscount(1.0)
        );
        let near_one = discounted_stationary(&c, &d_mu, 0.9999).unwrap();
        let d_pi = stationary_distribution(&c).unwrap();
        assert!(near_one.total_variation(&d_pi) < 1e-2);
    }

    #[test]
    fn ratio_examples() {
        let a = StateDistribution::from_slice(&[2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let b = StateDistribution::uniform(2);
        let c = ratio_of(&a, &b).unwrap();
        assert!((c.get(0) - 4.0 / 3.0).abs() < 1e-15);
        assert!((c.get(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!(c.is_normalized(&b));
        assert!(ratio_of(&b, &b).unwrap().values().iter().all(|v| *v == 1.0));

        let zero = StateDistribution::from_slice(&[0.5, 0.0, 0.5]).unwrap();
        let err = ratio_of(&StateDistribution::uniform(3), &zero).unwrap_err();
        assert_eq!(err, Error::ZeroDenominator { state: 1 });
    }

    #[test]
    fn normalized_ratio_is_checked() {
        let d = StateDistribution::uniform(2);
        assert!(RatioVector::normalized(DVector::from_vec(vec![1.5, 0.5]), &d).is_ok());
        assert!(RatioVector::normalized(DVector::from_vec(vec![1.5, 1.5]), &d).is_err());
        assert!(RatioVector::from_slice(&[f64::INFINITY]).is_err());
    }
}
