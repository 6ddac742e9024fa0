use nalgebra::{DMatrix, DVector};

use super::{Mdp, Policy};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tolerances;

/// An MDP whose chains leak mass to termination, started from a single
/// state `s_0` that no transition re-enters.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicMdp {
    base: Mdp,
    start_state: usize,
}

/// Substochastic chain induced by a policy on an [`EpisodicMdp`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicChain {
    pub transition: DMatrix<f64>,
    pub expected_reward: DVector<f64>,
}

impl EpisodicMdp {
    /// Validates that `start_state` is never re-entered and that no policy,
    /// stochastic or not, can keep probability mass alive forever.
    ///
    /// The second condition is checked exactly: a policy has spectral radius
    /// one iff some non-empty state set is closed under one of its actions
    /// in every member state, which we find as a greatest fixed point.
    pub fn new(base: Mdp, start_state: usize) -> Result<Self> {
        let n = base.n_states();
        if start_state >= n {
            return Err(Error::DimensionMismatch {
                what: "start state",
                expected: n,
                found: start_state,
            });
        }
        for s in 0..n {
            for a in 0..base.n_actions() {
                let p = base.prob(s, a, start_state);
                if p != 0.0 {
                    return Err(Error::InvalidProbability {
                        what: "episodic mdp",
                        detail: format!("P(s_0={start_state}|s={s},a={a}) = {p} must be 0"),
                    });
                }
            }
        }
        if !closed_class(&base).is_empty() {
            return Err(Error::NonEpisodic { radius: 1.0 });
        }
        Ok(Self { base, start_state })
    }

    pub fn base(&self) -> &Mdp {
        &self.base
    }

    pub fn start_state(&self) -> usize {
        self.start_state
    }

    pub fn n_states(&self) -> usize {
        self.base.n_states()
    }

    /// `d_0`: all mass on the start state.
    pub fn start_distribution(&self) -> DVector<f64> {
        let mut d0 = DVector::zeros(self.n_states());
        d0[self.start_state] = 1.0;
        d0
    }

    pub fn induce(&self, policy: &Policy) -> Result<EpisodicChain> {
        let (transition, expected_reward) = self.base.induce_raw(policy)?;
        Ok(EpisodicChain {
            transition,
            expected_reward,
        })
    }

    /// `V = (I - discount P_pi)^{-1} r_pi`; `discount = 1` gives the expected
    /// undiscounted episode return.
    pub fn policy_value(&self, policy: &Policy, discount: f64) -> Result<DVector<f64>> {
        if !(0.0..=1.0).contains(&discount) {
            return Err(Error::InvalidDiscount(discount));
        }
        let chain = self.induce(policy)?;
        let n = self.n_states();
        let a = DMatrix::identity(n, n) - &chain.transition * discount;
        linalg::solve(a, &chain.expected_reward)
    }
}

fn closed_class(mdp: &Mdp) -> Vec<usize> {
    let n = mdp.n_states();
    let mut live = vec![true; n];
    loop {
        let mut changed = false;
        for s in 0..n {
            if !live[s] {
                continue;
            }
            let stays = (0..mdp.n_actions()).any(|a| {
                let inside: f64 = mdp
                    .next_state_probs(s, a)
                    .iter()
                    .zip(&live)
                    .filter(|(_, l)| **l)
                    .map(|(p, _)| p)
                    .sum();
                inside >= 1.0 - tolerances::CONSTRUCTION
            });
            if !stays {
                live[s] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).filter(|&s| live[s]).collect()
}

/// Upper bound `|| |M|^k e ||_inf^{1/k}` on the spectral radius of `M`.
pub fn spectral_radius_bound(m: &DMatrix<f64>, iterations: usize) -> f64 {
    let abs = m.abs();
    let mut v = DVector::from_element(m.nrows(), 1.0);
    let mut log_norm = 0.0;
    for _ in 0..iterations {
        v = &abs * &v;
        let norm = linalg::max_abs(&v);
        if norm == 0.0 {
            return 0.0;
        }
        log_norm += norm.ln();
        v /= norm;
    }
    (log_norm / iterations as f64).exp()
}

/// Unnormalized visitation `d = sum_i (P_pi^T)^i d_0`, the solution of
/// `d = P_pi^T d + d_0`.
pub fn episodic_visitation(emdp: &EpisodicMdp, policy: &Policy) -> Result<DVector<f64>> {
    let chain = emdp.induce(policy)?;
    let radius = spectral_radius_bound(&chain.transition, tolerances::EPISODIC_POWER_ITERATIONS);
    if radius >= 1.0 - tolerances::EPISODIC_MARGIN {
        return Err(Error::NonEpisodic { radius });
    }
    let n = emdp.n_states();
    let d0 = emdp.start_distribution();
    let a = DMatrix::identity(n, n) - chain.transition.transpose();
    let d = linalg::solve(a, &d0)?;
    let residual = linalg::max_abs(&(&d - chain.transition.tr_mul(&d) - &d0));
    if residual >= tolerances::SOLVER_RESIDUAL {
        return Err(Error::SolverFailure {
            detail: format!("visitation residual {residual:e}"),
        });
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// s0 -> s1 -> terminal, single action.
    fn two_step() -> EpisodicMdp {
        let mdp = Mdp::with_termination(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 0.0]]],
            vec![vec![0.0], vec![1.0]],
            0.9,
        )
        .unwrap();
        EpisodicMdp::new(mdp, 0).unwrap()
    }

    #[test]
    fn deterministic_chain_visits_each_state_once() {
        let e = two_step();
        let d = episodic_visitation(&e, &Policy::uniform(2, 1)).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 1.0]);
        let v = e.policy_value(&Policy::uniform(2, 1), 1.0).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn recurrent_loop_is_not_episodic() {
        // State 1 can loop on itself forever with action 0.
        let mdp = Mdp::with_termination(
            vec![
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![0.0, 0.5]],
            ],
            vec![vec![0.0; 2]; 2],
            0.9,
        )
        .unwrap();
        assert!(matches!(
            EpisodicMdp::new(mdp.clone(), 0),
            Err(Error::NonEpisodic { .. })
        ));
        let (p, _) = mdp.induce_raw(&Policy::deterministic(&[0, 0], 2).unwrap()).unwrap();
        assert!(spectral_radius_bound(&p, 200) >= 1.0 - 1e-9);
        let (p, _) = mdp.induce_raw(&Policy::deterministic(&[0, 1], 2).unwrap()).unwrap();
        let bound = spectral_radius_bound(&p, 200);
        assert!((0.5 - 1e-12..1.0 - 1e-9).contains(&bound));
    }

    #[test]
    fn start_state_must_not_be_reentered() {
        let mdp = Mdp::with_termination(
            vec![vec![vec![0.0, 1.0]], vec![vec![0.5, 0.0]]],
            vec![vec![0.0]; 2],
            0.9,
        )
        .unwrap();
        assert!(matches!(
            EpisodicMdp::new(mdp, 0),
            Err(Error::InvalidProbability { .. })
        ));
    }
}
