//! Tabular MDPs and the Markov chains they induce.

mod chain;
mod episodic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances;

pub use chain::{
    check_ergodic, discounted_reset_chain, discounted_stationary, ratio_of,
    stationary_distribution, InducedChain, RatioVector, StateDistribution,
};
pub use episodic::{episodic_visitation, spectral_radius_bound, EpisodicChain, EpisodicMdp};

/// A finite MDP with transition tensor `P(s'|s,a)` and expected rewards `R(s,a)`.
///
/// Rows of the transition tensor sum to one. Episodic MDPs relax this to
/// sums of at most one, the missing mass being termination; see
/// [`EpisodicMdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `[s][a][s']`.
    transition: Vec<f64>,
    reward: DMatrix<f64>,
    discount: f64,
    terminating: bool,
}

/// On-disk layout of an [`Mdp`]: `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

impl Mdp {
    /// Builds a stochastic MDP from nested `transition[s][a][s']` and
    /// `reward[s][a]` arrays.
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        Self::build(transition, reward, discount, false)
    }

    /// Like [`Mdp::new`] but rows may sum to less than one (termination mass).
    pub fn with_termination(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
    ) -> Result<Self> {
        Self::build(transition, reward, discount, true)
    }

    fn build(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        discount: f64,
        terminating: bool,
    ) -> Result<Self> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(Error::InvalidValue {
                what: "mdp",
                detail: "at least one state is required".into(),
            });
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidValue {
                what: "mdp",
                detail: "at least one action is required".into(),
            });
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidDiscount(discount));
        }
        check_len("reward rows", n_states, reward.len())?;

        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transition.iter().enumerate() {
            check_len("transition actions", n_actions, per_action.len())?;
            for (a, row) in per_action.iter().enumerate() {
                check_len("transition row", n_states, row.len())?;
                validate_row(row, terminating).map_err(|detail| Error::InvalidProbability {
                    what: "transition",
                    detail: format!("P(.|s={s},a={a}): {detail}"),
                })?;
                flat.extend_from_slice(row);
            }
        }

        let mut r = DMatrix::zeros(n_states, n_actions);
        for (s, row) in reward.iter().enumerate() {
            check_len("reward row", n_actions, row.len())?;
            for (a, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidValue {
                        what: "reward",
                        detail: format!("R(s={s},a={a}) = {v}"),
                    });
                }
                r[(s, a)] = v;
            }
        }

        Ok(Self {
            n_states,
            n_actions,
            transition: flat,
            reward: r,
            discount,
            terminating,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// True when rows may leak probability mass (episodic MDPs).
    pub fn is_terminating(&self) -> bool {
        self.terminating
    }

    /// `P(.|s,a)` as a slice over next states.
    pub fn next_state_probs(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.next_state_probs(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[(s, a)]
    }

    pub fn reward_matrix(&self) -> &DMatrix<f64> {
        &self.reward
    }

    /// `P(.|.,a)` as an `n x n` matrix.
    pub fn action_matrix(&self, a: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_states, self.n_states, |s, next| self.prob(s, a, next))
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        check_len("policy states", self.n_states, policy.n_states())?;
        check_len("policy actions", self.n_actions, policy.n_actions())
    }

    /// `P_pi` and `r_pi` without any stochasticity check.
    pub(crate) fn induce_raw(&self, policy: &Policy) -> Result<(DMatrix<f64>, DVector<f64>)> {
        self.check_policy(policy)?;
        let n = self.n_states;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r[s] += w * self.reward[(s, a)];
                for (next, &pr) in self.next_state_probs(s, a).iter().enumerate() {
                    p[(s, next)] += w * pr;
                }
            }
        }
        Ok((p, r))
    }

    pub fn to_document(&self) -> MdpDocument {
        let transition = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.next_state_probs(s, a).to_vec())
                    .collect()
            })
            .collect();
        let reward = (0..self.n_states)
            .map(|s| (0..self.n_actions).map(|a| self.reward[(s, a)]).collect())
            .collect();
        MdpDocument {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.discount,
            transition,
            reward,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidValue {
            what: "mdp json",
            detail: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("mdp document is always serializable")
    }
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        check_len("n_states", doc.n_states, doc.transition.len())?;
        if let Some(first) = doc.transition.first() {
            check_len("n_actions", doc.n_actions, first.len())?;
        }
        Mdp::new(doc.transition, doc.reward, doc.gamma)
    }
}

impl From<Mdp> for MdpDocument {
    fn from(mdp: Mdp) -> Self {
        mdp.to_document()
    }
}

/// Action probabilities `pi(a|s)`, one row per state.
///
/// Used for both target and behavior policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: DMatrix<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 {
            return Err(Error::InvalidValue {
                what: "policy",
                detail: "empty policy".into(),
            });
        }
        for row in &rows {
            check_len("policy row", k, row.len())?;
        }
        Self::from_matrix(DMatrix::from_fn(n, k, |s, a| rows[s][a]))
    }

    pub fn from_matrix(probs: DMatrix<f64>) -> Result<Self> {
        for s in 0..probs.nrows() {
            let row: Vec<f64> = probs.row(s).iter().copied().collect();
            validate_row(&row, false).map_err(|detail| Error::InvalidProbability {
                what: "policy",
                detail: format!("pi(.|s={s}): {detail}"),
            })?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Picks `actions[s]` with probability one in every state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = DMatrix::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::DimensionMismatch {
                    what: "deterministic action",
                    expected: n_actions,
                    found: a,
                });
            }
            probs[(s, a)] = 1.0;
        }
        Self::from_matrix(probs)
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Entries non-negative and finite; sum one (or at most one when `leaky`).
pub(crate) fn validate_row(row: &[f64], leaky: bool) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("entry {v} is not a probability"));
    }
    let sum: f64 = row.iter().sum();
    let ok = if leaky {
        sum <= 1.0 + tolerances::CONSTRUCTION
    } else {
        (sum - 1.0).abs() <= tolerances::CONSTRUCTION
    };
    if ok {
        Ok(())
    } else {
        Err(format!("row sums to {sum}"))
    }
}

/// Policy-induced chain `P_pi(s'|s) = sum_a pi(a|s) P(s'|s,a)` with `r_pi`.
pub fn induce_chain(mdp: &Mdp, policy: &Policy) -> Result<InducedChain> {
    let (p, r) = mdp.induce_raw(policy)?;
    InducedChain::new(p, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_swap_mdp() -> Mdp {
        Mdp::new(
            vec![
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            ],
            vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            0.9,
        )
        .unwrap()
    }

    #[test]
    fn uniform_mix_of_identity_and_swap() {
        let chain = induce_chain(&identity_swap_mdp(), &Policy::uniform(2, 2)).unwrap();
        for v in chain.transition().iter() {
            assert_eq!(*v, 0.5);
        }
        assert_eq!(chain.expected_reward().as_slice(), &[0.5, 1.0]);
    }

    #[test]
    fn deterministic_policy_selects_action_rows() {
        let mdp = identity_swap_mdp();
        let pi = Policy::deterministic(&[0, 0], 2).unwrap();
        let chain = induce_chain(&mdp, &pi).unwrap();
        assert_eq!(chain.transition(), &mdp.action_matrix(0));
    }

    #[test]
    fn identical_action_rows_give_shared_matrix() {
        let row0 = vec![0.3, 0.7];
        let row1 = vec![0.6, 0.4];
        let mdp = Mdp::new(
            vec![vec![row0.clone(), row0], vec![row1.clone(), row1]],
            vec![vec![0.0; 2]; 2],
            0.5,
        )
        .unwrap();
        let pi = Policy::new(vec![vec![0.2, 0.8], vec![0.9, 0.1]]).unwrap();
        let chain = induce_chain(&mdp, &pi).unwrap();
        assert!((chain.transition() - mdp.action_matrix(0)).amax() < 1e-15);
    }

    #[test]
    fn policy_dimension_mismatch() {
        let err = induce_chain(&identity_swap_mdp(), &Policy::uniform(3, 2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn rejects_bad_rows() {
        let err = Mdp::new(
            vec![vec![vec![0.5, 0.6]], vec![vec![0.5, 0.5]]],
            vec![vec![0.0]; 2],
            0.9,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidProbability { .. }));
        let err = Mdp::new(vec![vec![vec![1.0]]], vec![vec![f64::NAN]], 0.9).unwrap_err();
        assert!(matches!(err, Error::InvalidValue { .. }));
        assert!(Policy::new(vec![vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let mdp = identity_swap_mdp();
        let back = Mdp::from_json(&mdp.to_json()).unwrap();
        assert_eq!(mdp, back);

        let bad = r#"{"n_states":1,"n_actions":1,"gamma":0.9,"transition":[[[0.9]]],"reward":[[0]]}"#;
        assert!(Mdp::from_json(bad).is_err());
        let unknown = r#"{"n_states":1,"n_actions":1,"gamma":0.9,"transition":[[[1.0]]],"reward":[[0]],"x":1}"#;
        assert!(Mdp::from_json(unknown).is_err());
        let wrong_count = r#"{"n_states":2,"n_actions":1,"gamma":0.9,"transition":[[[1.0]]],"reward":[[0]]}"#;
        assert!(Mdp::from_json(wrong_count).is_err());
    }
}
