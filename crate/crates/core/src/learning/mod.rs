//! Sample-based learning rules for values and ratios.

mod normalization;
mod rules;
mod runner;
mod sampler;
mod simplex;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::FeatureMap;

pub use normalization::{normalization_grad_estimate, normalization_loss, RatioModel};
pub use rules::{
    cop_td_step, discounted_cop_td_step, linear_cop_td_step, reweighted_td_step, td_step,
};
pub use runner::{run_tabular_cop_td, CopTdRun, LearningPoint, RunStatus, TabularCopTdConfig};
pub use sampler::{sample_transition, TransitionSampler};
pub use simplex::{project_polyhedron, project_weighted_simplex};

/// One transition `(s, a, r, s')` together with the action probabilities of
/// the behavior and target policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
    /// `mu(a|s)`.
    pub behavior_prob: f64,
    /// `pi(a|s)`.
    pub target_prob: f64,
    /// `next_state` is an episode start state, so its ratio target is 1.
    pub is_initial: bool,
    /// The episode ended on this transition; `next_state` carries no information.
    #[serde(default)]
    pub terminal: bool,
}

impl TransitionSample {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: usize,
        action: usize,
        next_state: usize,
        reward: f64,
        behavior_prob: f64,
        target_prob: f64,
        is_initial: bool,
    ) -> Result<Self> {
        let sample = Self {
            state,
            action,
            next_state,
            reward,
            behavior_prob,
            target_prob,
            is_initial,
            terminal: false,
        };
        sample.validate()?;
        Ok(sample)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.behavior_prob > 0.0 && self.behavior_prob <= 1.0) {
            return Err(Error::InvalidProbability {
                what: "behavior probability",
                detail: format!("mu(a|s) = {} must lie in (0, 1]", self.behavior_prob),
            });
        }
        if !(0.0..=1.0).contains(&self.target_prob) {
            return Err(Error::InvalidProbability {
                what: "target probability",
                detail: format!("pi(a|s) = {} must lie in [0, 1]", self.target_prob),
            });
        }
        if !self.reward.is_finite() {
            return Err(Error::InvalidValue {
                what: "reward",
                detail: self.reward.to_string(),
            });
        }
        Ok(())
    }

    /// `pi(a|s) / mu(a|s)`.
    pub fn importance_ratio(&self) -> f64 {
        self.target_prob / self.behavior_prob
    }
}

/// Step sizes `alpha_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `alpha_t = alpha0 / (1 + t / t0)`.
    RobbinsMonro { alpha0: f64, t0: f64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::RobbinsMonro {
            alpha0: 0.5,
            t0: 1e4,
        }
    }
}

impl StepSchedule {
    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::RobbinsMonro { alpha0, t0 } => alpha0 / (1.0 + t as f64 / t0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { alpha } => alpha > 0.0 && alpha.is_finite(),
            StepSchedule::RobbinsMonro { alpha0, t0 } => {
                alpha0 > 0.0 && alpha0.is_finite() && t0 > 0.0 && t0.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid step schedule {self:?}")))
        }
    }
}

/// `V_hat(s) = phi(s)^T theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearValueModel {
    pub features: FeatureMap,
    pub weights: DVector<f64>,
}

impl LinearValueModel {
    pub fn zeros(features: FeatureMap) -> Self {
        let k = features.n_features();
        Self {
            features,
            weights: DVector::zeros(k),
        }
    }

    pub fn predict(&self, s: usize) -> f64 {
        self.features.predict(s, &self.weights)
    }

    pub fn values(&self) -> DVector<f64> {
        self.features.matrix() * &self.weights
    }
}

/// `c_hat(s) = phi(s)^T w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRatioModel {
    pub features: FeatureMap,
    pub weights: DVector<f64>,
}

impl LinearRatioModel {
    pub fn new(features: FeatureMap, weights: DVector<f64>) -> Result<Self> {
        crate::mdp::check_len("ratio weights", features.n_features(), weights.len())?;
        Ok(Self { features, weights })
    }

    pub fn predict(&self, s: usize) -> f64 {
        self.features.predict(s, &self.weights)
    }

    pub fn values(&self) -> DVector<f64> {
        self.features.matrix() * &self.weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robbins_monro_decays() {
        let s = StepSchedule::default();
        assert_eq!(s.alpha(0), 0.5);
        assert!((s.alpha(10_000) - 0.25).abs() < 1e-15);
        assert!(StepSchedule::Constant { alpha: 0.0 }.validate().is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"robbins_monro","alpha0":0.5,"t0":10000.0}"#);
    }

    #[test]
    fn sample_validation() {
        assert!(TransitionSample::new(0, 0, 1, 0.0, 0.0, 0.5, false).is_err());
        assert!(TransitionSample::new(0, 0, 1, 0.0, 0.5, 1.5, false).is_err());
        let s = TransitionSample::new(0, 0, 1, 0.0, 0.25, 0.5, false).unwrap();
        assert_eq!(s.importance_ratio(), 2.0);
    }
}
