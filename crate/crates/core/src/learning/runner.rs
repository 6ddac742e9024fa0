use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{discounted_cop_td_step, normalization_loss, StepSchedule, TransitionSampler};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::RatioVector;
use crate::tolerances;

/// Tabular COP-TD driven by i.i.d. samples from a [`TransitionSampler`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularCopTdConfig {
    pub gamma_hat: f64,
    pub steps: u64,
    #[serde(default)]
    pub schedule: StepSchedule,
    /// Rescale `c` to unit `d_mu`-mass every this many steps.
    #[serde(default)]
    pub renormalize_every: Option<u64>,
    pub record_every: u64,
}

impl TabularCopTdConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.gamma_hat) {
            return Err(Error::InvalidDiscount(self.gamma_hat));
        }
        if self.record_every == 0 || self.renormalize_every == Some(0) {
            return Err(Error::InvalidConfig(
                "record_every and renormalize_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Diverged => "diverged",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningPoint {
    pub step: u64,
    /// `||c - c*||_inf`.
    pub max_error: f64,
    /// `||c - c*||_{d_mu}`.
    pub weighted_error: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CopTdRun {
    pub ratio: DVector<f64>,
    pub curve: Vec<LearningPoint>,
    pub status: RunStatus,
}

/// Runs tabular (discounted) COP-TD from `c = e` and records the distance to
/// `reference` at step 0, every `record_every` steps, and at the end.
pub fn run_tabular_cop_td<R: Rng + ?Sized>(
    sampler: &TransitionSampler,
    reference: &RatioVector,
    config: &TabularCopTdConfig,
    rng: &mut R,
) -> Result<CopTdRun> {
    config.validate()?;
    let n = sampler.mdp().n_states();
    crate::mdp::check_len("reference ratio", n, reference.len())?;
    let d_mu = sampler.d_mu();
    let mut c = RatioVector::ones(n);
    let point = |step: u64, c: &RatioVector| {
        let diff = c.values() - reference.values();
        LearningPoint {
            step,
            max_error: linalg::max_abs(&diff),
            weighted_error: linalg::weighted_norm(&diff, d_mu.probs()),
            loss: normalization_loss(c.values(), d_mu),
        }
    };
    let mut curve = vec![point(0, &c)];
    let mut status = RunStatus::Ok;
    for t in 0..config.steps {
        let sample = sampler.sample(rng);
        discounted_cop_td_step(&mut c, &sample, config.schedule.alpha(t), config.gamma_hat);
        let step = t + 1;
        if let Some(every) = config.renormalize_every {
            if step % every == 0 {
                let mass = c.mass(d_mu);
                if mass.abs() > tolerances::DEGENERATE_MASS {
                    *c.values_mut() /= mass;
                }
            }
        }
        let magnitude = linalg::max_abs(c.values());
        if !magnitude.is_finite() || magnitude > tolerances::DIVERGENCE_THRESHOLD {
            curve.push(point(step, &c));
            status = RunStatus::Diverged;
            break;
        }
        if step % config.record_every == 0 || step == config.steps {
            curve.push(point(step, &c));
        }
    }
    Ok(CopTdRun {
        ratio: c.into_values(),
        curve,
        status,
    })
}
