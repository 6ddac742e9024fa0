use nalgebra::DVector;

use super::LinearRatioModel;
use crate::error::{Error, Result};
use crate::mdp::{RatioVector, StateDistribution};

/// A per-state ratio estimate `c(s)` that is differentiable in its parameters.
pub trait RatioModel {
    fn n_params(&self) -> usize;

    fn value(&self, s: usize) -> f64;

    /// `out += scale * grad c(s)`.
    fn accumulate_gradient(&self, s: usize, scale: f64, out: &mut DVector<f64>);
}

impl RatioModel for RatioVector {
    fn n_params(&self) -> usize {
        self.len()
    }

    fn value(&self, s: usize) -> f64 {
        self.get(s)
    }

    fn accumulate_gradient(&self, s: usize, scale: f64, out: &mut DVector<f64>) {
        out[s] += scale;
    }
}

impl RatioModel for LinearRatioModel {
    fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn value(&self, s: usize) -> f64 {
        self.predict(s)
    }

    fn accumulate_gradient(&self, s: usize, scale: f64, out: &mut DVector<f64>) {
        for (o, f) in out.iter_mut().zip(self.features.matrix().row(s).iter()) {
            *o += scale * f;
        }
    }
}

/// `1/2 (sum_s d_mu(s) c(s) - 1)^2`.
pub fn normalization_loss(c_values: &DVector<f64>, d_mu: &StateDistribution) -> f64 {
    let mass = d_mu.probs().dot(c_values);
    0.5 * (mass - 1.0) * (mass - 1.0)
}

/// Unbiased estimate of the normalization-loss gradient from `m >= 2` states
/// drawn from `d_mu`: each sample's gradient is weighted by the leave-one-out
/// mean of the other samples, so the two factors are independent.
pub fn normalization_grad_estimate<M: RatioModel + ?Sized>(
    model: &M,
    states: &[usize],
) -> Result<DVector<f64>> {
    let m = states.len();
    if m < 2 {
        return Err(Error::InsufficientSamples(m));
    }
    let values: Vec<f64> = states.iter().map(|&s| model.value(s)).collect();
    let total: f64 = values.iter().sum();
    let mut grad = DVector::zeros(model.n_params());
    for (&s, &v) in states.iter().zip(&values) {
        let others = (total - v) / (m - 1) as f64;
        model.accumulate_gradient(s, (others - 1.0) / m as f64, &mut grad);
    }
    Ok(grad)
}
