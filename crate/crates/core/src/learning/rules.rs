use super::{LinearRatioModel, LinearValueModel, TransitionSample};
use crate::mdp::RatioVector;

/// Semi-gradient TD(0):
/// `theta += alpha [r + gamma phi(s')^T theta - phi(s)^T theta] phi(s)`.
/// Returns the TD error.
pub fn td_step(
    model: &mut LinearValueModel,
    sample: &TransitionSample,
    gamma: f64,
    alpha: f64,
) -> f64 {
    scaled_td_step(model, sample, gamma, alpha, 1.0)
}

/// TD(0) with the update scaled by `ratio_value * pi(a|s) / mu(a|s)`, where
/// `ratio_value` estimates `d_pi(s) / d_mu(s)`.
pub fn reweighted_td_step(
    model: &mut LinearValueModel,
    sample: &TransitionSample,
    ratio_value: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    scaled_td_step(
        model,
        sample,
        gamma,
        alpha,
        ratio_value * sample.importance_ratio(),
    )
}

fn scaled_td_step(
    model: &mut LinearValueModel,
    sample: &TransitionSample,
    gamma: f64,
    alpha: f64,
    scale: f64,
) -> f64 {
    let bootstrap = if sample.terminal {
        0.0
    } else {
        model.predict(sample.next_state)
    };
    let delta = sample.reward + gamma * bootstrap - model.predict(sample.state);
    let step = alpha * scale * delta;
    if step != 0.0 {
        let phi = model.features.matrix().row(sample.state);
        for (w, f) in model.weights.iter_mut().zip(phi.iter()) {
            *w += step * f;
        }
    }
    delta
}

/// `c(s') += alpha [pi/mu c(s) - c(s')]`.
pub fn cop_td_step(c: &mut RatioVector, sample: &TransitionSample, alpha: f64) {
    discounted_cop_td_step(c, sample, alpha, 1.0);
}

/// `c(s') += alpha [g pi/mu c(s) + (1 - g) - c(s')]`.
pub fn discounted_cop_td_step(
    c: &mut RatioVector,
    sample: &TransitionSample,
    alpha: f64,
    gamma_hat: f64,
) {
    let values = c.values_mut();
    let target =
        gamma_hat * sample.importance_ratio() * values[sample.state] + (1.0 - gamma_hat);
    values[sample.next_state] += alpha * (target - values[sample.next_state]);
}

/// `w += alpha [g pi/mu phi(s)^T w + (1 - g) - phi(s')^T w] phi(s')`.
pub fn linear_cop_td_step(
    model: &mut LinearRatioModel,
    sample: &TransitionSample,
    alpha: f64,
    gamma_hat: f64,
) {
    let target =
        gamma_hat * sample.importance_ratio() * model.predict(sample.state) + (1.0 - gamma_hat);
    let error = target - model.predict(sample.next_state);
    let step = alpha * error;
    if step != 0.0 {
        let phi = model.features.matrix().row(sample.next_state);
        for (w, f) in model.weights.iter_mut().zip(phi.iter()) {
            *w += step * f;
        }
    }
}
