use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ReplayBuffer;
use crate::error::{Error, Result};
use crate::learning::{normalization_grad_estimate, LinearRatioModel, TransitionSample};
use crate::mdp::Policy;
use crate::operators::FeatureMap;

/// Epsilon-greedy policy over `q` (`n_states x n_actions`): the argmax action
/// (lowest index on ties) gets `1 - eps + eps/|A|`, the others `eps/|A|`.
pub fn greedy_policy(q: &DMatrix<f64>, epsilon: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidValue {
            what: "epsilon",
            detail: epsilon.to_string(),
        });
    }
    let n_actions = q.ncols();
    let mut probs = DMatrix::from_element(q.nrows(), n_actions, epsilon / n_actions as f64);
    for s in 0..q.nrows() {
        probs[(s, argmax(q.row(s).iter().copied()))] += 1.0 - epsilon;
    }
    Policy::from_matrix(probs)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Online and target parameters of the value and ratio heads.
///
/// `Q(s, a) = phi_v(s)^T value_weights[:, a]` and `c(s) = phi_c(s)^T ratio_weights`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub value_weights: DMatrix<f64>,
    pub ratio_weights: DVector<f64>,
    pub target_value_weights: DMatrix<f64>,
    pub target_ratio_weights: DVector<f64>,
    pub sync_period: u64,
}

impl AgentParams {
    /// Zero values; ratio weights fit `c = e` in least squares.
    pub fn new(
        value_features: &FeatureMap,
        ratio_features: &FeatureMap,
        n_actions: usize,
        sync_period: u64,
    ) -> Result<Self> {
        if sync_period == 0 {
            return Err(Error::InvalidConfig("sync_period must be positive".into()));
        }
        let phi = ratio_features.matrix();
        let ones = DVector::from_element(phi.nrows(), 1.0);
        let ratio_weights = phi
            .clone()
            .svd(true, true)
            .solve(&ones, 1e-12)
            .map_err(|e| Error::SolverFailure {
                detail: e.to_string(),
            })?;
        let value_weights = DMatrix::zeros(value_features.n_features(), n_actions);
        Ok(Self {
            target_value_weights: value_weights.clone(),
            target_ratio_weights: ratio_weights.clone(),
            value_weights,
            ratio_weights,
            sync_period,
        })
    }

    pub fn sync(&mut self) {
        self.target_value_weights.copy_from(&self.value_weights);
        self.target_ratio_weights.copy_from(&self.ratio_weights);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorityMode {
    /// Priority is the clipped learned ratio `max(c(s), 0)`.
    Ratio,
    /// Priority is `|TD error| + 1e-3`.
    TdError,
    /// All priorities stay at 1.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Ratio-loss weight.
    pub eta: f64,
    pub gamma_hat: f64,
    /// Exploration rate of the target policy.
    pub epsilon: f64,
    pub batch_size: usize,
    pub normalization_weight: f64,
    pub value_lr: f64,
    pub ratio_lr: f64,
    /// Discount of the value learner.
    pub discount: f64,
    pub sync_period: u64,
    pub capacity: usize,
    pub priority: PriorityMode,
    pub learn_ratio: bool,
    /// Train the ratio head on prioritized instead of uniform batches.
    pub ratio_batch_prioritized: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            eta: 0.02,
            gamma_hat: 0.99,
            epsilon: 0.1,
            batch_size: 32,
            normalization_weight: 0.0,
            value_lr: 0.1,
            ratio_lr: 10.0,
            discount: 0.99,
            sync_period: 1000,
            capacity: 10_000,
            priority: PriorityMode::Ratio,
            learn_ratio: true,
            ratio_batch_prioritized: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma_hat) {
            return bad("gamma_hat must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.normalization_weight >= 0.0 && self.normalization_weight.is_finite()) {
            return bad("normalization_weight must be nonnegative");
        }
        if self.normalization_weight > 0.0 && self.batch_size < 2 {
            return bad("batch_size must be at least 2 when normalization is enabled");
        }
        if !(self.value_lr > 0.0 && self.value_lr.is_finite())
            || !(self.ratio_lr > 0.0 && self.ratio_lr.is_finite())
        {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1)");
        }
        if self.sync_period == 0 || self.capacity == 0 {
            return bad("sync_period and capacity must be positive");
        }
        Ok(())
    }
}

/// A linear Q-learner with a linear ratio head, each on its own features.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub value_features: FeatureMap,
    pub ratio_features: FeatureMap,
    pub params: AgentParams,
    /// Completed train steps.
    pub step: u64,
}

impl Agent {
    pub fn new(
        value_features: FeatureMap,
        ratio_features: FeatureMap,
        n_actions: usize,
        sync_period: u64,
    ) -> Result<Self> {
        crate::mdp::check_len(
            "ratio feature rows",
            value_features.n_states(),
            ratio_features.n_states(),
        )?;
        let params = AgentParams::new(&value_features, &ratio_features, n_actions, sync_period)?;
        Ok(Self {
            value_features,
            ratio_features,
            params,
            step: 0,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.params.value_weights.ncols()
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.value_features
            .matrix()
            .row(s)
            .dot(&self.params.value_weights.column(a).transpose())
    }

    pub fn target_q(&self, s: usize, a: usize) -> f64 {
        self.value_features
            .matrix()
            .row(s)
            .dot(&self.params.target_value_weights.column(a).transpose())
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        self.value_features.matrix() * &self.params.value_weights
    }

    pub fn target_q_matrix(&self) -> DMatrix<f64> {
        self.value_features.matrix() * &self.params.target_value_weights
    }

    pub fn ratio(&self, s: usize) -> f64 {
        self.ratio_features.predict(s, &self.params.ratio_weights)
    }

    pub fn target_ratio(&self, s: usize) -> f64 {
        self.ratio_features.predict(s, &self.params.target_ratio_weights)
    }

    pub fn ratio_values(&self) -> DVector<f64> {
        self.ratio_features.matrix() * &self.params.ratio_weights
    }

    /// `pi_target(a|s)`: epsilon-greedy with respect to the target Q-values.
    pub fn target_policy_prob(&self, s: usize, a: usize, epsilon: f64) -> f64 {
        let n = self.n_actions();
        let best = argmax((0..n).map(|b| self.target_q(s, b)));
        epsilon / n as f64 + if a == best { 1.0 - epsilon } else { 0.0 }
    }

    fn ratio_model(&self) -> LinearRatioModel {
        LinearRatioModel {
            features: self.ratio_features.clone(),
            weights: self.params.ratio_weights.clone(),
        }
    }
}

/// `eta (t - c(s'))^2` with `t = 1` when `sample.is_initial`, otherwise
/// `t = g max(c_target(s), 0) pi_target(a|s) / mu(a|s) + (1 - g)`. The
/// gradient is taken with respect to the online ratio weights through
/// `c(s')` only.
pub fn ratio_loss(
    agent: &Agent,
    sample: &TransitionSample,
    config: &TrainerConfig,
) -> (f64, DVector<f64>) {
    let target = ratio_target(agent, sample, config);
    let error = target - agent.ratio(sample.next_state);
    let grad = agent.ratio_features.phi(sample.next_state) * (-2.0 * config.eta * error);
    (config.eta * error * error, grad)
}

fn ratio_target(agent: &Agent, sample: &TransitionSample, config: &TrainerConfig) -> f64 {
    if sample.is_initial {
        return 1.0;
    }
    let pi = agent.target_policy_prob(sample.state, sample.action, config.epsilon);
    let bootstrap = agent.target_ratio(sample.state).max(0.0);
    config.gamma_hat * bootstrap * pi / sample.behavior_prob + (1.0 - config.gamma_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainMetrics {
    pub value_loss: f64,
    pub ratio_loss: f64,
}

/// One agent update: a value batch drawn according to `config.priority`, a
/// ratio batch drawn uniformly, a refresh of the touched priorities and a
/// target sync every `sync_period` steps.
pub fn train_step<R: Rng + ?Sized>(
    agent: &mut Agent,
    buffer: &mut ReplayBuffer,
    config: &TrainerConfig,
    rng: &mut R,
) -> Result<TrainMetrics> {
    let m = config.batch_size;
    if buffer.len() < m {
        return Err(Error::BufferNotWarm {
            len: buffer.len(),
            required: m,
        });
    }

    let value_batch = match config.priority {
        PriorityMode::Uniform => buffer.sample_uniform(m, rng)?,
        PriorityMode::Ratio | PriorityMode::TdError => buffer.sample_prioritized(m, rng)?,
    };
    let (value_loss, td_errors) = value_update(agent, &value_batch.samples, config);

    let mut ratio_loss_value = 0.0;
    let ratio_batch = if config.learn_ratio {
        let batch = if config.ratio_batch_prioritized && config.priority != PriorityMode::Uniform {
            buffer.sample_prioritized(m, rng)?
        } else {
            buffer.sample_uniform(m, rng)?
        };
        ratio_loss_value = ratio_update(agent, &batch.samples, config)?;
        Some(batch)
    } else {
        None
    };

    match config.priority {
        PriorityMode::Ratio => {
            let touched = value_batch
                .slots
                .iter()
                .chain(ratio_batch.iter().flat_map(|b| b.slots.iter()));
            for &slot in touched {
                let state = buffer.get(slot).expect("sampled slot is occupied").state;
                buffer.set_priority(slot, agent.ratio(state))?;
            }
        }
        PriorityMode::TdError => {
            for (&slot, delta) in value_batch.slots.iter().zip(td_errors) {
                buffer.set_priority(slot, delta.abs() + 1e-3)?;
            }
        }
        PriorityMode::Uniform => {}
    }

    agent.step += 1;
    if agent.step.is_multiple_of(agent.params.sync_period) {
        agent.params.sync();
    }
    Ok(TrainMetrics {
        value_loss,
        ratio_loss: ratio_loss_value,
    })
}

/// Semi-gradient Q-learning toward `r + discount max_a' Q_target(s', a')`.
fn value_update(
    agent: &mut Agent,
    samples: &[TransitionSample],
    config: &TrainerConfig,
) -> (f64, Vec<f64>) {
    let n_actions = agent.n_actions();
    let mut step = DMatrix::zeros(agent.params.value_weights.nrows(), n_actions);
    let mut loss = 0.0;
    let mut errors = Vec::with_capacity(samples.len());
    for t in samples {
        let bootstrap = if t.terminal {
            0.0
        } else {
            (0..n_actions)
                .map(|b| agent.target_q(t.next_state, b))
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let delta = t.reward + config.discount * bootstrap - agent.q(t.state, t.action);
        loss += 0.5 * delta * delta;
        let phi = agent.value_features.matrix().row(t.state);
        let mut column = step.column_mut(t.action);
        column.axpy(delta, &phi.transpose(), 1.0);
        errors.push(delta);
    }
    let m = samples.len() as f64;
    agent.params.value_weights += step * (config.value_lr / m);
    (loss / m, errors)
}

fn ratio_update(
    agent: &mut Agent,
    samples: &[TransitionSample],
    config: &TrainerConfig,
) -> Result<f64> {
    let m = samples.len() as f64;
    let mut grad = DVector::zeros(agent.params.ratio_weights.len());
    let mut loss = 0.0;
    for t in samples {
        let (l, g) = ratio_loss(agent, t, config);
        loss += l;
        grad += g;
    }
    grad /= m;
    if config.normalization_weight > 0.0 {
        let states: Vec<usize> = samples.iter().map(|t| t.state).collect();
        grad += normalization_grad_estimate(&agent.ratio_model(), &states)?
            * config.normalization_weight;
    }
    agent.params.ratio_weights -= grad * config.ratio_lr;
    Ok(loss / m)
}
