use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{greedy_policy, train_step, Agent, BufferSummary, ReplayBuffer, TrainerConfig};
use crate::error::{Error, Result};
use crate::learning::TransitionSample;
use crate::mdp::{episodic_visitation, EpisodicMdp, Policy};
use crate::operators::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Environment steps.
    pub steps: u64,
    /// Environment steps between train steps.
    #[serde(default = "one")]
    pub train_every: u64,
    /// Environment steps collected before training starts (at least one batch).
    #[serde(default)]
    pub learning_starts: u64,
    pub eval_every: u64,
}

fn one() -> u64 {
    1
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.train_every == 0 || self.eval_every == 0 {
            return Err(Error::InvalidConfig(
                "train_every and eval_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation record of a control run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub step: u64,
    /// Exact undiscounted return from the start state of the epsilon-greedy
    /// policy of the online Q-values.
    pub eval_return: f64,
    /// Mean learned ratio under the normalized behavior visitation.
    pub mean_c_eval: f64,
    /// Mean ratio loss over the train steps since the previous record.
    pub ratio_loss: f64,
    /// Mean value loss over the train steps since the previous record.
    pub value_loss: f64,
    pub mean_priority: f64,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 7] = [
        "seed",
        "step",
        "eval_return",
        "mean_c_eval",
        "ratio_loss",
        "value_loss",
        "mean_priority",
    ];
}

/// Resumable agent state. The buffer is summarized, not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: u64,
    pub train_steps: u64,
    pub value_weights: Vec<Vec<f64>>,
    pub ratio_weights: Vec<f64>,
    pub target_value_weights: Vec<Vec<f64>>,
    pub target_ratio_weights: Vec<f64>,
    pub rng: ChaCha8Rng,
    pub buffer: BufferSummary,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct ControlRun {
    pub rows: Vec<MetricsRow>,
    pub agent: Agent,
    pub checkpoint: Checkpoint,
}

impl ControlRun {
    /// Mean of `eval_return` over all records.
    pub fn mean_eval_return(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.eval_return).sum::<f64>() / self.rows.len() as f64
    }
}

/// Samples the next state of `emdp` from `(s, a)`; `None` means the episode
/// terminated.
pub fn step_episode<R: Rng + ?Sized>(
    emdp: &EpisodicMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (next, &p) in emdp.base().next_state_probs(s, a).iter().enumerate() {
        acc += p;
        if u < acc {
            return Some(next);
        }
    }
    None
}

fn draw_action<R: Rng + ?Sized>(policy: &Policy, s: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let n = policy.n_actions();
    for a in 0..n {
        acc += policy.prob(s, a);
        if u < acc {
            return a;
        }
    }
    // Rounding left `u` above the cumulative sum; take the last supported action.
    (0..n).rev().find(|&a| policy.prob(s, a) > 0.0).unwrap_or(n - 1)
}

/// Runs the behavior policy on `emdp`, storing every transition in a replay
/// buffer and training the agent from it. Terminal transitions store the
/// start state as `next_state` and are flagged `is_initial`, so the ratio
/// head learns `c(s_0) = 1`.
pub fn run_control(
    emdp: &EpisodicMdp,
    behavior: &Policy,
    value_features: FeatureMap,
    ratio_features: FeatureMap,
    config: &ControlConfig,
    seed: u64,
) -> Result<ControlRun> {
    config.validate()?;
    emdp.base().check_policy(behavior)?;
    crate::mdp::check_len("feature rows", emdp.n_states(), value_features.n_states())?;
    let trainer = &config.trainer;
    let n_actions = emdp.base().n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(value_features, ratio_features, n_actions, trainer.sync_period)?;
    let mut buffer = ReplayBuffer::new(trainer.capacity)?;

    let d_mu = episodic_visitation(emdp, behavior)?;
    let eval_weights = &d_mu / d_mu.sum();
    let start = emdp.start_state();
    let learning_starts = config.learning_starts.max(trainer.batch_size as u64);

    let mut rows = Vec::new();
    let mut loss_sums = (0.0, 0.0, 0usize);
    let mut s = start;
    for t in 0..config.steps {
        let a = draw_action(behavior, s, &mut rng);
        let next = step_episode(emdp, s, a, &mut rng);
        let sample = TransitionSample {
            state: s,
            action: a,
            next_state: next.unwrap_or(start),
            reward: emdp.base().reward(s, a),
            behavior_prob: behavior.prob(s, a),
            target_prob: agent.target_policy_prob(s, a, trainer.epsilon),
            is_initial: next.is_none(),
            terminal: next.is_none(),
        };
        buffer.push(sample);
        s = next.unwrap_or(start);

        let step = t + 1;
        if step >= learning_starts && step % config.train_every == 0 {
            let m = train_step(&mut agent, &mut buffer, trainer, &mut rng)?;
            loss_sums.0 += m.ratio_loss;
            loss_sums.1 += m.value_loss;
            loss_sums.2 += 1;
        }
        if step % config.eval_every == 0 || step == config.steps {
            let count = loss_sums.2.max(1) as f64;
            rows.push(MetricsRow {
                seed,
                step,
                eval_return: policy_return(emdp, &agent, trainer.epsilon)?,
                mean_c_eval: eval_weights.dot(&agent.ratio_values()),
                ratio_loss: loss_sums.0 / count,
                value_loss: loss_sums.1 / count,
                mean_priority: buffer.summary().mean_priority,
            });
            loss_sums = (0.0, 0.0, 0);
        }
    }

    let checkpoint = Checkpoint {
        step: config.steps,
        train_steps: agent.step,
        value_weights: rows_of(&agent.params.value_weights),
        ratio_weights: agent.params.ratio_weights.iter().copied().collect(),
        target_value_weights: rows_of(&agent.params.target_value_weights),
        target_ratio_weights: agent.params.target_ratio_weights.iter().copied().collect(),
        rng,
        buffer: buffer.summary(),
    };
    Ok(ControlRun {
        rows,
        agent,
        checkpoint,
    })
}

/// Exact undiscounted return from the start state of the epsilon-greedy
/// policy of the agent's online Q-values.
pub fn policy_return(emdp: &EpisodicMdp, agent: &Agent, epsilon: f64) -> Result<f64> {
    let policy = greedy_policy(&agent.q_matrix(), epsilon)?;
    let values: DVector<f64> = emdp.policy_value(&policy, 1.0)?;
    Ok(values[emdp.start_state()])
}
