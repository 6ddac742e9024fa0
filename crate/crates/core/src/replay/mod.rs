//! Prioritized replay with learned-ratio priorities and the agent loop built
//! on it.

mod agent;
mod buffer;
mod control;
mod sum_tree;

pub use agent::{
    greedy_policy, ratio_loss, train_step, Agent, AgentParams, PriorityMode, TrainMetrics,
    TrainerConfig,
};
pub use buffer::{Batch, BufferSummary, ReplayBuffer};
pub use control::{
    policy_return, run_control, step_episode, Checkpoint, ControlConfig, ControlRun, MetricsRow,
};
pub use sum_tree::SumTree;
