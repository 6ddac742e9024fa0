//! Strict JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use copkit_core::learning::StepSchedule;
use copkit_core::mdp::Policy;
use copkit_core::replay::TrainerConfig;
use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{HarnessError, HarnessResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Operator,
    Learning,
    Control,
}

impl StudyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StudyKind::Operator => "operator",
            StudyKind::Learning => "learning",
            StudyKind::Control => "control",
        }
    }
}

/// Arms of the control ablation: priority source crossed with ratio learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlArm {
    /// Ratio-prioritized replay with the ratio head trained.
    Corrected,
    /// Uniform replay; the ratio head is trained but unused for sampling.
    AuxOnly,
    /// Uniform replay, no ratio head training.
    Uniform,
    /// TD-error-prioritized replay, no ratio head training.
    TdError,
}

impl ControlArm {
    pub const ALL: [ControlArm; 4] = [
        ControlArm::Corrected,
        ControlArm::AuxOnly,
        ControlArm::Uniform,
        ControlArm::TdError,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ControlArm::Corrected => "corrected",
            ControlArm::AuxOnly => "aux_only",
            ControlArm::Uniform => "uniform",
            ControlArm::TdError => "td_error",
        }
    }

    /// `base` with the priority mode and ratio-learning switch of this arm.
    pub fn trainer(&self, base: &TrainerConfig) -> TrainerConfig {
        use copkit_core::replay::PriorityMode;
        let (priority, learn_ratio) = match self {
            ControlArm::Corrected => (PriorityMode::Ratio, true),
            ControlArm::AuxOnly => (PriorityMode::Uniform, true),
            ControlArm::Uniform => (PriorityMode::Uniform, false),
            ControlArm::TdError => (PriorityMode::TdError, false),
        };
        TrainerConfig {
            priority,
            learn_ratio,
            ..*base
        }
    }
}

/// Algorithm settings shared by the three studies; each study reads the
/// fields it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSpec {
    /// One study cell per entry and seed; `1.0` selects the undiscounted
    /// (normalized) variant.
    pub gamma_hats: Vec<f64>,
    /// Ratio-loss weight of the control agent.
    pub eta: f64,
    /// Weight of the soft-normalization penalty in the control agent.
    pub normalization_weight: f64,
    /// Step sizes of tabular COP-TD.
    pub schedule: StepSchedule,
    /// Renormalization period of tabular COP-TD; defaults to 1000 for
    /// `gamma_hat = 1` and to none otherwise.
    pub renormalize_every: Option<u64>,
    /// Step counts `n` of the operator-study contraction table.
    pub contraction_steps: Vec<usize>,
    /// Random ratio vectors per contraction measurement.
    pub contraction_trials: usize,
    /// Control-agent settings; `eta`, `normalization_weight` and the cell's
    /// `gamma_hat` override the corresponding fields.
    pub trainer: TrainerConfig,
    pub arms: Vec<ControlArm>,
    /// Environment steps between training updates of the control agent.
    pub train_every: u64,
    pub learning_starts: u64,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        let trainer = TrainerConfig::default();
        Self {
            gamma_hats: vec![0.9],
            eta: trainer.eta,
            normalization_weight: trainer.normalization_weight,
            schedule: StepSchedule::default(),
            renormalize_every: None,
            contraction_steps: vec![1, 2, 4],
            contraction_trials: 100,
            trainer,
            arms: ControlArm::ALL.to_vec(),
            train_every: 1,
            learning_starts: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Operator iterations, COP-TD samples, or environment steps.
    pub steps: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Recording period; defaults to `max(1, steps / 100)`.
    #[serde(default)]
    pub record_every: Option<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl Budget {
    pub fn record_every(&self) -> u64 {
        self.record_every.unwrap_or((self.steps / 100).max(1))
    }
}

/// Behavior and target policies loaded from a file, replacing the
/// environment's own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub behavior: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
}

impl PolicyFile {
    pub fn load(path: &Path) -> HarnessResult<(Policy, Policy)> {
        let text = fs::read_to_string(path)?;
        let file: PolicyFile = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok((Policy::new(file.behavior)?, Policy::new(file.target)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    pub env: EnvSpec,
    #[serde(default)]
    pub env_seed: u64,
    /// Optional policy file, relative to the config file's directory.
    #[serde(default)]
    pub policies: Option<PathBuf>,
    #[serde(default)]
    pub algorithm: AlgorithmSpec,
    pub budget: Budget,
    /// Output directory; the `--out-dir` flag takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Minimum behavior visitation probability of every state; environments
    /// below it are rejected before any study runs. No threshold by default.
    #[serde(default)]
    pub coverage_threshold: Option<f64>,
}

impl ExperimentConfig {
    /// Parses and validates `path`; relative file references are resolved
    /// against the config's directory and must exist.
    pub fn from_path(path: &Path) -> HarnessResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(p) = &config.policies {
            config.policies = Some(base.join(p));
        }
        config.validate()?;
        Ok(config)
    }

    /// Parses without resolving or validating file references.
    pub fn from_json(text: &str) -> HarnessResult<Self> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> HarnessResult<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.env.validate()?;
        let alg = &self.algorithm;
        if alg.gamma_hats.is_empty() {
            return bad("algorithm.gamma_hats must not be empty".into());
        }
        if let Some(g) = alg.gamma_hats.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return bad(format!("gamma_hat {g} must lie in [0, 1]"));
        }
        if self.budget.seeds.is_empty() {
            return bad("budget.seeds must not be empty".into());
        }
        if self.budget.record_every == Some(0) || alg.renormalize_every == Some(0) {
            return bad("record_every and renormalize_every must be positive".into());
        }
        if alg.contraction_steps.contains(&0) || alg.contraction_trials == 0 {
            return bad("contraction steps and trials must be positive".into());
        }
        if alg.arms.is_empty() || alg.train_every == 0 {
            return bad("control needs at least one arm and train_every > 0".into());
        }
        alg.schedule.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.trainer(alg.gamma_hats[0])
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(t) = self.coverage_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("coverage_threshold {t} must lie in (0, 1]"));
            }
        }
        if let Some(p) = &self.policies {
            if !p.is_file() {
                return bad(format!("policies file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Control trainer settings for one `gamma_hat` cell.
    pub fn trainer(&self, gamma_hat: f64) -> TrainerConfig {
        TrainerConfig {
            eta: self.algorithm.eta,
            normalization_weight: self.algorithm.normalization_weight,
            gamma_hat,
            ..self.algorithm.trainer
        }
    }
}
