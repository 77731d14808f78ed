//! PPO with the auxiliary causal loss, behavior cloning, and the training
//! loop that ties collection, updates, evaluation and checkpoints together.

mod bc;
mod gae;
mod ppo;
mod rollout;
mod run;

use serde::{Deserialize, Serialize};

use crate::causal::CausalObjective;
use crate::error::{Error, Result};

pub use bc::{bc_loss, bc_update, train_bc, BcStats, Demo, DemoStep};
pub use gae::{compute_gae, normalize};
pub use ppo::{causal_transitions, ppo_loss, ppo_update, LossVars, UpdateStats};
pub(crate) use rollout::fresh_episode;
pub use rollout::{collect_rollouts, RolloutBuffer, Sequence, StepRecord, Workers};
pub use run::{checkpoint_name, train, LogRow, TrainOutcome, BEST_CHECKPOINT, LOG_COLUMNS, LOG_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Weight of the causal loss.
    pub alpha: f64,
    pub rollout_horizon: usize,
    pub num_envs: usize,
    pub total_steps: u64,
    pub lr0: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 4,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            alpha: 1.0,
            rollout_horizon: 128,
            num_envs: 8,
            total_steps: 1_000_000,
            lr0: 1e-4,
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("ppo.{field} {why}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda", "must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps", "must be positive");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha", "must be non-negative");
        }
        if self.epochs == 0 || self.minibatches == 0 {
            return bad("epochs", "and ppo.minibatches must be at least 1");
        }
        if self.rollout_horizon == 0 || self.num_envs == 0 {
            return bad("rollout_horizon", "and ppo.num_envs must be at least 1");
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return bad("lr0", "must be a non-negative number");
        }
        if !(self.max_grad_norm >= 0.0) {
            return bad("max_grad_norm", "must be non-negative");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return bad("value_coef", "and ppo.entropy_coef must be non-negative");
        }
        Ok(())
    }
}

/// How the causal predictor is trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalConfig {
    pub objective: CausalObjective,
    /// Stop gradients through the next-step target features.
    pub detach_targets: bool,
}

impl Default for CausalConfig {
    fn default() -> Self {
        Self {
            objective: CausalObjective::Mse,
            detach_targets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub epochs: usize,
    /// Demo episodes per update.
    pub batch_episodes: usize,
    pub lr: f64,
    pub alpha: f64,
    pub max_grad_norm: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_episodes: 32,
            lr: 1e-3,
            alpha: 1.0,
            max_grad_norm: 0.5,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_episodes == 0 {
            return Err(Error::Config(
                "bc.epochs and bc.batch_episodes must be at least 1".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.alpha >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(Error::Config(
                "bc.lr, bc.alpha and bc.max_grad_norm must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Environment steps between evaluations.
    pub interval: u64,
    pub episodes: usize,
    /// First held-out world seed; one episode per seed.
    pub seed_base: u64,
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 20_000,
            episodes: 50,
            seed_base: crate::metrics::EVAL_SEED_BASE,
            greedy: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.episodes == 0 {
            return Err(Error::Config(
                "eval.interval and eval.episodes must be at least 1".into(),
            ));
        }
        if self.seed_base < crate::metrics::EVAL_SEED_BASE {
            return Err(Error::Config(format!(
                "eval.seed_base must be at least {}",
                crate::metrics::EVAL_SEED_BASE
            )));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.episodes as u64).map(|i| self.seed_base + i).collect()
    }
}

/// Scales gradients so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm(store: &mut crate::nn::ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}
