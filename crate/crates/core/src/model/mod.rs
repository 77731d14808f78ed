//! Policy network: observation encoder, objective and action embeddings,
//! objective integration, an interleaved causal sequence encoder (transformer
//! or GRU), and actor/critic heads. The causal predictor's parameters live in
//! the same store so a single optimizer covers everything.

mod forward;
mod incremental;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, Goal, Observation, TaskVariant, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::nn::{embedding, glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

pub use forward::{ForwardOutput, SequenceBatch};
pub use incremental::{IncrementalState, StepOutput};

/// Token id of the null action (no action taken yet at this step).
pub const NULL_ACTION: usize = NUM_ACTIONS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    Transformer,
    Rnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward hidden width as a multiple of `d_model`.
    pub ff_mult: usize,
    pub encoder: EncoderVariant,
    /// Longest episode the sequence encoder accepts, in steps.
    pub max_steps: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            heads: 4,
            layers: 1,
            ff_mult: 2,
            encoder: EncoderVariant::Transformer,
            max_steps: 128,
        }
    }
}

impl AgentConfig {
    /// Four heads of width 392 (total 1568), one layer.
    pub fn full_scale() -> Self {
        Self {
            d_model: 1568,
            heads: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "agent.d_model ({}) must be a positive multiple of agent.heads ({})",
                self.d_model, self.heads
            )));
        }
        if self.layers == 0 && self.encoder == EncoderVariant::Transformer {
            return Err(Error::Config("agent.layers must be at least 1".into()));
        }
        if self.ff_mult == 0 || self.max_steps == 0 {
            return Err(Error::Config(
                "agent.ff_mult and agent.max_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the task objective enters the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// Embedding table over object categories.
    Categories(usize),
    /// Linear map of the point-goal features.
    PointGoal,
}

/// Objective input for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalInput {
    Point([f64; 3]),
    Category(usize),
}

impl GoalInput {
    pub fn from_goal(goal: &Goal) -> Self {
        match goal {
            Goal::Object { category } => GoalInput::Category(*category as usize),
            Goal::Point { .. } => GoalInput::Point(goal.point_features().expect("point goal")),
        }
    }
}

/// One step of model input.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInput {
    pub obs: Vec<f64>,
    pub goal: GoalInput,
    /// Action taken at this step, or [`NULL_ACTION`] when not yet chosen.
    pub action: usize,
}

impl StepInput {
    pub fn from_observation(obs: &Observation, action: usize) -> Self {
        Self {
            obs: obs.one_hot(),
            goal: GoalInput::from_goal(&obs.goal),
            action,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff1_w: ParamId,
    ff1_b: ParamId,
    ff2_w: ParamId,
    ff2_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum SeqIds {
    Transformer {
        blocks: Vec<BlockIds>,
        lnf_g: ParamId,
        lnf_b: ParamId,
    },
    Rnn {
        w_x: ParamId,
        w_h: ParamId,
        b_x: ParamId,
        b_h: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum GoalIds {
    Table(ParamId),
    Linear(ParamId, ParamId),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelIds {
    obs_w: ParamId,
    obs_b: ParamId,
    goal: GoalIds,
    action_table: ParamId,
    integ_w: ParamId,
    integ_b: ParamId,
    seq: SeqIds,
    actor_w: ParamId,
    actor_b: ParamId,
    critic_w: ParamId,
    critic_b: ParamId,
    pub(crate) causal_w: ParamId,
    pub(crate) causal_b: ParamId,
}

/// The agent: configuration, parameters and the ids that address them.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    config: AgentConfig,
    obs_dim: usize,
    objective: ObjectiveKind,
    pub params: ParamStore,
    pub(crate) ids: ModelIds,
}

impl AgentModel {
    pub fn for_env<R: Rng + ?Sized>(config: &AgentConfig, env: &EnvConfig, rng: &mut R) -> Result<Self> {
        let objective = match env.task {
            TaskVariant::PointNav => ObjectiveKind::PointGoal,
            TaskVariant::ObjectNav => ObjectiveKind::Categories(env.categories),
        };
        Self::new(config, env.observation_len(), objective, rng)
    }

    pub fn new<R: Rng + ?Sized>(
        config: &AgentConfig,
        obs_dim: usize,
        objective: ObjectiveKind,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut p = ParamStore::new();
        let zeros = |n: usize| Tensor::zeros(&[n]);
        let ones = |n: usize| Tensor::filled(&[n], 1.0);
        let obs_w = p.insert("encoder.obs.weight", glorot(rng, obs_dim, d))?;
        let obs_b = p.insert("encoder.obs.bias", zeros(d))?;
        let goal = match objective {
            ObjectiveKind::Categories(c) => {
                GoalIds::Table(p.insert("embed.objective.weight", embedding(rng, c, d, 0.02))?)
            }
            ObjectiveKind::PointGoal => GoalIds::Linear(
                p.insert("embed.goal.weight", glorot(rng, 3, d))?,
                p.insert("embed.goal.bias", zeros(d))?,
            ),
        };
        let action_table = p.insert("embed.action.weight", embedding(rng, NUM_ACTIONS + 1, d, 0.02))?;
        let integ_w = p.insert("integrate.fuse.weight", glorot(rng, 2 * d, d))?;
        let integ_b = p.insert("integrate.fuse.bias", zeros(d))?;
        let seq = match config.encoder {
            EncoderVariant::Transformer => {
                let ff = config.ff_mult * d;
                let mut blocks = Vec::with_capacity(config.layers);
                for l in 0..config.layers {
                    let n = |s: &str| format!("seq.layer{l}.{s}");
                    blocks.push(BlockIds {
                        ln1_g: p.insert(n("ln1.gamma"), ones(d))?,
                        ln1_b: p.insert(n("ln1.beta"), zeros(d))?,
                        qkv_w: p.insert(n("attn.qkv.weight"), glorot(rng, d, 3 * d))?,
                        qkv_b: p.insert(n("attn.qkv.bias"), zeros(3 * d))?,
                        out_w: p.insert(n("attn.out.weight"), glorot(rng, d, d))?,
                        out_b: p.insert(n("attn.out.bias"), zeros(d))?,
                        ln2_g: p.insert(n("ln2.gamma"), ones(d))?,
                        ln2_b: p.insert(n("ln2.beta"), zeros(d))?,
                        ff1_w: p.insert(n("ff.in.weight"), glorot(rng, d, ff))?,
                        ff1_b: p.insert(n("ff.in.bias"), zeros(ff))?,
                        ff2_w: p.insert(n("ff.out.weight"), glorot(rng, ff, d))?,
                        ff2_b: p.insert(n("ff.out.bias"), zeros(d))?,
                    });
                }
                SeqIds::Transformer {
                    blocks,
                    lnf_g: p.insert("seq.final_ln.gamma", ones(d))?,
                    lnf_b: p.insert("seq.final_ln.beta", zeros(d))?,
                }
            }
            EncoderVariant::Rnn => SeqIds::Rnn {
                w_x: p.insert("seq.gru.input.weight", glorot(rng, d, 3 * d))?,
                w_h: p.insert("seq.gru.hidden.weight", glorot(rng, d, 3 * d))?,
                b_x: p.insert("seq.gru.input.bias", zeros(3 * d))?,
                b_h: p.insert("seq.gru.hidden.bias", zeros(3 * d))?,
            },
        };
        let actor_w = p.insert("actor.head.weight", glorot(rng, d, NUM_ACTIONS))?;
        let actor_b = p.insert("actor.head.bias", zeros(NUM_ACTIONS))?;
        let critic_w = p.insert("critic.head.weight", glorot(rng, d, 1))?;
        let critic_b = p.insert("critic.head.bias", zeros(1))?;
        let causal_w = p.insert("causal.predict.weight", glorot(rng, 2 * d, 2 * d))?;
        let causal_b = p.insert("causal.predict.bias", zeros(2 * d))?;
        Ok(Self {
            config: config.clone(),
            obs_dim,
            objective,
            params: p,
            ids: ModelIds {
                obs_w,
                obs_b,
                goal,
                action_table,
                integ_w,
                integ_b,
                seq,
                actor_w,
                actor_b,
                critic_w,
                critic_b,
                causal_w,
                causal_b,
            },
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn objective(&self) -> ObjectiveKind {
        self.objective
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Parameters of the causal predictor `[2d x 2d]` weight and `[2d]` bias.
    pub fn causal_param_ids(&self) -> (ParamId, ParamId) {
        (self.ids.causal_w, self.ids.causal_b)
    }

    /// Whether `name` feeds the inputs of the causal predictor (encoders,
    /// embeddings and the integration layer).
    pub fn feeds_causal_inputs(name: &str) -> bool {
        name.starts_with("encoder.") || name.starts_with("embed.") || name.starts_with("integrate.")
    }

    /// Replaces every parameter with values from `store`, matched by name and shape.
    pub fn load_params(&mut self, store: &ParamStore) -> Result<()> {
        if store.names() != self.params.names() {
            return Err(Error::Format(
                "checkpoint parameter names do not match the model".into(),
            ));
        }
        for (id, name, t) in store.iter() {
            if t.shape() != self.params.tensor(id).shape() {
                return Err(Error::Format(format!("parameter {name} has shape {:?}", t.shape())));
            }
            *self.params.tensor_mut(id) = t.clone();
        }
        Ok(())
    }
}
