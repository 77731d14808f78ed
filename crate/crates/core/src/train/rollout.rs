use std::ops::Range;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, EnvConfig, Episode};
use crate::error::{Error, Result};
use crate::kernels;
use crate::metrics::{sample_categorical, EVAL_SEED_BASE};
use crate::model::{AgentModel, GoalInput, StepInput};
use crate::seeding;

use super::gae::compute_gae;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub input: StepInput,
    pub reward: f64,
    /// The episode ended with this step.
    pub done: bool,
    pub success: bool,
    pub value: f64,
    /// Log-probability of `input.action` under the collecting policy.
    pub logp: f64,
}

/// One episode fragment. `prefix` holds the same episode's earlier steps from
/// previous rollouts; they give context but are not trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub prefix: Vec<StepInput>,
    pub rows: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    /// Env-major: all steps of env 0, then env 1, ...
    pub records: Vec<StepRecord>,
    pub sequences: Vec<Sequence>,
    pub env_rows: Vec<Range<usize>>,
    /// Value of the state after each env's last step (0 when terminal).
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fills `advantages` and `returns` (advantages are not normalized here).
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        self.advantages.clear();
        self.returns.clear();
        for (rows, &boot) in self.env_rows.iter().zip(&self.bootstrap) {
            let recs = &self.records[rows.clone()];
            let rewards: Vec<f64> = recs.iter().map(|r| r.reward).collect();
            let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
            let dones: Vec<bool> = recs.iter().map(|r| r.done).collect();
            let (adv, ret) = compute_gae(&rewards, &values, &dones, boot, gamma, lambda);
            self.advantages.extend(adv);
            self.returns.extend(ret);
        }
    }

    pub fn is_finished(&self) -> bool {
        self.advantages.len() == self.records.len() && !self.records.is_empty()
    }

    /// Row pairs `(t, t + 1)` inside one sequence with no episode end between.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in &self.sequences {
            for t in s.rows.start..s.rows.end.saturating_sub(1) {
                if !self.records[t].done {
                    out.push((t, t + 1));
                }
            }
        }
        out
    }

    pub fn completed_episodes(&self) -> usize {
        self.records.iter().filter(|r| r.done).count()
    }
}

struct Worker {
    episode: Episode,
    context: Vec<StepInput>,
    world_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
}

/// A fixed set of environments stepped in lockstep by the collector.
pub struct Workers {
    config: EnvConfig,
    workers: Vec<Worker>,
}

pub(crate) fn fresh_episode(rng: &mut ChaCha8Rng, cfg: &EnvConfig) -> Result<Episode> {
    let mut last = None;
    for _ in 0..16 {
        let seed = rng.gen_range(0..EVAL_SEED_BASE);
        match Episode::generate(seed, cfg) {
            Ok(ep) => return Ok(ep),
            Err(e @ Error::Generation { .. }) => {
                warn!("{e}; drawing another world");
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

impl Workers {
    pub fn new(config: &EnvConfig, num_envs: usize, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let workers = (0..num_envs as u64)
            .map(|i| {
                let mut world_rng = seeding::stream(master_seed, seeding::WORLD_GEN, i);
                Ok(Worker {
                    episode: fresh_episode(&mut world_rng, config)?,
                    context: Vec::new(),
                    world_rng,
                    action_rng: seeding::stream(master_seed, seeding::ROLLOUT_WORKER, i),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            workers,
        })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }
}

/// Samples `horizon` steps in every environment. Each environment's
/// in-progress episode is re-encoded under the current parameters first.
pub fn collect_rollouts(model: &AgentModel, workers: &mut Workers, horizon: usize) -> Result<RolloutBuffer> {
    let mut buf = RolloutBuffer::default();
    let cfg = workers.config.clone();
    for (env, w) in workers.workers.iter_mut().enumerate() {
        let env_start = buf.records.len();
        let mut state = model.start();
        for s in &w.context {
            model.observe(&mut state, &s.obs, &s.goal)?;
            model.push_action(&mut state, s.action)?;
        }
        let mut prefix = w.context.clone();
        let mut seq_start = env_start;
        let mut obs = w.episode.observation();
        for _ in 0..horizon {
            let input_obs = obs.one_hot();
            let goal = GoalInput::from_goal(&obs.goal);
            let out = model.observe(&mut state, &input_obs, &goal)?;
            let a = sample_categorical(&out.logits, &mut w.action_rng);
            let mut logp = vec![0.0; out.logits.len()];
            kernels::log_softmax_row(&out.logits, &mut logp);
            model.push_action(&mut state, a)?;
            let res = w
                .episode
                .step(Action::from_index(a)?)
                .map_err(|e| Error::Contract(format!("env {env} (world seed {}): {e}", w.episode.seed)))?;
            let input = StepInput {
                obs: input_obs,
                goal,
                action: a,
            };
            w.context.push(input.clone());
            buf.records.push(StepRecord {
                input,
                reward: res.reward,
                done: res.done,
                success: res.info.success,
                value: out.value,
                logp: logp[a],
            });
            if res.done {
                buf.sequences.push(Sequence {
                    prefix: std::mem::take(&mut prefix),
                    rows: seq_start..buf.records.len(),
                });
                seq_start = buf.records.len();
                w.episode = fresh_episode(&mut w.world_rng, &cfg)?;
                w.context.clear();
                state = model.start();
                obs = w.episode.observation();
            } else {
                obs = res.observation;
            }
        }
        if seq_start < buf.records.len() {
            buf.sequences.push(Sequence {
                prefix,
                rows: seq_start..buf.records.len(),
            });
        }
        let last_done = buf.records.last().map(|r| r.done).unwrap_or(true);
        let boot = if last_done || buf.records.len() == env_start {
            0.0
        } else {
            model
                .observe(&mut state, &obs.one_hot(), &GoalInput::from_goal(&obs.goal))?
                .value
        };
        buf.bootstrap.push(boot);
        buf.env_rows.push(env_start..buf.records.len());
    }
    Ok(buf)
}
