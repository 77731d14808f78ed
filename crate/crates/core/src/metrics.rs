//! Success rate, SPL and goal distance over held-out episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{oracle_action, oracle_plan, Action, EnvConfig, Episode, Observation, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::{AgentModel, GoalInput, IncrementalState};

/// World seeds below this value are reserved for training.
pub const EVAL_SEED_BASE: u64 = 1_000_000;

/// Offset between the world seeds of consecutive episodes of one seed.
const EPISODE_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub success: bool,
    /// MoveAhead actions that changed the agent's cell.
    pub path_length: u32,
    /// Oracle move count from the start state.
    pub shortest_path: u32,
    pub final_geodesic: u32,
    pub steps: u32,
}

fn nonempty(records: &[EpisodeRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Contract("no episode records".into()));
    }
    if let Some(r) = records.iter().find(|r| r.shortest_path == 0) {
        return Err(Error::Contract(format!(
            "episode of seed {} has zero shortest path",
            r.seed
        )));
    }
    Ok(())
}

/// `(1/N) sum_i S_i l_i / max(p_i, l_i)`.
pub fn spl(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    let total: f64 = records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.shortest_path as f64 / r.path_length.max(r.shortest_path) as f64)
        // f64's Sum starts at -0.0, which would print as "-0" when nobody succeeds
        .fold(0.0, |a, b| a + b);
    Ok(total / records.len() as f64)
}

pub fn success_rate(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(records.iter().filter(|r| r.success).count() as f64 / records.len() as f64)
}

pub fn goal_distance(records: &[EpisodeRecord]) -> Result<f64> {
    nonempty(records)?;
    Ok(records.iter().map(|r| r.final_geodesic as f64).sum::<f64>() / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub sr: f64,
    pub spl: f64,
    pub gd: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub spl: f64,
    pub gd: f64,
    pub n_episodes: usize,
    pub per_seed: Vec<SeedReport>,
}

impl MetricsReport {
    /// Aggregates records; per-seed rows keep first-appearance order.
    pub fn from_records(records: &[EpisodeRecord]) -> Result<Self> {
        let mut seeds: Vec<u64> = Vec::new();
        for r in records {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        let per_seed = seeds
            .into_iter()
            .map(|seed| {
                let rs: Vec<EpisodeRecord> = records.iter().filter(|r| r.seed == seed).copied().collect();
                Ok(SeedReport {
                    seed,
                    sr: success_rate(&rs)?,
                    spl: spl(&rs)?,
                    gd: goal_distance(&rs)?,
                    episodes: rs.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sr: success_rate(records)?,
            spl: spl(records)?,
            gd: goal_distance(records)?,
            n_episodes: records.len(),
            per_seed,
        })
    }
}

/// Anything that picks actions in an episode.
pub trait Policy {
    fn begin_episode(&mut self, _episode: &Episode) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, episode: &Episode, observation: &Observation) -> Result<Action>;
}

/// Follows the shortest-path oracle.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn act(&mut self, ep: &Episode, _obs: &Observation) -> Result<Action> {
        oracle_action(&ep.world, ep.goal_map(), &ep.state, &ep.task, &ep.config)
    }
}

/// Uniform over all actions.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, _ep: &Episode, _obs: &Observation) -> Result<Action> {
        Action::from_index(self.rng.gen_range(0..NUM_ACTIONS))
    }
}

/// Runs a trained model step by step; argmax actions when `greedy`.
#[derive(Debug)]
pub struct AgentPolicy<'a> {
    model: &'a AgentModel,
    state: IncrementalState,
    greedy: bool,
    rng: ChaCha8Rng,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(model: &'a AgentModel, greedy: bool, seed: u64) -> Self {
        Self {
            model,
            state: model.start(),
            greedy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `softmax(logits)`.
pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let probs = kernels::softmax(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Policy for AgentPolicy<'_> {
    fn begin_episode(&mut self, _ep: &Episode) -> Result<()> {
        self.state = self.model.start();
        Ok(())
    }

    fn act(&mut self, _ep: &Episode, obs: &Observation) -> Result<Action> {
        let out = self
            .model
            .observe(&mut self.state, &obs.one_hot(), &GoalInput::from_goal(&obs.goal))?;
        let a = if self.greedy {
            argmax(&out.logits)
        } else {
            sample_categorical(&out.logits, &mut self.rng)
        };
        self.model.push_action(&mut self.state, a)?;
        Action::from_index(a)
    }
}

/// World seed of episode `index` for evaluation seed `seed`.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64 * EPISODE_STRIDE)
}

pub fn run_episode(
    policy: &mut dyn Policy,
    world_seed: u64,
    cfg: &EnvConfig,
    record_seed: u64,
) -> Result<EpisodeRecord> {
    let mut ep = Episode::generate(world_seed, cfg)?;
    let shortest = oracle_plan(&ep.world, ep.goal_map(), &ep.state, &ep.task, cfg)?.moves();
    policy.begin_episode(&ep)?;
    let mut obs = ep.observation();
    while !ep.is_done() {
        let a = policy.act(&ep, &obs)?;
        obs = ep.step(a)?.observation;
    }
    Ok(EpisodeRecord {
        seed: record_seed,
        success: ep.succeeded(),
        path_length: ep.moves() as u32,
        shortest_path: shortest as u32,
        final_geodesic: ep.geodesic_to_goal(),
        steps: ep.elapsed() as u32,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalOptions {
    /// Permit world seeds from the training range.
    pub allow_train_seeds: bool,
}

/// Runs `episodes_per_seed` episodes per seed; never touches model parameters.
pub fn evaluate(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    seeds: &[u64],
    episodes_per_seed: usize,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    if !opts.allow_train_seeds {
        if let Some(s) = seeds.iter().find(|&&s| s < EVAL_SEED_BASE) {
            return Err(Error::Config(format!(
                "evaluation seed {s} overlaps the training range (< {EVAL_SEED_BASE})"
            )));
        }
    }
    let mut records = Vec::with_capacity(seeds.len() * episodes_per_seed);
    for &seed in seeds {
        for j in 0..episodes_per_seed {
            records.push(run_episode(policy, episode_seed(seed, j), cfg, seed)?);
        }
    }
    MetricsReport::from_records(&records)
}
