use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::harness::artifacts::CsvArtifact;
use crate::harness::config::{KeepCheckpoints, RunConfig};
use crate::metrics::{evaluate, AgentPolicy, EvalOptions, MetricsReport};
use crate::model::AgentModel;
use crate::optim::{linear_lr, AdamState};
use crate::seeding;

use super::ppo::{ppo_update, UpdateStats};
use super::rollout::{collect_rollouts, Workers};

/// One training-log row, written after every evaluation. Losses average the
/// updates since the previous row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub sr: f64,
    pub spl: f64,
    pub gd: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub causal_loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

pub const LOG_COLUMNS: [&str; 10] = [
    "step",
    "sr",
    "spl",
    "gd",
    "policy_loss",
    "value_loss",
    "entropy",
    "causal_loss",
    "lr",
    "wall_time",
];

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: AgentModel,
    pub log: Vec<LogRow>,
    pub steps: u64,
    /// `(step, sr)` of the best evaluation; earliest wins ties.
    pub best: Option<(u64, f64)>,
    pub final_report: Option<MetricsReport>,
    pub best_report: Option<MetricsReport>,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step}.json")
}

pub const BEST_CHECKPOINT: &str = "best_sr.json";
pub const LOG_FILE: &str = "train_log.csv";

struct Sink {
    dir: PathBuf,
    log: CsvArtifact,
    keep: KeepCheckpoints,
    last: Option<PathBuf>,
    written: Vec<PathBuf>,
}

impl Sink {
    fn open(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut log = CsvArtifact::create(&dir.join(LOG_FILE), &cfg.provenance_line())?;
        log.header(&LOG_COLUMNS)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            keep: cfg.keep_checkpoints,
            last: None,
            written: Vec::new(),
        })
    }

    fn checkpoint(&mut self, ck: &Checkpoint, best: bool) -> Result<()> {
        let path = self.dir.join(checkpoint_name(ck.step));
        ck.save(&path)?;
        if best {
            ck.save(&self.dir.join(BEST_CHECKPOINT))?;
        }
        if self.keep == KeepCheckpoints::FinalAndBest {
            if let Some(prev) = self.last.take() {
                fs::remove_file(&prev).map_err(|e| Error::io(&prev, e))?;
                self.written.retain(|p| p != &prev);
            }
        }
        self.last = Some(path.clone());
        self.written.push(path);
        Ok(())
    }
}

/// Alternates rollout collection and PPO updates, evaluating every
/// `eval.interval` steps and at the end. With `out_dir` set, writes the
/// training log and checkpoints there.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut init_rng = seeding::stream(cfg.seed, seeding::POLICY_INIT, 0);
    let mut model = AgentModel::for_env(&cfg.agent, &cfg.env, &mut init_rng)?;
    let mut adam = AdamState::new(&model.params);
    let mut sink = out_dir.map(|d| Sink::open(d, cfg)).transpose()?;
    let config_json = serde_json::to_value(cfg).map_err(|e| Error::json("config", e))?;
    let ppo = &cfg.ppo;

    if ppo.total_steps == 0 {
        if let Some(s) = sink.as_mut() {
            s.checkpoint(&Checkpoint::new(0, config_json, &model.params, Some(&adam)), false)?;
        }
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            steps: 0,
            best: None,
            final_report: None,
            best_report: None,
            checkpoints: sink.map(|s| s.written).unwrap_or_default(),
        });
    }

    let mut workers = Workers::new(&cfg.env, ppo.num_envs, cfg.seed)?;
    let mut mb_rng = seeding::stream(cfg.seed, seeding::MINIBATCH, 0);
    let eval_seeds = cfg.eval.seeds();
    let mut steps = 0u64;
    let mut next_eval = cfg.eval.interval;
    let mut pending: Vec<UpdateStats> = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    let mut final_report = None;
    let mut best_report = None;
    while steps < ppo.total_steps {
        let lr = linear_lr(steps, ppo.total_steps, ppo.lr0);
        let mut buf = collect_rollouts(&model, &mut workers, ppo.rollout_horizon)?;
        buf.finish(ppo.gamma, ppo.gae_lambda);
        pending.push(ppo_update(
            &mut model,
            &mut adam,
            &buf,
            ppo,
            &cfg.causal,
            lr,
            &mut mb_rng,
        )?);
        steps += buf.len() as u64;

        if steps >= next_eval || steps >= ppo.total_steps {
            let mut policy = AgentPolicy::new(&model, cfg.eval.greedy, cfg.seed);
            let report = evaluate(&mut policy, &cfg.env, &eval_seeds, 1, EvalOptions::default())?;
            let stats = UpdateStats::mean(&pending);
            pending.clear();
            let row = LogRow {
                step: steps,
                sr: report.sr,
                spl: report.spl,
                gd: report.gd,
                policy_loss: stats.policy_loss,
                value_loss: stats.value_loss,
                entropy: stats.entropy,
                causal_loss: stats.causal_loss,
                lr,
                wall_time: if cfg.log_wall_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            info!(
                "step {} sr {:.3} spl {:.3} gd {:.2} causal {:.4}",
                row.step, row.sr, row.spl, row.gd, row.causal_loss
            );
            let is_best = best.map_or(true, |(_, sr)| report.sr > sr);
            if is_best {
                best = Some((steps, report.sr));
                best_report = Some(report.clone());
            }
            if let Some(s) = sink.as_mut() {
                s.log.row(&row)?;
                let ck = Checkpoint::new(steps, config_json.clone(), &model.params, Some(&adam));
                s.checkpoint(&ck, is_best)?;
            }
            log.push(row);
            final_report = Some(report);
            while next_eval <= steps {
                next_eval += cfg.eval.interval;
            }
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        steps,
        best,
        final_report,
        best_report,
        checkpoints: sink.map(|s| s.written).unwrap_or_default(),
    })
}
