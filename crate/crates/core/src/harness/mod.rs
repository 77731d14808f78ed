//! Command implementations behind the `cannav` binary. Each command is a
//! plain function so tests and examples can drive it without a subprocess.

pub mod ablate;
pub mod artifacts;
pub mod cmi;
pub mod config;
pub mod demos;
pub mod plot;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, AgentPolicy, EvalOptions, MetricsReport};
use crate::model::AgentModel;
use crate::seeding;
use crate::train::{self, TrainOutcome, BEST_CHECKPOINT};

use artifacts::CsvArtifact;
use config::RunConfig;

pub use ablate::{ablate_cmd, AblationSummary, Variant};
pub use cmi::{cmi_report_cmd, CmiOptions};
pub use demos::{gen_demos_cmd, generate_demos, read_demos};
pub use plot::{plot_cmd, PlotSummary};

pub const LOCK_FILE: &str = ".lock";
pub const REPORT_FILE: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_LOG_FILE: &str = "eval_log.csv";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&path, e))?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Contract(format!(
                "{} is in use by another command (delete {} if no run is active)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Evaluation summary written as JSON by `train` and `eval`. `checkpoint` is
/// a file name relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub sr: f64,
    pub spl: f64,
    pub gd: f64,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub checkpoint: String,
    pub config_hash: String,
}

impl RunReport {
    fn new(report: &MetricsReport, seeds: Vec<u64>, checkpoint: String, cfg: &RunConfig) -> Self {
        Self {
            sr: report.sr,
            spl: report.spl,
            gd: report.gd,
            n: report.n_episodes,
            seeds,
            checkpoint,
            config_hash: cfg.hash(),
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Rebuilds the model a checkpoint was taken from.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, AgentModel, Checkpoint)> {
    let ck = Checkpoint::load(path)?;
    let cfg: RunConfig = serde_json::from_value(ck.config.clone())
        .map_err(|e| Error::Format(format!("{}: embedded config: {e}", path.display())))?;
    cfg.validate()?;
    let mut rng = seeding::stream(cfg.seed, seeding::POLICY_INIT, 0);
    let mut model = AgentModel::for_env(&cfg.agent, &cfg.env, &mut rng)?;
    model.load_params(&ck.to_store()?)?;
    Ok((cfg, model, ck))
}

#[derive(Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    /// Metrics of the best-SR checkpoint; absent when no evaluation ran.
    pub report: Option<RunReport>,
}

/// Trains into `cfg.output_dir`: resolved config, training log, checkpoints
/// and a report for the best-SR checkpoint.
pub fn train_cmd(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    let _lock = DirLock::acquire(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_pretty_json() + "\n").map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
    let outcome = train::train(cfg, Some(&dir))?;
    let report = match (&outcome.best, &outcome.best_report) {
        (Some((step, _)), Some(best)) => {
            let r = RunReport::new(best, cfg.eval.seeds(), train::checkpoint_name(*step), cfg);
            write_json(&dir.join(REPORT_FILE), &r)?;
            Some(r)
        }
        _ => None,
    };
    Ok(TrainSummary { outcome, report })
}

#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    pub episodes: usize,
    /// First world seed; defaults to the checkpoint's `eval.seed_base`.
    pub seed_base: Option<u64>,
    pub allow_train_seeds: bool,
}

/// Evaluates a checkpoint on `episodes` consecutive held-out seeds. Writes
/// `eval_<name>.json` next to the checkpoint and appends to its eval log.
pub fn eval_cmd(checkpoint: &Path, req: &EvalRequest) -> Result<RunReport> {
    if req.episodes == 0 {
        return Err(Error::Config("--episodes must be positive".into()));
    }
    let (cfg, model, ck) = load_checkpoint(checkpoint)?;
    let base = req.seed_base.unwrap_or(cfg.eval.seed_base);
    let seeds: Vec<u64> = (base..base + req.episodes as u64).collect();
    let mut policy = AgentPolicy::new(&model, cfg.eval.greedy, cfg.seed);
    let opts = EvalOptions {
        allow_train_seeds: req.allow_train_seeds,
    };
    let metrics = evaluate(&mut policy, &cfg.env, &seeds, 1, opts)?;
    let name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| BEST_CHECKPOINT.into());
    let report = RunReport::new(&metrics, seeds, name.clone(), &cfg);
    let dir = checkpoint
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let stem = name.trim_end_matches(".json");
    write_json(&dir.join(format!("eval_{stem}.json")), &report)?;
    append_eval_row(&dir.join(EVAL_LOG_FILE), &cfg, ck.step, &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct EvalRow<'a> {
    checkpoint: &'a str,
    step: u64,
    n: usize,
    sr: f64,
    spl: f64,
    gd: f64,
    first_seed: u64,
}

fn append_eval_row(path: &Path, cfg: &RunConfig, step: u64, r: &RunReport) -> Result<()> {
    let row = EvalRow {
        checkpoint: &r.checkpoint,
        step,
        n: r.n,
        sr: r.sr,
        spl: r.spl,
        gd: r.gd,
        first_seed: r.seeds.first().copied().unwrap_or_default(),
    };
    let mut out = if path.exists() {
        CsvArtifact::append(path)?
    } else {
        let mut a = CsvArtifact::create(path, &cfg.provenance_line())?;
        a.header(&["checkpoint", "step", "n", "sr", "spl", "gd", "first_seed"])?;
        a
    };
    out.row(&row)
}
