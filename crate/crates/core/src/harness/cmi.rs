use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::causal::{estimate_cmi, CmiEstimate, PredictorView};
use crate::error::{Error, Result};
use crate::seeding;
use crate::train::{causal_transitions, collect_rollouts, Workers};

use super::artifacts::CsvArtifact;
use super::load_checkpoint;

pub const REPORT_FILE: &str = "cmi_report.csv";
pub const ROWS_FILE: &str = "cmi_rows.csv";
pub const REPORT_COLUMNS: [&str; 7] = [
    "checkpoint",
    "K",
    "eval_rows",
    "lower_mean",
    "mid_mean",
    "upper_mean",
    "seed",
];

#[derive(Debug, Clone)]
pub struct CmiOptions {
    pub k: usize,
    /// Rows scored; capped at the number of collected transitions.
    pub rows: usize,
    pub seed: u64,
    /// Rollout steps per environment; defaults to the checkpoint's horizon.
    pub horizon: Option<usize>,
    /// Output directory; defaults to the checkpoint's directory.
    pub out_dir: Option<PathBuf>,
}

impl Default for CmiOptions {
    fn default() -> Self {
        Self {
            k: 8,
            rows: 512,
            seed: 0,
            horizon: None,
            out_dir: None,
        }
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    checkpoint: &'a str,
    #[serde(rename = "K")]
    k: usize,
    eval_rows: usize,
    lower_mean: f64,
    mid_mean: f64,
    upper_mean: f64,
    seed: u64,
}

#[derive(Serialize)]
struct BoundRow {
    row: usize,
    lower: f64,
    mid: f64,
    upper: f64,
}

/// Collects fresh on-policy transitions with the checkpoint's policy and
/// writes the bound means plus a per-row dump.
pub fn cmi_report_cmd(checkpoint: &Path, opts: &CmiOptions) -> Result<CmiEstimate> {
    if opts.k == 0 || opts.rows == 0 {
        return Err(Error::Config("--k and --rows must be positive".into()));
    }
    let (cfg, model, _) = load_checkpoint(checkpoint)?;
    let horizon = opts.horizon.unwrap_or(cfg.ppo.rollout_horizon);
    let mut workers = Workers::new(&cfg.env, cfg.ppo.num_envs, opts.seed)?;
    let buf = collect_rollouts(&model, &mut workers, horizon)?;
    let data = causal_transitions(&model, &buf)?;
    if opts.k > data.len() {
        return Err(Error::Config(format!(
            "K = {} exceeds the {} collected transitions; lower K or raise the horizon",
            opts.k,
            data.len()
        )));
    }
    let mut rng = seeding::stream(opts.seed, seeding::CMI, 0);
    let est = estimate_cmi(PredictorView::from_model(&model), &data, opts.k, opts.rows, &mut rng)?;

    let dir = match &opts.out_dir {
        Some(d) => d.clone(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let prov = cfg.provenance_with_seed(opts.seed);
    let name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut report = CsvArtifact::create(&dir.join(REPORT_FILE), &prov)?;
    report.header(&REPORT_COLUMNS)?;
    report.row(&ReportRow {
        checkpoint: &name,
        k: opts.k,
        eval_rows: est.rows.len(),
        lower_mean: est.lower_mean,
        mid_mean: est.mid_mean,
        upper_mean: est.upper_mean,
        seed: opts.seed,
    })?;
    let mut rows = CsvArtifact::create(&dir.join(ROWS_FILE), &prov)?;
    rows.header(&["row", "lower", "mid", "upper"])?;
    for (i, b) in est.rows.iter().enumerate() {
        rows.row(&BoundRow {
            row: i,
            lower: b.lower,
            mid: b.mid,
            upper: b.upper,
        })?;
    }
    Ok(est)
}
