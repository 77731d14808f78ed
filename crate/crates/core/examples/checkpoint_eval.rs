//! Trains briefly into a directory, then reloads the best checkpoint to
//! evaluate it and report its causal diagnostic.

use std::path::PathBuf;

use cannav::harness::config::RunConfig;
use cannav::harness::{cmi_report_cmd, eval_cmd, train_cmd, CmiOptions, EvalRequest};
use cannav::train::BEST_CHECKPOINT;

fn main() -> cannav::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/checkpoint_demo".into()));
    let mut cfg = RunConfig::default();
    cfg.agent.d_model = 32;
    cfg.ppo.total_steps = 20_000;
    cfg.eval.interval = 10_000;
    cfg.eval.episodes = 20;
    cfg.output_dir = dir.clone();
    let done = train_cmd(&cfg)?;
    println!("trained {} steps into {}", done.outcome.steps, dir.display());

    let ckpt = dir.join(BEST_CHECKPOINT);
    let req = EvalRequest {
        episodes: 100,
        ..EvalRequest::default()
    };
    let r = eval_cmd(&ckpt, &req)?;
    println!(
        "{}: sr {:.3} spl {:.3} gd {:.2} over {}",
        r.checkpoint, r.sr, r.spl, r.gd, r.n
    );
    let cmi = cmi_report_cmd(&ckpt, &CmiOptions::default())?;
    println!(
        "cmi over {} rows: lower {:.4} mid {:.4} upper {:.4}",
        cmi.rows.len(),
        cmi.lower_mean,
        cmi.mid_mean,
        cmi.upper_mean
    );
    Ok(())
}
