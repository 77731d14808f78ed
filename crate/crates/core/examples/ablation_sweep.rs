//! A short four-variant ablation into `runs/ablation_demo` (or the first
//! argument), followed by an SVG of the mean success curves.

use std::path::PathBuf;

use cannav::harness::ablate::{curve_file, Variant};
use cannav::harness::config::{KeepCheckpoints, RunConfig};
use cannav::harness::{ablate_cmd, plot_cmd};

fn main() -> cannav::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/ablation_demo".into()));
    let mut cfg = RunConfig::default();
    cfg.agent.d_model = 32;
    cfg.ppo.lr0 = 1e-3;
    cfg.ppo.total_steps = 40_000;
    cfg.eval.interval = 10_000;
    cfg.eval.episodes = 20;
    cfg.keep_checkpoints = KeepCheckpoints::FinalAndBest;
    let summary = ablate_cmd(&cfg, &Variant::ALL, &[0, 1], &out)?;
    for s in &summary.stats {
        println!("{:<22} final sr {:.3} ± {:.3}", s.variant.name(), s.sr.mean, s.sr.std);
    }
    let curves: Vec<PathBuf> = Variant::ALL.iter().map(|&v| out.join(curve_file(v))).collect();
    plot_cmd(&curves, &out.join("curves.svg"))?;
    println!("curves in {}", out.join("curves.svg").display());
    Ok(())
}
