//! Trains a small agent on 11x11 PointNav and prints the evaluation curve.
//!
//! Extra arguments are config overrides, e.g.
//! `cargo run --release --example train_pointnav -- ppo.total_steps=50000 ppo.alpha=0`.

use std::time::Instant;

use cannav::harness::config::RunConfig;

fn main() -> cannav::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut base = RunConfig::default();
    base.agent.d_model = 32;
    base.ppo.total_steps = 20_000;
    base.eval.interval = 10_000;
    base.eval.episodes = 20;
    let overrides: Vec<String> = std::env::args().skip(1).collect();
    let cfg = base.with_overrides(&overrides)?;
    let t0 = Instant::now();
    let out = cannav::train::train(&cfg, None)?;
    let secs = t0.elapsed().as_secs_f64();
    for row in &out.log {
        println!(
            "step {:>8}  sr {:.3}  spl {:.3}  gd {:.2}  causal {:.4}",
            row.step, row.sr, row.spl, row.gd, row.causal_loss
        );
    }
    println!(
        "{} steps in {:.1}s ({:.0} steps/s)",
        out.steps,
        secs,
        out.steps as f64 / secs
    );
    Ok(())
}
