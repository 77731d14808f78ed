//! Behaviour cloning from oracle demonstrations, with and without the causal loss.
//!
//! `cargo run --release --example behavior_cloning -- 500` sets the demo count.

use cannav::harness::config::RunConfig;
use cannav::harness::generate_demos;
use cannav::metrics::{evaluate, AgentPolicy, EvalOptions, EVAL_SEED_BASE};
use cannav::model::AgentModel;
use cannav::seeding;
use cannav::train::{train_bc, BcConfig};

fn main() -> cannav::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let mut cfg = RunConfig::default();
    cfg.agent.d_model = 32;
    let demos = generate_demos(&cfg, n)?;
    let steps: usize = demos.iter().map(|d| d.steps.len()).sum();
    println!("{n} demos, {steps} steps");
    let seeds: Vec<u64> = (EVAL_SEED_BASE..EVAL_SEED_BASE + 100).collect();
    for alpha in [1.0, 0.0] {
        let mut rng = seeding::stream(cfg.seed, seeding::POLICY_INIT, 0);
        let mut model = AgentModel::for_env(&cfg.agent, &cfg.env, &mut rng)?;
        let bc = BcConfig {
            alpha,
            ..cfg.bc.clone()
        };
        let mut shuffle = seeding::stream(cfg.seed, seeding::BC_SHUFFLE, 0);
        let epochs = train_bc(&mut model, &demos, &bc, &cfg.causal, &mut shuffle)?;
        let last = epochs.last().expect("at least one epoch");
        let r = evaluate(
            &mut AgentPolicy::new(&model, true, 0),
            &cfg.env,
            &seeds,
            1,
            EvalOptions::default(),
        )?;
        println!(
            "alpha {alpha}: ce {:.3} causal {:.4} -> sr {:.3} spl {:.3}",
            last.cross_entropy, last.causal_loss, r.sr, r.spl
        );
    }
    Ok(())
}
