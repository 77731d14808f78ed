//! Oracle and uniform-random reference points on held-out worlds, for both tasks.

use cannav::env::{EnvConfig, TaskVariant};
use cannav::metrics::{evaluate, EvalOptions, OraclePolicy, Policy, RandomPolicy, EVAL_SEED_BASE};

fn main() -> cannav::Result<()> {
    let seeds: Vec<u64> = (EVAL_SEED_BASE..EVAL_SEED_BASE + 200).collect();
    for task in [TaskVariant::PointNav, TaskVariant::ObjectNav] {
        let cfg = EnvConfig {
            task,
            ..EnvConfig::default()
        };
        let policies: [(&str, Box<dyn Policy>); 2] = [
            ("oracle", Box::new(OraclePolicy)),
            ("random", Box::new(RandomPolicy::new(0))),
        ];
        for (name, mut policy) in policies {
            let r = evaluate(policy.as_mut(), &cfg, &seeds, 1, EvalOptions::default())?;
            println!("{task:?} {name:<7} sr {:.3}  spl {:.3}  gd {:.2}", r.sr, r.spl, r.gd);
        }
    }
    Ok(())
}
