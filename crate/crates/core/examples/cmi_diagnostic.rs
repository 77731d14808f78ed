//! The CMI diagnostic on two synthetic worlds: next features that ignore the
//! action, and next features chosen by it.

use cannav::causal::{estimate_cmi, fit_predictor, CausalObjective, CausalPredictor, TransitionBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const D: usize = 4;
const ACTIONS: usize = 4;

fn dataset(determined: bool, rng: &mut ChaCha8Rng) -> cannav::Result<TransitionBatch> {
    let embed: Vec<Vec<f64>> = (0..ACTIONS)
        .map(|_| (0..D).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut data = TransitionBatch::new(D);
    for _ in 0..1000 {
        let a = rng.gen_range(0..ACTIONS);
        let h: Vec<f64> = (0..D).map(|_| rng.sample(StandardNormal)).collect();
        let next: Vec<f64> = (0..D)
            .map(|i| {
                let noise = 0.3 * rng.sample::<f64, _>(StandardNormal);
                if determined {
                    (if i == a { 3.0 } else { -1.0 }) + noise
                } else {
                    0.8 * h[i] + noise
                }
            })
            .collect();
        data.push(&h, &embed[a], &next)?;
    }
    Ok(data)
}

fn main() -> cannav::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for determined in [false, true] {
        let data = dataset(determined, &mut rng)?;
        let mut p = CausalPredictor::new(D, &mut rng)?;
        let nll = fit_predictor(&mut p, &data, CausalObjective::Nll, 2000, 1e-2)?;
        for k in [1, 4, 16] {
            let e = estimate_cmi(p.view(), &data, k, 500, &mut rng)?;
            println!(
                "{:<16} nll {nll:.3}  K={k:<2}  lower {:>8.4}  mid {:>8.4}  upper {:>8.4}",
                if determined { "action-chosen" } else { "action-ignored" },
                e.lower_mean,
                e.mid_mean,
                e.upper_mean
            );
        }
    }
    Ok(())
}
