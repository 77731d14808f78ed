/// Generalized advantage estimates for one environment's time series.
///
/// `dones[t]` marks that the episode ended at step `t`; no value is
/// bootstrapped across it. `bootstrap` is the value of the state following
/// the last step and is ignored when that step is terminal.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "gae inputs must be congruent");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let (next_value, live) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == n {
            (bootstrap, 1.0)
        } else {
            (values[t + 1], 1.0)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// In-place standardization to zero mean and unit variance.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_unrolled_two_steps() {
        let (adv, ret) = compute_gae(&[0.0, 1.0], &[0.0, 0.0], &[false, true], 123.0, 1.0, 1.0);
        assert_eq!(adv, vec![1.0, 1.0]);
        assert_eq!(ret, vec![1.0, 1.0]);
    }

    #[test]
    fn terminal_step_does_not_bootstrap() {
        let (adv, _) = compute_gae(&[2.0], &[0.5], &[true], 10.0, 0.99, 0.95);
        assert_eq!(adv, vec![1.5]);
    }

    #[test]
    fn zero_gamma_is_one_step() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let (adv, _) = compute_gae(&r, &v, &[false, false, false], 5.0, 0.0, 0.95);
        for t in 0..3 {
            assert_eq!(adv[t], r[t] - v[t]);
        }
    }

    #[test]
    fn bootstrap_applies_to_open_tail() {
        let (adv, _) = compute_gae(&[0.0], &[0.0], &[false], 2.0, 0.5, 1.0);
        assert_eq!(adv, vec![1.0]);
    }

    #[test]
    fn done_blocks_the_recursion() {
        let (adv, _) = compute_gae(&[0.0, 5.0], &[0.0, 0.0], &[true, true], 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![0.0, 5.0]);
    }

    #[test]
    fn normalized_moments() {
        let mut xs = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut xs);
        let mean: f64 = xs.iter().sum::<f64>() / 4.0;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
