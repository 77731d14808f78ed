//! Adam with bias correction, plus the linear learning-rate schedule.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_hyper(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.values().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one Adam update to `params` in place using `grads`.
    ///
    /// Parameters, gradients and moment buffers must line up one to one.
    pub fn step_tensors(&mut self, names: &[String], params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len(), self.m.len()]));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.m[i].len() != p.numel() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.all_finite() {
                let name = names.get(i).map(String::as_str).unwrap_or("?");
                return Err(Error::NonFinite(format!("gradient of parameter {name}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One Adam step over every parameter of the store using its gradient buffers.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<()> {
    let names = store.names().to_vec();
    let (values, grads) = store.values_and_grads_mut();
    state.step_tensors(&names, values, grads, lr)
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

/// `lr0 * (1 - step / total_steps)`; steps past the end clamp to zero.
pub fn linear_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if step >= total_steps {
        if step > total_steps && !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("learning-rate schedule queried at step {step} past its end {total_steps}; using 0");
        }
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total_steps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(value)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = single(0.7);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 1e-3).unwrap();
        assert_eq!(s.values()[0].item(), 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut s = single(0.7);
        s.grad_mut(crate::nn::ParamId(0)).data_mut()[0] = 3.0;
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.0).unwrap();
        assert_eq!(s.values()[0].item(), 0.7);
    }

    #[test]
    fn first_step_matches_hand_unrolled_update() {
        let lr = 1e-4;
        let mut s = single(0.0);
        s.grad_mut(crate::nn::ParamId(0)).data_mut()[0] = 1.0;
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, lr).unwrap();
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1
        let (m, v) = (0.1_f64, 0.001_f64);
        let expected = -lr * (m / 0.1) / ((v / 0.001).sqrt() + 1e-8);
        assert!((s.values()[0].item() - expected).abs() < 1e-18);
        assert!((expected + lr / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn second_step_matches_recurrence() {
        let lr = 0.01;
        let mut s = single(1.0);
        let mut st = AdamState::new(&s);
        let grads = [0.5, -2.0];
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            s.grad_mut(crate::nn::ParamId(0)).data_mut()[0] = *g;
            adam_step(&mut s, &mut st, lr).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (t + 1) as i32;
            w -= lr * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        }
        assert!((s.values()[0].item() - w).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = single(1.0);
        s.grad_mut(crate::nn::ParamId(0)).data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &mut st, 0.1).unwrap_err().to_string();
        assert!(err.contains('w'), "{err}");
    }

    #[test]
    fn linear_schedule_boundaries() {
        assert_eq!(linear_lr(0, 100, 1e-4), 1e-4);
        assert_eq!(linear_lr(100, 100, 1e-4), 0.0);
        assert!((linear_lr(50, 100, 1e-4) - 5e-5).abs() < 1e-20);
        assert_eq!(linear_lr(150, 100, 1e-4), 0.0);
    }
}
