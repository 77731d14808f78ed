//! Next-feature predictor over `(h_o_t, h_a_t) -> h_o_{t+1}`, its training
//! losses, and the conditional mutual information diagnostic built from
//! Gaussian-vs-mixture KL bounds.

use std::f64::consts::{E, PI};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::AgentModel;
use crate::nn::{glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Which objective trains the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalObjective {
    /// Squared error of the mean only; the variance head stays untrained.
    #[default]
    Mse,
    /// Diagonal-Gaussian negative log-likelihood.
    Nll,
}

/// Diagonal Gaussian over a `d`-dimensional feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    mu: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussianPrediction {
    /// `log_var` is clamped to `[-10, 10]`.
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() || mu.is_empty() {
            return Err(Error::shape("gaussian", &[mu.len()], &[log_var.len()]));
        }
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian prediction".into()));
        }
        let log_var = log_var.into_iter().map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX)).collect();
        Ok(Self { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// Differential entropy in nats.
    pub fn entropy(&self) -> f64 {
        0.5 * self.log_var.iter().map(|lv| (2.0 * PI * E).ln() + lv).sum::<f64>()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        -0.5 * self
            .mu
            .iter()
            .zip(&self.log_var)
            .zip(x)
            .map(|((m, lv), x)| LN_2PI + lv + (x - m).powi(2) * (-lv).exp())
            .sum::<f64>()
    }
}

/// Uniformly weighted mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrediction {
    components: Vec<GaussianPrediction>,
}

impl MixturePrediction {
    pub fn new(components: Vec<GaussianPrediction>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Contract("mixture needs at least one component".into()));
        };
        let d = first.dim();
        if let Some(c) = components.iter().find(|c| c.dim() != d) {
            return Err(Error::shape("mixture", &[d], &[c.dim()]));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianPrediction] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.components.len() as f64
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_density(x)).collect();
        log_sum_exp(&logs) - (self.components.len() as f64).ln()
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Rows of `(h_o_t, h_a_t, h_o_{t+1})`, each a `dim`-vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionBatch {
    pub dim: usize,
    pub h_o: Vec<f64>,
    pub h_a: Vec<f64>,
    pub h_next: Vec<f64>,
}

impl TransitionBatch {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn push(&mut self, h_o: &[f64], h_a: &[f64], h_next: &[f64]) -> Result<()> {
        let d = self.dim;
        if h_o.len() != d || h_a.len() != d || h_next.len() != d {
            return Err(Error::shape("transition", &[d], &[h_o.len(), h_a.len(), h_next.len()]));
        }
        self.h_o.extend_from_slice(h_o);
        self.h_a.extend_from_slice(h_a);
        self.h_next.extend_from_slice(h_next);
        Ok(())
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.h_o.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        let r = i * self.dim..(i + 1) * self.dim;
        (&self.h_o[r.clone()], &self.h_a[r.clone()], &self.h_next[r])
    }

    fn check(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Contract("transition batch is empty".into()));
        }
        let n = self.h_o.len();
        if n % self.dim != 0 || self.h_a.len() != n || self.h_next.len() != n {
            return Err(Error::shape(
                "transition batch",
                &[self.h_o.len()],
                &[self.h_a.len(), self.h_next.len()],
            ));
        }
        Ok(())
    }
}

/// Borrowed predictor weights: `[2d x 2d]` matrix and `[2d]` bias mapping
/// `[h_o; h_a]` to `[mu; log_var]`.
#[derive(Debug, Clone, Copy)]
pub struct PredictorView<'a> {
    weight: &'a Tensor,
    bias: &'a Tensor,
    dim: usize,
}

impl<'a> PredictorView<'a> {
    pub fn new(weight: &'a Tensor, bias: &'a Tensor) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 || s[0] != s[1] || s[0] % 2 != 0 || bias.numel() != s[1] {
            return Err(Error::shape("causal predictor", s, bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            dim: s[0] / 2,
        })
    }

    pub fn from_model(model: &'a AgentModel) -> Self {
        let (w, b) = model.causal_param_ids();
        Self::new(model.params.tensor(w), model.params.tensor(b)).expect("model builds a congruent predictor")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Stand-alone predictor with its own parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalPredictor {
    pub params: ParamStore,
    weight: ParamId,
    bias: ParamId,
}

impl CausalPredictor {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("predictor dimension must be positive".into()));
        }
        let mut params = ParamStore::new();
        let weight = params.insert("causal.predict.weight", glorot(rng, 2 * dim, 2 * dim))?;
        let bias = params.insert("causal.predict.bias", Tensor::zeros(&[2 * dim]))?;
        Ok(Self { params, weight, bias })
    }

    pub fn ids(&self) -> (ParamId, ParamId) {
        (self.weight, self.bias)
    }

    pub fn view(&self) -> PredictorView<'_> {
        PredictorView::new(self.params.tensor(self.weight), self.params.tensor(self.bias)).expect("congruent predictor")
    }
}

pub fn predict(view: PredictorView<'_>, h_o: &[f64], h_a: &[f64]) -> Result<GaussianPrediction> {
    let d = view.dim;
    if h_o.len() != d || h_a.len() != d {
        return Err(Error::shape("predict", &[h_o.len(), h_a.len()], &[d, d]));
    }
    let mut x = h_o.to_vec();
    x.extend_from_slice(h_a);
    let mut out = vec![0.0; 2 * d];
    crate::kernels::affine_row(&x, view.weight.data(), Some(view.bias.data()), &mut out);
    let log_var = out.split_off(d);
    GaussianPrediction::new(out, log_var)
}

/// Mean over rows and dimensions of `(mu - h_next)^2`.
pub fn causal_loss(view: PredictorView<'_>, batch: &TransitionBatch) -> Result<f64> {
    batch.check()?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (o, a, t) = batch.row(i);
        let p = predict(view, o, a)?;
        total += p.mu.iter().zip(t).map(|(m, t)| (m - t).powi(2)).sum::<f64>();
    }
    Ok(total / (batch.len() * batch.dim) as f64)
}

/// Mean over rows of the negative log density of `h_next`.
pub fn nll_loss(view: PredictorView<'_>, batch: &TransitionBatch) -> Result<f64> {
    batch.check()?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (o, a, t) = batch.row(i);
        total -= predict(view, o, a)?.log_density(t);
    }
    Ok(total / batch.len() as f64)
}

/// `KL(p || q)` for diagonal Gaussians, summed over dimensions.
pub fn gaussian_kl(p: &GaussianPrediction, q: &GaussianPrediction) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::shape("gaussian_kl", &[p.dim()], &[q.dim()]));
    }
    let mut kl = 0.0;
    for i in 0..p.dim() {
        let (lp, lq) = (p.log_var[i], q.log_var[i]);
        let diff = p.mu[i] - q.mu[i];
        kl += 0.5 * (lq - lp + ((lp - lq).exp() + diff * diff * (-lq).exp()) - 1.0);
    }
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlBounds {
    pub lower: f64,
    pub mid: f64,
    pub upper: f64,
}

/// Bounds on `KL(f || g)` for a Gaussian `f` and a uniform mixture `g`.
///
/// Upper is the variational bound `-log sum_k w_k exp(-KL(f || g_k))`; lower
/// is the product bound `-h(f) - log sum_k w_k N(mu_f; mu_k, S_f + S_k)`.
pub fn kl_bounds(f: &GaussianPrediction, g: &MixturePrediction) -> Result<KlBounds> {
    let lw = g.weight().ln();
    let mut neg_kl = Vec::with_capacity(g.len());
    let mut overlap = Vec::with_capacity(g.len());
    for c in g.components() {
        neg_kl.push(lw - gaussian_kl(f, c)?);
        let mut s = 0.0;
        for i in 0..f.dim() {
            let var = f.log_var[i].exp() + c.log_var[i].exp();
            s += LN_2PI + var.ln() + (f.mu[i] - c.mu[i]).powi(2) / var;
        }
        overlap.push(lw - 0.5 * s);
    }
    let upper = -log_sum_exp(&neg_kl);
    // the bounds are exact inequalities; min only absorbs rounding
    let lower = (-f.entropy() - log_sum_exp(&overlap)).min(upper);
    Ok(KlBounds {
        lower,
        mid: 0.5 * (lower + upper),
        upper,
    })
}

/// Per-row bounds and their means.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiEstimate {
    pub rows: Vec<KlBounds>,
    pub lower_mean: f64,
    pub mid_mean: f64,
    pub upper_mean: f64,
}

impl CmiEstimate {
    pub fn estimate(&self) -> f64 {
        self.mid_mean
    }
}

/// Mean midpoint KL between `f = predict(h_o, h_a)` and the mixture of
/// `predict(h_o, a_k)` over `k` action features drawn from the dataset.
///
/// `eval_rows` larger than the dataset is capped at its size.
pub fn estimate_cmi<R: Rng + ?Sized>(
    view: PredictorView<'_>,
    data: &TransitionBatch,
    k: usize,
    eval_rows: usize,
    rng: &mut R,
) -> Result<CmiEstimate> {
    data.check()?;
    let n = data.len();
    if k == 0 || k > n {
        return Err(Error::Contract(format!("K = {k} must lie in 1..={n} (dataset rows)")));
    }
    if eval_rows == 0 {
        return Err(Error::Contract("eval_rows must be positive".into()));
    }
    let mut picks = index::sample(rng, n, eval_rows.min(n)).into_vec();
    picks.sort_unstable();
    let mut rows = Vec::with_capacity(picks.len());
    for i in picks {
        let (o, a, _) = data.row(i);
        let f = predict(view, o, a)?;
        let comps = index::sample(rng, n, k)
            .into_iter()
            .map(|j| predict(view, o, data.row(j).1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(kl_bounds(&f, &MixturePrediction::new(comps)?)?);
    }
    let m = rows.len() as f64;
    Ok(CmiEstimate {
        lower_mean: rows.iter().map(|r| r.lower).sum::<f64>() / m,
        mid_mean: rows.iter().map(|r| r.mid).sum::<f64>() / m,
        upper_mean: rows.iter().map(|r| r.upper).sum::<f64>() / m,
        rows,
    })
}

/// Tape handles for a batch of predictions: `mu` and clamped `log_var`, each `[n x d]`.
#[derive(Debug, Clone, Copy)]
pub struct PredictionVars {
    pub mu: Var,
    pub log_var: Var,
}

pub fn predict_on_tape(tape: &mut Tape, weight: Var, bias: Var, h_o: Var, h_a: Var) -> Result<PredictionVars> {
    let d = tape.value(h_o).cols();
    if tape.value(weight).shape() != [2 * d, 2 * d] {
        return Err(Error::shape("predict", tape.value(weight).shape(), &[2 * d, 2 * d]));
    }
    let x = tape.concat_cols(h_o, h_a)?;
    let out = tape.linear(x, weight, Some(bias))?;
    let mu = tape.slice_cols(out, 0, d)?;
    let lv = tape.slice_cols(out, d, 2 * d)?;
    let log_var = tape.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
    Ok(PredictionVars { mu, log_var })
}

/// Tape version of [`causal_loss`].
pub fn causal_loss_on_tape(tape: &mut Tape, pred: PredictionVars, target: Var) -> Result<Var> {
    let diff = tape.sub(pred.mu, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Tape version of [`nll_loss`].
pub fn nll_loss_on_tape(tape: &mut Tape, pred: PredictionVars, target: Var) -> Result<Var> {
    let (n, d) = (tape.value(target).rows(), tape.value(target).cols());
    let diff = tape.sub(pred.mu, target)?;
    let sq = tape.square(diff)?;
    let neg = tape.scale(pred.log_var, -1.0)?;
    let prec = tape.exp(neg)?;
    let maha = tape.mul(sq, prec)?;
    let terms = tape.add(maha, pred.log_var)?;
    let total = tape.sum(terms)?;
    let per_row = tape.scale(total, 0.5 / n as f64)?;
    tape.add_scalar(per_row, 0.5 * d as f64 * LN_2PI)
}

pub fn objective_on_tape(
    tape: &mut Tape,
    objective: CausalObjective,
    pred: PredictionVars,
    target: Var,
) -> Result<Var> {
    match objective {
        CausalObjective::Mse => causal_loss_on_tape(tape, pred, target),
        CausalObjective::Nll => nll_loss_on_tape(tape, pred, target),
    }
}

/// Full-batch Adam fit of a stand-alone predictor. Returns the final loss.
pub fn fit_predictor(
    predictor: &mut CausalPredictor,
    data: &TransitionBatch,
    objective: CausalObjective,
    steps: usize,
    lr: f64,
) -> Result<f64> {
    data.check()?;
    let (n, d) = (data.len(), data.dim);
    let mut adam = crate::optim::AdamState::new(&predictor.params);
    let mut last = f64::NAN;
    for _ in 0..steps {
        let mut tape = Tape::new();
        let bound = tape.bind_all(&predictor.params)?;
        let h_o = tape.constant(Tensor::new(vec![n, d], data.h_o.clone())?)?;
        let h_a = tape.constant(Tensor::new(vec![n, d], data.h_a.clone())?)?;
        let t = tape.constant(Tensor::new(vec![n, d], data.h_next.clone())?)?;
        let (w, b) = predictor.ids();
        let pred = predict_on_tape(&mut tape, bound[w.0], bound[b.0], h_o, h_a)?;
        let loss = objective_on_tape(&mut tape, objective, pred, t)?;
        last = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        predictor.params.zero_grad();
        predictor.params.accumulate(&bound, &grads);
        crate::optim::adam_step(&mut predictor.params, &mut adam, lr)?;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g(mu: &[f64], lv: &[f64]) -> GaussianPrediction {
        GaussianPrediction::new(mu.to_vec(), lv.to_vec()).unwrap()
    }

    /// Simpson's rule over [-30, 30] for a 1-D KL integrand.
    fn kl_numeric(p: &GaussianPrediction, q: &GaussianPrediction) -> f64 {
        let (a, b, n) = (-30.0, 30.0, 200_000);
        let h = (b - a) / n as f64;
        let f = |x: f64| {
            let lp = p.log_density(&[x]);
            lp.exp() * (lp - q.log_density(&[x]))
        };
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    fn store(w: Vec<f64>, b: Vec<f64>) -> (Tensor, Tensor) {
        let d2 = b.len();
        (Tensor::new(vec![d2, d2], w).unwrap(), Tensor::vector(b))
    }

    #[test]
    fn zero_weights_give_standard_normal() {
        let (w, b) = store(vec![0.0; 16], vec![0.0; 4]);
        let p = predict(PredictorView::new(&w, &b).unwrap(), &[3.0, -1.0], &[0.5, 2.0]).unwrap();
        assert_eq!(p.mu(), &[0.0, 0.0]);
        assert_eq!(p.log_var(), &[0.0, 0.0]);
    }

    #[test]
    fn hand_set_weights() {
        // d = 1: x = [h_o, h_a]; mu = 2 h_o - h_a + 0.5, log_var = h_a + 1
        let (w, b) = store(vec![2.0, 0.0, -1.0, 1.0], vec![0.5, 1.0]);
        let p = predict(PredictorView::new(&w, &b).unwrap(), &[1.5], &[-2.0]).unwrap();
        assert_eq!(p.mu(), &[5.5]);
        assert_eq!(p.log_var(), &[-1.0]);
    }

    #[test]
    fn log_var_is_clamped() {
        let p = g(&[0.0, 0.0], &[-50.0, 50.0]);
        assert_eq!(p.log_var(), &[LOG_VAR_MIN, LOG_VAR_MAX]);
        assert!(GaussianPrediction::new(vec![f64::NAN], vec![0.0]).is_err());
    }

    #[test]
    fn mse_hand_value_and_row_order() {
        // identity on h_o for mu
        let mut w = vec![0.0; 16];
        w[0] = 1.0;
        w[4 + 1] = 1.0;
        let (w, b) = store(w, vec![0.0; 4]);
        let view = PredictorView::new(&w, &b).unwrap();
        let mut batch = TransitionBatch::new(2);
        batch.push(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(causal_loss(view, &batch).unwrap(), 0.5);
        batch.push(&[3.0, -1.0], &[1.0, 1.0], &[3.0, -1.0]).unwrap();
        let l1 = causal_loss(view, &batch).unwrap();
        let mut rev = TransitionBatch::new(2);
        rev.push(&[3.0, -1.0], &[1.0, 1.0], &[3.0, -1.0]).unwrap();
        rev.push(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(l1, causal_loss(view, &rev).unwrap());
        assert!(causal_loss(view, &TransitionBatch::new(2)).is_err());
    }

    #[test]
    fn nll_identities() {
        let (w, b) = store(vec![0.0; 4], vec![0.0; 2]);
        let view = PredictorView::new(&w, &b).unwrap();
        let mut batch = TransitionBatch::new(1);
        batch.push(&[0.3], &[0.1], &[0.0]).unwrap();
        assert!((nll_loss(view, &batch).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 3;
        let mut w = vec![0.0; 36];
        for (i, v) in w.iter_mut().enumerate() {
            // log_var columns (3..6) stay zero
            if i % 6 < 3 {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let (w, b) = store(w, vec![0.0; 6]);
        let view = PredictorView::new(&w, &b).unwrap();
        let mut batch = TransitionBatch::new(d);
        for _ in 0..5 {
            let r: Vec<f64> = (0..3 * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            batch.push(&r[..d], &r[d..2 * d], &r[2 * d..]).unwrap();
        }
        let mse_sum = causal_loss(view, &batch).unwrap() * d as f64;
        let expected = 0.5 * mse_sum + 0.5 * d as f64 * (2.0 * PI).ln();
        assert!((nll_loss(view, &batch).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn nll_decreases_toward_target() {
        let target = [2.0];
        let mut prev = f64::INFINITY;
        for i in 0..=10 {
            let mu = -3.0 + 0.5 * i as f64;
            let v = -g(&[mu], &[0.7]).log_density(&target);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn kl_values() {
        let p = g(&[0.0], &[0.0]);
        assert_eq!(gaussian_kl(&p, &p).unwrap(), 0.0);
        let q = g(&[1.0], &[0.0]);
        assert!((gaussian_kl(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert!((kl_numeric(&p, &q) - 0.5).abs() < 1e-8);

        let wide = g(&[0.3], &[1.2]);
        let pq = gaussian_kl(&p, &wide).unwrap();
        let qp = gaussian_kl(&wide, &p).unwrap();
        assert!((pq - kl_numeric(&p, &wide)).abs() < 1e-7);
        assert!((qp - kl_numeric(&wide, &p)).abs() < 1e-7);
        assert!((pq - qp).abs() > 0.1);
        assert!(gaussian_kl(&p, &g(&[0.0, 0.0], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn single_component_bounds() {
        let f = g(&[0.2, -1.0, 3.0], &[0.1, -0.5, 0.7]);
        let self_mix = MixturePrediction::new(vec![f.clone()]).unwrap();
        let b = kl_bounds(&f, &self_mix).unwrap();
        assert_eq!(b.upper, 0.0);
        assert!((b.lower - 1.5 * (2.0 / E).ln()).abs() < 1e-12);

        let other = g(&[1.0, 0.0, 2.0], &[0.0, 0.3, -0.2]);
        let b = kl_bounds(&f, &MixturePrediction::new(vec![other.clone()]).unwrap()).unwrap();
        assert!((b.upper - gaussian_kl(&f, &other).unwrap()).abs() < 1e-12);
        assert!(b.lower <= b.mid && b.mid <= b.upper);
    }

    #[test]
    fn empty_mixture_is_rejected() {
        assert!(MixturePrediction::new(Vec::new()).is_err());
    }

    #[test]
    fn degenerate_action_support_matches_self_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = CausalPredictor::new(2, &mut rng).unwrap();
        let mut data = TransitionBatch::new(2);
        for i in 0..6 {
            let x = i as f64 * 0.1;
            data.push(&[x, -x], &[0.4, 0.4], &[0.0, 0.0]).unwrap();
        }
        let est = estimate_cmi(pred.view(), &data, 6, 6, &mut rng).unwrap();
        assert!(est.upper_mean.abs() < 1e-12);
        assert!((est.lower_mean - (2.0 / E).ln()).abs() < 1e-12);
        assert!(estimate_cmi(pred.view(), &data, 7, 6, &mut rng).is_err());
    }
}
