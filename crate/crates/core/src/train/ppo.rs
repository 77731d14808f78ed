use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::causal::{objective_on_tape, predict_on_tape, TransitionBatch};
use crate::error::{Error, Result};
use crate::model::{AgentModel, ForwardOutput, SequenceBatch};
use crate::optim::{adam_step, AdamState};
use crate::tensor::Tensor;

use super::gae::normalize;
use super::rollout::RolloutBuffer;
use super::{clip_grad_norm, CausalConfig, PpoConfig};

/// Averages over the minibatch updates of one call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct UpdateStats {
    /// Negated clipped surrogate.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub causal_loss: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
}

impl UpdateStats {
    fn add(&mut self, o: &UpdateStats) {
        self.policy_loss += o.policy_loss;
        self.value_loss += o.value_loss;
        self.entropy += o.entropy;
        self.causal_loss += o.causal_loss;
        self.clip_fraction += o.clip_fraction;
        self.grad_norm += o.grad_norm;
    }

    fn scale(&mut self, c: f64) {
        self.policy_loss *= c;
        self.value_loss *= c;
        self.entropy *= c;
        self.causal_loss *= c;
        self.clip_fraction *= c;
        self.grad_norm *= c;
    }

    /// Mean of several stats; zeros when empty.
    pub fn mean(items: &[UpdateStats]) -> UpdateStats {
        let mut acc = UpdateStats::default();
        for s in items {
            acc.add(s);
        }
        if !items.is_empty() {
            acc.scale(1.0 / items.len() as f64);
        }
        acc
    }
}

/// Tape handles of the combined objective for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub policy: Var,
    pub value: Var,
    pub entropy: Var,
    pub causal: Var,
    pub ratio: Var,
}

/// Sequences as one batch; returns the batch, the batch row of each training
/// record, and the `(t, t + 1)` batch-row pairs for the causal term.
pub(crate) fn assemble(
    buf: &RolloutBuffer,
    seqs: &[usize],
) -> (SequenceBatch, Vec<usize>, Vec<usize>, Vec<(usize, usize)>) {
    let mut batch = SequenceBatch::default();
    let mut train_rows = Vec::new();
    let mut record_ids = Vec::new();
    let mut pairs = Vec::new();
    for &s in seqs {
        let seq = &buf.sequences[s];
        let mut steps = seq.prefix.clone();
        let first = batch.len() + seq.prefix.len();
        steps.extend(buf.records[seq.rows.clone()].iter().map(|r| r.input.clone()));
        batch.push_sequence(&steps);
        for (k, r) in seq.rows.clone().enumerate() {
            train_rows.push(first + k);
            record_ids.push(r);
            if r + 1 < seq.rows.end && !buf.records[r].done {
                pairs.push((first + k, first + k + 1));
            }
        }
    }
    (batch, train_rows, record_ids, pairs)
}

/// The buffer's `(h_o, h_a, h_next)` triples under the current parameters,
/// in sequence order.
pub fn causal_transitions(model: &AgentModel, buf: &RolloutBuffer) -> Result<TransitionBatch> {
    let seqs: Vec<usize> = (0..buf.sequences.len()).collect();
    let (batch, _, _, pairs) = assemble(buf, &seqs);
    let mut out = TransitionBatch::new(model.d_model());
    if batch.is_empty() {
        return Ok(out);
    }
    let mut tape = Tape::new();
    let bound = tape.bind_all(&model.params)?;
    let fwd = model.forward(&mut tape, &bound, &batch)?;
    let (hv, ha) = (tape.value(fwd.h_visual), tape.value(fwd.h_action));
    for (t, u) in pairs {
        out.push(hv.row(t), ha.row(t), hv.row(u))?;
    }
    Ok(out)
}

/// Causal term on `(t, t + 1)` row pairs of a forward pass. Returns a
/// constant zero when there are no pairs.
pub(crate) fn causal_term(
    tape: &mut Tape,
    model: &AgentModel,
    bound: &[Var],
    out: &ForwardOutput,
    pairs: &[(usize, usize)],
    causal: &CausalConfig,
) -> Result<Var> {
    if pairs.is_empty() {
        return tape.constant(Tensor::scalar(0.0));
    }
    let from: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let to: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let h_o = tape.select_rows(out.h_visual, &from)?;
    let h_a = tape.select_rows(out.h_action, &from)?;
    let mut target = tape.select_rows(out.h_visual, &to)?;
    if causal.detach_targets {
        target = tape.detach(target)?;
    }
    let (w, b) = model.causal_param_ids();
    let pred = predict_on_tape(tape, bound[w.0], bound[b.0], h_o, h_a)?;
    objective_on_tape(tape, causal.objective, pred, target)
}

/// Builds the combined objective
/// `-surrogate + c_v * value_mse - c_e * entropy + alpha * causal`
/// for the given sequences. `advantages` is indexed by buffer row.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss(
    tape: &mut Tape,
    model: &AgentModel,
    bound: &[Var],
    buf: &RolloutBuffer,
    seqs: &[usize],
    advantages: &[f64],
    cfg: &PpoConfig,
    causal: &CausalConfig,
) -> Result<LossVars> {
    let (batch, train_rows, record_ids, pairs) = assemble(buf, seqs);
    if train_rows.is_empty() {
        return Err(Error::Contract("minibatch has no training rows".into()));
    }
    let n = train_rows.len();
    let out = model.forward(tape, bound, &batch)?;
    let logp_all = tape.log_softmax(out.logits)?;
    let logp_rows = tape.select_rows(logp_all, &train_rows)?;
    let actions: Vec<usize> = record_ids.iter().map(|&r| buf.records[r].input.action).collect();
    let logp = tape.pick_per_row(logp_rows, &actions)?;
    let old = tape.constant(Tensor::vector(
        record_ids.iter().map(|&r| buf.records[r].logp).collect(),
    ))?;
    let adv = tape.constant(Tensor::vector(record_ids.iter().map(|&r| advantages[r]).collect()))?;
    let log_ratio = tape.sub(logp, old)?;
    let ratio = tape.exp(log_ratio)?;
    let s1 = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)?;
    let s2 = tape.mul(clipped, adv)?;
    let surr = tape.minimum(s1, s2)?;
    let surr = tape.mean(surr)?;
    let policy = tape.scale(surr, -1.0)?;

    let values = tape.select_rows(out.values, &train_rows)?;
    let returns = tape.constant(Tensor::new(
        vec![n, 1],
        record_ids.iter().map(|&r| buf.returns[r]).collect(),
    )?)?;
    let err = tape.sub(values, returns)?;
    let sq = tape.square(err)?;
    let value = tape.mean(sq)?;

    let probs = tape.exp(logp_rows)?;
    let plogp = tape.mul(probs, logp_rows)?;
    let neg_entropy = tape.sum(plogp)?;
    let entropy = tape.scale(neg_entropy, -1.0 / n as f64)?;

    let causal_loss = causal_term(tape, model, bound, &out, &pairs, causal)?;

    let v = tape.scale(value, cfg.value_coef)?;
    let e = tape.scale(entropy, -cfg.entropy_coef)?;
    let c = tape.scale(causal_loss, cfg.alpha)?;
    let total = tape.add(policy, v)?;
    let total = tape.add(total, e)?;
    let total = tape.add(total, c)?;
    Ok(LossVars {
        total,
        policy,
        value,
        entropy,
        causal: causal_loss,
        ratio,
    })
}

/// Splits shuffled sequences into at most `parts` groups of roughly equal
/// training-row counts.
fn partition(buf: &RolloutBuffer, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..buf.sequences.len()).collect();
    order.shuffle(rng);
    let target = buf.len().div_ceil(parts);
    let mut groups = vec![Vec::new()];
    let mut filled = 0;
    for s in order {
        if filled >= target && groups.len() < parts {
            groups.push(Vec::new());
            filled = 0;
        }
        filled += buf.sequences[s].rows.len();
        groups.last_mut().expect("nonempty").push(s);
    }
    groups.retain(|g| !g.is_empty());
    groups
}

/// Epochs x minibatches of Adam steps on the combined objective.
pub fn ppo_update(
    model: &mut AgentModel,
    adam: &mut AdamState,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    causal: &CausalConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if !buf.is_finished() {
        return Err(Error::Contract("advantages must be computed before an update".into()));
    }
    let mut adv = buf.advantages.clone();
    normalize(&mut adv);
    let mut all = Vec::new();
    for epoch in 0..cfg.epochs {
        for (mb, seqs) in partition(buf, cfg.minibatches, rng).into_iter().enumerate() {
            let mut tape = Tape::new();
            let bound = tape.bind_all(&model.params)?;
            let loss = ppo_loss(&mut tape, model, &bound, buf, &seqs, &adv, cfg, causal)?;
            let total = tape.value(loss.total).item();
            if !total.is_finite() {
                return Err(Error::NonFinite(format!("ppo loss at epoch {epoch} minibatch {mb}")));
            }
            let ratios = tape.value(loss.ratio).data();
            let clipped = ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip_eps).count();
            let grads = tape.backward(loss.total)?;
            model.params.zero_grad();
            model.params.accumulate(&bound, &grads);
            let grad_norm = clip_grad_norm(&mut model.params, cfg.max_grad_norm);
            adam_step(&mut model.params, adam, lr)?;
            all.push(UpdateStats {
                policy_loss: tape.value(loss.policy).item(),
                value_loss: tape.value(loss.value).item(),
                entropy: tape.value(loss.entropy).item(),
                causal_loss: tape.value(loss.causal).item(),
                clip_fraction: clipped as f64 / ratios.len() as f64,
                grad_norm,
            });
        }
    }
    Ok(UpdateStats::mean(&all))
}
