use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::model::{AgentModel, SequenceBatch, StepInput};
use crate::optim::{adam_step, AdamState};

use super::ppo::causal_term;
use super::{clip_grad_norm, BcConfig, CausalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub observation: Observation,
    pub action: usize,
}

/// One expert episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub episode: usize,
    pub world_seed: u64,
    pub steps: Vec<DemoStep>,
}

impl Demo {
    fn inputs(&self) -> Vec<StepInput> {
        self.steps
            .iter()
            .map(|s| StepInput::from_observation(&s.observation, s.action))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BcStats {
    pub loss: f64,
    pub cross_entropy: f64,
    pub causal_loss: f64,
}

/// `CE(logits, expert) + alpha * causal` over the given demos, teacher-forced
/// on expert action tokens. Returns `(total, cross_entropy, causal)`.
pub fn bc_loss(
    tape: &mut Tape,
    model: &AgentModel,
    bound: &[Var],
    demos: &[&Demo],
    alpha: f64,
    causal: &CausalConfig,
) -> Result<(Var, Var, Var)> {
    let mut batch = SequenceBatch::default();
    let mut pairs = Vec::new();
    for d in demos {
        let start = batch.len();
        batch.push_sequence(&d.inputs());
        pairs.extend((start..batch.len().saturating_sub(1)).map(|t| (t, t + 1)));
    }
    if batch.is_empty() {
        return Err(Error::Contract("no demonstration steps".into()));
    }
    let out = model.forward(tape, bound, &batch)?;
    let logp = tape.log_softmax(out.logits)?;
    let picked = tape.pick_per_row(logp, &batch.actions)?;
    let mean = tape.mean(picked)?;
    let ce = tape.scale(mean, -1.0)?;
    let c = causal_term(tape, model, bound, &out, &pairs, causal)?;
    let weighted = tape.scale(c, alpha)?;
    let total = tape.add(ce, weighted)?;
    Ok((total, ce, c))
}

/// One Adam step on a batch of demos.
pub fn bc_update(
    model: &mut AgentModel,
    adam: &mut AdamState,
    demos: &[&Demo],
    cfg: &BcConfig,
    causal: &CausalConfig,
) -> Result<BcStats> {
    if demos.is_empty() {
        return Err(Error::Contract("bc_update needs at least one demo".into()));
    }
    let mut tape = Tape::new();
    let bound = tape.bind_all(&model.params)?;
    let (total, ce, c) = bc_loss(&mut tape, model, &bound, demos, cfg.alpha, causal)?;
    let grads = tape.backward(total)?;
    model.params.zero_grad();
    model.params.accumulate(&bound, &grads);
    clip_grad_norm(&mut model.params, cfg.max_grad_norm);
    adam_step(&mut model.params, adam, cfg.lr)?;
    Ok(BcStats {
        loss: tape.value(total).item(),
        cross_entropy: tape.value(ce).item(),
        causal_loss: tape.value(c).item(),
    })
}

/// Shuffled minibatch epochs over `demos`; returns the mean stats per epoch.
pub fn train_bc(
    model: &mut AgentModel,
    demos: &[Demo],
    cfg: &BcConfig,
    causal: &CausalConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BcStats>> {
    cfg.validate()?;
    if demos.is_empty() {
        return Err(Error::Contract("no demonstrations to train on".into()));
    }
    let mut adam = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..demos.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut acc = BcStats::default();
        let mut n = 0.0;
        for chunk in order.chunks(cfg.batch_episodes) {
            let batch: Vec<&Demo> = chunk.iter().map(|&i| &demos[i]).collect();
            let s = bc_update(model, &mut adam, &batch, cfg, causal)?;
            acc.loss += s.loss;
            acc.cross_entropy += s.cross_entropy;
            acc.causal_loss += s.causal_loss;
            n += 1.0;
        }
        epochs.push(BcStats {
            loss: acc.loss / n,
            cross_entropy: acc.cross_entropy / n,
            causal_loss: acc.causal_loss / n,
        });
    }
    Ok(epochs)
}
