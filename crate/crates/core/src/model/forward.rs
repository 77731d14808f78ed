use std::ops::Range;

use super::{AgentModel, GoalIds, GoalInput, ObjectiveKind, SeqIds, StepInput, NULL_ACTION};
use crate::autodiff::{GruWeights, Tape, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Several episodes (or episode fragments) stacked row-wise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceBatch {
    /// `[N x obs_dim]`, row-major.
    pub obs: Vec<f64>,
    pub goals: Vec<GoalInput>,
    pub actions: Vec<usize>,
    /// Each range is one independent sequence of steps.
    pub segments: Vec<Range<usize>>,
}

impl SequenceBatch {
    pub fn from_sequences(seqs: &[Vec<StepInput>]) -> Self {
        let mut b = SequenceBatch::default();
        for seq in seqs {
            b.push_sequence(seq);
        }
        b
    }

    pub fn push_sequence(&mut self, seq: &[StepInput]) {
        if seq.is_empty() {
            return;
        }
        let start = self.goals.len();
        for s in seq {
            self.obs.extend_from_slice(&s.obs);
            self.goals.push(s.goal);
            self.actions.push(s.action);
        }
        self.segments.push(start..self.goals.len());
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

/// Tape handles for every intermediate the trainers need.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Integrated visual features before the sequence encoder, `[N x d]`.
    pub h_visual: Var,
    /// Action embeddings, `[N x d]`.
    pub h_action: Var,
    pub h_prime_visual: Var,
    pub h_prime_action: Var,
    /// `[N x |A|]`
    pub logits: Var,
    /// `[N x 1]`
    pub values: Var,
}

fn doubled(segments: &[Range<usize>]) -> Vec<Range<usize>> {
    segments.iter().map(|s| 2 * s.start..2 * s.end).collect()
}

impl AgentModel {
    fn p(&self, bound: &[Var], id: crate::nn::ParamId) -> Var {
        bound[id.0]
    }

    /// Flattened one-hot window to `tanh(x W + b)`.
    pub fn encode_observation(&self, tape: &mut Tape, bound: &[Var], obs: Var) -> Result<Var> {
        if tape.value(obs).cols() != self.obs_dim {
            return Err(Error::shape(
                "encode_observation",
                tape.value(obs).shape(),
                &[self.obs_dim],
            ));
        }
        let h = tape.linear(obs, self.p(bound, self.ids.obs_w), Some(self.p(bound, self.ids.obs_b)))?;
        tape.tanh(h)
    }

    pub fn embed_objective(&self, tape: &mut Tape, bound: &[Var], goals: &[GoalInput]) -> Result<Var> {
        match (&self.ids.goal, self.objective) {
            (GoalIds::Table(table), ObjectiveKind::Categories(c)) => {
                let ids = goals
                    .iter()
                    .map(|g| match g {
                        GoalInput::Category(id) if *id < c => Ok(*id),
                        GoalInput::Category(id) => Err(Error::OutOfRange {
                            what: "objective vocabulary",
                            index: *id,
                            size: c,
                        }),
                        GoalInput::Point(_) => Err(Error::Contract("point goal given to a category model".into())),
                    })
                    .collect::<Result<Vec<_>>>()?;
                tape.gather(self.p(bound, *table), &ids)
            }
            (GoalIds::Linear(w, b), _) => {
                let mut feats = Vec::with_capacity(goals.len() * 3);
                for g in goals {
                    match g {
                        GoalInput::Point(f) => feats.extend_from_slice(f),
                        GoalInput::Category(_) => {
                            return Err(Error::Contract("category goal given to a point-goal model".into()))
                        }
                    }
                }
                let x = tape.constant(Tensor::new(vec![goals.len(), 3], feats)?)?;
                tape.linear(x, self.p(bound, *w), Some(self.p(bound, *b)))
            }
            _ => unreachable!("goal parameters match the objective kind"),
        }
    }

    /// Action token embeddings; [`NULL_ACTION`] is a valid id.
    pub fn embed_action(&self, tape: &mut Tape, bound: &[Var], actions: &[usize]) -> Result<Var> {
        if let Some(&bad) = actions.iter().find(|&&a| a > NULL_ACTION) {
            return Err(Error::OutOfRange {
                what: "action vocabulary",
                index: bad,
                size: NULL_ACTION + 1,
            });
        }
        tape.gather(self.p(bound, self.ids.action_table), actions)
    }

    /// `tanh([z; h_obj] W + b)`.
    pub fn integrate(&self, tape: &mut Tape, bound: &[Var], z: Var, h_obj: Var) -> Result<Var> {
        if tape.value(z).shape() != tape.value(h_obj).shape() {
            return Err(Error::shape(
                "integrate",
                tape.value(z).shape(),
                tape.value(h_obj).shape(),
            ));
        }
        let cat = tape.concat_cols(z, h_obj)?;
        let h = tape.linear(
            cat,
            self.p(bound, self.ids.integ_w),
            Some(self.p(bound, self.ids.integ_b)),
        )?;
        tape.tanh(h)
    }

    /// Interleaves `[h_o_0, h_a_0, h_o_1, h_a_1, ...]` per segment, runs the
    /// causal encoder and splits the result back into visual and action rows.
    pub fn encode_sequence(
        &self,
        tape: &mut Tape,
        bound: &[Var],
        h_visual: Var,
        h_action: Var,
        segments: &[Range<usize>],
    ) -> Result<(Var, Var)> {
        let n = tape.value(h_visual).rows();
        if tape.value(h_visual).shape() != tape.value(h_action).shape() {
            return Err(Error::shape(
                "encode_sequence",
                tape.value(h_visual).shape(),
                tape.value(h_action).shape(),
            ));
        }
        if let Some(s) = segments.iter().find(|s| s.len() > self.config.max_steps) {
            return Err(Error::Contract(format!(
                "sequence of {} steps exceeds capacity {}",
                s.len(),
                self.config.max_steps
            )));
        }
        let d = self.config.d_model;
        let tokens = tape.interleave(h_visual, h_action)?;
        let token_segments = doubled(segments);
        let out = match &self.ids.seq {
            SeqIds::Transformer { blocks, lnf_g, lnf_b } => {
                let mut pe = vec![0.0; 2 * n * d];
                for seg in &token_segments {
                    for row in seg.clone() {
                        kernels::sinusoid(row - seg.start, d, &mut pe[row * d..(row + 1) * d]);
                    }
                }
                let pe = tape.constant(Tensor::new(vec![2 * n, d], pe)?)?;
                let mut x = tape.add(tokens, pe)?;
                for b in blocks {
                    let a = tape.layer_norm(x, self.p(bound, b.ln1_g), self.p(bound, b.ln1_b))?;
                    let qkv = tape.linear(a, self.p(bound, b.qkv_w), Some(self.p(bound, b.qkv_b)))?;
                    let att = tape.causal_attention(qkv, &token_segments, self.config.heads)?;
                    let proj = tape.linear(att, self.p(bound, b.out_w), Some(self.p(bound, b.out_b)))?;
                    x = tape.add(x, proj)?;
                    let f = tape.layer_norm(x, self.p(bound, b.ln2_g), self.p(bound, b.ln2_b))?;
                    let f = tape.linear(f, self.p(bound, b.ff1_w), Some(self.p(bound, b.ff1_b)))?;
                    let f = tape.relu(f)?;
                    let f = tape.linear(f, self.p(bound, b.ff2_w), Some(self.p(bound, b.ff2_b)))?;
                    x = tape.add(x, f)?;
                }
                tape.layer_norm(x, self.p(bound, *lnf_g), self.p(bound, *lnf_b))?
            }
            SeqIds::Rnn { w_x, w_h, b_x, b_h } => {
                let w = GruWeights {
                    w_x: self.p(bound, *w_x),
                    w_h: self.p(bound, *w_h),
                    b_x: self.p(bound, *b_x),
                    b_h: self.p(bound, *b_h),
                };
                tape.gru_sequence(tokens, w, &token_segments)?
            }
        };
        let even: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        let odd: Vec<usize> = (0..n).map(|i| 2 * i + 1).collect();
        Ok((tape.select_rows(out, &even)?, tape.select_rows(out, &odd)?))
    }

    pub fn act(&self, tape: &mut Tape, bound: &[Var], h: Var) -> Result<Var> {
        tape.linear(
            h,
            self.p(bound, self.ids.actor_w),
            Some(self.p(bound, self.ids.actor_b)),
        )
    }

    pub fn value(&self, tape: &mut Tape, bound: &[Var], h: Var) -> Result<Var> {
        tape.linear(
            h,
            self.p(bound, self.ids.critic_w),
            Some(self.p(bound, self.ids.critic_b)),
        )
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], batch: &SequenceBatch) -> Result<ForwardOutput> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty sequence batch".into()));
        }
        if batch.obs.len() != n * self.obs_dim || batch.actions.len() != n {
            return Err(Error::shape(
                "sequence batch",
                &[batch.obs.len(), batch.actions.len()],
                &[n * self.obs_dim, n],
            ));
        }
        let obs = tape.constant(Tensor::new(vec![n, self.obs_dim], batch.obs.clone())?)?;
        let z = self.encode_observation(tape, bound, obs)?;
        let h_obj = self.embed_objective(tape, bound, &batch.goals)?;
        let h_visual = self.integrate(tape, bound, z, h_obj)?;
        let h_action = self.embed_action(tape, bound, &batch.actions)?;
        let (h_prime_visual, h_prime_action) =
            self.encode_sequence(tape, bound, h_visual, h_action, &batch.segments)?;
        let logits = self.act(tape, bound, h_prime_visual)?;
        let values = self.value(tape, bound, h_prime_visual)?;
        Ok(ForwardOutput {
            h_visual,
            h_action,
            h_prime_visual,
            h_prime_action,
            logits,
            values,
        })
    }
}
