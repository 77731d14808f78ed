//! Step-by-step inference with cached keys and values (or the GRU state).
//! Each token runs through the same row kernels as the tape forward pass, so
//! outputs match a full-sequence forward bit for bit.

use super::{AgentModel, GoalIds, GoalInput, ObjectiveKind, SeqIds, NULL_ACTION};
use crate::error::{Error, Result};
use crate::kernels;
use crate::nn::ParamId;

/// Per-episode encoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState {
    /// Packed `[q | k | v]` rows per transformer layer.
    qkv: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    tokens: usize,
    awaiting_action: bool,
}

impl IncrementalState {
    /// Steps observed so far in this episode.
    pub fn steps(&self) -> usize {
        self.tokens.div_ceil(2)
    }

    pub fn awaiting_action(&self) -> bool {
        self.awaiting_action
    }
}

/// Model outputs for the newest observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f64>,
    pub value: f64,
    /// Integrated features before the sequence encoder.
    pub h_visual: Vec<f64>,
    pub h_prime_visual: Vec<f64>,
}

impl AgentModel {
    fn data(&self, id: ParamId) -> &[f64] {
        self.params.tensor(id).data()
    }

    /// Fresh state for a new episode.
    pub fn start(&self) -> IncrementalState {
        let layers = match &self.ids.seq {
            SeqIds::Transformer { blocks, .. } => blocks.len(),
            SeqIds::Rnn { .. } => 0,
        };
        IncrementalState {
            qkv: vec![Vec::new(); layers],
            hidden: vec![0.0; self.config.d_model],
            tokens: 0,
            awaiting_action: false,
        }
    }

    fn goal_row(&self, goal: &GoalInput) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        match (&self.ids.goal, goal) {
            (GoalIds::Table(t), GoalInput::Category(c)) => {
                let ObjectiveKind::Categories(n) = self.objective else {
                    unreachable!()
                };
                if *c >= n {
                    return Err(Error::OutOfRange {
                        what: "objective vocabulary",
                        index: *c,
                        size: n,
                    });
                }
                Ok(self.data(*t)[c * d..(c + 1) * d].to_vec())
            }
            (GoalIds::Linear(w, b), GoalInput::Point(f)) => {
                let mut out = vec![0.0; d];
                kernels::affine_row(f, self.data(*w), Some(self.data(*b)), &mut out);
                Ok(out)
            }
            _ => Err(Error::Contract("goal input does not match the model objective".into())),
        }
    }

    /// Encoder output for one token, advancing the cache.
    fn push_token(&self, state: &mut IncrementalState, token: &[f64]) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        if state.tokens >= 2 * self.config.max_steps {
            return Err(Error::Contract(format!(
                "episode exceeds the encoder capacity of {} steps",
                self.config.max_steps
            )));
        }
        let pos = state.tokens;
        let out = match &self.ids.seq {
            SeqIds::Transformer { blocks, lnf_g, lnf_b } => {
                let mut pe = vec![0.0; d];
                kernels::sinusoid(pos, d, &mut pe);
                let mut x: Vec<f64> = token.iter().zip(&pe).map(|(a, b)| a + b).collect();
                let heads = self.config.heads;
                let dh = d / heads;
                let ff = self.config.ff_mult * d;
                let mut a = vec![0.0; d];
                let mut att = vec![0.0; d];
                let mut proj = vec![0.0; d];
                let mut hid = vec![0.0; ff];
                let mut probs = vec![0.0; pos + 1];
                for (b, cache) in blocks.iter().zip(state.qkv.iter_mut()) {
                    kernels::layer_norm_row(&x, self.data(b.ln1_g), self.data(b.ln1_b), &mut a);
                    let start = cache.len();
                    cache.resize(start + 3 * d, 0.0);
                    kernels::affine_row(&a, self.data(b.qkv_w), Some(self.data(b.qkv_b)), &mut cache[start..]);
                    for h in 0..heads {
                        kernels::attend_row(cache, d, 0, pos, h, dh, &mut probs, &mut att[h * dh..(h + 1) * dh]);
                    }
                    kernels::affine_row(&att, self.data(b.out_w), Some(self.data(b.out_b)), &mut proj);
                    x.iter_mut().zip(&proj).for_each(|(x, p)| *x += p);
                    kernels::layer_norm_row(&x, self.data(b.ln2_g), self.data(b.ln2_b), &mut a);
                    kernels::affine_row(&a, self.data(b.ff1_w), Some(self.data(b.ff1_b)), &mut hid);
                    hid.iter_mut().for_each(|v| *v = kernels::relu(*v));
                    kernels::affine_row(&hid, self.data(b.ff2_w), Some(self.data(b.ff2_b)), &mut proj);
                    x.iter_mut().zip(&proj).for_each(|(x, p)| *x += p);
                }
                let mut out = vec![0.0; d];
                kernels::layer_norm_row(&x, self.data(*lnf_g), self.data(*lnf_b), &mut out);
                out
            }
            SeqIds::Rnn { w_x, w_h, b_x, b_h } => {
                let mut out = vec![0.0; d];
                kernels::gru_cell(
                    token,
                    &state.hidden,
                    self.data(*w_x),
                    self.data(*w_h),
                    self.data(*b_x),
                    self.data(*b_h),
                    &mut out,
                    None,
                );
                state.hidden.copy_from_slice(&out);
                out
            }
        };
        state.tokens += 1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("incremental encoder".into()));
        }
        Ok(out)
    }

    /// Feeds the observation of the current step and returns the policy and
    /// value outputs for it.
    pub fn observe(&self, state: &mut IncrementalState, obs: &[f64], goal: &GoalInput) -> Result<StepOutput> {
        if state.awaiting_action {
            return Err(Error::Contract("observe called twice without push_action".into()));
        }
        if obs.len() != self.obs_dim {
            return Err(Error::shape("observe", &[obs.len()], &[self.obs_dim]));
        }
        let d = self.config.d_model;
        let mut z = vec![0.0; d];
        kernels::affine_row(obs, self.data(self.ids.obs_w), Some(self.data(self.ids.obs_b)), &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());
        let mut cat = z;
        cat.extend(self.goal_row(goal)?);
        let mut h_visual = vec![0.0; d];
        kernels::affine_row(
            &cat,
            self.data(self.ids.integ_w),
            Some(self.data(self.ids.integ_b)),
            &mut h_visual,
        );
        h_visual.iter_mut().for_each(|v| *v = v.tanh());
        let h_prime_visual = self.push_token(state, &h_visual)?;
        state.awaiting_action = true;
        let mut logits = vec![0.0; NULL_ACTION];
        kernels::affine_row(
            &h_prime_visual,
            self.data(self.ids.actor_w),
            Some(self.data(self.ids.actor_b)),
            &mut logits,
        );
        let mut value = [0.0];
        kernels::affine_row(
            &h_prime_visual,
            self.data(self.ids.critic_w),
            Some(self.data(self.ids.critic_b)),
            &mut value,
        );
        Ok(StepOutput {
            logits,
            value: value[0],
            h_visual,
            h_prime_visual,
        })
    }

    /// Appends the token of the action taken after the last observation.
    pub fn push_action(&self, state: &mut IncrementalState, action: usize) -> Result<()> {
        if !state.awaiting_action {
            return Err(Error::Contract("push_action called before observe".into()));
        }
        if action > NULL_ACTION {
            return Err(Error::OutOfRange {
                what: "action vocabulary",
                index: action,
                size: NULL_ACTION + 1,
            });
        }
        let d = self.config.d_model;
        let row = self.data(self.ids.action_table)[action * d..(action + 1) * d].to_vec();
        self.push_token(state, &row)?;
        state.awaiting_action = false;
        Ok(())
    }
}
