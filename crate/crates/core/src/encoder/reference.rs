//! Reference encoder: exponentially-decayed causal prefix pooling with
//! affine task heads.
//!
//! State recurrence: `s_t = (1 - decay) * s_{t-1} + decay * emb(x_t)` with
//! `s_0 = 0`, so the frame at position `t` is a function of tokens `0..=t`
//! only. Heads are affine maps of `s_t` through softmax (issue), logistic
//! (actions, no-recontact) and identity-plus-softplus-increment (cost
//! quantiles, which keeps `q_low <= q_high` for every input).
//!
//! All parameters live in one flat `f64` vector with the layout below, which
//! is also the serialized byte order:
//!
//! ```text
//! embedding   vocab_size * dim   (row-major, one row per token id)
//! issue W     n_issues * dim     (row-major)
//! issue b     n_issues
//! action W    n_actions * dim
//! action b    n_actions
//! norecon w   dim
//! norecon b   1
//! cost_low w  dim                (only when the schema has a cost task)
//! cost_low b  1
//! cost_inc w  dim
//! cost_inc b  1
//! ```

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::{IncrementalForward, PredictionFrame, Predictor, TaskSchema};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEncoder {
    pub schema: TaskSchema,
    pub vocab_size: usize,
    pub dim: usize,
    /// Decay factor in (0, 1]; larger forgets faster.
    pub decay: f64,
    pub params: Vec<f64>,
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub embedding: usize,
    pub issue_w: usize,
    pub issue_b: usize,
    pub action_w: usize,
    pub action_b: usize,
    pub norecon_w: usize,
    pub norecon_b: usize,
    pub cost: Option<CostLayout>,
    pub total: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CostLayout {
    pub low_w: usize,
    pub low_b: usize,
    pub inc_w: usize,
    pub inc_b: usize,
}

pub(crate) fn layout(schema: &TaskSchema, vocab_size: usize, dim: usize) -> Layout {
    let k = schema.n_issues();
    let m = schema.n_actions();
    let embedding = 0;
    let issue_w = embedding + vocab_size * dim;
    let issue_b = issue_w + k * dim;
    let action_w = issue_b + k;
    let action_b = action_w + m * dim;
    let norecon_w = action_b + m;
    let norecon_b = norecon_w + dim;
    let mut total = norecon_b + 1;
    let cost = schema.cost_quantiles.map(|_| {
        let low_w = total;
        let low_b = low_w + dim;
        let inc_w = low_b + 1;
        let inc_b = inc_w + dim;
        total = inc_b + 1;
        CostLayout { low_w, low_b, inc_w, inc_b }
    });
    Layout {
        embedding,
        issue_w,
        issue_b,
        action_w,
        action_b,
        norecon_w,
        norecon_b,
        cost,
        total,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl ReferenceEncoder {
    /// Fresh encoder: embeddings uniform in [-0.05, 0.05] from `seed`, heads
    /// zero (so an untrained model predicts the uniform issue distribution).
    pub fn new(schema: TaskSchema, vocab_size: usize, dim: usize, decay: f64, seed: u64) -> Self {
        assert!(dim >= 1, "dim must be >= 1");
        assert!(decay > 0.0 && decay <= 1.0, "decay must be in (0, 1]");
        let lay = layout(&schema, vocab_size, dim);
        let mut params = vec![0.0; lay.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in params[..vocab_size * dim].iter_mut() {
            *p = rng.gen_range(-0.05..=0.05);
        }
        ReferenceEncoder { schema, vocab_size, dim, decay, params }
    }

    pub(crate) fn layout(&self) -> Layout {
        layout(&self.schema, self.vocab_size, self.dim)
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Advance the recurrence state in place for one token.
    fn step_state(&self, state: &mut [f64], token_id: u32) -> Result<()> {
        let id = token_id as usize;
        if id >= self.vocab_size {
            return Err(Error::invalid(format!(
                "token id {id} out of range for vocab of {}",
                self.vocab_size
            )));
        }
        let emb = &self.params[id * self.dim..(id + 1) * self.dim];
        let keep = 1.0 - self.decay;
        for (s, e) in state.iter_mut().zip(emb) {
            *s = keep * *s + self.decay * *e;
        }
        Ok(())
    }

    /// Task heads applied to one state vector.
    pub(crate) fn frame_from_state(&self, state: &[f64]) -> PredictionFrame {
        let lay = self.layout();
        let k = self.schema.n_issues();
        let m = self.schema.n_actions();

        let mut logits = vec![0.0; k];
        for (c, logit) in logits.iter_mut().enumerate() {
            let row = &self.params[lay.issue_w + c * self.dim..lay.issue_w + (c + 1) * self.dim];
            *logit = dot(row, state) + self.params[lay.issue_b + c];
        }
        let issue = softmax(&logits);

        let mut actions = vec![0.0; m];
        for (a, p) in actions.iter_mut().enumerate() {
            let row = &self.params[lay.action_w + a * self.dim..lay.action_w + (a + 1) * self.dim];
            *p = sigmoid(dot(row, state) + self.params[lay.action_b + a]);
        }

        let norecon_row = &self.params[lay.norecon_w..lay.norecon_w + self.dim];
        let no_recontact = sigmoid(dot(norecon_row, state) + self.params[lay.norecon_b]);

        let cost_quantiles = lay.cost.map(|c| {
            let low = dot(&self.params[c.low_w..c.low_w + self.dim], state) + self.params[c.low_b];
            let inc =
                softplus(dot(&self.params[c.inc_w..c.inc_w + self.dim], state) + self.params[c.inc_b]);
            (low, low + inc)
        });

        PredictionFrame { issue, actions, no_recontact, cost_quantiles }
    }

    /// Forward pass that also returns the state at every position; the
    /// training backward pass needs the states.
    pub(crate) fn forward_with_states(
        &self,
        token_ids: &[u32],
    ) -> Result<(Vec<PredictionFrame>, Vec<f64>)> {
        let mut frames = Vec::with_capacity(token_ids.len());
        let mut states = Vec::with_capacity(token_ids.len() * self.dim);
        let mut state = vec![0.0; self.dim];
        for &t in token_ids {
            self.step_state(&mut state, t)?;
            states.extend_from_slice(&state);
            frames.push(self.frame_from_state(&state));
        }
        Ok((frames, states))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Predictor for ReferenceEncoder {
    fn schema(&self) -> &TaskSchema {
        &self.schema
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn forward(&self, token_ids: &[u32]) -> Result<Vec<PredictionFrame>> {
        let mut frames = Vec::with_capacity(token_ids.len());
        let mut state = vec![0.0; self.dim];
        for &t in token_ids {
            self.step_state(&mut state, t)?;
            frames.push(self.frame_from_state(&state));
        }
        Ok(frames)
    }

    fn incremental(&self) -> Option<Box<dyn IncrementalForward + '_>> {
        Some(Box::new(ReferenceState { encoder: self, state: vec![0.0; self.dim] }))
    }
}

/// Streaming forward state for the reference encoder; recomputes nothing.
pub struct ReferenceState<'a> {
    encoder: &'a ReferenceEncoder,
    state: Vec<f64>,
}

impl IncrementalForward for ReferenceState<'_> {
    fn push(&mut self, token_id: u32) -> Result<PredictionFrame> {
        self.encoder.step_state(&mut self.state, token_id)?;
        Ok(self.encoder.frame_from_state(&self.state))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn schema(k: usize, m: usize, cost: bool) -> TaskSchema {
        TaskSchema::new(
            (0..k).map(|i| format!("i{i}")).collect(),
            (0..m).map(|i| format!("a{i}")).collect(),
            cost.then_some((0.1, 0.9)),
        )
        .unwrap()
    }

    fn randomized(k: usize, m: usize, cost: bool, vocab: usize, dim: usize, seed: u64) -> ReferenceEncoder {
        let mut enc = ReferenceEncoder::new(schema(k, m, cost), vocab, dim, 0.2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for p in enc.params.iter_mut() {
            *p = rng.gen_range(-0.5..=0.5);
        }
        enc
    }

    #[test]
    fn untrained_zero_heads_predict_uniform_issue() {
        let enc = ReferenceEncoder::new(schema(4, 2, false), 10, 8, 0.2, 1);
        let frames = enc.forward(&[3, 7, 2]).unwrap();
        for f in &frames {
            for &p in &f.issue {
                assert!((p - 0.25).abs() < 1e-12);
            }
            assert_eq!(f.no_recontact, 0.5);
        }
    }

    #[test]
    fn prefix_frames_ignore_appended_suffix() {
        let enc = randomized(3, 2, true, 20, 6, 9);
        let short = enc.forward(&[5]).unwrap();
        let long = enc.forward(&[5, 9, 9, 1]).unwrap();
        assert_eq!(short[0], long[0]);
    }

    #[test]
    fn out_of_range_token_is_an_error() {
        let enc = ReferenceEncoder::new(schema(2, 0, false), 10, 4, 0.2, 0);
        assert!(enc.forward(&[10]).is_err());
    }

    #[test]
    fn issue_stays_on_simplex_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..50 {
            let enc = randomized(5, 3, false, 30, 7, trial);
            let tokens: Vec<u32> = (0..20).map(|_| rng.gen_range(0..30)).collect();
            for f in enc.forward(&tokens).unwrap() {
                let sum: f64 = f.issue.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(f.issue.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn cost_quantiles_are_ordered_for_random_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..50 {
            let enc = randomized(3, 1, true, 25, 5, 1000 + trial);
            let tokens: Vec<u32> = (0..15).map(|_| rng.gen_range(0..25)).collect();
            for f in enc.forward(&tokens).unwrap() {
                let (lo, hi) = f.cost_quantiles.unwrap();
                assert!(lo <= hi, "({lo}, {hi})");
            }
        }
    }

    #[test]
    fn incremental_matches_batch_forward() {
        let enc = randomized(4, 2, true, 40, 8, 5);
        let tokens: Vec<u32> = vec![1, 5, 30, 2, 2, 17];
        let batch = enc.forward(&tokens).unwrap();
        let mut inc = enc.incremental().unwrap();
        for (i, &t) in tokens.iter().enumerate() {
            assert_eq!(inc.push(t).unwrap(), batch[i], "position {i}");
        }
    }
}
