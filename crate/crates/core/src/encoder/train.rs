//! Mini-batch gradient-descent training of the reference encoder.
//!
//! Gradients are exact and hand-derived. Head gradients are the usual
//! softmax/logistic residuals against the replicated dialog-level target;
//! the state gradient is pushed back through the decay recurrence
//! `s_t = (1 - decay) * s_{t-1} + decay * emb(x_t)` with the backward
//! accumulator `G_t = g_t + (1 - decay) * G_{t+1}`, so each embedding row
//! receives `decay * G_t` at every position where its token occurs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_turns, window, DialogRecord, Vocab};
use crate::error::{Error, Result};

use super::loss::token_loss;
use super::reference::ReferenceEncoder;
use super::EncodedLabels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adaptive moment estimation.
    Adam,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_len: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 0.001,
            batch_size: 32,
            max_len: 512,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be > 0"));
        }
        if self.batch_size < 1 || self.max_len < 1 {
            return Err(Error::invalid("batch_size and max_len must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch mean token loss, in training order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_mean_loss: Vec<f64>,
}

/// Derivative of the pinball loss with respect to the quantile estimate.
fn dpinball(q: f64, y: f64, tau: f64) -> f64 {
    if y > q {
        -tau
    } else {
        1.0 - tau
    }
}

/// Accumulate the gradient of one dialog's summed token loss into `grads`
/// (same layout as `enc.params`) and return that loss.
fn accumulate_dialog(
    enc: &ReferenceEncoder,
    tokens: &[u32],
    labels: &EncodedLabels,
    grads: &mut [f64],
) -> Result<f64> {
    let dim = enc.dim;
    let lay = enc.layout();
    let (frames, states) = enc.forward_with_states(tokens)?;
    let mask = vec![true; frames.len()];
    let loss = token_loss(&frames, labels, &enc.schema, &mask);

    // Direct dL/ds_t for every position.
    let mut dstates = vec![0.0; tokens.len() * dim];
    for (t, frame) in frames.iter().enumerate() {
        let s = &states[t * dim..(t + 1) * dim];
        let gs = &mut dstates[t * dim..(t + 1) * dim];

        for (c, &p) in frame.issue.iter().enumerate() {
            let d = p - if c == labels.issue { 1.0 } else { 0.0 };
            grads[lay.issue_b + c] += d;
            let row = lay.issue_w + c * dim;
            for j in 0..dim {
                grads[row + j] += d * s[j];
                gs[j] += d * enc.params[row + j];
            }
        }

        for (a, (&p, &y)) in frame.actions.iter().zip(&labels.actions).enumerate() {
            let d = p - if y { 1.0 } else { 0.0 };
            grads[lay.action_b + a] += d;
            let row = lay.action_w + a * dim;
            for j in 0..dim {
                grads[row + j] += d * s[j];
                gs[j] += d * enc.params[row + j];
            }
        }

        {
            let d = frame.no_recontact - if labels.no_recontact { 1.0 } else { 0.0 };
            grads[lay.norecon_b] += d;
            for j in 0..dim {
                grads[lay.norecon_w + j] += d * s[j];
                gs[j] += d * enc.params[lay.norecon_w + j];
            }
        }

        if let (Some(cost), Some((q_lo, q_hi)), Some((tau_lo, tau_hi)), Some(cl)) =
            (labels.cost, frame.cost_quantiles, enc.schema.cost_quantiles, lay.cost)
        {
            // q_hi = q_lo + softplus(z); sigmoid(z) recovered from the
            // increment without re-deriving z.
            let d_hi = dpinball(q_hi, cost, tau_hi);
            let d_lo = dpinball(q_lo, cost, tau_lo) + d_hi;
            let sig = -(-(q_hi - q_lo)).exp_m1();
            let d_inc = d_hi * sig;
            grads[cl.low_b] += d_lo;
            grads[cl.inc_b] += d_inc;
            for j in 0..dim {
                grads[cl.low_w + j] += d_lo * s[j];
                grads[cl.inc_w + j] += d_inc * s[j];
                gs[j] += d_lo * enc.params[cl.low_w + j] + d_inc * enc.params[cl.inc_w + j];
            }
        }
    }

    // Backward through the decay chain into the embedding table.
    let keep = 1.0 - enc.decay;
    let mut acc = vec![0.0; dim];
    for (t, &token) in tokens.iter().enumerate().rev() {
        let gs = &dstates[t * dim..(t + 1) * dim];
        for j in 0..dim {
            acc[j] = gs[j] + keep * acc[j];
        }
        let row = lay.embedding + token as usize * dim;
        for j in 0..dim {
            grads[row + j] += enc.decay * acc[j];
        }
    }

    Ok(loss)
}

/// Summed token loss and its exact gradient over a set of dialogs. `grads`
/// must match `enc.params` in length and is accumulated into (callers zero
/// it first).
pub fn loss_and_grads(
    enc: &ReferenceEncoder,
    dialogs: &[(&[u32], &EncodedLabels)],
    grads: &mut [f64],
) -> Result<f64> {
    assert_eq!(grads.len(), enc.n_params(), "gradient buffer mismatch");
    let mut loss = 0.0;
    for (tokens, labels) in dialogs {
        loss += accumulate_dialog(enc, tokens, labels, grads)?;
    }
    Ok(loss)
}

enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 },
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, scale: f64) {
        match self {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g * scale;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t as i32);
                let c2 = 1.0 - B2.powi(*t as i32);
                for i in 0..params.len() {
                    let g = grads[i] * scale;
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Train in place. Batch gradients are normalized by the batch token count,
/// dialogs longer than `max_len` are re-windowed at random each epoch, and
/// the whole run is deterministic for a fixed seed.
pub fn train(
    enc: &mut ReferenceEncoder,
    corpus: &[DialogRecord],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if vocab.len() != enc.vocab_size {
        return Err(Error::invalid(format!(
            "vocab size {} does not match model vocab size {}",
            vocab.len(),
            enc.vocab_size
        )));
    }

    let tokenized: Vec<_> = corpus
        .iter()
        .map(|r| tokenize_turns(&r.id, &r.utterances, vocab))
        .collect();
    let labels: Vec<EncodedLabels> = corpus
        .iter()
        .map(|r| enc.schema.encode_labels(&r.labels))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, enc.n_params());
    let mut grads = vec![0.0; enc.n_params()];
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut log = TrainLog { epoch_mean_loss: Vec::with_capacity(cfg.epochs) };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            let mut batch_tokens = 0usize;
            for &i in batch {
                let full = &tokenized[i];
                let windowed;
                let tokens: &[u32] = if full.len() > cfg.max_len {
                    let offset = rng.gen_range(0..=full.len() - cfg.max_len);
                    windowed = window(full, offset, cfg.max_len);
                    &windowed.token_ids
                } else {
                    &full.token_ids
                };
                batch_loss += accumulate_dialog(enc, tokens, &labels[i], &mut grads)?;
                batch_tokens += tokens.len();
            }
            if !batch_loss.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite training loss {batch_loss} at epoch {epoch} batch {batch_no}; \
                     reduce the learning rate"
                )));
            }
            let scale = 1.0 / batch_tokens.max(1) as f64;
            optimizer.step(&mut enc.params, &grads, cfg.learning_rate, scale);
            epoch_loss += batch_loss;
            epoch_tokens += batch_tokens;
        }
        log.epoch_mean_loss.push(epoch_loss / epoch_tokens.max(1) as f64);
    }
    Ok(log)
}

/// Summed token loss of `dialogs` without gradient work; useful for
/// held-out evaluation and for checking gradients against finite
/// differences.
pub fn batch_loss(enc: &ReferenceEncoder, dialogs: &[(&[u32], &EncodedLabels)]) -> Result<f64> {
    use super::Predictor;
    let mut total = 0.0;
    for (tokens, labels) in dialogs {
        let frames = enc.forward(tokens)?;
        let mask = vec![true; frames.len()];
        total += token_loss(&frames, labels, &enc.schema, &mask);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, SyntheticConfig};
    use crate::encoder::TaskSchema;
    use rand::Rng;

    fn small_encoder(seed: u64, with_cost: bool) -> ReferenceEncoder {
        let schema = TaskSchema::new(
            vec!["i0".into(), "i1".into(), "i2".into()],
            vec!["a0".into(), "a1".into()],
            with_cost.then_some((0.1, 0.9)),
        )
        .unwrap();
        let mut enc = ReferenceEncoder::new(schema, 12, 5, 0.2, seed);
        // Randomize the heads too so every gradient path is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for p in enc.params.iter_mut() {
            *p = rng.gen_range(-0.4..=0.4);
        }
        enc
    }

    fn random_labels(rng: &mut ChaCha8Rng, with_cost: bool) -> EncodedLabels {
        EncodedLabels {
            issue: rng.gen_range(0..3),
            actions: vec![rng.gen(), rng.gen()],
            no_recontact: rng.gen(),
            cost: with_cost.then(|| rng.gen_range(0.1..5.0)),
        }
    }

    /// Central finite differences over every parameter.
    fn check_gradients(enc: &mut ReferenceEncoder, tokens: &[u32], labels: &EncodedLabels) -> f64 {
        let dialogs = [(tokens, labels)];
        let mut analytic = vec![0.0; enc.n_params()];
        loss_and_grads(enc, &dialogs, &mut analytic).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (i, &ga) in analytic.iter().enumerate() {
            let orig = enc.params[i];
            enc.params[i] = orig + h;
            let plus = batch_loss(enc, &dialogs).unwrap();
            enc.params[i] = orig - h;
            let minus = batch_loss(enc, &dialogs).unwrap();
            enc.params[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let rel = (ga - fd).abs() / (ga.abs() + fd.abs() + 1e-8);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..4 {
            let with_cost = trial % 2 == 0;
            let mut enc = small_encoder(trial, with_cost);
            let tokens: Vec<u32> = (0..3).map(|_| rng.gen_range(0..12)).collect();
            let labels = random_labels(&mut rng, with_cost);
            let worst = check_gradients(&mut enc, &tokens, &labels);
            assert!(worst <= 1e-4, "trial {trial}: max relative error {worst}");
        }
    }

    #[test]
    fn single_dialog_loss_strictly_decreases() {
        let cfg = SyntheticConfig { n_dialogs: 1, seed: 3, ..Default::default() };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        // The single-dialog schema needs >= 2 issues; synthesize a sibling class.
        let schema = TaskSchema::new(
            vec![corpus[0].labels.issue.clone(), "other".into()],
            corpus[0].labels.actions.iter().cloned().collect(),
            None,
        )
        .unwrap();
        let vocab = build_vocab(&corpus, 1);
        let mut enc = ReferenceEncoder::new(schema, vocab.len(), 8, 0.2, 0);
        let train_cfg = TrainConfig {
            epochs: 6,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Sgd,
            ..Default::default()
        };
        let log = train(&mut enc, &corpus, &vocab, &train_cfg).unwrap();
        for w in log.epoch_mean_loss.windows(2).take(5) {
            assert!(w[1] < w[0], "loss did not decrease: {:?}", log.epoch_mean_loss);
        }
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = SyntheticConfig { n_dialogs: 30, seed: 8, ..Default::default() };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        let schema = TaskSchema::from_corpus(&corpus).unwrap();
        let vocab = build_vocab(&corpus, 1);
        let train_cfg = TrainConfig { epochs: 3, seed: 42, ..Default::default() };
        let mut a = ReferenceEncoder::new(schema.clone(), vocab.len(), 8, 0.2, 7);
        train(&mut a, &corpus, &vocab, &train_cfg).unwrap();
        let mut b = ReferenceEncoder::new(schema, vocab.len(), 8, 0.2, 7);
        train(&mut b, &corpus, &vocab, &train_cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn long_dialogs_train_through_random_windows() {
        let cfg = SyntheticConfig {
            n_dialogs: 12,
            reveal_min: 6,
            reveal_max: 10,
            tail_min: 3,
            tail_max: 5,
            seed: 21,
            ..Default::default()
        };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        let schema = TaskSchema::from_corpus(&corpus).unwrap();
        let vocab = build_vocab(&corpus, 1);
        // max_len far below the dialog lengths forces the window path.
        let train_cfg = TrainConfig { epochs: 3, max_len: 16, seed: 5, ..Default::default() };
        let mut a = ReferenceEncoder::new(schema.clone(), vocab.len(), 6, 0.2, 2);
        let log = train(&mut a, &corpus, &vocab, &train_cfg).unwrap();
        assert_eq!(log.epoch_mean_loss.len(), 3);
        assert!(log.epoch_mean_loss.iter().all(|l| l.is_finite()));
        let mut b = ReferenceEncoder::new(schema, vocab.len(), 6, 0.2, 2);
        train(&mut b, &corpus, &vocab, &train_cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn exploding_learning_rate_aborts_with_diagnostic() {
        let cfg = SyntheticConfig { n_dialogs: 8, seed: 5, ..Default::default() };
        let (corpus, _) = generate_synthetic(&cfg).unwrap();
        let schema = TaskSchema::from_corpus(&corpus).unwrap();
        let vocab = build_vocab(&corpus, 1);
        let mut enc = ReferenceEncoder::new(schema, vocab.len(), 8, 0.2, 1);
        let train_cfg = TrainConfig {
            epochs: 50,
            learning_rate: 1e12,
            optimizer: OptimizerKind::Sgd,
            ..Default::default()
        };
        let err = train(&mut enc, &corpus, &vocab, &train_cfg).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "got {err}");
    }
}
