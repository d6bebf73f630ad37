//! Synthetic weak-signal corpus with a planted, machine-checkable oracle.
//!
//! Every generated dialog is filler chatter plus exactly one customer turn
//! containing a token that deterministically identifies the issue; the
//! action set, the recontact outcome and the optional cost are functions of
//! that issue. The oracle table records where the signal was planted, so
//! value jumps and classifier accuracy can be verified against ground truth.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DialogRecord, LabelSet, Speaker, Utterance};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_dialogs: usize,
    /// Number of issue classes, >= 2.
    pub n_issues: usize,
    /// Number of action labels.
    pub n_actions: usize,
    /// The revealing turn index is uniform in `[reveal_min, reveal_max]`.
    pub reveal_min: usize,
    pub reveal_max: usize,
    /// Turns after the revealing turn, uniform in `[tail_min, tail_max]`.
    pub tail_min: usize,
    pub tail_max: usize,
    /// Probability that a dialog's stored label is resampled from the other
    /// issue classes (actions/recontact/cost follow the resampled issue).
    pub noise: f64,
    /// Size of the uninformative filler vocabulary.
    pub filler_vocab: usize,
    /// Attach a cost label derived from the stored issue.
    pub with_cost: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_dialogs: 1000,
            n_issues: 8,
            n_actions: 4,
            reveal_min: 1,
            reveal_max: 4,
            tail_min: 1,
            tail_max: 3,
            noise: 0.0,
            filler_vocab: 50,
            with_cost: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.n_issues < 2 {
            return Err(crate::error::Error::invalid("n_issues must be >= 2"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(crate::error::Error::invalid("noise must be in [0, 0.5)"));
        }
        if self.reveal_min > self.reveal_max || self.tail_min > self.tail_max {
            return Err(crate::error::Error::invalid("reveal/tail ranges must be non-empty"));
        }
        if self.filler_vocab == 0 {
            return Err(crate::error::Error::invalid("filler_vocab must be >= 1"));
        }
        Ok(())
    }
}

/// Ground truth for one generated dialog.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub id: String,
    /// Turn index of the revealing customer turn.
    pub reveal_turn: usize,
    /// The noiseless issue label.
    pub true_issue: String,
}

pub fn issue_name(k: usize) -> String {
    format!("issue_{k}")
}

pub fn action_name(a: usize) -> String {
    format!("action_{a}")
}

/// The token that deterministically identifies issue `k`. Alphanumeric so
/// the tokenizer keeps it atomic.
pub fn reveal_token(k: usize) -> String {
    format!("reveal{k}")
}

pub fn filler_token(j: usize) -> String {
    format!("filler{j}")
}

/// Action set implied by issue `k`: action `a` applies when bit `a mod 3`
/// of `k` is set. Actions are correlated but not one-to-one with issues.
pub fn actions_for(k: usize, n_actions: usize) -> Vec<usize> {
    (0..n_actions).filter(|a| (k >> (a % 3)) & 1 == 1).collect()
}

/// Recontact outcome implied by issue `k`: odd issues recontact.
pub fn recontact_for(k: usize) -> bool {
    k % 2 == 1
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// RNG for one dialog, derived from the corpus seed and the dialog index so
/// generation is deterministic regardless of call interleaving.
fn dialog_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index as u64)))
}

fn filler_text(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, n: usize) -> String {
    let words: Vec<String> = (0..n)
        .map(|_| filler_token(rng.gen_range(0..cfg.filler_vocab)))
        .collect();
    words.join(" ")
}

/// Generate the corpus and its oracle table.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> crate::error::Result<(Vec<DialogRecord>, Vec<OracleEntry>)> {
    cfg.validate()?;
    let mut corpus = Vec::with_capacity(cfg.n_dialogs);
    let mut oracle = Vec::with_capacity(cfg.n_dialogs);
    for i in 0..cfg.n_dialogs {
        let mut rng = dialog_rng(cfg.seed, i);
        let true_k = rng.gen_range(0..cfg.n_issues);
        let reveal_turn = rng.gen_range(cfg.reveal_min..=cfg.reveal_max);
        let tail = rng.gen_range(cfg.tail_min..=cfg.tail_max);

        let mut utterances = Vec::with_capacity(reveal_turn + 1 + tail);
        for t in 0..reveal_turn {
            let speaker = match t % 3 {
                0 => Speaker::Bot,
                1 => Speaker::Customer,
                _ => Speaker::Agent,
            };
            let n = rng.gen_range(3..=7);
            utterances.push(Utterance::new(speaker, filler_text(&mut rng, cfg, n)));
        }
        let n_pre = rng.gen_range(1..=2);
        let pre = filler_text(&mut rng, cfg, n_pre);
        let n_post = rng.gen_range(1..=2);
        let post = filler_text(&mut rng, cfg, n_post);
        utterances.push(Utterance::new(
            Speaker::Customer,
            format!("{pre} {} {post}", reveal_token(true_k)),
        ));
        for t in 0..tail {
            let speaker = if t % 2 == 0 { Speaker::Agent } else { Speaker::Bot };
            let n = rng.gen_range(3..=6);
            utterances.push(Utterance::new(speaker, filler_text(&mut rng, cfg, n)));
        }

        let stored_k = if cfg.noise > 0.0 && rng.gen::<f64>() < cfg.noise {
            // Uniform over the other classes.
            let shift = rng.gen_range(1..cfg.n_issues);
            (true_k + shift) % cfg.n_issues
        } else {
            true_k
        };
        let cost = cfg
            .with_cost
            .then(|| (stored_k as f64 + 1.0) * rng.gen_range(0.5..1.5));

        let id = format!("syn{i:06}");
        corpus.push(DialogRecord {
            id: id.clone(),
            utterances,
            labels: LabelSet {
                issue: issue_name(stored_k),
                actions: actions_for(stored_k, cfg.n_actions)
                    .into_iter()
                    .map(action_name)
                    .collect(),
                recontact: recontact_for(stored_k),
                cost,
            },
        });
        oracle.push(OracleEntry {
            id,
            reveal_turn,
            true_issue: issue_name(true_k),
        });
    }
    Ok((corpus, oracle))
}
