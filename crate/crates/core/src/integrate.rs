//! Feeding value rewards into a response generator's pipeline: candidate
//! re-ranking and training-sample weight emission.

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_text, TokenizedDialog, Vocab, AGENT_ID};
use crate::encoder::Predictor;
use crate::error::{Error, Result};
use crate::value::{baseline_value, smooth_online, value_frame, Prior, ScaleCalibration, ValueOptions};

/// One generator suggestion with its native score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub score: f64,
}

/// Whether a larger generator score means a better candidate. Generators
/// report negative log-likelihoods (lower better) or retrieval matching
/// scores (higher better); the caller declares which.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreOrientation {
    Higher,
    Lower,
}

/// A candidate with its normalized scores, in final rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub original_index: usize,
    pub text: String,
    pub generator_score: f64,
    pub reward: f64,
    pub normalized_generator: f64,
    pub normalized_reward: f64,
    pub ensemble: f64,
}

/// Candidates sorted by descending ensemble score; ties keep the original
/// generator order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub candidates: Vec<RankedCandidate>,
}

/// Min-max normalization into [0,1]; a constant column maps to 0.5
/// everywhere, which is order-neutral for the ensemble.
fn min_max(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        values.iter().map(|&v| (v - min) / (max - min)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

/// Estimated reward of appending `candidate_text` as an agent turn after
/// `context`: the online-smoothed total value at the candidate's last token
/// minus the online-smoothed total value at the context's last token. An
/// empty context is measured against the prior baseline.
pub fn candidate_reward(
    context: &TokenizedDialog,
    candidate_text: &str,
    predictor: &dyn Predictor,
    vocab: &Vocab,
    prior: &Prior,
    calib: &ScaleCalibration,
) -> Result<f64> {
    let words = tokenize_text(candidate_text);
    if words.is_empty() {
        return Err(Error::invalid("candidate tokenizes to zero tokens"));
    }
    let mut combined = context.token_ids.clone();
    combined.push(AGENT_ID);
    combined.extend(words.iter().map(|w| vocab.id(w)));

    let frames = predictor.forward(&combined)?;
    let opts = ValueOptions::default();
    let totals: Vec<f64> = frames
        .iter()
        .map(|f| value_frame(f, prior, calib, opts).map(|v| v.total))
        .collect::<Result<_>>()?;

    let with_candidate = smooth_online(&totals, totals.len() - 1);
    let without = if context.token_ids.is_empty() {
        baseline_value(prior, calib)?.total
    } else {
        // Causality makes the prefix values identical to running the
        // context alone, and online smoothing reads nothing past its index.
        smooth_online(&totals, context.token_ids.len() - 1)
    };
    Ok(with_candidate - without)
}

/// Rank candidates from already-computed rewards. Both columns are min-max
/// normalized into [0,1] (generator scores after orientation flipping) and
/// averaged into the ensemble score.
pub fn rerank_scored(
    candidates: &[Candidate],
    rewards: &[f64],
    orientation: ScoreOrientation,
) -> Result<RankedList> {
    if candidates.is_empty() {
        return Err(Error::invalid("rerank needs at least one candidate"));
    }
    assert_eq!(candidates.len(), rewards.len(), "one reward per candidate");
    let oriented: Vec<f64> = candidates
        .iter()
        .map(|c| match orientation {
            ScoreOrientation::Higher => c.score,
            ScoreOrientation::Lower => -c.score,
        })
        .collect();
    let norm_gen = min_max(&oriented);
    let norm_vp = min_max(rewards);

    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| RankedCandidate {
            original_index: i,
            text: c.text.clone(),
            generator_score: c.score,
            reward: rewards[i],
            normalized_generator: norm_gen[i],
            normalized_reward: norm_vp[i],
            ensemble: (norm_gen[i] + norm_vp[i]) / 2.0,
        })
        .collect();
    // Stable sort: equal ensembles keep the incumbent generator order.
    ranked.sort_by(|a, b| b.ensemble.total_cmp(&a.ensemble));
    Ok(RankedList { candidates: ranked })
}

/// Score each candidate's reward with the model, then rank.
pub fn rerank(
    context: &TokenizedDialog,
    candidates: &[Candidate],
    orientation: ScoreOrientation,
    predictor: &dyn Predictor,
    vocab: &Vocab,
    prior: &Prior,
    calib: &ScaleCalibration,
) -> Result<RankedList> {
    let rewards: Vec<f64> = candidates
        .iter()
        .map(|c| candidate_reward(context, &c.text, predictor, vocab, prior, calib))
        .collect::<Result<_>>()?;
    rerank_scored(candidates, &rewards, orientation)
}

/// One emitted training weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingWeight {
    pub index: usize,
    pub reward: f64,
    pub weight: f64,
}

/// Min-max weights from raw rewards; when every reward is equal the weights
/// are all 1, which leaves downstream training untouched.
pub fn weights_from_rewards(rewards: &[f64]) -> Vec<f64> {
    let min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        rewards.iter().map(|&r| (r - min) / (max - min)).collect()
    } else {
        vec![1.0; rewards.len()]
    }
}

/// Weight (context, target sentence) pairs by their estimated target
/// rewards, normalized to [0,1] over the whole list.
pub fn training_weights(
    items: &[(TokenizedDialog, String)],
    predictor: &dyn Predictor,
    vocab: &Vocab,
    prior: &Prior,
    calib: &ScaleCalibration,
) -> Result<Vec<TrainingWeight>> {
    if items.is_empty() {
        return Err(Error::invalid("training_weights needs a non-empty list"));
    }
    let rewards: Vec<f64> = items
        .iter()
        .map(|(ctx, target)| candidate_reward(ctx, target, predictor, vocab, prior, calib))
        .collect::<Result<_>>()?;
    let weights = weights_from_rewards(&rewards);
    Ok(rewards
        .into_iter()
        .zip(weights)
        .enumerate()
        .map(|(index, (reward, weight))| TrainingWeight { index, reward, weight })
        .collect())
}
