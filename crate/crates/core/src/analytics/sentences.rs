//! High-value sentence extraction: turns ranked by their per-turn reward.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DialogRecord;
use crate::error::{Error, Result};
use crate::value::ValueTrace;

use super::Aspect;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// Largest positive turn rewards first.
    Positive,
    /// Most negative turn rewards first.
    Negative,
    /// Rewards nearest zero first.
    Zero,
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(RewardMode::Positive),
            "negative" => Ok(RewardMode::Negative),
            "zero" => Ok(RewardMode::Zero),
            other => Err(Error::invalid(format!("unknown reward mode '{other}'"))),
        }
    }
}

/// One ranked turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceReward {
    pub dialog_id: String,
    pub turn: usize,
    pub text: String,
    pub delta_v: f64,
}

/// Rank turns across the corpus by per-turn reward for one aspect. The
/// per-turn reward is the turn value minus the previous turn's value (the
/// first turn is measured against zero). Returns at most `k` turns; fewer
/// when the corpus is small.
pub fn top_sentences(
    traces: &[ValueTrace],
    dialogs: &[DialogRecord],
    aspect: Aspect,
    k: usize,
    mode: RewardMode,
) -> Result<Vec<SentenceReward>> {
    let by_id: HashMap<&str, &DialogRecord> =
        dialogs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut all = Vec::new();
    for trace in traces {
        let record = by_id
            .get(trace.id.as_str())
            .ok_or_else(|| Error::invalid(format!("trace '{}' has no matching dialog", trace.id)))?;
        let mut prev = 0.0;
        for (j, tv) in trace.turn_values.iter().enumerate() {
            let v = aspect.of(tv);
            let text = record
                .utterances
                .get(j)
                .map(|u| u.text.clone())
                .unwrap_or_default();
            all.push(SentenceReward {
                dialog_id: trace.id.clone(),
                turn: j,
                text,
                delta_v: v - prev,
            });
            prev = v;
        }
    }
    match mode {
        RewardMode::Positive => all.sort_by(|a, b| b.delta_v.total_cmp(&a.delta_v)),
        RewardMode::Negative => all.sort_by(|a, b| a.delta_v.total_cmp(&b.delta_v)),
        RewardMode::Zero => all.sort_by(|a, b| a.delta_v.abs().total_cmp(&b.delta_v.abs())),
    }
    all.truncate(k);
    Ok(all)
}
