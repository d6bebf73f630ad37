//! Per-aspect value functions over predictor outputs.
//!
//! Confidence-style aspects (issue, actions) are valued as the KL divergence
//! from the prediction to the non-informative training prior: how much
//! information the model has gained plus how sharp it is. The preferred
//! no-recontact outcome is valued by its probability directly, and the
//! optional cost regression by prediction-interval sharpness or a negative
//! upper quantile. The per-aspect values collapse into one scalar through
//! empirically calibrated weights.

mod smoothing;
mod trace;

pub use smoothing::{smooth_offline, smooth_online};
pub use trace::{
    baseline_value, online_turn_values, trace, trace_with, value_frame, ValueOptions, ValueTrace,
    ValueVector,
};

use serde::{Deserialize, Serialize};

use crate::corpus::DialogRecord;
use crate::encoder::TaskSchema;
use crate::error::{Error, Result};

/// Non-informative baseline: the Laplace-smoothed empirical label
/// distribution of the training corpus. Smoothing keeps every entry strictly
/// inside (0,1) so the KL against it is always defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    /// Simplex over issue classes, aligned with the schema ordering.
    pub issue: Vec<f64>,
    /// Per-action positive-rate parameters.
    pub actions: Vec<f64>,
    /// No-recontact rate parameter.
    pub no_recontact: f64,
    pub issue_counts: Vec<u64>,
    pub action_counts: Vec<u64>,
    pub no_recontact_count: u64,
    pub n_dialogs: u64,
    /// Additive smoothing constant (add-one).
    pub smoothing: f64,
}

/// Estimate the prior from training labels: `(count + 1) / (N + K)` for the
/// issue simplex and `(count + 1) / (N + 2)` for each Bernoulli task.
pub fn estimate_prior(corpus: &[DialogRecord], schema: &TaskSchema) -> Result<Prior> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot estimate a prior from an empty corpus"));
    }
    let k = schema.n_issues();
    let m = schema.n_actions();
    let mut issue_counts = vec![0u64; k];
    let mut action_counts = vec![0u64; m];
    let mut no_recontact_count = 0u64;
    for record in corpus {
        let idx = schema.issue_index(&record.labels.issue).ok_or_else(|| {
            Error::invalid(format!("issue '{}' not in schema", record.labels.issue))
        })?;
        issue_counts[idx] += 1;
        for (a, name) in schema.actions.iter().enumerate() {
            if record.labels.actions.contains(name) {
                action_counts[a] += 1;
            }
        }
        if record.labels.no_recontact() {
            no_recontact_count += 1;
        }
    }
    let n = corpus.len() as f64;
    Ok(Prior {
        issue: issue_counts.iter().map(|&c| (c as f64 + 1.0) / (n + k as f64)).collect(),
        actions: action_counts.iter().map(|&c| (c as f64 + 1.0) / (n + 2.0)).collect(),
        no_recontact: (no_recontact_count as f64 + 1.0) / (n + 2.0),
        issue_counts,
        action_counts,
        no_recontact_count,
        n_dialogs: corpus.len() as u64,
        smoothing: 1.0,
    })
}

/// Information-gain-plus-sharpness value: `D_KL(p || p0)` in nats, computed
/// as `sum p_i * ln(p_i / p0_i)` with the `0 ln 0 = 0` convention. Clamped
/// at zero against floating-point residue.
pub fn confidence_value(p: &[f64], p0: &[f64]) -> Result<f64> {
    if p.len() != p0.len() {
        return Err(Error::invalid(format!(
            "distribution arity mismatch: {} vs {}",
            p.len(),
            p0.len()
        )));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(p0) {
        if pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Value of an outcome we directly prefer: the probability itself.
pub fn preference_value(p_no_recontact: f64) -> f64 {
    p_no_recontact
}

fn bernoulli_kl(p: f64, p0: f64) -> f64 {
    let mut kl = 0.0;
    if p > 0.0 {
        kl += p * (p / p0).ln();
    }
    if p < 1.0 {
        kl += (1.0 - p) * ((1.0 - p) / (1.0 - p0)).ln();
    }
    kl.max(0.0)
}

/// How per-action divergences combine into one action value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionAggregation {
    /// Sum of per-action Bernoulli KLs: additive, zero iff every action sits
    /// at its prior.
    #[default]
    Sum,
    Mean,
}

/// Action aspect value: aggregated Bernoulli KL of each action probability
/// against its prior rate.
pub fn action_value(probs: &[f64], prior: &Prior) -> f64 {
    action_value_with(probs, prior, ActionAggregation::Sum)
}

pub fn action_value_with(probs: &[f64], prior: &Prior, agg: ActionAggregation) -> f64 {
    assert_eq!(probs.len(), prior.actions.len(), "action arity mismatch");
    let sum: f64 = probs
        .iter()
        .zip(&prior.actions)
        .map(|(&p, &p0)| bernoulli_kl(p, p0))
        .sum();
    match agg {
        ActionAggregation::Sum => sum,
        ActionAggregation::Mean if probs.is_empty() => 0.0,
        ActionAggregation::Mean => sum / probs.len() as f64,
    }
}

/// How the cost quantile pair is turned into a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostValueMode {
    /// Sharpness of the prediction interval: `-(q90 - q10)`.
    Confidence,
    /// Low predicted cost with confidence: `-q90`.
    #[default]
    Cost,
}

pub fn regression_value(q10: f64, q90: f64, mode: CostValueMode) -> Result<f64> {
    if q10 > q90 {
        return Err(Error::invalid(format!(
            "quantile estimates out of order: q10 {q10} > q90 {q90}"
        )));
    }
    Ok(match mode {
        CostValueMode::Confidence => -(q90 - q10),
        CostValueMode::Cost => -q90,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMode {
    /// `alpha * v_issue + beta * v_action + v_norecon`.
    #[default]
    WeightedAverage,
    /// Sum of each component's empirical quantile rank under the
    /// calibration-time component distributions.
    QuantileSum,
}

/// Sorted calibration-time component samples, needed for quantile-sum
/// collapse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDistributions {
    pub issue: Vec<f64>,
    pub action: Vec<f64>,
    pub no_recontact: Vec<f64>,
}

/// Scale weights and normalization stats for collapsing a value vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCalibration {
    pub alpha: f64,
    pub beta: f64,
    pub mode: CollapseMode,
    /// `(min, max)` of the collapsed value over the calibration corpus;
    /// present iff min < max. When set, collapse maps through
    /// `(v - min) / (max - min)`.
    pub normalization: Option<(f64, f64)>,
    pub distributions: Option<ComponentDistributions>,
    pub n_samples: usize,
}

impl ScaleCalibration {
    /// Unit weights, no normalization; useful before any corpus statistics
    /// exist.
    pub fn identity() -> Self {
        ScaleCalibration {
            alpha: 1.0,
            beta: 1.0,
            mode: CollapseMode::WeightedAverage,
            normalization: None,
            distributions: None,
            n_samples: 0,
        }
    }
}

/// Nearest-rank empirical quantile of an ascending-sorted sample:
/// element at rank `ceil(q * n)`.
pub(crate) fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Fraction of calibration samples at or below `x`.
fn quantile_rank(sorted: &[f64], x: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let below = sorted.partition_point(|&s| s <= x);
    below as f64 / sorted.len() as f64
}

/// Collapse a value vector to one scalar.
pub fn collapse(v_issue: f64, v_action: f64, v_norecon: f64, calib: &ScaleCalibration) -> Result<f64> {
    let raw = match calib.mode {
        CollapseMode::WeightedAverage => calib.alpha * v_issue + calib.beta * v_action + v_norecon,
        CollapseMode::QuantileSum => {
            let dist = calib.distributions.as_ref().ok_or_else(|| {
                Error::invalid("quantile_sum collapse requires calibration distributions")
            })?;
            quantile_rank(&dist.issue, v_issue)
                + quantile_rank(&dist.action, v_action)
                + quantile_rank(&dist.no_recontact, v_norecon)
        }
    };
    Ok(match calib.normalization {
        Some((min, max)) => (raw - min) / (max - min),
        None => raw,
    })
}

/// Fit collapse weights from per-token component values gathered on the
/// training corpus: each KL-valued aspect is rescaled so its P90 matches
/// the no-recontact P90, putting the contributions on a similar scale. A
/// degenerate (near-zero) P90 denominator falls back to weight 1.
pub fn calibrate_scales(samples: &[(f64, f64, f64)], mode: CollapseMode) -> Result<ScaleCalibration> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot calibrate scales from zero samples"));
    }
    let mut issue: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let mut action: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut norecon: Vec<f64> = samples.iter().map(|s| s.2).collect();
    issue.sort_by(f64::total_cmp);
    action.sort_by(f64::total_cmp);
    norecon.sort_by(f64::total_cmp);

    let p90_issue = nearest_rank(&issue, 0.9);
    let p90_action = nearest_rank(&action, 0.9);
    let p90_norecon = nearest_rank(&norecon, 0.9);
    let weight = |denom: f64| {
        if denom <= 1e-9 {
            return 1.0;
        }
        let w = p90_norecon / denom;
        if w.is_finite() && w > 0.0 { w } else { 1.0 }
    };

    let mut calib = ScaleCalibration {
        alpha: weight(p90_issue),
        beta: weight(p90_action),
        mode,
        normalization: None,
        distributions: matches!(mode, CollapseMode::QuantileSum).then(|| ComponentDistributions {
            issue: issue.clone(),
            action: action.clone(),
            no_recontact: norecon.clone(),
        }),
        n_samples: samples.len(),
    };

    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &(vi, va, vn) in samples {
        let v = collapse(vi, va, vn, &calib)?;
        min = min.min(v);
        max = max.max(v);
    }
    if min < max {
        calib.normalization = Some((min, max));
    }
    Ok(calib)
}
