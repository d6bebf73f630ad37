//! Per-dialog value traces: token values, first-difference rewards and
//! smoothed per-turn values.

use serde::{Deserialize, Serialize};

use crate::encoder::PredictionFrame;
use crate::error::{Error, Result};

use super::smoothing::{smooth_offline, smooth_online};
use super::{
    action_value_with, collapse, confidence_value, preference_value, regression_value,
    ActionAggregation, CostValueMode, Prior, ScaleCalibration,
};

/// One per-aspect value vector (or, for rewards, per-aspect differences).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    /// Issue confidence value in nats.
    pub issue: f64,
    /// Action confidence value in nats.
    pub action: f64,
    /// No-recontact probability (a difference of probabilities in rewards).
    pub norecon: f64,
    /// Cost value; present only when the predictor has the cost task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
    /// Collapsed scalar.
    pub total: f64,
}

/// Options applied while valuing frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValueOptions {
    pub action_agg: ActionAggregation,
    pub cost_mode: CostValueMode,
}

/// Token values, rewards and per-turn values for one dialog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTrace {
    pub id: String,
    pub token_values: Vec<ValueVector>,
    /// `rewards[t] = token_values[t+1] - token_values[t]`, length T-1.
    pub rewards: Vec<ValueVector>,
    /// Offline-smoothed values at each turn's last token.
    pub turn_values: Vec<ValueVector>,
    /// Token index of each turn's last token; rebuilt from turn starts, not
    /// part of the export schema.
    #[serde(skip)]
    pub turn_last_token: Vec<usize>,
}

struct AspectSeries {
    issue: Vec<f64>,
    action: Vec<f64>,
    norecon: Vec<f64>,
    cost: Option<Vec<f64>>,
    total: Vec<f64>,
}

impl AspectSeries {
    fn vector_at(&self, smooth: impl Fn(&[f64], usize) -> f64, t: usize) -> ValueVector {
        ValueVector {
            issue: smooth(&self.issue, t),
            action: smooth(&self.action, t),
            norecon: smooth(&self.norecon, t),
            cost: self.cost.as_ref().map(|c| smooth(c, t)),
            total: smooth(&self.total, t),
        }
    }
}

/// Value one prediction frame: the four per-aspect values plus the
/// collapsed total.
pub fn value_frame(
    frame: &PredictionFrame,
    prior: &Prior,
    calib: &ScaleCalibration,
    opts: ValueOptions,
) -> Result<ValueVector> {
    if frame.actions.len() != prior.actions.len() {
        return Err(Error::invalid("frame action arity does not match prior"));
    }
    let issue = confidence_value(&frame.issue, &prior.issue)?;
    let action = action_value_with(&frame.actions, prior, opts.action_agg);
    let norecon = preference_value(frame.no_recontact);
    let cost = frame
        .cost_quantiles
        .map(|(q10, q90)| regression_value(q10, q90, opts.cost_mode))
        .transpose()?;
    let total = collapse(issue, action, norecon, calib)?;
    Ok(ValueVector { issue, action, norecon, cost, total })
}

/// Value of a zero-length context: every KL aspect sits at its prior (zero)
/// and the preference aspect at the prior no-recontact rate.
pub fn baseline_value(prior: &Prior, calib: &ScaleCalibration) -> Result<ValueVector> {
    let norecon = preference_value(prior.no_recontact);
    let total = collapse(0.0, 0.0, norecon, calib)?;
    Ok(ValueVector { issue: 0.0, action: 0.0, norecon, cost: None, total })
}

fn aspect_series(
    frames: &[PredictionFrame],
    prior: &Prior,
    calib: &ScaleCalibration,
    opts: ValueOptions,
) -> Result<AspectSeries> {
    let with_cost = frames.first().is_some_and(|f| f.cost_quantiles.is_some());
    let mut series = AspectSeries {
        issue: Vec::with_capacity(frames.len()),
        action: Vec::with_capacity(frames.len()),
        norecon: Vec::with_capacity(frames.len()),
        cost: with_cost.then(|| Vec::with_capacity(frames.len())),
        total: Vec::with_capacity(frames.len()),
    };
    for frame in frames {
        let v = value_frame(frame, prior, calib, opts)?;
        series.issue.push(v.issue);
        series.action.push(v.action);
        series.norecon.push(v.norecon);
        if let Some(costs) = series.cost.as_mut() {
            costs.push(v.cost.ok_or_else(|| Error::invalid("cost quantiles missing mid-sequence"))?);
        }
        series.total.push(v.total);
    }
    Ok(series)
}

/// Value every frame, derive rewards as first differences and smooth the
/// per-turn values offline at each turn's last token.
pub fn trace(
    id: &str,
    frames: &[PredictionFrame],
    turn_starts: &[usize],
    prior: &Prior,
    calib: &ScaleCalibration,
) -> Result<ValueTrace> {
    trace_with(id, frames, turn_starts, prior, calib, ValueOptions::default())
}

pub fn trace_with(
    id: &str,
    frames: &[PredictionFrame],
    turn_starts: &[usize],
    prior: &Prior,
    calib: &ScaleCalibration,
    opts: ValueOptions,
) -> Result<ValueTrace> {
    if frames.is_empty() {
        return Err(Error::invalid("cannot trace an empty frame sequence"));
    }
    for (a, b) in turn_starts.iter().zip(turn_starts.iter().skip(1)) {
        if a >= b {
            return Err(Error::invalid("turn starts must be strictly increasing"));
        }
    }
    if turn_starts.first().is_some_and(|&s| s != 0)
        || turn_starts.last().is_some_and(|&s| s >= frames.len())
    {
        return Err(Error::invalid("turn starts out of range"));
    }

    let series = aspect_series(frames, prior, calib, opts)?;
    let token_values: Vec<ValueVector> = (0..frames.len())
        .map(|t| ValueVector {
            issue: series.issue[t],
            action: series.action[t],
            norecon: series.norecon[t],
            cost: series.cost.as_ref().map(|c| c[t]),
            total: series.total[t],
        })
        .collect();

    let rewards: Vec<ValueVector> = token_values
        .windows(2)
        .map(|w| ValueVector {
            issue: w[1].issue - w[0].issue,
            action: w[1].action - w[0].action,
            norecon: w[1].norecon - w[0].norecon,
            cost: match (w[1].cost, w[0].cost) {
                (Some(b), Some(a)) => Some(b - a),
                _ => None,
            },
            total: w[1].total - w[0].total,
        })
        .collect();

    let turn_last_token: Vec<usize> = (0..turn_starts.len())
        .map(|j| {
            if j + 1 < turn_starts.len() {
                turn_starts[j + 1] - 1
            } else {
                frames.len() - 1
            }
        })
        .collect();
    let turn_values = turn_last_token
        .iter()
        .map(|&t| series.vector_at(smooth_offline, t))
        .collect();

    Ok(ValueTrace {
        id: id.to_owned(),
        token_values,
        rewards,
        turn_values,
        turn_last_token,
    })
}

/// Per-turn values under online smoothing (the live-serving view of the same
/// trace): the 4-value trailing mean at each turn's last token.
pub fn online_turn_values(trace: &ValueTrace) -> Vec<ValueVector> {
    let series = AspectSeries {
        issue: trace.token_values.iter().map(|v| v.issue).collect(),
        action: trace.token_values.iter().map(|v| v.action).collect(),
        norecon: trace.token_values.iter().map(|v| v.norecon).collect(),
        cost: trace.token_values.first().and_then(|v| v.cost).map(|_| {
            trace.token_values.iter().map(|v| v.cost.unwrap_or(0.0)).collect()
        }),
        total: trace.token_values.iter().map(|v| v.total).collect(),
    };
    trace
        .turn_last_token
        .iter()
        .map(|&t| series.vector_at(smooth_online, t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::PredictionFrame;

    fn flat_prior() -> Prior {
        Prior {
            issue: vec![0.25; 4],
            actions: vec![0.5, 0.5],
            no_recontact: 0.5,
            issue_counts: vec![0; 4],
            action_counts: vec![0; 2],
            no_recontact_count: 0,
            n_dialogs: 0,
            smoothing: 1.0,
        }
    }

    fn frame(issue: Vec<f64>, norecon: f64) -> PredictionFrame {
        PredictionFrame { issue, actions: vec![0.5, 0.5], no_recontact: norecon, cost_quantiles: None }
    }

    #[test]
    fn constant_frames_have_zero_rewards() {
        let frames = vec![frame(vec![0.4, 0.3, 0.2, 0.1], 0.6); 8];
        let tr = trace("d", &frames, &[0, 3, 6], &flat_prior(), &ScaleCalibration::identity()).unwrap();
        for r in &tr.rewards {
            assert_eq!(r.issue, 0.0);
            assert_eq!(r.action, 0.0);
            assert_eq!(r.norecon, 0.0);
            assert_eq!(r.total, 0.0);
        }
        assert_eq!(tr.rewards.len(), 7);
    }

    #[test]
    fn rewards_telescope_to_endpoint_difference() {
        // Total series [0, 0.2, 0.7] via the no-recontact component alone.
        let frames = vec![
            frame(vec![0.25; 4], 0.0),
            frame(vec![0.25; 4], 0.2),
            frame(vec![0.25; 4], 0.7),
        ];
        let tr = trace("d", &frames, &[0], &flat_prior(), &ScaleCalibration::identity()).unwrap();
        let totals: Vec<f64> = tr.token_values.iter().map(|v| v.total).collect();
        assert!((totals[0] - 0.0).abs() < 1e-12 && (totals[2] - 0.7).abs() < 1e-12);
        let reward_totals: Vec<f64> = tr.rewards.iter().map(|r| r.total).collect();
        assert!((reward_totals[0] - 0.2).abs() < 1e-12);
        assert!((reward_totals[1] - 0.5).abs() < 1e-12);
        let sum: f64 = reward_totals.iter().sum();
        assert!((sum - (totals[2] - totals[0])).abs() < 1e-9);
    }

    #[test]
    fn uniform_prediction_values_are_constant_and_match_direct_kl() {
        // What an untrained zero-head model emits: uniform issue, 0.5 elsewhere.
        let mut prior = flat_prior();
        prior.issue = vec![0.4, 0.3, 0.2, 0.1];
        let frames = vec![frame(vec![0.25; 4], 0.5); 6];
        let tr = trace("d", &frames, &[0, 2], &prior, &ScaleCalibration::identity()).unwrap();
        let expect = confidence_value(&[0.25; 4], &prior.issue).unwrap();
        assert!(expect > 0.0);
        for v in &tr.token_values {
            assert!((v.issue - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn turn_values_are_offline_smoothed_at_turn_ends() {
        let frames: Vec<PredictionFrame> =
            (0..10).map(|i| frame(vec![0.25; 4], i as f64 / 10.0)).collect();
        let tr = trace("d", &frames, &[0, 4], &flat_prior(), &ScaleCalibration::identity()).unwrap();
        assert_eq!(tr.turn_last_token, vec![3, 9]);
        let norecon: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert!((tr.turn_values[0].norecon - smooth_offline(&norecon, 3)).abs() < 1e-15);
        assert!((tr.turn_values[1].norecon - smooth_offline(&norecon, 9)).abs() < 1e-15);
    }

    #[test]
    fn online_turn_values_ignore_later_tokens() {
        let frames: Vec<PredictionFrame> =
            (0..10).map(|i| frame(vec![0.25; 4], i as f64 / 10.0)).collect();
        let tr = trace("d", &frames, &[0, 4], &flat_prior(), &ScaleCalibration::identity()).unwrap();
        let online = online_turn_values(&tr);
        let norecon: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        assert!((online[0].norecon - smooth_online(&norecon, 3)).abs() < 1e-15);
        // Offline smoothing at turn 0 sees tokens 4..=6; online must not.
        assert!(online[0].norecon < tr.turn_values[0].norecon);
    }

    #[test]
    fn empty_frames_error() {
        assert!(trace("d", &[], &[0], &flat_prior(), &ScaleCalibration::identity()).is_err());
    }

    #[test]
    fn bad_turn_starts_error() {
        let frames = vec![frame(vec![0.25; 4], 0.5); 3];
        let prior = flat_prior();
        let calib = ScaleCalibration::identity();
        assert!(trace("d", &frames, &[0, 0], &prior, &calib).is_err());
        assert!(trace("d", &frames, &[1], &prior, &calib).is_err());
        assert!(trace("d", &frames, &[0, 5], &prior, &calib).is_err());
    }
}
