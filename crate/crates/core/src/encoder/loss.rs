//! Replicated-target training loss.
//!
//! The dialog-level label scores every token: the loss is the sum over
//! non-pad tokens of issue cross-entropy, per-action binary cross-entropy,
//! no-recontact binary cross-entropy and, when a cost label is present,
//! pinball terms for both quantile heads.

use super::{EncodedLabels, PredictionFrame, TaskSchema};

/// Quantile regression loss: `max(tau * (y - q), (tau - 1) * (y - q))`.
/// Non-negative, zero iff `y == q_pred`; its minimizer in expectation is the
/// tau-quantile of `y`.
pub fn pinball(q_pred: f64, y: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0 && tau < 1.0, "tau must be in (0,1)");
    let e = y - q_pred;
    (tau * e).max((tau - 1.0) * e)
}

fn bce(p: f64, target: bool) -> f64 {
    // 0 * ln 0 convention: a correct prediction at probability 1 costs 0.
    if target {
        if p >= 1.0 { 0.0 } else { -p.ln() }
    } else if p <= 0.0 {
        0.0
    } else {
        -(-p).ln_1p()
    }
}

/// Sum of token-level losses over non-pad positions. `pad_mask[t]` is true
/// for real tokens.
pub fn token_loss(
    frames: &[PredictionFrame],
    labels: &EncodedLabels,
    schema: &TaskSchema,
    pad_mask: &[bool],
) -> f64 {
    assert_eq!(frames.len(), pad_mask.len(), "frames and mask must align");
    let mut total = 0.0;
    for (frame, &real) in frames.iter().zip(pad_mask) {
        if !real {
            continue;
        }
        total += -frame.issue[labels.issue].ln();
        for (&p, &y) in frame.actions.iter().zip(&labels.actions) {
            total += bce(p, y);
        }
        total += bce(frame.no_recontact, labels.no_recontact);
        if let (Some(cost), Some((q_lo, q_hi)), Some((tau_lo, tau_hi))) =
            (labels.cost, frame.cost_quantiles, schema.cost_quantiles)
        {
            total += pinball(q_lo, cost, tau_lo) + pinball(q_hi, cost, tau_hi);
        }
    }
    total
}
