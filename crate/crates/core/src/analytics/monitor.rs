//! Curve quality classification against a reference band, and online
//! bot-failure detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ProgressCurve, QuantileBand};

/// Band stripe containing the majority of a curve's turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveClass {
    BelowP10,
    P10P50,
    P50P90,
    AboveP90,
}

fn three_levels(band: &QuantileBand) -> Result<(usize, usize, usize)> {
    match (band.level_index(0.1), band.level_index(0.5), band.level_index(0.9)) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(Error::invalid("band must carry the 0.1, 0.5 and 0.9 levels")),
    }
}

/// Classify a curve by the stripe holding the majority of its turns.
/// Comparisons are strictly-above, so a curve lying exactly on a quantile
/// falls in the stripe below it; stripe-count ties resolve toward the lower
/// stripe.
pub fn classify_curve(curve: &ProgressCurve, band: &QuantileBand) -> Result<CurveClass> {
    let (i10, i50, i90) = three_levels(band)?;
    let mut counts = [0usize; 4];
    for row in &band.rows {
        let Some(&v) = curve.values.get(row.turn_index) else { continue };
        let stripe = if v > row.values[i90] {
            3
        } else if v > row.values[i50] {
            2
        } else if v > row.values[i10] {
            1
        } else {
            0
        };
        counts[stripe] += 1;
    }
    if counts.iter().sum::<usize>() == 0 {
        return Err(Error::invalid(format!(
            "curve '{}' shares no turn indices with the band",
            curve.dialog_id
        )));
    }
    let mut best = 0;
    for s in 1..4 {
        if counts[s] > counts[best] {
            best = s;
        }
    }
    Ok(match best {
        0 => CurveClass::BelowP10,
        1 => CurveClass::P10P50,
        2 => CurveClass::P50P90,
        _ => CurveClass::AboveP90,
    })
}

/// First turn `t` at which the curve has sat strictly below the P10 band
/// for `patience` consecutive turns ending at `t`; `None` when it never
/// does. The decision at `t` reads only turns `<= t`, so this is safe to
/// run live. Turns outside the band's supported range reset the run.
pub fn detect_bot_failure(
    curve: &ProgressCurve,
    band: &QuantileBand,
    patience: usize,
) -> Option<usize> {
    assert!(patience >= 1, "patience must be >= 1");
    let i10 = band
        .level_index(0.1)
        .expect("bot-failure detection needs the 0.1 band level");
    let mut run = 0usize;
    for (t, &v) in curve.values.iter().enumerate() {
        match band.value_at(t, i10) {
            Some(p10) if v < p10 => {
                run += 1;
                if run >= patience {
                    return Some(t);
                }
            }
            _ => run = 0,
        }
    }
    None
}
