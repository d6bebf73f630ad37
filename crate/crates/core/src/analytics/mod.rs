//! Corpus-level evaluation: progress curves, quantile bands, curve
//! classification, bot-failure detection, accuracy/calibration reports and
//! high-value sentence extraction.

mod band;
mod metrics;
mod monitor;
mod sentences;

pub use band::{band_from_csv, band_to_csv, quantile_band, BandRow, QuantileBand, DEFAULT_LEVELS, DEFAULT_MIN_SUPPORT};
pub use metrics::{
    accuracy_report, calibration_report, metrics_report, AccuracyReport, ActionMetrics,
    CalibrationReport, MetricsReport, ReliabilityBin, TaskCalibration,
};
pub use monitor::{classify_curve, detect_bot_failure, CurveClass};
pub use sentences::{top_sentences, RewardMode, SentenceReward};

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedDialog;
use crate::error::{Error, Result};
use crate::value::{ValueTrace, ValueVector};

/// Which value dimension a curve or reward refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Issue,
    Action,
    Recontact,
    #[default]
    Total,
}

impl Aspect {
    pub fn of(self, v: &ValueVector) -> f64 {
        match self {
            Aspect::Issue => v.issue,
            Aspect::Action => v.action,
            Aspect::Recontact => v.norecon,
            Aspect::Total => v.total,
        }
    }
}

impl std::str::FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "issue" => Ok(Aspect::Issue),
            "action" => Ok(Aspect::Action),
            "recontact" | "norecon" => Ok(Aspect::Recontact),
            "total" => Ok(Aspect::Total),
            other => Err(Error::invalid(format!("unknown aspect '{other}'"))),
        }
    }
}

/// One dialog's per-turn value series for a single aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressCurve {
    pub dialog_id: String,
    pub aspect: Aspect,
    pub values: Vec<f64>,
}

impl ProgressCurve {
    /// Extract a curve straight from a trace.
    pub fn from_trace(trace: &ValueTrace, aspect: Aspect) -> Self {
        ProgressCurve {
            dialog_id: trace.id.clone(),
            aspect,
            values: trace.turn_values.iter().map(|v| aspect.of(v)).collect(),
        }
    }
}

/// Per-turn total-value progress curve, checked against the tokenized
/// dialog it came from.
pub fn progress_curve(trace: &ValueTrace, dialog: &TokenizedDialog) -> Result<ProgressCurve> {
    progress_curve_aspect(trace, dialog, Aspect::Total)
}

pub fn progress_curve_aspect(
    trace: &ValueTrace,
    dialog: &TokenizedDialog,
    aspect: Aspect,
) -> Result<ProgressCurve> {
    if trace.turn_values.len() != dialog.n_turns() || trace.token_values.len() != dialog.len() {
        return Err(Error::invalid(format!(
            "trace for '{}' is not aligned with the tokenized dialog",
            trace.id
        )));
    }
    Ok(ProgressCurve::from_trace(trace, aspect))
}
