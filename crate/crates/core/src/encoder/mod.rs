//! Causal token-level multi-task prediction.
//!
//! The [`Predictor`] trait is the pluggable surface: anything that can map a
//! token prefix to per-token task predictions can drive the value machinery.
//! [`ReferenceEncoder`] is the built-in trainable implementation.

mod loss;
mod persist;
mod reference;
mod train;

pub use loss::{pinball, token_loss};
pub use persist::{load_model, read_model, save_model, write_model, ModelFile, FORMAT_VERSION};
pub use reference::{ReferenceEncoder, ReferenceState};
pub use train::{batch_loss, loss_and_grads, train, OptimizerKind, TrainConfig, TrainLog};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogRecord, LabelSet};
use crate::error::{Error, Result};

/// The prediction tasks: issue classes, action labels, the recontact task
/// (always present) and optional cost quantile levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub issues: Vec<String>,
    pub actions: Vec<String>,
    /// Lower/upper quantile levels for the cost regression task, strictly
    /// increasing in (0,1). `None` disables the task.
    pub cost_quantiles: Option<(f64, f64)>,
}

pub const DEFAULT_COST_QUANTILES: (f64, f64) = (0.1, 0.9);

impl TaskSchema {
    pub fn new(
        issues: Vec<String>,
        actions: Vec<String>,
        cost_quantiles: Option<(f64, f64)>,
    ) -> Result<Self> {
        let schema = TaskSchema { issues, actions, cost_quantiles };
        schema.validate()?;
        Ok(schema)
    }

    /// Derive the schema from corpus labels: distinct issues and actions,
    /// sorted for determinism. The cost task is enabled when any dialog
    /// carries a cost label.
    pub fn from_corpus(corpus: &[DialogRecord]) -> Result<Self> {
        let mut issues: Vec<String> = corpus.iter().map(|r| r.labels.issue.clone()).collect();
        issues.sort();
        issues.dedup();
        let mut actions: Vec<String> = corpus
            .iter()
            .flat_map(|r| r.labels.actions.iter().cloned())
            .collect();
        actions.sort();
        actions.dedup();
        let any_cost = corpus.iter().any(|r| r.labels.cost.is_some());
        TaskSchema::new(issues, actions, any_cost.then_some(DEFAULT_COST_QUANTILES))
    }

    pub fn validate(&self) -> Result<()> {
        if self.issues.len() < 2 {
            return Err(Error::invalid("schema needs at least 2 issue classes"));
        }
        if let Some((lo, hi)) = self.cost_quantiles {
            if !(lo > 0.0 && lo < hi && hi < 1.0) {
                return Err(Error::invalid(format!(
                    "cost quantile levels must be strictly increasing in (0,1), got ({lo}, {hi})"
                )));
            }
        }
        Ok(())
    }

    pub fn n_issues(&self) -> usize {
        self.issues.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn issue_index(&self, issue: &str) -> Option<usize> {
        self.issues.iter().position(|i| i == issue)
    }

    /// Map dialog-level labels onto schema indices. The same encoded target
    /// scores every token of the dialog.
    pub fn encode_labels(&self, labels: &LabelSet) -> Result<EncodedLabels> {
        let issue = self
            .issue_index(&labels.issue)
            .ok_or_else(|| Error::invalid(format!("issue '{}' not in schema", labels.issue)))?;
        for a in &labels.actions {
            if !self.actions.iter().any(|x| x == a) {
                return Err(Error::invalid(format!("action '{a}' not in schema")));
            }
        }
        let actions = self
            .actions
            .iter()
            .map(|a| labels.actions.contains(a))
            .collect();
        Ok(EncodedLabels {
            issue,
            actions,
            no_recontact: labels.no_recontact(),
            cost: labels.cost,
        })
    }
}

/// Dialog-level targets resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedLabels {
    pub issue: usize,
    pub actions: Vec<bool>,
    pub no_recontact: bool,
    pub cost: Option<f64>,
}

/// Per-token, per-task outputs of a causal predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFrame {
    /// Probability simplex over the issue classes.
    pub issue: Vec<f64>,
    /// Independent per-action probabilities.
    pub actions: Vec<f64>,
    /// Probability that the customer does not recontact.
    pub no_recontact: f64,
    /// `(q_low, q_high)` cost quantile estimates, `q_low <= q_high` by
    /// construction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_quantiles: Option<(f64, f64)>,
}

/// A causal token-level multi-task predictor. Output at position `t` must
/// depend only on tokens `0..=t`.
pub trait Predictor {
    fn schema(&self) -> &TaskSchema;

    fn vocab_size(&self) -> usize;

    /// One frame per input token.
    fn forward(&self, token_ids: &[u32]) -> Result<Vec<PredictionFrame>>;

    /// Start an incremental pass, if this predictor supports one. Callers
    /// that stream tokens fall back to re-running the prefix when this
    /// returns `None`.
    fn incremental(&self) -> Option<Box<dyn IncrementalForward + '_>> {
        None
    }
}

/// Token-at-a-time forward state for streaming use.
pub trait IncrementalForward {
    fn push(&mut self, token_id: u32) -> Result<PredictionFrame>;
}
