//! Dialog data model: records, labels, JSONL ingestion, tokenization,
//! synthetic corpus generation and train/test splitting.

mod jsonl;
mod split;
mod synthetic;
mod tokenizer;
mod vocab;

pub use jsonl::{parse_corpus, parse_corpus_reader, serialize_corpus, write_oracle_table};
pub use split::split;
pub use synthetic::{
    action_name, actions_for, filler_token, generate_synthetic, issue_name, recontact_for,
    reveal_token, OracleEntry, SyntheticConfig,
};
pub use tokenizer::{tokenize_dialog, tokenize_text, tokenize_turns, window, TokenizedDialog};
pub use vocab::{build_vocab, Vocab, AGENT_ID, BOT_ID, CUSTOMER_ID, PAD_ID, RESERVED_TOKENS, UNK_ID};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Who produced an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Customer,
    Agent,
    Bot,
}

impl Speaker {
    /// Reserved vocab id of this speaker's turn-marker token.
    pub fn marker_id(self) -> u32 {
        match self {
            Speaker::Customer => CUSTOMER_ID,
            Speaker::Agent => AGENT_ID,
            Speaker::Bot => BOT_ID,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Customer => "customer",
            Speaker::Agent => "agent",
            Speaker::Bot => "bot",
        }
    }
}

/// One conversation turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Utterance { speaker, text: text.into() }
    }
}

/// Dialog-level weak labels: the training targets, replicated over every
/// token of the dialog at training time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub issue: String,
    /// Actions performed during the contact; may be empty.
    pub actions: BTreeSet<String>,
    /// True when the customer contacted again within the measurement window.
    pub recontact: bool,
    /// Optional contact cost in arbitrary units, non-negative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

impl LabelSet {
    /// The preferred outcome is the absence of a recontact.
    pub fn no_recontact(&self) -> bool {
        !self.recontact
    }
}

/// One dialog with its weak labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogRecord {
    pub id: String,
    #[serde(rename = "turns")]
    pub utterances: Vec<Utterance>,
    pub labels: LabelSet,
}

impl DialogRecord {
    /// Check the record-level invariants; `line` is used in error messages.
    pub fn validate(&self, line: usize) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(Error::corpus(line, format!("dialog '{}' has no turns", self.id)));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.text.trim().is_empty() {
                return Err(Error::corpus(
                    line,
                    format!("dialog '{}' turn {} has empty text", self.id, i),
                ));
            }
        }
        if let Some(cost) = self.labels.cost {
            if !cost.is_finite() || cost < 0.0 {
                return Err(Error::corpus(
                    line,
                    format!("dialog '{}' has invalid cost {}", self.id, cost),
                ));
            }
        }
        Ok(())
    }
}
