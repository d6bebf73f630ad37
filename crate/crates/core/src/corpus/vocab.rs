//! Word-level vocabulary with reserved ids.
//!
//! Reserved ids, fixed for every vocab:
//!   0  <pad>
//!   1  <unk>
//!   2  <customer>   turn marker
//!   3  <agent>      turn marker
//!   4  <bot>        turn marker

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenizer::tokenize_text;
use super::DialogRecord;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CUSTOMER_ID: u32 = 2;
pub const AGENT_ID: u32 = 3;
pub const BOT_ID: u32 = 4;
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<customer>", "<agent>", "<bot>"];

/// Token to dense-id map. Ids are contiguous from 0 with the reserved
/// tokens first, then corpus tokens ordered by frequency descending and
/// lexicographically on ties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab { tokens, index }
    }

    /// Rebuild the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a corpus token, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    /// FNV-1a over the ordered token list; identifies the tokenizer state
    /// a model was trained with.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Build a vocabulary from every token occurring at least `min_count` times.
///
/// Ordering is deterministic: frequency descending, then lexicographic.
pub fn build_vocab(corpus: &[DialogRecord], min_count: usize) -> Vocab {
    assert!(min_count >= 1, "min_count must be >= 1");
    let mut counts: HashMap<String, usize> = HashMap::new();
    for record in corpus {
        for utterance in &record.utterances {
            for token in tokenize_text(&utterance.text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept.into_iter().map(|(t, _)| t));
    Vocab::from_tokens(tokens)
}
