//! Deterministic lowercase word tokenizer.
//!
//! Text is lowercased and split on whitespace; every run of alphanumeric
//! characters is one token and every other non-whitespace character is a
//! single-character token. Each turn is prefixed with its speaker-marker
//! token, so the token stream carries who is talking.

use serde::{Deserialize, Serialize};

use super::{DialogRecord, Speaker, Utterance, Vocab};

/// A dialog flattened into token ids, with turn boundaries and per-token
/// speaker roles preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedDialog {
    pub id: String,
    pub token_ids: Vec<u32>,
    /// Token index of each turn's first token; strictly increasing, first is 0.
    pub turn_starts: Vec<usize>,
    pub speaker_per_token: Vec<Speaker>,
}

impl TokenizedDialog {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn n_turns(&self) -> usize {
        self.turn_starts.len()
    }

    /// Index of the last token belonging to turn `j`.
    pub fn turn_last_token(&self, j: usize) -> usize {
        if j + 1 < self.turn_starts.len() {
            self.turn_starts[j + 1] - 1
        } else {
            self.token_ids.len() - 1
        }
    }
}

/// Split one utterance text into lowercase string tokens.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Tokenize a full dialog, truncating to the first `max_len` tokens.
///
/// Offline profiling always uses this first window so results are
/// deterministic; training may instead pick a random window per epoch via
/// [`window`].
pub fn tokenize_dialog(record: &DialogRecord, vocab: &Vocab, max_len: usize) -> TokenizedDialog {
    let full = tokenize_turns(&record.id, &record.utterances, vocab);
    window(&full, 0, max_len)
}

/// Tokenize turns without any length limit.
pub fn tokenize_turns(id: &str, utterances: &[Utterance], vocab: &Vocab) -> TokenizedDialog {
    let mut token_ids = Vec::new();
    let mut turn_starts = Vec::new();
    let mut speaker_per_token = Vec::new();
    for u in utterances {
        turn_starts.push(token_ids.len());
        token_ids.push(u.speaker.marker_id());
        speaker_per_token.push(u.speaker);
        for token in tokenize_text(&u.text) {
            token_ids.push(vocab.id(&token));
            speaker_per_token.push(u.speaker);
        }
    }
    TokenizedDialog {
        id: id.to_owned(),
        token_ids,
        turn_starts,
        speaker_per_token,
    }
}

/// Take the contiguous window `[offset, offset + max_len)` of a tokenized
/// dialog, rebasing turn starts. A window beginning mid-turn keeps the
/// partial turn, with position 0 recorded as its start.
pub fn window(dialog: &TokenizedDialog, offset: usize, max_len: usize) -> TokenizedDialog {
    assert!(max_len >= 1, "max_len must be >= 1");
    let end = (offset + max_len).min(dialog.token_ids.len());
    let offset = offset.min(dialog.token_ids.len());
    let mut turn_starts: Vec<usize> = dialog
        .turn_starts
        .iter()
        .filter(|&&s| s >= offset && s < end)
        .map(|&s| s - offset)
        .collect();
    if turn_starts.first() != Some(&0) && end > offset {
        turn_starts.insert(0, 0);
    }
    TokenizedDialog {
        id: dialog.id.clone(),
        token_ids: dialog.token_ids[offset..end].to_vec(),
        turn_starts,
        speaker_per_token: dialog.speaker_per_token[offset..end].to_vec(),
    }
}
