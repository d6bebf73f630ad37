//! Deterministic train/test splitting.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::DialogRecord;

/// Split a corpus into disjoint (train, test) sets; the test set holds
/// `round(test_fraction * N)` dialogs. Deterministic per seed.
pub fn split(
    corpus: &[DialogRecord],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<DialogRecord>, Vec<DialogRecord>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if corpus.len() < 2 {
        return Err(Error::invalid("corpus must hold at least 2 dialogs to split"));
    }
    let n_test = ((corpus.len() as f64) * test_fraction).round() as usize;
    let n_test = n_test.clamp(1, corpus.len() - 1);

    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    let test: Vec<DialogRecord> = indices[..n_test].iter().map(|&i| corpus[i].clone()).collect();
    let train: Vec<DialogRecord> = indices[n_test..].iter().map(|&i| corpus[i].clone()).collect();
    Ok((train, test))
}
