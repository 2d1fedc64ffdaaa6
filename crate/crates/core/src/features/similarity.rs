//! Continuation similarity used by the sampling-based scorer.

use alloc::collections::BTreeMap;

use crate::model::TokenId;

/// Similarity of a generated continuation to a reference, in `[0, 1]`.
pub trait Similarity {
    fn similarity(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64;
}

impl<F> Similarity for F
where
    F: Fn(&[TokenId], &[TokenId]) -> f64,
{
    fn similarity(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64 {
        self(candidate, reference)
    }
}

/// Unigram F1 over token ids with multiset (clipped) overlap.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnigramF1;

impl Similarity for UnigramF1 {
    fn similarity(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64 {
        unigram_f1(candidate, reference)
    }
}

pub fn unigram_f1(candidate: &[TokenId], reference: &[TokenId]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
    for &t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in candidate {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / candidate.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f1_cases() {
        assert_eq!(unigram_f1(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(unigram_f1(&[1, 2, 3], &[4, 5]), 0.0);
        assert!((unigram_f1(&[1, 2, 3], &[2, 3, 4]) - 2.0 / 3.0).abs() < 1e-15);
        // Repeated tokens only match as often as they occur in the reference.
        assert_eq!(unigram_f1(&[7, 7, 7, 7], &[7]), 0.4);
    }
}
