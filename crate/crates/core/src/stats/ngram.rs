use alloc::collections::BTreeMap;

use crate::model::{Example, TokenId};

/// Occurrences of n-grams shared by both classes, normalized by total length.
///
/// A gram counts if it appears at least once in some member and once in some
/// non-member; every occurrence of such a gram, in either class, is summed
/// and divided by the summed token length of all texts.
pub fn ngram_overlap<'a, M, N>(members: M, nonmembers: N, n: usize) -> f64
where
    M: IntoIterator<Item = &'a [TokenId]>,
    N: IntoIterator<Item = &'a [TokenId]>,
{
    assert!(n > 0, "n-gram order must be positive");
    let mut counts: BTreeMap<&'a [TokenId], (usize, usize)> = BTreeMap::new();
    let mut total_len = 0usize;
    for tokens in members {
        total_len += tokens.len();
        for gram in tokens.windows(n) {
            counts.entry(gram).or_default().0 += 1;
        }
    }
    for tokens in nonmembers {
        total_len += tokens.len();
        for gram in tokens.windows(n) {
            counts.entry(gram).or_default().1 += 1;
        }
    }
    if total_len == 0 {
        return 0.0;
    }
    let shared: usize = counts
        .values()
        .filter(|(m, n)| *m > 0 && *n > 0)
        .map(|(m, n)| m + n)
        .sum();
    shared as f64 / total_len as f64
}

/// [`ngram_overlap`] with 7-grams over the examples' tokens.
pub fn seven_gram_overlap(members: &[Example], nonmembers: &[Example]) -> f64 {
    ngram_overlap(
        members.iter().map(|e| e.tokens.as_slice()),
        nonmembers.iter().map(|e| e.tokens.as_slice()),
        7,
    )
}
