//! Token-swap perturbations for the polarized-distance scorer.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::TokenId;

/// Number of position-pair swaps applied to a sequence of `len` tokens:
/// `⌈fraction · len⌉ / 2`, at least one when a swap is possible.
pub fn swap_count(len: usize, fraction: f64) -> usize {
    if len < 2 {
        return 0;
    }
    let touched = libm::ceil(fraction * len as f64) as usize;
    (touched / 2).max(1)
}

/// `variants` perturbed copies of `tokens`, each produced by repeatedly
/// swapping two distinct random positions. Variant `v` draws from its own
/// seeded stream, so variants do not depend on each other.
pub fn perturb_tokens(
    tokens: &[TokenId],
    fraction: f64,
    variants: usize,
    seed: u64,
) -> Vec<Vec<TokenId>> {
    let swaps = swap_count(tokens.len(), fraction);
    (0..variants)
        .map(|v| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64);
            let mut out = tokens.to_vec();
            for _ in 0..swaps {
                let i = rng.random_range(0..out.len());
                let mut j = rng.random_range(0..out.len() - 1);
                if j >= i {
                    j += 1;
                }
                out.swap(i, j);
            }
            out
        })
        .collect()
}
