use alloc::vec;
use alloc::vec::Vec;

use super::StatsError;

/// Bins of memorization-score histograms over `[0, 1]`.
pub const MEMORIZATION_BINS: usize = 10;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Normalized histogram of values in `[0, 1]` with `bins` equal bins; `1.0`
/// falls in the last bin.
pub fn unit_histogram(values: &[f64], bins: usize) -> Result<Vec<f64>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty("histogram input"));
    }
    if bins == 0 {
        return Err(StatsError::Empty("bin list"));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(StatsError::NonFinite);
        }
        let i = (libm::floor(v * bins as f64) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / values.len() as f64)
        .collect())
}

fn check_distribution(h: &[f64]) -> Result<(), StatsError> {
    if h.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(StatsError::NonFinite);
    }
    let sum: f64 = h.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(StatsError::NotNormalized(sum));
    }
    Ok(())
}

/// Jensen-Shannon divergence in nats, in `[0, ln 2]`.
pub fn js_divergence(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    check_distribution(a)?;
    check_distribution(b)?;
    let kl_to_mid = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .filter(|(pi, _)| **pi > 0.0)
            .map(|(pi, qi)| pi * libm::log(pi / ((pi + qi) / 2.0)))
            .sum()
    };
    let js = 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a);
    Ok(js.clamp(0.0, core::f64::consts::LN_2))
}
