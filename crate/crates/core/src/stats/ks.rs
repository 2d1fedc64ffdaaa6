//! Two-sample Kolmogorov-Smirnov test.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{reject_nan, StatsError};

/// Smallest sample size `ks_test` accepts per side.
pub const KS_MIN_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

/// Largest gap between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // Step past every copy of the smaller value on both sides at once.
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov distribution survival function `Q(z) = P(K > z)`.
fn kolmogorov_q(z: f64) -> f64 {
    if z < 0.042 {
        return 1.0;
    }
    if z < 1.18 {
        // Jacobi-theta form, converges quickly for small z.
        let y = libm::exp(-1.233_700_550_136_169_8 / (z * z));
        let cdf = 2.256_758_334_191_025
            * libm::sqrt(-libm::log(y))
            * (y + libm::pow(y, 9.0) + libm::pow(y, 25.0) + libm::pow(y, 49.0));
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = libm::exp(-2.0 * z * z);
        (2.0 * (x - libm::pow(x, 4.0) + libm::pow(x, 9.0))).clamp(0.0, 1.0)
    }
}

/// Asymptotic p-value of statistic `d` for sample sizes `na`, `nb`, with the
/// Stephens small-sample correction of the effective size.
pub fn ks_p_value(d: f64, na: usize, nb: usize) -> f64 {
    let en = libm::sqrt((na * nb) as f64 / (na + nb) as f64);
    kolmogorov_q((en + 0.12 + 0.11 / en) * d)
}

/// Tests whether `a` and `b` come from the same distribution; rejects when
/// the p-value is below `alpha`.
pub fn ks_test(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult, StatsError> {
    for xs in [a, b] {
        if xs.len() < KS_MIN_SAMPLES {
            return Err(StatsError::TooFew {
                need: KS_MIN_SAMPLES,
                got: xs.len(),
            });
        }
        reject_nan(xs)?;
    }
    let statistic = ks_statistic(a, b);
    let p_value = ks_p_value(statistic, a.len(), b.len());
    Ok(KsResult {
        statistic,
        p_value,
        reject: p_value < alpha,
    })
}

/// Fraction of member/non-member score pairs the KS test tells apart.
pub fn hypothesis_pass_rate<A, B>(pairs: &[(A, B)], alpha: f64) -> Result<f64, StatsError>
where
    A: AsRef<[f64]>,
    B: AsRef<[f64]>,
{
    if pairs.is_empty() {
        return Err(StatsError::Empty("split list"));
    }
    let mut rejected = 0usize;
    for (a, b) in pairs {
        if ks_test(a.as_ref(), b.as_ref(), alpha)?.reject {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn statistic_cases() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(ks_statistic(&a, &a), 0.0);
        assert_eq!(ks_statistic(&a, &[10.0, 11.0, 12.0, 13.0, 14.0]), 1.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.5, 2.5]), 0.5);
        // Ties across samples must be stepped together.
        assert_eq!(ks_statistic(&[1.0, 2.0], &[1.0, 2.0, 2.0, 1.0]), 0.0);
    }

    #[test]
    fn p_values() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let same = ks_test(&a, &a, 0.05).unwrap();
        assert_eq!(same.p_value, 1.0);
        assert!(!same.reject);
        let far = ks_test(&a, &[10.0, 11.0, 12.0, 13.0, 14.0], 0.05).unwrap();
        assert!(far.p_value < 0.01, "{}", far.p_value);
        assert!(far.reject);
        // Q is continuous across the branch switch.
        assert!((kolmogorov_q(1.18 - 1e-9) - kolmogorov_q(1.18)).abs() < 1e-6);
        // Q(1.3581) ~ 0.05.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
    }

    #[test]
    fn pass_rate_counts_rejections() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let far = vec![10.0, 11.0, 12.0, 13.0, 14.0, 15.0];
        let same = (a.clone(), a.clone());
        let diff = (a.clone(), far);
        assert_eq!(
            hypothesis_pass_rate(&[same.clone(), same.clone()], 0.05),
            Ok(0.0)
        );
        assert_eq!(
            hypothesis_pass_rate(core::slice::from_ref(&diff), 0.05),
            Ok(1.0)
        );
        let mut mixed = vec![diff; 3];
        mixed.extend(vec![same; 7]);
        assert!((hypothesis_pass_rate(&mixed, 0.05).unwrap() - 0.3).abs() < 1e-15);
        let none: [(Vec<f64>, Vec<f64>); 0] = [];
        assert!(hypothesis_pass_rate(&none, 0.05).is_err());
    }

    #[test]
    fn small_samples_rejected() {
        assert_eq!(
            ks_test(&[1.0, 2.0], &[1.0; 5], 0.05),
            Err(StatsError::TooFew { need: 5, got: 2 })
        );
    }
}
