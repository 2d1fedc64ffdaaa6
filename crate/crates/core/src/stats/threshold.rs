//! Geometric-mean threshold selection with a held-out validation split.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reject_nan, StatsError};

/// Smallest class size `select_threshold` accepts.
pub const MIN_CLASS_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    /// Predict member iff `score >= threshold`; may be `±inf`.
    pub threshold: f64,
    /// `sqrt(TPR · (1 - FPR))` on the training part.
    pub train_objective: f64,
    pub val_tpr: f64,
    pub val_fpr: f64,
}

/// True- and false-positive rates of the rule `score >= threshold`.
pub fn rates_at(members: &[f64], nonmembers: &[f64], threshold: f64) -> (f64, f64) {
    let hits = |xs: &[f64]| xs.iter().filter(|&&x| x >= threshold).count() as f64;
    (
        hits(members) / members.len() as f64,
        hits(nonmembers) / nonmembers.len() as f64,
    )
}

fn objective(tpr: f64, fpr: f64) -> f64 {
    libm::sqrt(tpr * (1.0 - fpr))
}

/// Threshold maximizing `sqrt(TPR · (1 - FPR))` over the midpoints between
/// consecutive distinct pooled scores plus `-inf` and `+inf`. Ties go to the
/// smallest threshold. Returns `(threshold, objective)`.
pub fn best_threshold(members: &[f64], nonmembers: &[f64]) -> (f64, f64) {
    let mut pooled: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();

    let mut sorted_m = members.to_vec();
    sorted_m.sort_by(f64::total_cmp);
    let mut sorted_n = nonmembers.to_vec();
    sorted_n.sort_by(f64::total_cmp);
    let at_least =
        |sorted: &[f64], t: f64| (sorted.len() - sorted.partition_point(|&x| x < t)) as f64;

    let candidates = core::iter::once(f64::NEG_INFINITY)
        .chain(pooled.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0))
        .chain(core::iter::once(f64::INFINITY));

    let mut best = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in candidates {
        let tpr = at_least(&sorted_m, t) / members.len() as f64;
        let fpr = at_least(&sorted_n, t) / nonmembers.len() as f64;
        let value = objective(tpr, fpr);
        if value > best.1 {
            best = (t, value);
        }
    }
    best
}

/// Shuffles `0..n` with `rng` and cuts it into train and validation index
/// sets, the train part holding `round(n · train_fraction)` clamped so both
/// parts are non-empty.
fn split_indices(n: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = (libm::round(n as f64 * train_fraction) as usize).clamp(1, n - 1);
    let val = idx.split_off(n_train);
    (idx, val)
}

/// Seeded stratified train/validation split of both classes.
#[allow(clippy::type_complexity)]
pub fn stratified_split(
    members: &[f64],
    nonmembers: &[f64],
    train_fraction: f64,
    seed: u64,
) -> ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>)) {
    let pick = |xs: &[f64], idx: &[usize]| idx.iter().map(|&i| xs[i]).collect::<Vec<_>>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let (m_train, m_val) = split_indices(members.len(), train_fraction, &mut rng);
    rng.set_stream(1);
    let (n_train, n_val) = split_indices(nonmembers.len(), train_fraction, &mut rng);
    (
        (pick(members, &m_train), pick(nonmembers, &n_train)),
        (pick(members, &m_val), pick(nonmembers, &n_val)),
    )
}

/// Picks a threshold on a seeded stratified training split and reports its
/// rates on the held-out validation split.
pub fn select_threshold(
    members: &[f64],
    nonmembers: &[f64],
    train_fraction: f64,
    seed: u64,
) -> Result<ThresholdSelection, StatsError> {
    for xs in [members, nonmembers] {
        if xs.len() < MIN_CLASS_SIZE {
            return Err(StatsError::TooFew {
                need: MIN_CLASS_SIZE,
                got: xs.len(),
            });
        }
        reject_nan(xs)?;
    }
    let ((train_m, train_n), (val_m, val_n)) =
        stratified_split(members, nonmembers, train_fraction, seed);
    let (threshold, train_objective) = best_threshold(&train_m, &train_n);
    let (val_tpr, val_fpr) = rates_at(&val_m, &val_n, threshold);
    Ok(ThresholdSelection {
        threshold,
        train_objective,
        val_tpr,
        val_fpr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_classes() {
        let sel = select_threshold(&[1.0; 10], &[0.0; 10], 0.8, 47103).unwrap();
        assert!(sel.threshold > 0.0 && sel.threshold < 1.0);
        assert_eq!(sel.train_objective, 1.0);
        assert_eq!((sel.val_tpr, sel.val_fpr), (1.0, 0.0));
    }

    #[test]
    fn identical_scores_pick_neg_infinity() {
        let sel = select_threshold(&[0.3; 8], &[0.3; 8], 0.8, 1).unwrap();
        assert_eq!(sel.threshold, f64::NEG_INFINITY);
        assert_eq!(sel.train_objective, 0.0);
        assert_eq!((sel.val_tpr, sel.val_fpr), (1.0, 1.0));
    }

    #[test]
    fn small_classes_rejected() {
        assert_eq!(
            select_threshold(&[1.0; 4], &[0.0; 10], 0.8, 0),
            Err(StatsError::TooFew { need: 5, got: 4 })
        );
    }

    #[test]
    fn four_to_one_split() {
        let m: Vec<f64> = (0..10).map(f64::from).collect();
        let n: Vec<f64> = (0..25).map(f64::from).collect();
        let ((tm, tn), (vm, vn)) = stratified_split(&m, &n, 0.8, 3);
        assert_eq!((tm.len(), vm.len()), (8, 2));
        assert_eq!((tn.len(), vn.len()), (20, 5));
        let mut all = tm.clone();
        all.extend(&vm);
        all.sort_by(f64::total_cmp);
        assert_eq!(all, m);
    }

    #[test]
    fn sweep_prefers_smallest_of_ties() {
        let (t, v) = best_threshold(&[2.0, 3.0], &[1.0, 1.0]);
        assert_eq!((t, v), (1.5, 1.0));
        // 0.5 and 2.5 both reach sqrt(0.5).
        let (t, v) = best_threshold(&[1.0, 3.0], &[2.0, 0.0]);
        assert_eq!(t, 0.5);
        assert!((v - libm::sqrt(0.5)).abs() < 1e-15);
        assert_eq!(rates_at(&[1.0, 3.0], &[2.0, 0.0], 2.5), (0.5, 0.0));
    }
}
