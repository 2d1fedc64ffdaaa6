use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::features::Method;
use crate::model::EvalResult;

/// Results with AUC strictly above this are differentiable outliers.
pub const DEFAULT_OUTLIER_CUTOFF: f64 = 0.55;

/// Split instances (see [`EvalResult::instance_id`]) whose AUC exceeds
/// `cutoff`.
pub fn outlier_set(results: &[EvalResult], cutoff: f64) -> BTreeSet<String> {
    results
        .iter()
        .filter(|r| r.auc > cutoff)
        .map(EvalResult::instance_id)
        .collect()
}

/// Outlier instances per method. Every method present in `results` gets an
/// entry, possibly empty.
pub fn outliers_by_method(
    results: &[EvalResult],
    cutoff: f64,
) -> BTreeMap<Method, BTreeSet<String>> {
    let mut out: BTreeMap<Method, BTreeSet<String>> = BTreeMap::new();
    for r in results {
        let set = out.entry(r.method).or_default();
        if r.auc > cutoff {
            set.insert(r.instance_id());
        }
    }
    out
}

/// Pairwise Jaccard overlap, rows and columns in key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix<K> {
    pub labels: Vec<K>,
    pub values: Vec<Vec<f64>>,
}

fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `|A ∩ B| / |A ∪ B|` for every pair of sets; 1 when both are empty.
pub fn overlap_matrix<K: Clone + Ord, T: Ord>(
    sets: &BTreeMap<K, BTreeSet<T>>,
) -> Result<OverlapMatrix<K>, StatsError> {
    if sets.len() < 2 {
        return Err(StatsError::TooFewSets(sets.len()));
    }
    let values = sets
        .values()
        .map(|a| sets.values().map(|b| jaccard(a, b)).collect())
        .collect();
    Ok(OverlapMatrix {
        labels: sets.keys().cloned().collect(),
        values,
    })
}
