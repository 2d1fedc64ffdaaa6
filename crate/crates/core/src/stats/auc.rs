use alloc::vec;
use alloc::vec::Vec;

use super::{reject_nan, StatsError};

/// One-based ranks with ties replaced by the average of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// ROC-AUC of member scores against non-member scores (larger means member).
///
/// Computed as the Mann-Whitney U statistic over `n_m · n_n`, where tied
/// member/non-member pairs count one half. This equals the trapezoidal area
/// under the ROC curve swept over every threshold.
pub fn roc_auc(members: &[f64], nonmembers: &[f64]) -> Result<f64, StatsError> {
    if members.is_empty() {
        return Err(StatsError::Empty("member scores"));
    }
    if nonmembers.is_empty() {
        return Err(StatsError::Empty("non-member scores"));
    }
    reject_nan(members)?;
    reject_nan(nonmembers)?;

    let pooled: Vec<f64> = members.iter().chain(nonmembers).copied().collect();
    let ranks = average_ranks(&pooled);
    let nm = members.len() as f64;
    let nn = nonmembers.len() as f64;
    let rank_sum: f64 = ranks[..members.len()].iter().sum();
    let u = rank_sum - nm * (nm + 1.0) / 2.0;
    Ok(u / (nm * nn))
}
