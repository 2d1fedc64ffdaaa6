//! Statistical evaluation of feature scores and of per-split results.

use thiserror::Error;

mod auc;
mod boxplot;
mod correlation;
mod density;
mod divergence;
mod ks;
mod ngram;
mod outliers;
mod threshold;

pub use auc::{average_ranks, roc_auc};
pub use boxplot::{boxplot_stats, quantile_linear, BoxplotStats};
pub use correlation::{pearson, spearman};
pub use density::{auc_density, density_of, DensityGroup, DensitySpec, Dimension};
pub use divergence::{js_divergence, unit_histogram, MEMORIZATION_BINS};
pub use ks::{hypothesis_pass_rate, ks_p_value, ks_statistic, ks_test, KsResult, KS_MIN_SAMPLES};
pub use ngram::{ngram_overlap, seven_gram_overlap};
pub use outliers::{
    outlier_set, outliers_by_method, overlap_matrix, OverlapMatrix, DEFAULT_OUTLIER_CUTOFF,
};
pub use threshold::{
    best_threshold, rates_at, select_threshold, stratified_split, ThresholdSelection,
    MIN_CLASS_SIZE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation is undefined for a constant input")]
    ConstantInput,
    #[error("histogram is not normalized (sum {0})")]
    NotNormalized(f64),
    #[error("invalid range [{lo}, {hi}) with bin width {width}")]
    InvalidRange { lo: f64, hi: f64, width: f64 },
    #[error("need at least two sets to compare, got {0}")]
    TooFewSets(usize),
}

fn reject_nan(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| !x.is_nan()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}
