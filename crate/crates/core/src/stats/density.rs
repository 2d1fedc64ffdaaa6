//! Histogram densities of AUC values grouped along one experiment dimension.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::model::EvalResult;

/// Experiment dimension to group results by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    SplitMethod,
    Model,
    Domain,
    Method,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::SplitMethod,
        Dimension::Model,
        Dimension::Domain,
        Dimension::Method,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::SplitMethod => "split_method",
            Dimension::Model => "model",
            Dimension::Domain => "domain",
            Dimension::Method => "method",
        }
    }

    pub fn key(self, r: &EvalResult) -> String {
        match self {
            Dimension::SplitMethod => r.split_method().to_string(),
            Dimension::Model => r.model_tag.clone(),
            Dimension::Domain => r.domain.clone(),
            Dimension::Method => r.method.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySpec {
    pub lo: f64,
    pub hi: f64,
    pub bin_width: f64,
}

impl Default for DensitySpec {
    fn default() -> Self {
        Self {
            lo: 0.50,
            hi: 0.58,
            bin_width: 0.005,
        }
    }
}

impl DensitySpec {
    pub fn bins(&self) -> usize {
        libm::round((self.hi - self.lo) / self.bin_width) as usize
    }

    /// Left edge of bin `i`.
    pub fn edge(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.bin_width
    }

    fn validate(&self) -> Result<(), StatsError> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.lo < self.hi
            && self.bin_width > 0.0
            && self.bins() >= 1;
        if ok {
            Ok(())
        } else {
            Err(StatsError::InvalidRange {
                lo: self.lo,
                hi: self.hi,
                width: self.bin_width,
            })
        }
    }

    /// Bin of `x`, or `None` outside `[lo, hi)`.
    fn bin_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lo && x < self.hi) {
            return None;
        }
        // Nudge so values on a decimal bin edge land in the bin they start.
        let i = libm::floor((x - self.lo) / self.bin_width + 1e-9) as usize;
        Some(i.min(self.bins() - 1))
    }
}

/// Density histogram of one group. `densities` integrate (times the bin
/// width) to `in_range_fraction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGroup {
    pub group: String,
    pub count: usize,
    pub densities: Vec<f64>,
    pub in_range_fraction: f64,
    pub below_fraction: f64,
    pub above_fraction: f64,
}

/// Histogram density of raw values; an empty input gives all zeros.
pub fn density_of(
    group: impl Into<String>,
    values: &[f64],
    spec: &DensitySpec,
) -> Result<DensityGroup, StatsError> {
    spec.validate()?;
    let mut counts = vec![0usize; spec.bins()];
    let (mut below, mut above) = (0usize, 0usize);
    for &x in values {
        match spec.bin_of(x) {
            Some(i) => counts[i] += 1,
            None if x < spec.lo => below += 1,
            None => above += 1,
        }
    }
    let n = values.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let in_range = n - below - above;
    Ok(DensityGroup {
        group: group.into(),
        count: n,
        densities: counts.iter().map(|&c| frac(c) / spec.bin_width).collect(),
        in_range_fraction: frac(in_range),
        below_fraction: frac(below),
        above_fraction: frac(above),
    })
}

/// AUC densities per group along `group_by`, groups in sorted key order.
pub fn auc_density(
    results: &[EvalResult],
    spec: &DensitySpec,
    group_by: Dimension,
) -> Result<Vec<DensityGroup>, StatsError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results {
        groups.entry(group_by.key(r)).or_default().push(r.auc);
    }
    groups
        .into_iter()
        .map(|(g, aucs)| density_of(g, &aucs, spec))
        .collect()
}
