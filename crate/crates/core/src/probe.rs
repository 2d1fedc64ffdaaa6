//! Embedding separability and decoding-dynamics probes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GenerationRecord, Label, LayerEmbedding, TokenTrace};

/// Decoding steps covered by entropy curves by default.
pub const DEFAULT_MAX_STEP: usize = 36;
/// Prompt and comparison length of the memorization score by default.
pub const DEFAULT_EXTRACTION_LENGTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("{0} cluster is empty")]
    EmptyCluster(&'static str),
    #[error("vector dimension {actual} differs from {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cluster centroids coincide (distance {0})")]
    DegenerateCentroids(f64),
    #[error("no {class} traces with at least {max_step} entropy steps")]
    NoTraces {
        class: &'static str,
        max_step: usize,
    },
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        source: alloc::boxed::Box<ProbeError>,
    },
    #[error("no label for example `{0}`")]
    Unlabeled(String),
    #[error("reference continuation is empty")]
    EmptyReference,
    #[error("greedy continuation is empty")]
    EmptyGreedy,
}

fn centroid(vectors: &[&[f64]]) -> Vec<f64> {
    let mut c = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (ci, x) in c.iter_mut().zip(v.iter()) {
            *ci += x;
        }
    }
    let n = vectors.len() as f64;
    c.iter_mut().for_each(|ci| *ci /= n);
    c
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Two-cluster Davies-Bouldin index `(s_m + s_n) / ‖c_m − c_n‖`, where `s`
/// is the mean distance of a cluster's points to its centroid. Lower means
/// better separated.
pub fn db_index<M, N>(members: &[M], nonmembers: &[N]) -> Result<f64, ProbeError>
where
    M: AsRef<[f64]>,
    N: AsRef<[f64]>,
{
    let m: Vec<&[f64]> = members.iter().map(AsRef::as_ref).collect();
    let n: Vec<&[f64]> = nonmembers.iter().map(AsRef::as_ref).collect();
    if m.is_empty() {
        return Err(ProbeError::EmptyCluster("member"));
    }
    if n.is_empty() {
        return Err(ProbeError::EmptyCluster("non-member"));
    }
    let dim = m[0].len();
    if let Some(v) = m.iter().chain(&n).find(|v| v.len() != dim) {
        return Err(ProbeError::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    let (cm, cn) = (centroid(&m), centroid(&n));
    let scatter = |vs: &[&[f64]], c: &[f64]| {
        vs.iter().map(|v| euclidean(v, c)).sum::<f64>() / vs.len() as f64
    };
    let separation = euclidean(&cm, &cn);
    if separation < 1e-12 {
        return Err(ProbeError::DegenerateCentroids(separation));
    }
    Ok((scatter(&m, &cm) + scatter(&n, &cn)) / separation)
}

/// Per-step mean entropies of both classes and their running difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurves {
    pub max_step: usize,
    pub mean_member: Vec<f64>,
    pub mean_nonmember: Vec<f64>,
    /// `Σ_{i ≤ s} (mean_nonmember[i] − mean_member[i])`.
    pub accumulated_diff: Vec<f64>,
    pub included_member: usize,
    pub included_nonmember: usize,
    /// Traces with fewer than `max_step` entropy entries.
    pub excluded_member: usize,
    pub excluded_nonmember: usize,
}

fn step_means(
    traces: &[TokenTrace],
    max_step: usize,
    class: &'static str,
) -> Result<(Vec<f64>, usize, usize), ProbeError> {
    let included: Vec<&TokenTrace> = traces
        .iter()
        .filter(|t| t.entropy.len() >= max_step)
        .collect();
    if included.is_empty() {
        return Err(ProbeError::NoTraces { class, max_step });
    }
    let mut sums = vec![0.0; max_step];
    for t in &included {
        for (s, e) in sums.iter_mut().zip(&t.entropy) {
            *s += e;
        }
    }
    let n = included.len() as f64;
    Ok((
        sums.into_iter().map(|s| s / n).collect(),
        included.len(),
        traces.len() - included.len(),
    ))
}

/// Entropy curves over the first `max_step` decoding steps. Traces shorter
/// than `max_step` are excluded and counted, not padded.
pub fn entropy_curves(
    members: &[TokenTrace],
    nonmembers: &[TokenTrace],
    max_step: usize,
) -> Result<EntropyCurves, ProbeError> {
    let (mean_member, included_member, excluded_member) = step_means(members, max_step, "member")?;
    let (mean_nonmember, included_nonmember, excluded_nonmember) =
        step_means(nonmembers, max_step, "non-member")?;
    let accumulated_diff = mean_nonmember
        .iter()
        .zip(&mean_member)
        .scan(0.0, |acc, (n, m)| {
            *acc += n - m;
            Some(*acc)
        })
        .collect();
    Ok(EntropyCurves {
        max_step,
        mean_member,
        mean_nonmember,
        accumulated_diff,
        included_member,
        included_nonmember,
        excluded_member,
        excluded_nonmember,
    })
}

/// DB index of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSeparability {
    pub layer_index: usize,
    pub db_index: f64,
}

/// DB index per layer, ascending layer order.
pub fn layer_separability_profile(
    embeddings: &[LayerEmbedding],
    labels: &BTreeMap<String, Label>,
) -> Result<Vec<LayerSeparability>, ProbeError> {
    type Clusters<'a> = (Vec<&'a [f64]>, Vec<&'a [f64]>);
    let mut by_layer: BTreeMap<usize, Clusters<'_>> = BTreeMap::new();
    for e in embeddings {
        let label = labels
            .get(&e.example_id)
            .ok_or_else(|| ProbeError::Unlabeled(e.example_id.clone()))?;
        let entry = by_layer.entry(e.layer_index).or_default();
        match label {
            Label::Member => entry.0.push(&e.vector),
            Label::Nonmember => entry.1.push(&e.vector),
        }
    }
    by_layer
        .into_iter()
        .map(|(layer, (m, n))| {
            db_index(&m, &n)
                .map(|db| LayerSeparability {
                    layer_index: layer,
                    db_index: db,
                })
                .map_err(|e| ProbeError::Layer {
                    layer,
                    source: alloc::boxed::Box::new(e),
                })
        })
        .collect()
}

/// Fraction of the first `k` greedy tokens that equal the true continuation.
/// Shorter sequences are compared over their common length.
pub fn memorization_score(generation: &GenerationRecord, k: usize) -> Result<f64, ProbeError> {
    if generation.reference_continuation.is_empty() {
        return Err(ProbeError::EmptyReference);
    }
    if generation.greedy_continuation.is_empty() {
        return Err(ProbeError::EmptyGreedy);
    }
    let compared = k
        .min(generation.reference_continuation.len())
        .min(generation.greedy_continuation.len());
    if compared == 0 {
        return Err(ProbeError::EmptyReference);
    }
    let hits = generation
        .greedy_continuation
        .iter()
        .zip(&generation.reference_continuation)
        .take(compared)
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / compared as f64)
}
