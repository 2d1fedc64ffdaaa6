//! The eleven membership feature scorers.
//!
//! Every scorer returns a value oriented so that larger means more
//! member-like; the sign each method needs is folded in here so AUCs and
//! thresholds are comparable across methods.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{mean, GenerationRecord, TokenFrequencyTable, TokenId, TokenTrace};

mod batch;
pub mod levenshtein;
pub mod perturb;
pub mod similarity;

pub use batch::{
    required_inputs, score_split, InputKind, MissingInput, ScoringInputs, SplitScores,
};
pub use levenshtein::{levenshtein, normalized_levenshtein};
pub use perturb::perturb_tokens;
pub use similarity::{unigram_f1, Similarity, UnigramF1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Loss,
    Refer,
    Gradient,
    Zlib,
    Mink,
    Minkpp,
    Dcpdd,
    Pac,
    Recall,
    Samia,
    Cdd,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Loss,
        Method::Refer,
        Method::Gradient,
        Method::Zlib,
        Method::Mink,
        Method::Minkpp,
        Method::Dcpdd,
        Method::Pac,
        Method::Recall,
        Method::Samia,
        Method::Cdd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Loss => "loss",
            Method::Refer => "refer",
            Method::Gradient => "gradient",
            Method::Zlib => "zlib",
            Method::Mink => "mink",
            Method::Minkpp => "minkpp",
            Method::Dcpdd => "dcpdd",
            Method::Pac => "pac",
            Method::Recall => "recall",
            Method::Samia => "samia",
            Method::Cdd => "cdd",
        }
    }

    /// How the raw quantity was turned into a larger-is-member score.
    pub fn orientation_note(self) -> &'static str {
        match self {
            Method::Loss => "negated loss",
            Method::Refer => "negated loss gap to reference model",
            Method::Gradient => "negated gradient norm",
            Method::Zlib => "negated loss over zlib bits",
            Method::Mink => "mean of lowest-k% log-probs",
            Method::Minkpp => "mean of lowest-k% standardized log-probs",
            Method::Dcpdd => {
                "calibrated first-occurrence mean, as computed (orientation unverified)"
            }
            Method::Pac => "polarized distance of original minus mean of perturbed",
            Method::Recall => "conditioned over unconditioned mean log-likelihood",
            Method::Samia => "mean similarity of samples to reference continuation",
            Method::Cdd => "mean one-minus-normalized edit distance to greedy continuation",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| alloc::format!("unknown method `{s}`"))
    }
}

/// Hyperparameters shared by the scorers and by the adapter requests that
/// produce their inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub k_percent: f64,
    pub pac_swap_fraction: f64,
    pub pac_num_perturbations: usize,
    pub recall_num_shots: usize,
    pub samia_n: usize,
    pub samia_temperature: f64,
    pub cdd_n: usize,
    pub dcpdd_ceiling: f64,
    pub sigma_floor: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            k_percent: 20.0,
            pac_swap_fraction: 0.30,
            pac_num_perturbations: 5,
            recall_num_shots: 12,
            samia_n: 10,
            samia_temperature: 0.8,
            cdd_n: 10,
            dcpdd_ceiling: 1.0,
            sigma_floor: 1e-6,
        }
    }
}

impl MethodConfig {
    pub fn with_k(mut self, k_percent: f64) -> Self {
        self.k_percent = k_percent;
        self
    }

    /// Checks value ranges; returns the offending field names.
    pub fn validate(&self) -> Result<(), Vec<&'static str>> {
        let mut bad = Vec::new();
        if !(self.k_percent > 0.0 && self.k_percent <= 100.0) {
            bad.push("k_percent");
        }
        if !(self.pac_swap_fraction > 0.0 && self.pac_swap_fraction <= 1.0) {
            bad.push("pac_swap_fraction");
        }
        if self.pac_num_perturbations == 0 {
            bad.push("pac_num_perturbations");
        }
        if self.samia_n == 0 {
            bad.push("samia_n");
        }
        if self.samia_temperature.is_nan() || self.samia_temperature <= 0.0 {
            bad.push("samia_temperature");
        }
        if self.cdd_n == 0 {
            bad.push("cdd_n");
        }
        if self.dcpdd_ceiling.is_nan() || self.dcpdd_ceiling <= 0.0 {
            bad.push("dcpdd_ceiling");
        }
        if self.sigma_floor.is_nan() || self.sigma_floor <= 0.0 {
            bad.push("sigma_floor");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad)
        }
    }
}

/// One example's score under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub example_id: String,
    pub method: Method,
    pub value: f64,
    pub orientation_note: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("trace has no scored tokens")]
    EmptyTrace,
    #[error("{field} has {actual} entries, expected {expected}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("reference-model loss is missing")]
    MissingReference,
    #[error("gradient norm is missing")]
    MissingGradient,
    #[error("text is empty")]
    EmptyText,
    #[error("expected {expected} perturbed traces, got {actual}")]
    PerturbationCount { expected: usize, actual: usize },
    #[error("unconditioned average log-likelihood {0} is too close to zero")]
    DegenerateLikelihood(f64),
    #[error("reference continuation is empty")]
    EmptyReference,
    #[error("greedy continuation is empty")]
    EmptyGreedy,
    #[error("generation record has no samples or n_samples disagrees with the sample list")]
    BadSampleCount,
    #[error("similarity {0} is outside [0, 1]")]
    SimilarityOutOfRange(f64),
    #[error("score is not finite: {0}")]
    NonFinite(f64),
    #[error("missing inputs: {}", list_missing(.0))]
    MissingInputs(Vec<MissingInput>),
    #[error("example `{example_id}`: {source}")]
    Example {
        example_id: String,
        source: alloc::boxed::Box<ScoreError>,
    },
}

fn list_missing(missing: &[MissingInput]) -> String {
    let parts: Vec<String> = missing.iter().map(ToString::to_string).collect();
    parts.join(", ")
}

fn finish(example_id: &str, method: Method, value: f64) -> Result<FeatureScore, ScoreError> {
    if !value.is_finite() {
        return Err(ScoreError::NonFinite(value));
    }
    Ok(FeatureScore {
        example_id: example_id.to_string(),
        method,
        value,
        orientation_note: method.orientation_note().to_string(),
    })
}

/// `⌈k·n/100⌉` clamped to `[1, n]`.
pub fn selection_count(k_percent: f64, n: usize) -> usize {
    let raw = libm::ceil(k_percent * n as f64 / 100.0);
    (raw as usize).clamp(1, n.max(1))
}

/// Positions of the `count` smallest values, ties broken by earlier position.
pub fn bottom_positions(values: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    idx.truncate(count);
    idx
}

/// Positions of the `count` largest values, ties broken by earlier position.
pub fn top_positions(values: &[f64], count: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx.truncate(count);
    idx
}

fn mean_at(values: &[f64], positions: &[usize]) -> f64 {
    positions.iter().map(|&i| values[i]).sum::<f64>() / positions.len() as f64
}

fn require_len(field: &'static str, actual: usize, expected: usize) -> Result<(), ScoreError> {
    if actual != expected {
        return Err(ScoreError::LengthMismatch {
            field,
            expected,
            actual,
        });
    }
    Ok(())
}

pub fn score_loss(trace: &TokenTrace) -> Result<FeatureScore, ScoreError> {
    finish(&trace.example_id, Method::Loss, -trace.loss)
}

pub fn score_refer(trace: &TokenTrace) -> Result<FeatureScore, ScoreError> {
    let reference = trace.ref_loss.ok_or(ScoreError::MissingReference)?;
    finish(&trace.example_id, Method::Refer, -(trace.loss - reference))
}

pub fn score_gradient(trace: &TokenTrace) -> Result<FeatureScore, ScoreError> {
    let norm = trace.gradient_norm.ok_or(ScoreError::MissingGradient)?;
    finish(&trace.example_id, Method::Gradient, -norm)
}

/// Bits of the zlib (DEFLATE, default level) stream of the UTF-8 text.
pub fn zlib_bits(text: &str) -> usize {
    miniz_oxide::deflate::compress_to_vec_zlib(text.as_bytes(), 6).len() * 8
}

pub fn score_zlib(trace: &TokenTrace, text: &str) -> Result<FeatureScore, ScoreError> {
    if text.is_empty() {
        return Err(ScoreError::EmptyText);
    }
    let bits = zlib_bits(text) as f64;
    finish(&trace.example_id, Method::Zlib, -trace.loss / bits)
}

/// Mean of the lowest `k%` target log-probabilities.
pub fn score_mink(trace: &TokenTrace, cfg: &MethodConfig) -> Result<FeatureScore, ScoreError> {
    let lp = &trace.logprob_target;
    if lp.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    let picked = bottom_positions(lp, selection_count(cfg.k_percent, lp.len()));
    finish(&trace.example_id, Method::Mink, mean_at(lp, &picked))
}

/// Per-step standardized log-probabilities `(lp - mu) / max(sigma, floor)`.
pub fn standardized_logprobs(trace: &TokenTrace, sigma_floor: f64) -> Result<Vec<f64>, ScoreError> {
    let n = trace.logprob_target.len();
    require_len("mu_logprob", trace.mu_logprob.len(), n)?;
    require_len("sigma_logprob", trace.sigma_logprob.len(), n)?;
    Ok(trace
        .logprob_target
        .iter()
        .zip(&trace.mu_logprob)
        .zip(&trace.sigma_logprob)
        .map(|((lp, mu), sigma)| (lp - mu) / sigma.max(sigma_floor))
        .collect())
}

/// Min-k% over standardized log-probabilities.
pub fn score_minkpp(trace: &TokenTrace, cfg: &MethodConfig) -> Result<FeatureScore, ScoreError> {
    if trace.logprob_target.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    let z = standardized_logprobs(trace, cfg.sigma_floor)?;
    let picked = bottom_positions(&z, selection_count(cfg.k_percent, z.len()));
    finish(&trace.example_id, Method::Minkpp, mean_at(&z, &picked))
}

/// Trace positions whose target token occurs for the first time among the
/// targets.
pub fn first_occurrence_positions(targets: &[TokenId]) -> Vec<usize> {
    let mut seen = alloc::collections::BTreeSet::new();
    targets
        .iter()
        .enumerate()
        .filter(|(_, t)| seen.insert(**t))
        .map(|(i, _)| i)
        .collect()
}

/// Probability of each first-occurring target token, calibrated by its
/// corpus surprisal `ln(1/f)` and clipped at the ceiling, then averaged.
pub fn score_dcpdd(
    trace: &TokenTrace,
    tokens: &[TokenId],
    freq: &TokenFrequencyTable,
    cfg: &MethodConfig,
) -> Result<FeatureScore, ScoreError> {
    let lp = &trace.logprob_target;
    if lp.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    require_len("tokens", tokens.len(), lp.len() + 1)?;
    let targets = &tokens[1..];
    let positions = first_occurrence_positions(targets);
    let total: f64 = positions
        .iter()
        .map(|&i| {
            let alpha = libm::exp(lp[i]) * -libm::log(freq.frequency(targets[i]));
            alpha.min(cfg.dcpdd_ceiling)
        })
        .sum();
    finish(
        &trace.example_id,
        Method::Dcpdd,
        total / positions.len() as f64,
    )
}

/// Mean of the top `k%` minus mean of the bottom `k%` log-probabilities.
pub fn polarized_distance(logprobs: &[f64], k_percent: f64) -> Result<f64, ScoreError> {
    if logprobs.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    let count = selection_count(k_percent, logprobs.len());
    let top = mean_at(logprobs, &top_positions(logprobs, count));
    let bottom = mean_at(logprobs, &bottom_positions(logprobs, count));
    Ok(top - bottom)
}

pub fn score_pac(
    trace: &TokenTrace,
    perturbed: &[TokenTrace],
    cfg: &MethodConfig,
) -> Result<FeatureScore, ScoreError> {
    if perturbed.len() != cfg.pac_num_perturbations {
        return Err(ScoreError::PerturbationCount {
            expected: cfg.pac_num_perturbations,
            actual: perturbed.len(),
        });
    }
    let original = polarized_distance(&trace.logprob_target, cfg.k_percent)?;
    let shifted: Vec<f64> = perturbed
        .iter()
        .map(|p| polarized_distance(&p.logprob_target, cfg.k_percent))
        .collect::<Result<_, _>>()?;
    finish(&trace.example_id, Method::Pac, original - mean(&shifted))
}

pub fn score_recall(
    conditioned: &TokenTrace,
    plain: &TokenTrace,
) -> Result<FeatureScore, ScoreError> {
    if plain.logprob_target.is_empty() {
        return Err(ScoreError::EmptyTrace);
    }
    require_len(
        "conditioned logprob_target",
        conditioned.logprob_target.len(),
        plain.logprob_target.len(),
    )?;
    let ll_plain = plain.mean_logprob();
    if ll_plain.abs() < 1e-12 {
        return Err(ScoreError::DegenerateLikelihood(ll_plain));
    }
    finish(
        &plain.example_id,
        Method::Recall,
        conditioned.mean_logprob() / ll_plain,
    )
}

fn check_samples(generation: &GenerationRecord) -> Result<(), ScoreError> {
    if generation.sampled_continuations.is_empty()
        || generation.n_samples != generation.sampled_continuations.len()
    {
        return Err(ScoreError::BadSampleCount);
    }
    Ok(())
}

pub fn score_samia(
    generation: &GenerationRecord,
    similarity: &dyn Similarity,
) -> Result<FeatureScore, ScoreError> {
    if generation.reference_continuation.is_empty() {
        return Err(ScoreError::EmptyReference);
    }
    check_samples(generation)?;
    let mut total = 0.0;
    for sample in &generation.sampled_continuations {
        let s = similarity.similarity(sample, &generation.reference_continuation);
        if !(0.0..=1.0).contains(&s) {
            return Err(ScoreError::SimilarityOutOfRange(s));
        }
        total += s;
    }
    finish(
        &generation.example_id,
        Method::Samia,
        total / generation.sampled_continuations.len() as f64,
    )
}

pub fn score_cdd(generation: &GenerationRecord) -> Result<FeatureScore, ScoreError> {
    if generation.greedy_continuation.is_empty() {
        return Err(ScoreError::EmptyGreedy);
    }
    check_samples(generation)?;
    let total: f64 = generation
        .sampled_continuations
        .iter()
        .map(|s| 1.0 - normalized_levenshtein(s, &generation.greedy_continuation))
        .sum();
    finish(
        &generation.example_id,
        Method::Cdd,
        total / generation.sampled_continuations.len() as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeMap;
    use alloc::vec;

    fn trace(lp: &[f64]) -> TokenTrace {
        let n = lp.len();
        TokenTrace {
            example_id: "e".into(),
            logprob_target: lp.to_vec(),
            mu_logprob: vec![-1.0; n],
            sigma_logprob: vec![1.0; n],
            entropy: vec![1.0; n],
            loss: -mean(lp),
            ref_loss: None,
            gradient_norm: None,
        }
    }

    fn generation(
        samples: Vec<Vec<TokenId>>,
        reference: Vec<TokenId>,
        greedy: Vec<TokenId>,
    ) -> GenerationRecord {
        GenerationRecord {
            example_id: "g".into(),
            prefix_tokens: vec![1, 2],
            reference_continuation: reference,
            n_samples: samples.len(),
            sampled_continuations: samples,
            greedy_continuation: greedy,
            temperature: 0.8,
        }
    }

    #[test]
    fn loss_scores() {
        assert_eq!(score_loss(&trace(&[-1.0, -1.0, -1.0])).unwrap().value, -1.0);
        assert_eq!(score_loss(&trace(&[0.0, 0.0])).unwrap().value, 0.0);
    }

    #[test]
    fn refer_scores() {
        let mut t = trace(&[-2.0]);
        assert_eq!(score_refer(&t), Err(ScoreError::MissingReference));
        t.ref_loss = Some(1.5);
        assert_eq!(score_refer(&t).unwrap().value, -0.5);
        t.ref_loss = Some(2.0);
        assert_eq!(score_refer(&t).unwrap().value, 0.0);
    }

    #[test]
    fn gradient_scores() {
        let mut t = trace(&[-2.0]);
        assert_eq!(score_gradient(&t), Err(ScoreError::MissingGradient));
        t.gradient_norm = Some(0.0);
        assert_eq!(score_gradient(&t).unwrap().value, 0.0);
        t.gradient_norm = Some(3.2);
        assert_eq!(score_gradient(&t).unwrap().value, -3.2);
    }

    #[test]
    fn zlib_prefers_repetitive_text() {
        let repetitive = "a".repeat(400);
        // Fixed pseudo-random alphanumerics (LCG), 400 characters.
        let alphabet = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
        let mut state = 12345u64;
        let noisy: String = (0..400)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                alphabet[(state >> 33) as usize % alphabet.len()] as char
            })
            .collect();
        assert!(zlib_bits(&repetitive) < zlib_bits(&noisy));
        let t = trace(&[-2.0, -2.0]);
        let rep = score_zlib(&t, &repetitive).unwrap().value;
        let noi = score_zlib(&t, &noisy).unwrap().value;
        assert!(rep.abs() > noi.abs());
        assert_eq!(score_zlib(&t, &noisy).unwrap().value, noi);
        assert_eq!(score_zlib(&trace(&[0.0]), "abc").unwrap().value, 0.0);
        assert_eq!(score_zlib(&t, ""), Err(ScoreError::EmptyText));
    }

    #[test]
    fn mink_cases() {
        let cfg = MethodConfig::default().with_k(40.0);
        let t = trace(&[-1.0, -2.0, -3.0, -4.0, -5.0]);
        assert_eq!(score_mink(&t, &cfg).unwrap().value, -4.5);
        let full = MethodConfig::default().with_k(100.0);
        assert_eq!(score_mink(&t, &full).unwrap().value, -3.0);
    }

    #[test]
    fn mink_ties_pick_earliest() {
        let lp = [-2.0, -2.0, -2.0];
        let count = selection_count(34.0, lp.len());
        assert_eq!(count, 2);
        assert_eq!(bottom_positions(&lp, count), vec![0, 1]);
        assert_eq!(bottom_positions(&lp, 1), vec![0]);
        let cfg = MethodConfig::default().with_k(34.0);
        assert_eq!(score_mink(&trace(&lp), &cfg).unwrap().value, -2.0);
    }

    #[test]
    fn selection_count_bounds() {
        assert_eq!(selection_count(20.0, 1), 1);
        assert_eq!(selection_count(20.0, 5), 1);
        assert_eq!(selection_count(20.0, 6), 2);
        assert_eq!(selection_count(100.0, 7), 7);
        assert_eq!(selection_count(0.001, 7), 1);
    }

    #[test]
    fn minkpp_centered_is_zero() {
        let mut t = trace(&[-1.0, -3.0, -0.5]);
        t.mu_logprob = t.logprob_target.clone();
        assert_eq!(
            score_minkpp(&t, &MethodConfig::default()).unwrap().value,
            0.0
        );
    }

    #[test]
    fn minkpp_floors_sigma() {
        let mut t = trace(&[-1.0, -3.0]);
        t.sigma_logprob = vec![0.0, 1.0];
        let v = score_minkpp(&t, &MethodConfig::default()).unwrap().value;
        // z = [0 / 1e-6, -2 / 1]; one position selected.
        assert_eq!(v, -2.0);
        t.logprob_target[0] = -1.5;
        t.loss = 2.25;
        let v = score_minkpp(&t, &MethodConfig::default()).unwrap().value;
        assert!(v.is_finite());
        assert!((v - -0.5e6).abs() < 1e-3);
    }

    #[test]
    fn minkpp_rejects_ragged_moments() {
        let mut t = trace(&[-1.0, -3.0]);
        t.mu_logprob.pop();
        assert!(matches!(
            score_minkpp(&t, &MethodConfig::default()),
            Err(ScoreError::LengthMismatch {
                field: "mu_logprob",
                ..
            })
        ));
    }

    #[test]
    fn dcpdd_first_occurrence_filter() {
        assert_eq!(first_occurrence_positions(&[5, 7, 5]), vec![0, 1]);
        assert_eq!(first_occurrence_positions(&[3, 3, 3]), vec![0]);
    }

    #[test]
    fn dcpdd_clips_at_ceiling() {
        let mut freqs = BTreeMap::new();
        freqs.insert(9, libm::exp(-3.0));
        let table = TokenFrequencyTable::new(freqs, 0.5).unwrap();
        let t = trace(&[0.0]);
        let v = score_dcpdd(&t, &[1, 9], &table, &MethodConfig::default())
            .unwrap()
            .value;
        assert_eq!(v, 1.0);
        let loose = MethodConfig {
            dcpdd_ceiling: 10.0,
            ..MethodConfig::default()
        };
        let v = score_dcpdd(&t, &[1, 9], &table, &loose).unwrap().value;
        assert!((v - 3.0).abs() < 1e-12);
    }

    #[test]
    fn dcpdd_uses_fallback() {
        let table = TokenFrequencyTable::new(BTreeMap::new(), 0.01).unwrap();
        let t = trace(&[-0.5, -2.0, -0.1]);
        let cfg = MethodConfig {
            dcpdd_ceiling: 100.0,
            ..MethodConfig::default()
        };
        let v = score_dcpdd(&t, &[4, 8, 9, 8], &table, &cfg).unwrap().value;
        // Targets [8, 9, 8]: the second 8 is skipped.
        let surprisal = -libm::log(0.01);
        let expected = (libm::exp(-0.5) * surprisal + libm::exp(-2.0) * surprisal) / 2.0;
        assert!((v - expected).abs() < 1e-12);
        assert!(matches!(
            score_dcpdd(&t, &[4, 8, 9], &table, &cfg),
            Err(ScoreError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn pac_cases() {
        let lp = [-1.0, -2.0, -3.0, -4.0, -5.0];
        assert_eq!(polarized_distance(&lp, 40.0).unwrap(), 3.0);
        let cfg = MethodConfig::default();
        let t = trace(&lp);
        let same = vec![t.clone(); 5];
        assert_eq!(score_pac(&t, &same, &cfg).unwrap().value, 0.0);
        assert_eq!(
            score_pac(&t, &same[..4], &cfg),
            Err(ScoreError::PerturbationCount {
                expected: 5,
                actual: 4
            })
        );
    }

    #[test]
    fn recall_cases() {
        let plain = trace(&[-2.0, -2.0]);
        assert_eq!(score_recall(&plain, &plain).unwrap().value, 1.0);
        let cond = trace(&[-3.0, -3.0]);
        assert_eq!(score_recall(&cond, &plain).unwrap().value, 1.5);
        let zero = trace(&[0.0, 0.0]);
        assert!(matches!(
            score_recall(&cond, &zero),
            Err(ScoreError::DegenerateLikelihood(_))
        ));
    }

    #[test]
    fn samia_cases() {
        let g = generation(vec![vec![1, 2, 3]; 3], vec![1, 2, 3], vec![1]);
        assert_eq!(score_samia(&g, &UnigramF1).unwrap().value, 1.0);
        let g = generation(vec![vec![7, 8]; 2], vec![1, 2, 3], vec![1]);
        assert_eq!(score_samia(&g, &UnigramF1).unwrap().value, 0.0);
        let g = generation(vec![vec![1, 2, 3]], vec![2, 3, 4], vec![1]);
        assert!((score_samia(&g, &UnigramF1).unwrap().value - 2.0 / 3.0).abs() < 1e-15);
        let g = generation(vec![vec![1]], vec![], vec![1]);
        assert_eq!(score_samia(&g, &UnigramF1), Err(ScoreError::EmptyReference));
        let g = generation(vec![vec![1]], vec![1], vec![1]);
        let bad = |_: &[TokenId], _: &[TokenId]| 1.5;
        assert_eq!(
            score_samia(&g, &bad),
            Err(ScoreError::SimilarityOutOfRange(1.5))
        );
    }

    #[test]
    fn cdd_cases() {
        let g = generation(vec![vec![4, 5]; 4], vec![1], vec![4, 5]);
        assert_eq!(score_cdd(&g).unwrap().value, 1.0);
        let g = generation(vec![vec![1, 2]], vec![1], vec![1, 3]);
        assert_eq!(score_cdd(&g).unwrap().value, 0.5);
        let g = generation(vec![vec![1, 2]], vec![1], vec![]);
        assert_eq!(score_cdd(&g), Err(ScoreError::EmptyGreedy));
        let mut g = generation(vec![vec![1, 2]], vec![1], vec![1]);
        g.n_samples = 2;
        assert_eq!(score_cdd(&g), Err(ScoreError::BadSampleCount));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>(), Ok(m));
        }
        assert!("modle".parse::<Method>().is_err());
    }

    #[test]
    fn config_defaults() {
        let cfg = MethodConfig::default();
        assert_eq!(cfg.k_percent, 20.0);
        assert_eq!(cfg.pac_swap_fraction, 0.30);
        assert_eq!(cfg.pac_num_perturbations, 5);
        assert_eq!(cfg.recall_num_shots, 12);
        assert_eq!(cfg.samia_n, 10);
        assert_eq!(cfg.samia_temperature, 0.8);
        assert_eq!(cfg.cdd_n, 10);
        assert_eq!(cfg.dcpdd_ceiling, 1.0);
        assert_eq!(cfg.sigma_floor, 1e-6);
        assert!(cfg.validate().is_ok());
        assert_eq!(
            MethodConfig::default().with_k(0.0).validate(),
            Err(vec!["k_percent"])
        );
    }
}
