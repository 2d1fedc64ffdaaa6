//! Records exchanged with the inference adapter.
//!
//! Field names are the wire names: every record serializes to a JSON object
//! with exactly these snake_case keys. Log-probabilities, losses, and
//! entropies are in nats.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Method;

/// Token id as emitted by the adapter's tokenizer.
pub type TokenId = u32;

/// Membership label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Member,
    Nonmember,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Member => "member",
            Label::Nonmember => "nonmember",
        }
    }
}

/// One text with its domain, membership label and token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub domain: String,
    pub label: Label,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Example {
    /// Token length of the example.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Per-token likelihood trace of one example under one model.
///
/// `logprob_target[i]` is `log p(tokens[i + 1] | tokens[..=i])`; the first
/// token has no context and is not scored. `mu_logprob` and `sigma_logprob`
/// are the probability-weighted mean and standard deviation of the
/// log-probabilities of the full next-token distribution at each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenTrace {
    pub example_id: String,
    pub logprob_target: Vec<f64>,
    pub mu_logprob: Vec<f64>,
    pub sigma_logprob: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Mean negative log-likelihood over `logprob_target`.
    pub loss: f64,
    #[serde(default)]
    pub ref_loss: Option<f64>,
    #[serde(default)]
    pub gradient_norm: Option<f64>,
}

impl TokenTrace {
    /// Number of scored steps.
    pub fn steps(&self) -> usize {
        self.logprob_target.len()
    }

    /// Average log-likelihood of the target tokens.
    pub fn mean_logprob(&self) -> f64 {
        mean(&self.logprob_target)
    }
}

/// Sampled and greedy continuations of a prefix of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub example_id: String,
    pub prefix_tokens: Vec<TokenId>,
    pub reference_continuation: Vec<TokenId>,
    pub sampled_continuations: Vec<Vec<TokenId>>,
    pub greedy_continuation: Vec<TokenId>,
    pub temperature: f64,
    pub n_samples: usize,
}

/// Mean-pooled hidden state of one example at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEmbedding {
    pub example_id: String,
    pub layer_index: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrequencyTableError {
    #[error("frequency {freq} for token {token} is outside (0, 1]")]
    OutOfRange { token: TokenId, freq: f64 },
    #[error("fallback frequency {0} is outside (0, 1]")]
    BadFallback(f64),
}

/// Relative corpus frequency per token id, with a fallback for unseen ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenFrequencyTable {
    freqs: BTreeMap<TokenId, f64>,
    fallback_frequency: f64,
}

fn unit_interval(f: f64) -> bool {
    f > 0.0 && f <= 1.0
}

impl TokenFrequencyTable {
    pub fn new(
        freqs: BTreeMap<TokenId, f64>,
        fallback_frequency: f64,
    ) -> Result<Self, FrequencyTableError> {
        if !unit_interval(fallback_frequency) {
            return Err(FrequencyTableError::BadFallback(fallback_frequency));
        }
        if let Some((&token, &freq)) = freqs.iter().find(|(_, f)| !unit_interval(**f)) {
            return Err(FrequencyTableError::OutOfRange { token, freq });
        }
        Ok(Self {
            freqs,
            fallback_frequency,
        })
    }

    pub fn frequency(&self, token: TokenId) -> f64 {
        self.freqs
            .get(&token)
            .copied()
            .unwrap_or(self.fallback_frequency)
    }

    pub fn fallback_frequency(&self) -> f64 {
        self.fallback_frequency
    }

    pub fn entries(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.freqs.iter().map(|(&t, &f)| (t, f))
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }
}

/// Outcome of evaluating one method on one split instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: Method,
    pub split_id: String,
    pub domain: String,
    pub model_tag: String,
    pub seed: u64,
    pub auc: f64,
    pub threshold: f64,
    pub val_tpr: f64,
    pub val_fpr: f64,
    /// Mean token length over members and non-members.
    pub text_length_stat: f64,
    pub ngram_overlap_stat: f64,
    /// Two-sample KS statistic between member and non-member scores.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl EvalResult {
    /// Identifier of the split instance this row was evaluated on, shared by
    /// every method run on the same split, model and seed.
    pub fn instance_id(&self) -> String {
        alloc::format!("{}|{}|{}", self.split_id, self.model_tag, self.seed)
    }

    /// Split method prefix of `split_id` (`truncate`, `complete`, `relative`).
    pub fn split_method(&self) -> &str {
        self.split_id.split(':').next().unwrap_or("")
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}
