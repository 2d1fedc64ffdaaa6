//! Structural and numeric checks on adapter-emitted traces.

use alloc::vec::Vec;
use core::fmt;

use crate::model::{TokenId, TokenTrace};

const LOSS_TOLERANCE: f64 = 1e-6;

/// Per-step sequences of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceField {
    LogprobTarget,
    MuLogprob,
    SigmaLogprob,
    Entropy,
}

impl TraceField {
    pub fn name(self) -> &'static str {
        match self {
            TraceField::LogprobTarget => "logprob_target",
            TraceField::MuLogprob => "mu_logprob",
            TraceField::SigmaLogprob => "sigma_logprob",
            TraceField::Entropy => "entropy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// `logprob_target` must have one entry per token after the first.
    TokenCountMismatch {
        expected: usize,
        actual: usize,
    },
    LengthMismatch {
        field: TraceField,
        expected: usize,
        actual: usize,
    },
    NonFinite {
        field: TraceField,
        index: usize,
    },
    PositiveLogprob {
        index: usize,
        value: f64,
    },
    NegativeSigma {
        index: usize,
        value: f64,
    },
    NegativeEntropy {
        index: usize,
        value: f64,
    },
    EntropyAboveMax {
        index: usize,
        value: f64,
        max: f64,
    },
    BadLoss(f64),
    LossMismatch {
        loss: f64,
        recomputed: f64,
    },
    BadRefLoss(f64),
    BadGradientNorm(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TokenCountMismatch { expected, actual } => write!(
                f,
                "token-count mismatch: logprob_target has {actual} entries, expected {expected}"
            ),
            Violation::LengthMismatch {
                field,
                expected,
                actual,
            } => write!(
                f,
                "length mismatch: {} has {actual} entries, expected {expected}",
                field.name()
            ),
            Violation::NonFinite { field, index } => {
                write!(f, "non-finite value in {} at {index}", field.name())
            }
            Violation::PositiveLogprob { index, value } => {
                write!(f, "positive log-prob {value} at {index}")
            }
            Violation::NegativeSigma { index, value } => {
                write!(f, "negative sigma {value} at {index}")
            }
            Violation::NegativeEntropy { index, value } => {
                write!(f, "negative entropy {value} at {index}")
            }
            Violation::EntropyAboveMax { index, value, max } => {
                write!(f, "entropy {value} at {index} exceeds log(vocab) {max}")
            }
            Violation::BadLoss(v) => write!(f, "loss {v} is negative or non-finite"),
            Violation::LossMismatch { loss, recomputed } => write!(
                f,
                "loss {loss} differs from -mean(logprob_target) = {recomputed}"
            ),
            Violation::BadRefLoss(v) => write!(f, "ref_loss {v} is negative or non-finite"),
            Violation::BadGradientNorm(v) => {
                write!(f, "gradient_norm {v} is negative or non-finite")
            }
        }
    }
}

/// Every invariant a trace violates; empty iff the trace is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `trace` against the tokens it was computed from.
///
/// `vocab_size`, when known, bounds every entropy by `ln(vocab_size)`.
pub fn validate_trace(
    trace: &TokenTrace,
    tokens: &[TokenId],
    vocab_size: Option<usize>,
) -> ValidationReport {
    let mut out = Vec::new();
    let steps = trace.logprob_target.len();

    let expected_steps = tokens.len().saturating_sub(1);
    if steps != expected_steps {
        out.push(Violation::TokenCountMismatch {
            expected: expected_steps,
            actual: steps,
        });
    }

    let per_step = [
        (TraceField::LogprobTarget, &trace.logprob_target),
        (TraceField::MuLogprob, &trace.mu_logprob),
        (TraceField::SigmaLogprob, &trace.sigma_logprob),
        (TraceField::Entropy, &trace.entropy),
    ];
    for (field, values) in per_step {
        if values.len() != steps {
            out.push(Violation::LengthMismatch {
                field,
                expected: steps,
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { field, index });
        }
    }

    for (index, &value) in trace.logprob_target.iter().enumerate() {
        if value > 0.0 {
            out.push(Violation::PositiveLogprob { index, value });
        }
    }
    for (index, &value) in trace.sigma_logprob.iter().enumerate() {
        if value < 0.0 {
            out.push(Violation::NegativeSigma { index, value });
        }
    }
    let max_entropy = vocab_size.map(|v| libm::log(v as f64));
    for (index, &value) in trace.entropy.iter().enumerate() {
        if value < 0.0 {
            out.push(Violation::NegativeEntropy { index, value });
        }
        if let Some(max) = max_entropy {
            // ln(V) itself is rounded; allow the last ulp or so.
            if value > max + 1e-9 {
                out.push(Violation::EntropyAboveMax { index, value, max });
            }
        }
    }

    if !trace.loss.is_finite() || trace.loss < 0.0 {
        out.push(Violation::BadLoss(trace.loss));
    } else if steps > 0 {
        let recomputed = -trace.mean_logprob();
        if (recomputed - trace.loss).abs() > LOSS_TOLERANCE {
            out.push(Violation::LossMismatch {
                loss: trace.loss,
                recomputed,
            });
        }
    }
    if let Some(r) = trace.ref_loss {
        if !r.is_finite() || r < 0.0 {
            out.push(Violation::BadRefLoss(r));
        }
    }
    if let Some(g) = trace.gradient_norm {
        if !g.is_finite() || g < 0.0 {
            out.push(Violation::BadGradientNorm(g));
        }
    }

    ValidationReport { violations: out }
}
