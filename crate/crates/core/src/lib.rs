//! Scoring and statistics core for membership-inference evaluation.
//!
//! Everything in this crate is a pure function over in-memory records: the
//! data model exchanged with the inference adapter, member/non-member split
//! construction, the eleven feature scorers, the statistical battery used to
//! evaluate them, and the embedding/decoding probes. File formats, the run
//! matrix, and the command line live in the `memscope` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod features;
pub mod model;
pub mod probe;
pub mod split;
pub mod stats;
pub mod validate;

pub use features::{FeatureScore, Method, MethodConfig, ScoreError};
pub use model::{
    EvalResult, Example, GenerationRecord, Label, LayerEmbedding, TokenFrequencyTable, TokenId,
    TokenTrace,
};
pub use split::{SplitMethod, SplitOutcome, SplitSet, SplitSpec};
pub use validate::{validate_trace, ValidationReport, Violation};

/// Random seeds used to sample member/non-member sets by default.
pub const DEFAULT_SEEDS: [u64; 3] = [47103, 28103, 58320];
