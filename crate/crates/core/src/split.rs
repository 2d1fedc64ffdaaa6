//! Member/non-member split construction.
//!
//! Three ways of pairing members with non-members by token length:
//!
//! * **truncate**: any text long enough is cut down to a length drawn
//!   uniformly from `[lo + 1, hi]`;
//! * **complete**: only texts whose whole length lies in `[lo, hi)` qualify;
//! * **relative**: like complete, but the ten bins are the deciles of the
//!   non-member length distribution of the domain.
//!
//! A split is only built when both classes have at least `min_examples`
//! candidates; otherwise a [`Rejection`] is returned. Sampling is without
//! replacement and fully determined by the seed.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Example;

/// Width of the fixed truncate/complete length ranges.
pub const RANGE_WIDTH: usize = 100;
/// Upper end of the fixed length ranges.
pub const MAX_LENGTH: usize = 1000;
pub const DEFAULT_MIN_EXAMPLES: usize = 100;

const MEMBER_STREAM: u64 = 0;
const NONMEMBER_STREAM: u64 = 1;
const TRUNCATION_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Truncate,
    Complete,
    Relative,
}

impl SplitMethod {
    pub const ALL: [SplitMethod; 3] = [
        SplitMethod::Truncate,
        SplitMethod::Complete,
        SplitMethod::Relative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitMethod::Truncate => "truncate",
            SplitMethod::Complete => "complete",
            SplitMethod::Relative => "relative",
        }
    }
}

impl fmt::Display for SplitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for SplitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truncate" => Ok(SplitMethod::Truncate),
            "complete" => Ok(SplitMethod::Complete),
            "relative" => Ok(SplitMethod::Relative),
            other => Err(format!("unknown split method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub method: SplitMethod,
    pub domain: String,
    pub length_lo: usize,
    pub length_hi: usize,
    pub seed: u64,
    pub min_examples: usize,
    /// Examples drawn per class; `None` draws exactly `min_examples`.
    #[serde(default)]
    pub sample_size: Option<usize>,
}

impl SplitSpec {
    pub fn new(
        method: SplitMethod,
        domain: impl Into<String>,
        length_lo: usize,
        length_hi: usize,
        seed: u64,
    ) -> Self {
        Self {
            method,
            domain: domain.into(),
            length_lo,
            length_hi,
            seed,
            min_examples: DEFAULT_MIN_EXAMPLES,
            sample_size: None,
        }
    }

    /// Stable identifier of the split, independent of the seed.
    pub fn split_id(&self) -> String {
        format!(
            "{}:{}:{}-{}",
            self.method, self.domain, self.length_lo, self.length_hi
        )
    }

    fn draw_count(&self) -> usize {
        self.sample_size.unwrap_or(self.min_examples)
    }

    /// Whether a (possibly truncated) example of length `len` satisfies this
    /// split's length rule.
    pub fn admits_length(&self, len: usize) -> bool {
        match self.method {
            SplitMethod::Truncate => len > self.length_lo && len <= self.length_hi,
            SplitMethod::Complete | SplitMethod::Relative => {
                len >= self.length_lo && len < self.length_hi
            }
        }
    }
}

/// The ten fixed `(lo, hi)` ranges used by truncate and complete splits.
pub fn fixed_ranges() -> impl Iterator<Item = (usize, usize)> {
    (0..MAX_LENGTH / RANGE_WIDTH).map(|i| (i * RANGE_WIDTH, (i + 1) * RANGE_WIDTH))
}

fn is_fixed_range(lo: usize, hi: usize) -> bool {
    lo.is_multiple_of(RANGE_WIDTH) && hi == lo + RANGE_WIDTH && hi <= MAX_LENGTH
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSet {
    pub spec: SplitSpec,
    pub members: Vec<Example>,
    pub nonmembers: Vec<Example>,
}

impl SplitSet {
    pub fn split_id(&self) -> String {
        self.spec.split_id()
    }

    /// Mean token length over both classes.
    pub fn mean_length(&self) -> f64 {
        let n = self.members.len() + self.nonmembers.len();
        if n == 0 {
            return 0.0;
        }
        let total: usize = self
            .members
            .iter()
            .chain(&self.nonmembers)
            .map(Example::len)
            .sum();
        total as f64 / n as f64
    }
}

/// A split that could not be built because a class had too few candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub spec: SplitSpec,
    pub member_candidates: usize,
    pub nonmember_candidates: usize,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} member / {} non-member candidates, need {}",
            self.spec.split_id(),
            self.member_candidates,
            self.nonmember_candidates,
            self.spec.min_examples
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum SplitOutcome {
    Built(SplitSet),
    Rejected(Rejection),
}

impl SplitOutcome {
    pub fn spec(&self) -> &SplitSpec {
        match self {
            SplitOutcome::Built(s) => &s.spec,
            SplitOutcome::Rejected(r) => &r.spec,
        }
    }

    pub fn built(self) -> Option<SplitSet> {
        match self {
            SplitOutcome::Built(s) => Some(s),
            SplitOutcome::Rejected(_) => None,
        }
    }

    pub fn is_built(&self) -> bool {
        matches!(self, SplitOutcome::Built(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("spec method is {actual}, expected {expected}")]
    WrongMethod {
        expected: SplitMethod,
        actual: SplitMethod,
    },
    #[error("length range [{lo}, {hi}) is not one of the fixed 100-token ranges")]
    InvalidRange { lo: usize, hi: usize },
    #[error("min_examples must be at least 1")]
    ZeroMinExamples,
    #[error("example id `{0}` occurs in both the member and the non-member corpus")]
    IdCollision(String),
    #[error("no non-member examples for domain `{0}`")]
    EmptyNonmembers(String),
    #[error("degenerate decile basis: only {distinct} distinct non-member lengths")]
    DegenerateDeciles { distinct: usize },
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `count` of `candidates` without replacement, returned in corpus order.
fn sample<'a>(candidates: &[&'a Example], count: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Example> {
    let count = count.min(candidates.len());
    let mut picked = index::sample(rng, candidates.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| candidates[i]).collect()
}

fn in_domain<'a>(corpus: &'a [Example], domain: &'a str) -> impl Iterator<Item = &'a Example> {
    corpus.iter().filter(move |e| e.domain == domain)
}

fn check_disjoint(members: &[&Example], nonmembers: &[&Example]) -> Result<(), SplitError> {
    let ids: BTreeSet<&str> = members.iter().map(|e| e.example_id.as_str()).collect();
    match nonmembers
        .iter()
        .find(|e| ids.contains(e.example_id.as_str()))
    {
        Some(e) => Err(SplitError::IdCollision(e.example_id.clone())),
        None => Ok(()),
    }
}

fn check_common(spec: &SplitSpec) -> Result<(), SplitError> {
    if spec.min_examples == 0 {
        return Err(SplitError::ZeroMinExamples);
    }
    if spec.method != SplitMethod::Relative && !is_fixed_range(spec.length_lo, spec.length_hi) {
        return Err(SplitError::InvalidRange {
            lo: spec.length_lo,
            hi: spec.length_hi,
        });
    }
    Ok(())
}

fn expect_method(spec: &SplitSpec, expected: SplitMethod) -> Result<(), SplitError> {
    if spec.method != expected {
        return Err(SplitError::WrongMethod {
            expected,
            actual: spec.method,
        });
    }
    Ok(())
}

/// Characters of `text` kept when its `full` tokens are cut to `kept`.
///
/// Token boundaries are not known without the tokenizer, so the text is cut
/// proportionally; the token ids remain authoritative.
fn proportional_prefix(text: &str, kept: usize, full: usize) -> String {
    let chars = text.chars().count();
    let keep = (chars * kept).div_ceil(full);
    text.chars().take(keep).collect()
}

fn truncate_example(example: &Example, target: usize) -> Example {
    if example.len() <= target {
        return example.clone();
    }
    Example {
        example_id: format!("{}@{}", example.example_id, target),
        domain: example.domain.clone(),
        label: example.label,
        text: proportional_prefix(&example.text, target, example.len()),
        tokens: example.tokens[..target].to_vec(),
    }
}

fn reject_or<F>(
    spec: &SplitSpec,
    members: &[&Example],
    nonmembers: &[&Example],
    build: F,
) -> Result<SplitOutcome, SplitError>
where
    F: FnOnce() -> SplitSet,
{
    check_disjoint(members, nonmembers)?;
    if members.len() < spec.min_examples || nonmembers.len() < spec.min_examples {
        return Ok(SplitOutcome::Rejected(Rejection {
            spec: spec.clone(),
            member_candidates: members.len(),
            nonmember_candidates: nonmembers.len(),
        }));
    }
    Ok(SplitOutcome::Built(build()))
}

/// Truncate split: texts longer than `length_lo` are cut to a seeded
/// target length in `[length_lo + 1, length_hi]`.
pub fn build_truncate_split(
    member_corpus: &[Example],
    nonmember_corpus: &[Example],
    spec: &SplitSpec,
) -> Result<SplitOutcome, SplitError> {
    expect_method(spec, SplitMethod::Truncate)?;
    check_common(spec)?;
    let eligible = |e: &&Example| e.len() > spec.length_lo;
    let members: Vec<&Example> = in_domain(member_corpus, &spec.domain)
        .filter(eligible)
        .collect();
    let nonmembers: Vec<&Example> = in_domain(nonmember_corpus, &spec.domain)
        .filter(eligible)
        .collect();

    reject_or(spec, &members, &nonmembers, || {
        let picked_m = sample(
            &members,
            spec.draw_count(),
            &mut rng_for(spec.seed, MEMBER_STREAM),
        );
        let picked_n = sample(
            &nonmembers,
            spec.draw_count(),
            &mut rng_for(spec.seed, NONMEMBER_STREAM),
        );
        let mut lengths = rng_for(spec.seed, TRUNCATION_STREAM);
        let mut cut = |e: &Example| {
            let target = lengths.random_range(spec.length_lo + 1..=spec.length_hi);
            truncate_example(e, target)
        };
        let members = picked_m.into_iter().map(&mut cut).collect();
        let nonmembers = picked_n.into_iter().map(&mut cut).collect();
        SplitSet {
            spec: spec.clone(),
            members,
            nonmembers,
        }
    })
}

fn build_by_whole_length(
    member_corpus: &[Example],
    nonmember_corpus: &[Example],
    spec: &SplitSpec,
) -> Result<SplitOutcome, SplitError> {
    let eligible = |e: &&Example| spec.admits_length(e.len());
    let members: Vec<&Example> = in_domain(member_corpus, &spec.domain)
        .filter(eligible)
        .collect();
    let nonmembers: Vec<&Example> = in_domain(nonmember_corpus, &spec.domain)
        .filter(eligible)
        .collect();

    reject_or(spec, &members, &nonmembers, || SplitSet {
        spec: spec.clone(),
        members: sample(
            &members,
            spec.draw_count(),
            &mut rng_for(spec.seed, MEMBER_STREAM),
        )
        .into_iter()
        .cloned()
        .collect(),
        nonmembers: sample(
            &nonmembers,
            spec.draw_count(),
            &mut rng_for(spec.seed, NONMEMBER_STREAM),
        )
        .into_iter()
        .cloned()
        .collect(),
    })
}

/// Complete split: only texts whose untruncated length is in `[lo, hi)`.
pub fn build_complete_split(
    member_corpus: &[Example],
    nonmember_corpus: &[Example],
    spec: &SplitSpec,
) -> Result<SplitOutcome, SplitError> {
    expect_method(spec, SplitMethod::Complete)?;
    check_common(spec)?;
    build_by_whole_length(member_corpus, nonmember_corpus, spec)
}

/// Builds one split of any method from a fully specified spec. For relative
/// splits the bounds must come from [`relative_bins`].
pub fn build_split(
    member_corpus: &[Example],
    nonmember_corpus: &[Example],
    spec: &SplitSpec,
) -> Result<SplitOutcome, SplitError> {
    match spec.method {
        SplitMethod::Truncate => build_truncate_split(member_corpus, nonmember_corpus, spec),
        SplitMethod::Complete => build_complete_split(member_corpus, nonmember_corpus, spec),
        SplitMethod::Relative => {
            check_common(spec)?;
            build_by_whole_length(member_corpus, nonmember_corpus, spec)
        }
    }
}

/// Nearest-rank percentile of sorted data: the value at rank `ceil(p·n/100)`.
pub fn nearest_rank(sorted: &[usize], percent: usize) -> usize {
    debug_assert!(!sorted.is_empty() && percent > 0 && percent <= 100);
    let rank = (percent * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

/// Nearest-rank deciles (10%, …, 90%) of the given lengths.
pub fn decile_boundaries(lengths: &[usize]) -> Result<[usize; 9], SplitError> {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 10 {
        return Err(SplitError::DegenerateDeciles {
            distinct: distinct.len(),
        });
    }
    let mut out = [0; 9];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = nearest_rank(&sorted, (i + 1) * 10);
    }
    Ok(out)
}

/// The ten half-open length bins `[lo, hi)` of a domain's relative split.
///
/// Bin 1 runs from the shortest non-member length up to and including the
/// 10% decile, bin k from just above decile k-1 up to and including decile k,
/// and bin 10 up to and including the longest non-member length. Bins can be
/// empty (`lo == hi`) when deciles coincide.
pub fn relative_bins(
    nonmember_corpus: &[Example],
    domain: &str,
) -> Result<Vec<(usize, usize)>, SplitError> {
    let lengths: Vec<usize> = in_domain(nonmember_corpus, domain)
        .map(Example::len)
        .collect();
    if lengths.is_empty() {
        return Err(SplitError::EmptyNonmembers(domain.into()));
    }
    let deciles = decile_boundaries(&lengths)?;
    let min = *lengths.iter().min().unwrap_or(&0);
    let max = *lengths.iter().max().unwrap_or(&0);

    let mut bins = Vec::with_capacity(10);
    let mut lo = min;
    for d in deciles {
        let hi = (d + 1).max(lo);
        bins.push((lo, hi));
        lo = hi;
    }
    bins.push((lo, (max + 1).max(lo)));
    Ok(bins)
}

/// Relative split: one outcome per decile bin of the non-member lengths.
pub fn build_relative_split(
    member_corpus: &[Example],
    nonmember_corpus: &[Example],
    domain: &str,
    seed: u64,
    min_examples: usize,
    sample_size: Option<usize>,
) -> Result<Vec<SplitOutcome>, SplitError> {
    relative_bins(nonmember_corpus, domain)?
        .into_iter()
        .map(|(lo, hi)| {
            let spec = SplitSpec {
                method: SplitMethod::Relative,
                domain: domain.into(),
                length_lo: lo,
                length_hi: hi,
                seed,
                min_examples,
                sample_size,
            };
            build_split(member_corpus, nonmember_corpus, &spec)
        })
        .collect()
}
