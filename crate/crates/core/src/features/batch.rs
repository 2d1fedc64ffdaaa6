//! Scoring every example of a split under one method.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{
    score_cdd, score_dcpdd, score_gradient, score_loss, score_mink, score_minkpp, score_pac,
    score_recall, score_refer, score_samia, score_zlib, FeatureScore, Method, MethodConfig,
    ScoreError, Similarity, UnigramF1,
};
use crate::model::{Example, GenerationRecord, TokenFrequencyTable, TokenTrace};
use crate::split::SplitSet;

/// Kind of upstream input a method consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InputKind {
    Trace,
    ConditionedTrace,
    PerturbedTraces,
    Generation,
    FrequencyTable,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::Trace => "trace",
            InputKind::ConditionedTrace => "conditioned trace",
            InputKind::PerturbedTraces => "perturbed traces",
            InputKind::Generation => "generation",
            InputKind::FrequencyTable => "frequency table",
        }
    }
}

/// Inputs `method` needs per example (the frequency table is global).
pub fn required_inputs(method: Method) -> &'static [InputKind] {
    use InputKind::*;
    match method {
        Method::Loss | Method::Refer | Method::Gradient | Method::Zlib => &[Trace],
        Method::Mink | Method::Minkpp => &[Trace],
        Method::Dcpdd => &[Trace, FrequencyTable],
        Method::Pac => &[Trace, PerturbedTraces],
        Method::Recall => &[Trace, ConditionedTrace],
        Method::Samia | Method::Cdd => &[Generation],
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingInput {
    /// `None` for inputs shared by the whole split.
    pub example_id: Option<String>,
    pub kind: InputKind,
}

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.example_id {
            Some(id) => write!(f, "{} for `{id}`", self.kind.name()),
            None => f.write_str(self.kind.name()),
        }
    }
}

/// Upstream inputs keyed by example id.
#[derive(Default)]
pub struct ScoringInputs<'a> {
    pub traces: BTreeMap<String, TokenTrace>,
    pub conditioned: BTreeMap<String, TokenTrace>,
    /// Traces of token-swapped variants, in variant order.
    pub perturbed: BTreeMap<String, Vec<TokenTrace>>,
    pub generations: BTreeMap<String, GenerationRecord>,
    pub frequencies: Option<&'a TokenFrequencyTable>,
    /// Continuation similarity; unigram F1 when absent.
    pub similarity: Option<&'a dyn Similarity>,
}

impl ScoringInputs<'_> {
    fn has(&self, kind: InputKind, id: &str) -> bool {
        match kind {
            InputKind::Trace => self.traces.contains_key(id),
            InputKind::ConditionedTrace => self.conditioned.contains_key(id),
            InputKind::PerturbedTraces => self.perturbed.contains_key(id),
            InputKind::Generation => self.generations.contains_key(id),
            InputKind::FrequencyTable => self.frequencies.is_some(),
        }
    }

    /// Every input `method` would need for `examples` that is not present.
    pub fn missing<'e>(
        &self,
        method: Method,
        examples: impl IntoIterator<Item = &'e Example>,
    ) -> Vec<MissingInput> {
        let kinds = required_inputs(method);
        let mut out = Vec::new();
        if kinds.contains(&InputKind::FrequencyTable) && self.frequencies.is_none() {
            out.push(MissingInput {
                example_id: None,
                kind: InputKind::FrequencyTable,
            });
        }
        for e in examples {
            for &kind in kinds {
                if kind != InputKind::FrequencyTable && !self.has(kind, &e.example_id) {
                    out.push(MissingInput {
                        example_id: Some(e.example_id.clone()),
                        kind,
                    });
                }
            }
        }
        out
    }

    fn score_one(
        &self,
        method: Method,
        example: &Example,
        cfg: &MethodConfig,
    ) -> Result<FeatureScore, ScoreError> {
        let id = example.example_id.as_str();
        // Presence was checked by `missing` before scoring starts.
        let trace = || &self.traces[id];
        let generation = || &self.generations[id];
        match method {
            Method::Loss => score_loss(trace()),
            Method::Refer => score_refer(trace()),
            Method::Gradient => score_gradient(trace()),
            Method::Zlib => score_zlib(trace(), &example.text),
            Method::Mink => score_mink(trace(), cfg),
            Method::Minkpp => score_minkpp(trace(), cfg),
            Method::Dcpdd => {
                let table = self.frequencies.ok_or_else(|| {
                    ScoreError::MissingInputs(alloc::vec![MissingInput {
                        example_id: None,
                        kind: InputKind::FrequencyTable,
                    }])
                })?;
                score_dcpdd(trace(), &example.tokens, table, cfg)
            }
            Method::Pac => score_pac(trace(), &self.perturbed[id], cfg),
            Method::Recall => score_recall(&self.conditioned[id], trace()),
            Method::Samia => score_samia(generation(), self.similarity.unwrap_or(&UnigramF1)),
            Method::Cdd => score_cdd(generation()),
        }
        .map(|mut s| {
            s.example_id = example.example_id.clone();
            s
        })
        .map_err(|e| ScoreError::Example {
            example_id: example.example_id.clone(),
            source: Box::new(e),
        })
    }
}

/// Scores of a split, in split order.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScores {
    pub members: Vec<FeatureScore>,
    pub nonmembers: Vec<FeatureScore>,
}

impl SplitScores {
    pub fn member_values(&self) -> Vec<f64> {
        self.members.iter().map(|s| s.value).collect()
    }

    pub fn nonmember_values(&self) -> Vec<f64> {
        self.nonmembers.iter().map(|s| s.value).collect()
    }
}

/// Scores both classes of `split` under `method`.
///
/// All missing inputs are reported together before any scoring happens.
pub fn score_split(
    split: &SplitSet,
    method: Method,
    inputs: &ScoringInputs<'_>,
    cfg: &MethodConfig,
) -> Result<SplitScores, ScoreError> {
    let missing = inputs.missing(method, split.members.iter().chain(&split.nonmembers));
    if !missing.is_empty() {
        return Err(ScoreError::MissingInputs(missing));
    }
    let score_all = |examples: &[Example]| -> Result<Vec<FeatureScore>, ScoreError> {
        examples
            .iter()
            .map(|e| inputs.score_one(method, e, cfg))
            .collect()
    };
    Ok(SplitScores {
        members: score_all(&split.members)?,
        nonmembers: score_all(&split.nonmembers)?,
    })
}
