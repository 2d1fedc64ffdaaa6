//! Experiment configuration (TOML).
//!
//! ```toml
//! methods = ["loss", "mink"]
//! model_tags = ["160m"]
//! output_dir = "out"
//!
//! [corpora.wiki]
//! members = "wiki_members.jsonl"
//! nonmembers = "wiki_nonmembers.jsonl"
//!
//! [inputs]
//! trace_dir = "traces"
//! ```
//!
//! Top-level keys: `seeds`, `workers`, `min_examples`, `sample_size`,
//! `methods`, `model_tags`, `output_dir`, and the tables `corpora`,
//! `splits` (`methods`, `ranges`), `method_config` (any `MethodConfig`
//! field) and `inputs` (`trace_dir`, `adapter_url`, `adapter_urls`,
//! `reference_url`, `frequency_table`, `recall_shots`, `max_in_flight`,
//! `semantic_similarity`). Relative paths resolve against the config file's
//! directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use memscope_core::split::{
    fixed_ranges, SplitMethod, DEFAULT_MIN_EXAMPLES, MAX_LENGTH, RANGE_WIDTH,
};
use memscope_core::{Method, MethodConfig, DEFAULT_SEEDS};
use serde::Deserialize;
use thiserror::Error;

/// Environment variable naming the default adapter endpoint.
pub const ADAPTER_ENV: &str = "MEMSCOPE_ADAPTER_URL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CorpusPaths {
    pub members: PathBuf,
    pub nonmembers: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct SplitsConfig {
    pub methods: Vec<SplitMethod>,
    /// `[lo, hi]` pairs for truncate and complete splits.
    pub ranges: Vec<[usize; 2]>,
}

impl Default for SplitsConfig {
    fn default() -> Self {
        Self {
            methods: SplitMethod::ALL.to_vec(),
            ranges: fixed_ranges().map(|(lo, hi)| [lo, hi]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default)]
pub struct InputsConfig {
    /// Directory of per-model JSONL dumps.
    pub trace_dir: Option<PathBuf>,
    /// Adapter endpoint for tags without their own entry in `adapter_urls`.
    pub adapter_url: Option<String>,
    pub adapter_urls: BTreeMap<String, String>,
    /// Adapter serving the reference model for `refer`.
    pub reference_url: Option<String>,
    pub frequency_table: Option<PathBuf>,
    /// Non-member corpus the conditioning shots are drawn from.
    pub recall_shots: Option<PathBuf>,
    pub max_in_flight: usize,
    /// Use the adapter's similarity endpoint instead of unigram F1.
    pub semantic_similarity: bool,
}

impl Default for InputsConfig {
    fn default() -> Self {
        Self {
            trace_dir: None,
            adapter_url: None,
            adapter_urls: BTreeMap::new(),
            reference_url: None,
            frequency_table: None,
            recall_shots: None,
            max_in_flight: 4,
            semantic_similarity: false,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get().min(8))
}

fn default_min_examples() -> usize {
    DEFAULT_MIN_EXAMPLES
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("memscope-out")
}

#[derive(Deserialize)]
struct RawConfig {
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    workers: usize,
    #[serde(default = "default_min_examples")]
    min_examples: usize,
    #[serde(default)]
    sample_size: Option<usize>,
    methods: Vec<Method>,
    model_tags: Vec<String>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    corpora: BTreeMap<String, CorpusPaths>,
    #[serde(default)]
    splits: SplitsConfig,
    #[serde(default)]
    method_config: toml::Table,
    #[serde(default)]
    inputs: InputsConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub min_examples: usize,
    pub sample_size: Option<usize>,
    pub methods: Vec<Method>,
    pub model_tags: Vec<String>,
    pub output_dir: PathBuf,
    /// Corpus files per domain.
    pub corpora: BTreeMap<String, CorpusPaths>,
    pub splits: SplitsConfig,
    pub method_config: MethodConfig,
    pub inputs: InputsConfig,
}

impl ExperimentConfig {
    /// Adapter endpoint for `model_tag`, if the run uses an adapter.
    pub fn adapter_url(&self, model_tag: &str) -> Option<&str> {
        self.inputs
            .adapter_urls
            .get(model_tag)
            .or(self.inputs.adapter_url.as_ref())
            .map(String::as_str)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut require = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        require(!self.seeds.is_empty(), "seeds must not be empty");
        require(!self.methods.is_empty(), "methods must not be empty");
        require(!self.model_tags.is_empty(), "model_tags must not be empty");
        require(
            !self.splits.methods.is_empty(),
            "splits.methods must not be empty",
        );
        require(
            !self.corpora.is_empty(),
            "corpora must name at least one domain",
        );
        require(self.workers > 0, "workers must be at least 1");
        require(self.min_examples > 0, "min_examples must be at least 1");
        require(
            self.sample_size != Some(0),
            "sample_size must be at least 1",
        );
        require(
            self.inputs.max_in_flight > 0,
            "inputs.max_in_flight must be at least 1",
        );
        require(
            unique(&self.seeds) && unique(&self.methods) && unique(&self.model_tags),
            "seeds, methods and model_tags must not repeat",
        );
        require(
            unique(&self.splits.methods),
            "splits.methods must not repeat",
        );
        require(
            !self.splits.ranges.is_empty() && unique(&self.splits.ranges),
            "splits.ranges must be non-empty and not repeat",
        );
        for &[lo, hi] in &self.splits.ranges {
            require(
                lo.is_multiple_of(RANGE_WIDTH) && hi == lo + RANGE_WIDTH && hi <= MAX_LENGTH,
                &format!("splits.ranges entry [{lo}, {hi}] is not a fixed 100-token range"),
            );
        }
        if let Err(fields) = self.method_config.validate() {
            for f in fields {
                problems.push(format!("method_config.{f} out of range"));
            }
        }
        let tags_without_adapter = self
            .model_tags
            .iter()
            .any(|t| self.adapter_url(t).is_none());
        if self.inputs.trace_dir.is_none() && tags_without_adapter {
            problems.push(format!(
                "inputs.trace_dir or an adapter endpoint (inputs.adapter_url, {ADAPTER_ENV}) is required"
            ));
        }
        if self.methods.contains(&Method::Dcpdd) && self.inputs.frequency_table.is_none() {
            problems.push("method dcpdd needs inputs.frequency_table".into());
        }
        if self.inputs.trace_dir.is_none() {
            if self.methods.contains(&Method::Recall) && self.inputs.recall_shots.is_none() {
                problems.push("method recall over an adapter needs inputs.recall_shots".into());
            }
            if self.methods.contains(&Method::Refer) && self.inputs.reference_url.is_none() {
                problems.push("method refer over an adapter needs inputs.reference_url".into());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }
}

fn unique<T: Ord>(xs: &[T]) -> bool {
    xs.iter().collect::<BTreeSet<_>>().len() == xs.len()
}

/// Field names `MethodConfig` accepts.
fn method_config_fields() -> BTreeSet<String> {
    toml::Value::try_from(MethodConfig::default())
        .ok()
        .and_then(|v| v.as_table().map(|t| t.keys().cloned().collect()))
        .unwrap_or_default()
}

/// Parses config text. `base_dir` anchors relative paths; `adapter_env` is
/// the value of the adapter environment variable, if set.
pub fn parse_config(
    text: &str,
    base_dir: &Path,
    adapter_env: Option<String>,
) -> Result<ExperimentConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut unknown = Vec::new();
    let raw: RawConfig = serde_ignored::deserialize(toml::Value::Table(table), |path| {
        unknown.push(path.to_string())
    })
    .map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let known = method_config_fields();
    unknown.extend(
        raw.method_config
            .keys()
            .filter(|k| !known.contains(*k))
            .map(|k| format!("method_config.{k}")),
    );
    if !unknown.is_empty() {
        unknown.sort();
        return Err(ConfigError::UnknownKeys(unknown));
    }
    let method_config: MethodConfig = toml::Value::Table(raw.method_config)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(format!("method_config: {e}")))?;

    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
    let mut inputs = raw.inputs;
    inputs.trace_dir = inputs.trace_dir.map(resolve);
    inputs.frequency_table = inputs.frequency_table.map(resolve);
    inputs.recall_shots = inputs.recall_shots.map(resolve);
    if let Some(url) = adapter_env.filter(|u| !u.is_empty()) {
        inputs.adapter_url = Some(url);
    }
    let cfg = ExperimentConfig {
        seeds: raw.seeds,
        workers: raw.workers,
        min_examples: raw.min_examples,
        sample_size: raw.sample_size,
        methods: raw.methods,
        model_tags: raw.model_tags,
        output_dir: resolve(raw.output_dir),
        corpora: raw
            .corpora
            .into_iter()
            .map(|(d, c)| {
                (
                    d,
                    CorpusPaths {
                        members: resolve(c.members),
                        nonmembers: resolve(c.nonmembers),
                    },
                )
            })
            .collect(),
        splits: raw.splits,
        method_config,
        inputs,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and validates a config file, applying defaults and the
/// adapter environment variable.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, std::env::var(ADAPTER_ENV).ok())
}
