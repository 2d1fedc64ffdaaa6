//! Run matrix: planning, cached execution, and the `run` pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering as AtomicOrdering};
use std::sync::mpsc;

use log::{info, warn};
use memscope_core::features::{required_inputs, score_split, InputKind, Similarity};
use memscope_core::probe::{entropy_curves, DEFAULT_MAX_STEP};
use memscope_core::split::{build_relative_split, build_split, SplitError, SplitSpec};
use memscope_core::stats::{ks_test, roc_auc, select_threshold, seven_gram_overlap};
use memscope_core::{
    validate_trace, EvalResult, Example, Label, Method, MethodConfig, SplitMethod, SplitOutcome,
    SplitSet, TokenFrequencyTable, TokenTrace,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::adapter::{perturbed_variants, DumpSource, HttpSource, TraceSource};
use crate::config::ExperimentConfig;
use crate::io::{
    ingest_corpus, read_frequency_table, read_results, serialize_results, write_jsonl, FormatError,
};
use crate::report::{emit_reports, ReportOptions, TaggedCurves};

/// Fraction of keys allowed to fail before a run aborts.
pub const FAILURE_BUDGET: f64 = 0.10;
/// Fraction of each class used to pick the threshold.
pub const TRAIN_FRACTION: f64 = 0.8;
/// Significance level of the per-result KS test.
pub const KS_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("corpus for domain `{domain}` contains example `{id}` of domain `{found}`")]
    ForeignDomain {
        domain: String,
        id: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failure budget exceeded: {failed} of {total} keys failed")]
    BudgetExceeded { failed: usize, total: usize },
    #[error("no result to report: every key failed")]
    NothingSucceeded,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One cell of the run matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub method: Method,
    pub split_id: String,
    pub model_tag: String,
    pub seed: u64,
}

impl RunKey {
    /// Stable string form, `method|split_id|model_tag|seed`.
    pub fn encode(&self) -> String {
        format!(
            "{}|{}|{}|{}",
            self.method, self.split_id, self.model_tag, self.seed
        )
    }
}

impl Ord for RunKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (
            self.method.as_str(),
            &self.split_id,
            &self.model_tag,
            self.seed,
        )
            .cmp(&(
                other.method.as_str(),
                &other.split_id,
                &other.model_tag,
                other.seed,
            ))
    }
}

impl PartialOrd for RunKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Member and non-member corpora of every configured domain.
#[derive(Debug, Clone, Default)]
pub struct Corpora {
    pub members: Vec<Example>,
    pub nonmembers: Vec<Example>,
}

pub fn load_corpora(cfg: &ExperimentConfig) -> Result<Corpora, RunError> {
    let mut out = Corpora::default();
    for (domain, paths) in &cfg.corpora {
        for (path, label) in [
            (&paths.members, Label::Member),
            (&paths.nonmembers, Label::Nonmember),
        ] {
            let corpus = ingest_corpus(path, label)?;
            if let Some(e) = corpus.iter().find(|e| &e.domain != domain) {
                return Err(RunError::ForeignDomain {
                    domain: domain.clone(),
                    id: e.example_id.clone(),
                    found: e.domain.clone(),
                });
            }
            match label {
                Label::Member => out.members.extend(corpus),
                Label::Nonmember => out.nonmembers.extend(corpus),
            }
        }
    }
    Ok(out)
}

/// Built splits and the keys to run over them.
#[derive(Debug, Clone, Default)]
pub struct Plan {
    /// Sorted by (method name, split id, model tag, seed).
    pub keys: Vec<RunKey>,
    /// Built split per `(split_id, seed)`.
    pub splits: BTreeMap<(String, u64), SplitSet>,
    /// Why splits were left out, one line per split id.
    pub rejections: Vec<String>,
}

fn split_specs(
    cfg: &ExperimentConfig,
    domain: &str,
    method: SplitMethod,
    seed: u64,
) -> Vec<SplitSpec> {
    cfg.splits
        .ranges
        .iter()
        .map(|&[lo, hi]| SplitSpec {
            min_examples: cfg.min_examples,
            sample_size: cfg.sample_size,
            ..SplitSpec::new(method, domain, lo, hi, seed)
        })
        .collect()
}

/// Builds every configured split and crosses the built ones with methods,
/// model tags and seeds. Rejected splits are logged and left out.
pub fn plan_matrix(cfg: &ExperimentConfig, corpora: &Corpora) -> Result<Plan, RunError> {
    let mut plan = Plan::default();
    let mut rejected = BTreeSet::new();
    let mut reject = |id: String, reason: String, plan: &mut Plan| {
        if rejected.insert(id) {
            warn!("split rejected: {reason}");
            plan.rejections.push(reason);
        }
    };
    for domain in cfg.corpora.keys() {
        for &method in &cfg.splits.methods {
            for &seed in &cfg.seeds {
                let outcomes = match method {
                    SplitMethod::Relative => match build_relative_split(
                        &corpora.members,
                        &corpora.nonmembers,
                        domain,
                        seed,
                        cfg.min_examples,
                        cfg.sample_size,
                    ) {
                        Ok(o) => o,
                        Err(
                            e @ (SplitError::DegenerateDeciles { .. }
                            | SplitError::EmptyNonmembers(_)),
                        ) => {
                            reject(
                                format!("relative:{domain}"),
                                format!("relative:{domain}: {e}"),
                                &mut plan,
                            );
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    },
                    _ => split_specs(cfg, domain, method, seed)
                        .iter()
                        .map(|s| build_split(&corpora.members, &corpora.nonmembers, s))
                        .collect::<Result<_, _>>()?,
                };
                for outcome in outcomes {
                    match outcome {
                        SplitOutcome::Built(s) => {
                            plan.splits.insert((s.split_id(), seed), s);
                        }
                        SplitOutcome::Rejected(r) => {
                            reject(r.spec.split_id(), r.to_string(), &mut plan)
                        }
                    }
                }
            }
        }
    }
    for &method in &cfg.methods {
        for (split_id, seed) in plan.splits.keys() {
            for tag in &cfg.model_tags {
                plan.keys.push(RunKey {
                    method,
                    split_id: split_id.clone(),
                    model_tag: tag.clone(),
                    seed: *seed,
                });
            }
        }
    }
    plan.keys.sort();
    plan.rejections.sort();
    info!(
        "planned {} keys over {} split instances ({} splits rejected)",
        plan.keys.len(),
        plan.splits.len(),
        plan.rejections.len()
    );
    Ok(plan)
}

/// Examples the adapter must trace for `plan`, including perturbation
/// variants when the polarized-distance method runs. Sorted by id.
pub fn needed_examples(plan: &Plan, methods: &[Method], cfg: &MethodConfig) -> Vec<Example> {
    let mut out: BTreeMap<String, Example> = BTreeMap::new();
    for s in plan.splits.values() {
        for e in s.members.iter().chain(&s.nonmembers) {
            if methods.contains(&Method::Pac) && !out.contains_key(&e.example_id) {
                for v in perturbed_variants(e, cfg) {
                    out.insert(v.example_id.clone(), v);
                }
            }
            out.entry(e.example_id.clone()).or_insert_with(|| e.clone());
        }
    }
    out.into_values().collect()
}

/// Cache record. Floats are stored as shortest round-trip strings since
/// thresholds may be infinite, which JSON numbers cannot hold.
#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: RunKey,
    digest: String,
    domain: String,
    values: [String; 8],
}

impl CacheLine {
    fn new(key: &RunKey, digest: &str, r: &EvalResult) -> Self {
        let v = [
            r.auc,
            r.threshold,
            r.val_tpr,
            r.val_fpr,
            r.text_length_stat,
            r.ngram_overlap_stat,
            r.ks_statistic,
            r.ks_p_value,
        ];
        Self {
            key: key.clone(),
            digest: digest.to_string(),
            domain: r.domain.clone(),
            values: v.map(|x| format!("{x:?}")),
        }
    }

    fn result(&self) -> Option<EvalResult> {
        let mut v = [0.0; 8];
        for (slot, s) in v.iter_mut().zip(&self.values) {
            *slot = s.parse().ok()?;
        }
        Some(EvalResult {
            method: self.key.method,
            split_id: self.key.split_id.clone(),
            domain: self.domain.clone(),
            model_tag: self.key.model_tag.clone(),
            seed: self.key.seed,
            auc: v[0],
            threshold: v[1],
            val_tpr: v[2],
            val_fpr: v[3],
            text_length_stat: v[4],
            ngram_overlap_stat: v[5],
            ks_statistic: v[6],
            ks_p_value: v[7],
        })
    }
}

/// Append-only JSONL store of finished keys.
pub struct ResultCache {
    path: PathBuf,
    file: File,
    entries: BTreeMap<String, (String, EvalResult)>,
}

impl ResultCache {
    /// Opens or creates the cache. A torn final line from an interrupted
    /// write is cut off; other unreadable lines are skipped with a warning.
    pub fn open(path: &Path) -> Result<Self, RunError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(path)(e)),
        };
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            warn!("{}: dropping torn trailing line", path.display());
            let f = OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(io_err(path))?;
            f.set_len(complete as u64).map_err(io_err(path))?;
        }
        let mut entries = BTreeMap::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let parsed = serde_json::from_slice::<CacheLine>(line)
                .ok()
                .and_then(|c| Some((c.key.encode(), c.digest.clone(), c.result()?)));
            match parsed {
                Some((k, d, r)) => {
                    entries.insert(k, (d, r));
                }
                None => warn!(
                    "{}:{}: skipping unreadable cache line",
                    path.display(),
                    i + 1
                ),
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            entries,
        })
    }

    /// Cached result of `key` if it was computed from inputs with `digest`.
    pub fn get(&self, key: &RunKey, digest: &str) -> Option<&EvalResult> {
        self.entries
            .get(&key.encode())
            .filter(|(d, _)| d == digest)
            .map(|(_, r)| r)
    }

    /// Appends one finished key as a single line.
    pub fn append(
        &mut self,
        key: &RunKey,
        digest: &str,
        result: &EvalResult,
    ) -> Result<(), RunError> {
        let mut line = serde_json::to_vec(&CacheLine::new(key, digest, result))
            .expect("cache lines serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.sync_data().map_err(io_err(&self.path))?;
        self.entries
            .insert(key.encode(), (digest.to_string(), result.clone()));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-split quantities shared by every key on the split.
struct SplitFacts {
    manifest_digest: String,
    text_length_stat: f64,
    ngram_overlap_stat: f64,
}

fn split_facts(split: &SplitSet) -> SplitFacts {
    let manifest = serde_json::to_vec(split).expect("splits serialize");
    SplitFacts {
        manifest_digest: hex::encode(Sha256::digest(&manifest)),
        text_length_stat: split.mean_length(),
        ngram_overlap_stat: seven_gram_overlap(&split.members, &split.nonmembers),
    }
}

/// Inputs shared by every key of a run.
pub struct ExecutionContext<'a> {
    pub source: &'a dyn TraceSource,
    pub frequencies: Option<&'a TokenFrequencyTable>,
    /// Content digest of the frequency table file, if any.
    pub frequency_digest: Option<String>,
    pub method_config: MethodConfig,
    pub workers: usize,
}

/// What happened to every key of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    /// Results of the succeeded keys, in plan order.
    pub results: Vec<EvalResult>,
    /// Failed keys with their error, in plan order.
    pub failures: Vec<(RunKey, String)>,
    /// Keys computed in this call (not served from the cache).
    pub computed: usize,
    pub aborted: bool,
}

fn key_digest(
    key: &RunKey,
    facts: &SplitFacts,
    fingerprint: &str,
    ctx: &ExecutionContext<'_>,
) -> String {
    let mut h = Sha256::new();
    for part in [
        key.encode().as_str(),
        &facts.manifest_digest,
        fingerprint,
        &serde_json::to_string(&ctx.method_config).expect("config serializes"),
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    if required_inputs(key.method).contains(&InputKind::FrequencyTable) {
        h.update(ctx.frequency_digest.as_deref().unwrap_or("none").as_bytes());
    }
    hex::encode(h.finalize())
}

fn check_traces(
    traces: &BTreeMap<String, TokenTrace>,
    tokens: &BTreeMap<&str, &[u32]>,
    vocab_size: Option<usize>,
    what: &str,
) -> Result<(), String> {
    for (id, t) in traces {
        let Some(toks) = tokens.get(id.as_str()) else {
            continue;
        };
        let report = validate_trace(t, toks, vocab_size);
        if !report.is_valid() {
            let problems: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
            return Err(format!(
                "invalid {what} for `{id}`: {}",
                problems.join("; ")
            ));
        }
    }
    Ok(())
}

fn evaluate_key(
    key: &RunKey,
    split: &SplitSet,
    facts: &SplitFacts,
    ctx: &ExecutionContext<'_>,
) -> Result<EvalResult, String> {
    let examples: Vec<&Example> = split.members.iter().chain(&split.nonmembers).collect();
    let gathered = ctx
        .source
        .gather(&key.model_tag, key.method, &examples, &ctx.method_config)
        .map_err(|e| e.to_string())?;
    let mut inputs = gathered.inputs;
    let needs_traces = required_inputs(key.method).iter().any(|k| {
        matches!(
            k,
            InputKind::Trace | InputKind::ConditionedTrace | InputKind::PerturbedTraces
        )
    });
    if needs_traces {
        let vocab = ctx
            .source
            .vocab_size(&key.model_tag)
            .map_err(|e| e.to_string())?;
        let tokens: BTreeMap<&str, &[u32]> = examples
            .iter()
            .map(|e| (e.example_id.as_str(), e.tokens.as_slice()))
            .collect();
        check_traces(&inputs.traces, &tokens, vocab, "trace")?;
        check_traces(&inputs.conditioned, &tokens, vocab, "conditioned trace")?;
        for (id, variants) in &inputs.perturbed {
            for (j, t) in variants.iter().enumerate() {
                let one = BTreeMap::from([(id.clone(), t.clone())]);
                check_traces(&one, &tokens, vocab, &format!("perturbed trace {j}"))?;
            }
        }
    }
    inputs.frequencies = ctx.frequencies;
    inputs.similarity = gathered.similarity.as_ref().map(|s| s as &dyn Similarity);
    let scores =
        score_split(split, key.method, &inputs, &ctx.method_config).map_err(|e| e.to_string())?;
    let (m, n) = (scores.member_values(), scores.nonmember_values());
    let auc = roc_auc(&m, &n).map_err(|e| e.to_string())?;
    let sel = select_threshold(&m, &n, TRAIN_FRACTION, key.seed).map_err(|e| e.to_string())?;
    let ks = ks_test(&m, &n, KS_ALPHA).map_err(|e| e.to_string())?;
    Ok(EvalResult {
        method: key.method,
        split_id: key.split_id.clone(),
        domain: split.spec.domain.clone(),
        model_tag: key.model_tag.clone(),
        seed: key.seed,
        auc,
        threshold: sel.threshold,
        val_tpr: sel.val_tpr,
        val_fpr: sel.val_fpr,
        text_length_stat: facts.text_length_stat,
        ngram_overlap_stat: facts.ngram_overlap_stat,
        ks_statistic: ks.statistic,
        ks_p_value: ks.p_value,
    })
}

/// Runs every key of `plan` not already in `cache`, on `ctx.workers`
/// threads, appending each success to the cache as it finishes.
///
/// A failing key is recorded and the run continues; once more than
/// [`FAILURE_BUDGET`] of all keys have failed no new keys are started.
pub fn execute(
    plan: &Plan,
    ctx: &ExecutionContext<'_>,
    cache: &mut ResultCache,
) -> Result<Execution, RunError> {
    let facts: BTreeMap<&(String, u64), SplitFacts> = plan
        .splits
        .iter()
        .map(|(k, s)| (k, split_facts(s)))
        .collect();
    let mut fingerprints: BTreeMap<&str, Result<String, String>> = BTreeMap::new();
    for key in &plan.keys {
        fingerprints
            .entry(key.model_tag.as_str())
            .or_insert_with(|| {
                ctx.source
                    .fingerprint(&key.model_tag)
                    .map_err(|e| e.to_string())
            });
    }

    let mut digests = Vec::with_capacity(plan.keys.len());
    let mut pending = Vec::new();
    let mut failures: BTreeMap<usize, String> = BTreeMap::new();
    for (i, key) in plan.keys.iter().enumerate() {
        let split_key = (key.split_id.clone(), key.seed);
        match &fingerprints[key.model_tag.as_str()] {
            Ok(fp) => {
                let d = key_digest(key, &facts[&split_key], fp, ctx);
                if cache.get(key, &d).is_none() {
                    pending.push(i);
                }
                digests.push(Some(d));
            }
            Err(e) => {
                failures.insert(i, e.clone());
                digests.push(None);
            }
        }
    }
    let total = plan.keys.len();
    let over_budget = |failed: usize| failed as f64 > FAILURE_BUDGET * total as f64;
    info!(
        "{} keys cached, {} to compute",
        total - pending.len() - failures.len(),
        pending.len()
    );

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(over_budget(failures.len()));
    let mut computed = 0usize;
    let mut write_error = None;
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<EvalResult, String>)>();
        for _ in 0..ctx.workers.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, stop, pending, facts) = (&next, &stop, &pending, &facts);
            scope.spawn(move || loop {
                if stop.load(AtomicOrdering::SeqCst) {
                    break;
                }
                let Some(&i) = pending.get(next.fetch_add(1, AtomicOrdering::SeqCst)) else {
                    break;
                };
                let key = &plan.keys[i];
                let split_key = (key.split_id.clone(), key.seed);
                let out = evaluate_key(key, &plan.splits[&split_key], &facts[&split_key], ctx);
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, out) in rx {
            let key = &plan.keys[i];
            match out {
                Ok(r) => {
                    computed += 1;
                    let digest = digests[i].as_deref().expect("pending keys have digests");
                    if let Err(e) = cache.append(key, digest, &r) {
                        write_error.get_or_insert(e);
                        stop.store(true, AtomicOrdering::SeqCst);
                    }
                }
                Err(e) => {
                    warn!("key {} failed: {e}", key.encode());
                    failures.insert(i, e);
                    if over_budget(failures.len()) {
                        stop.store(true, AtomicOrdering::SeqCst);
                    }
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }

    let aborted = over_budget(failures.len());
    let results = plan
        .keys
        .iter()
        .zip(&digests)
        .filter_map(|(k, d)| d.as_deref().and_then(|d| cache.get(k, d)).cloned())
        .collect();
    Ok(Execution {
        results,
        failures: failures
            .into_iter()
            .map(|(i, e)| (plan.keys[i].clone(), e))
            .collect(),
        computed,
        aborted,
    })
}

#[derive(Serialize, Deserialize)]
struct FailureLine {
    key: RunKey,
    error: String,
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    keys: usize,
    split_instances: usize,
    rejections: &'a [String],
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    split_id: String,
    seed: u64,
    spec: &'a SplitSpec,
    member_ids: Vec<&'a str>,
    nonmember_ids: Vec<&'a str>,
}

#[derive(Serialize, Deserialize)]
struct CachedCurves {
    digest: String,
    curves: Vec<TaggedCurves>,
}

/// Entropy curves per model tag over every example of the built splits,
/// served from `cache_path` when inputs are unchanged.
fn entropy_report(
    cfg: &ExperimentConfig,
    plan: &Plan,
    ctx: &ExecutionContext<'_>,
    cache_path: &Path,
) -> Result<Vec<TaggedCurves>, RunError> {
    let mut examples: BTreeMap<&str, &Example> = BTreeMap::new();
    for s in plan.splits.values() {
        for e in s.members.iter().chain(&s.nonmembers) {
            examples.insert(&e.example_id, e);
        }
    }
    let mut h = Sha256::new();
    for id in examples.keys() {
        h.update(id.as_bytes());
        h.update([0]);
    }
    for tag in &cfg.model_tags {
        match ctx.source.fingerprint(tag) {
            Ok(fp) => h.update(fp.as_bytes()),
            Err(_) => h.update(b"unavailable"),
        }
    }
    let digest = hex::encode(h.finalize());
    if let Ok(text) = std::fs::read_to_string(cache_path) {
        if let Ok(c) = serde_json::from_str::<CachedCurves>(&text) {
            if c.digest == digest {
                return Ok(c.curves);
            }
        }
    }
    let all: Vec<&Example> = examples.values().copied().collect();
    let mut curves = Vec::new();
    for tag in &cfg.model_tags {
        let gathered = match ctx
            .source
            .gather(tag, Method::Loss, &all, &ctx.method_config)
        {
            Ok(g) => g,
            Err(e) => {
                warn!("entropy curves for `{tag}` skipped: {e}");
                continue;
            }
        };
        let traces = &gathered.inputs.traces;
        let class = |label: Label| -> Vec<TokenTrace> {
            all.iter()
                .filter(|e| e.label == label)
                .filter_map(|e| traces.get(&e.example_id).cloned())
                .collect()
        };
        match entropy_curves(
            &class(Label::Member),
            &class(Label::Nonmember),
            DEFAULT_MAX_STEP,
        ) {
            Ok(c) => curves.push(TaggedCurves {
                model_tag: tag.clone(),
                curves: c,
            }),
            Err(e) => warn!("entropy curves for `{tag}` skipped: {e}"),
        }
    }
    let text = serde_json::to_string(&CachedCurves {
        digest,
        curves: curves.clone(),
    })
    .expect("curves serialize");
    std::fs::write(cache_path, text).map_err(io_err(cache_path))?;
    Ok(curves)
}

/// Everything a finished run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub keys: usize,
    pub computed: usize,
    pub failures: usize,
    pub results_path: PathBuf,
    pub report_dir: PathBuf,
}

/// Source for a config: the dump directory when set, live adapters otherwise.
pub fn trace_source(cfg: &ExperimentConfig) -> Result<Box<dyn TraceSource>, RunError> {
    if let Some(dir) = &cfg.inputs.trace_dir {
        return Ok(Box::new(DumpSource::new(dir)));
    }
    let endpoints: BTreeMap<String, String> = cfg
        .model_tags
        .iter()
        .filter_map(|t| cfg.adapter_url(t).map(|u| (t.clone(), u.to_string())))
        .collect();
    let shots = match &cfg.inputs.recall_shots {
        Some(p) => ingest_corpus(p, Label::Nonmember)?
            .into_iter()
            .map(|e| e.text)
            .collect(),
        None => Vec::new(),
    };
    Ok(Box::new(HttpSource::new(
        &endpoints,
        cfg.inputs.reference_url.as_deref(),
        shots,
        cfg.inputs.semantic_similarity,
        cfg.inputs.max_in_flight,
    )))
}

/// Full pipeline: plan, execute with the cache under `output_dir/cache`,
/// then write `results.csv`, `failures.jsonl`, `plan.json`,
/// `splits.jsonl`, `needed_examples.jsonl` and the `reports/` bundle.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    source: &dyn TraceSource,
) -> Result<RunSummary, RunError> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let corpora = load_corpora(cfg)?;
    let plan = plan_matrix(cfg, &corpora)?;

    let summary = serde_json::to_vec_pretty(&PlanSummary {
        keys: plan.keys.len(),
        split_instances: plan.splits.len(),
        rejections: &plan.rejections,
    })
    .expect("plan summary serializes");
    let plan_path = out.join("plan.json");
    std::fs::write(&plan_path, summary).map_err(io_err(&plan_path))?;
    let manifests: Vec<SplitManifest> = plan
        .splits
        .iter()
        .map(|((id, seed), s)| SplitManifest {
            split_id: id.clone(),
            seed: *seed,
            spec: &s.spec,
            member_ids: s.members.iter().map(|e| e.example_id.as_str()).collect(),
            nonmember_ids: s.nonmembers.iter().map(|e| e.example_id.as_str()).collect(),
        })
        .collect();
    write_jsonl(&out.join("splits.jsonl"), &manifests)?;
    write_jsonl(
        &out.join("needed_examples.jsonl"),
        &needed_examples(&plan, &cfg.methods, &cfg.method_config),
    )?;

    let (frequencies, frequency_digest) = match &cfg.inputs.frequency_table {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            (
                Some(read_frequency_table(p)?),
                Some(hex::encode(Sha256::digest(&bytes))),
            )
        }
        None => (None, None),
    };
    let ctx = ExecutionContext {
        source,
        frequencies: frequencies.as_ref(),
        frequency_digest,
        method_config: cfg.method_config.clone(),
        workers: cfg.workers,
    };
    let mut cache = ResultCache::open(&out.join("cache").join("results.jsonl"))?;
    let exec = execute(&plan, &ctx, &mut cache)?;

    let failure_lines: Vec<FailureLine> = exec
        .failures
        .iter()
        .map(|(key, error)| FailureLine {
            key: key.clone(),
            error: error.clone(),
        })
        .collect();
    write_jsonl(&out.join("failures.jsonl"), &failure_lines)?;
    if exec.aborted {
        return Err(RunError::BudgetExceeded {
            failed: exec.failures.len(),
            total: plan.keys.len(),
        });
    }
    if exec.results.is_empty() {
        return Err(RunError::NothingSucceeded);
    }
    let results_path = out.join("results.csv");
    serialize_results(&exec.results, &results_path)?;
    // Reports derive from the table as written, so `report` on the CSV
    // reproduces them exactly.
    let rows = read_results(&results_path)?;

    let trace_methods = cfg
        .methods
        .iter()
        .any(|m| required_inputs(*m).contains(&InputKind::Trace));
    let curves = if trace_methods {
        entropy_report(cfg, &plan, &ctx, &out.join("cache").join("entropy.json"))?
    } else {
        Vec::new()
    };
    let report_dir = out.join("reports");
    emit_reports(
        &rows,
        &curves,
        &ReportOptions {
            model_tags: cfg.model_tags.clone(),
            ..ReportOptions::default()
        },
        &report_dir,
    )?;
    Ok(RunSummary {
        keys: plan.keys.len(),
        computed: exec.computed,
        failures: exec.failures.len(),
        results_path,
        report_dir,
    })
}
