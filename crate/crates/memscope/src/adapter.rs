//! Inputs from the inference adapter: its HTTP protocol, and the two ways a
//! run obtains traces (JSONL dump directory or live adapter).

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use memscope_core::features::{
    perturb_tokens, required_inputs, InputKind, ScoringInputs, Similarity,
};
use memscope_core::{
    Example, GenerationRecord, Label, LayerEmbedding, Method, MethodConfig, TokenId, TokenTrace,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::{read_keyed, FormatError};

/// Longest conditioned input the adapter may build, in tokens.
pub const CONDITIONED_MAX_LENGTH: usize = 1000;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("{url}: {message}")]
    Http { url: String, message: String },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("adapter returned {field} for `{example_id}` that does not match the request")]
    Mismatch {
        example_id: String,
        field: &'static str,
    },
}

/// `GET /meta` response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub model_id: String,
    pub vocab_size: usize,
    pub context_length: usize,
}

/// Body of `/trace`, `/hidden_states` and `/gradient`. Token ids are
/// authoritative; `text` is omitted for token-level variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRequest {
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub tokens: Vec<TokenId>,
}

impl TraceRequest {
    pub fn for_example(e: &Example) -> Self {
        Self {
            example_id: e.example_id.clone(),
            text: Some(e.text.clone()),
            tokens: e.tokens.clone(),
        }
    }
}

/// Body of `/trace_conditioned`. The adapter drops shots from the front
/// until shots plus target fit in `max_length` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedRequest {
    pub example_id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
    pub shots: Vec<String>,
    pub max_length: usize,
}

/// Body of `/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub example_id: String,
    pub prefix_tokens: Vec<TokenId>,
    pub reference_continuation: Vec<TokenId>,
    pub n: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub include_greedy: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRequest {
    pub candidate: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimilarityResponse {
    similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GradientResponse {
    gradient_norm: f64,
}

/// Transformer probe settings sent with `/probe_train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub epochs: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            layers: 4,
            heads: 8,
            epochs: 4,
            train_fraction: 0.8,
            seed: memscope_core::DEFAULT_SEEDS[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainRequest {
    pub embeddings: Vec<LayerEmbedding>,
    pub labels: BTreeMap<String, Label>,
    pub config: ProbeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainResponse {
    pub accuracy: f64,
    pub config: ProbeConfig,
}

/// Counting gate bounding concurrent requests.
struct Gate {
    limit: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
            while *busy >= self.limit {
                busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
            }
            *busy += 1;
        }
        let out = f();
        *self.busy.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.freed.notify_one();
        out
    }
}

/// Blocking client for one adapter instance.
pub struct AdapterClient {
    base: String,
    agent: ureq::Agent,
    gate: Gate,
}

impl AdapterClient {
    pub fn new(base_url: &str, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
            gate: Gate {
                limit: max_in_flight.max(1),
                busy: Mutex::new(0),
                freed: Condvar::new(),
            },
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn http_error(&self, path: &str, e: ureq::Error) -> AdapterError {
        AdapterError::Http {
            url: format!("{}{path}", self.base),
            message: e.to_string(),
        }
    }

    fn post<B: Serialize, T: serde::de::DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, AdapterError> {
        self.gate.run(|| {
            self.agent
                .post(&format!("{}{path}", self.base))
                .send_json(body)
                .and_then(|r| r.into_body().read_json())
                .map_err(|e| self.http_error(path, e))
        })
    }

    pub fn meta(&self) -> Result<AdapterMeta, AdapterError> {
        self.gate.run(|| {
            self.agent
                .get(&format!("{}/meta", self.base))
                .call()
                .and_then(|r| r.into_body().read_json())
                .map_err(|e| self.http_error("/meta", e))
        })
    }

    pub fn trace(&self, req: &TraceRequest) -> Result<TokenTrace, AdapterError> {
        let t: TokenTrace = self.post("/trace", req)?;
        check_id(&req.example_id, &t.example_id)?;
        Ok(t)
    }

    pub fn trace_conditioned(&self, req: &ConditionedRequest) -> Result<TokenTrace, AdapterError> {
        let t: TokenTrace = self.post("/trace_conditioned", req)?;
        check_id(&req.example_id, &t.example_id)?;
        Ok(t)
    }

    pub fn generate(&self, req: &GenerateRequest) -> Result<GenerationRecord, AdapterError> {
        let g: GenerationRecord = self.post("/generate", req)?;
        check_id(&req.example_id, &g.example_id)?;
        Ok(g)
    }

    pub fn hidden_states(&self, req: &TraceRequest) -> Result<Vec<LayerEmbedding>, AdapterError> {
        let layers: Vec<LayerEmbedding> = self.post("/hidden_states", req)?;
        for l in &layers {
            check_id(&req.example_id, &l.example_id)?;
        }
        Ok(layers)
    }

    pub fn gradient(&self, req: &TraceRequest) -> Result<f64, AdapterError> {
        let r: GradientResponse = self.post("/gradient", req)?;
        Ok(r.gradient_norm)
    }

    pub fn similarity(
        &self,
        candidate: &[TokenId],
        reference: &[TokenId],
    ) -> Result<f64, AdapterError> {
        let r: SimilarityResponse = self.post(
            "/similarity",
            &SimilarityRequest {
                candidate: candidate.to_vec(),
                reference: reference.to_vec(),
            },
        )?;
        Ok(r.similarity)
    }

    pub fn probe_train(&self, req: &ProbeTrainRequest) -> Result<ProbeTrainResponse, AdapterError> {
        self.post("/probe_train", req)
    }
}

fn check_id(expected: &str, actual: &str) -> Result<(), AdapterError> {
    if expected != actual {
        return Err(AdapterError::Mismatch {
            example_id: expected.to_string(),
            field: "example_id",
        });
    }
    Ok(())
}

/// Id under which the trace of perturbation variant `j` of `example_id` is
/// stored.
pub fn perturbed_id(example_id: &str, j: usize) -> String {
    format!("{example_id}#swap{j}")
}

/// Per-example seed for perturbations and sampling, independent of the run
/// seed so that every split containing the example shares its variants.
pub fn example_seed(example_id: &str) -> u64 {
    let d = Sha256::digest(example_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

/// Token-swapped variants of `example` scored by the polarized-distance
/// method, as examples with their storage ids.
pub fn perturbed_variants(example: &Example, cfg: &MethodConfig) -> Vec<Example> {
    perturb_tokens(
        &example.tokens,
        cfg.pac_swap_fraction,
        cfg.pac_num_perturbations,
        example_seed(&example.example_id),
    )
    .into_iter()
    .enumerate()
    .map(|(j, tokens)| Example {
        example_id: perturbed_id(&example.example_id, j),
        domain: example.domain.clone(),
        label: example.label,
        text: String::new(),
        tokens,
    })
    .collect()
}

/// Prefix/continuation cut used for generation requests: the first half of
/// the tokens is the prompt.
pub fn generation_cut(tokens: &[TokenId]) -> (&[TokenId], &[TokenId]) {
    tokens.split_at(tokens.len() / 2)
}

/// Similarity values fetched ahead of scoring, looked up by token pair.
/// Unknown pairs yield NaN, which the scorer rejects.
#[derive(Debug, Default)]
pub struct SimilarityTable(HashMap<(Vec<TokenId>, Vec<TokenId>), f64>);

impl Similarity for SimilarityTable {
    fn similarity(&self, candidate: &[TokenId], reference: &[TokenId]) -> f64 {
        self.0
            .get(&(candidate.to_vec(), reference.to_vec()))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

/// Inputs fetched for one method over a set of examples.
pub struct Gathered {
    pub inputs: ScoringInputs<'static>,
    pub similarity: Option<SimilarityTable>,
}

/// Where a run obtains per-example model outputs.
pub trait TraceSource: Send + Sync {
    /// Identity of everything this source serves for `model_tag`; part of
    /// the cache digest. Must not contact the adapter.
    fn fingerprint(&self, model_tag: &str) -> Result<String, AdapterError>;

    /// Vocabulary size of the model, when known.
    fn vocab_size(&self, model_tag: &str) -> Result<Option<usize>, AdapterError>;

    /// Inputs `method` needs for `examples`. Absent records are left out;
    /// the scorer reports them.
    fn gather(
        &self,
        model_tag: &str,
        method: Method,
        examples: &[&Example],
        cfg: &MethodConfig,
    ) -> Result<Gathered, AdapterError>;
}

fn hash_files(paths: &[PathBuf]) -> Result<String, AdapterError> {
    let mut h = Sha256::new();
    for p in paths {
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        h.update(name.as_bytes());
        match std::fs::read(p) {
            Ok(bytes) => {
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => h.update(b"absent"),
            Err(source) => {
                return Err(FormatError::Io {
                    path: p.clone(),
                    source,
                }
                .into())
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Per-model files of a dump directory.
struct TagDump {
    traces: BTreeMap<String, TokenTrace>,
    conditioned: BTreeMap<String, TokenTrace>,
    generations: BTreeMap<String, GenerationRecord>,
    meta: Option<AdapterMeta>,
    fingerprint: String,
}

/// Reads inputs from `{root}/{model_tag}/`:
///
/// * `traces.jsonl`: `TokenTrace` per example, perturbation variants under
///   [`perturbed_id`];
/// * `traces_conditioned.jsonl`: conditioned `TokenTrace` per example;
/// * `generations.jsonl`: `GenerationRecord` per example;
/// * `meta.json`: optional `AdapterMeta`.
///
/// Missing files count as empty.
pub struct DumpSource {
    root: PathBuf,
    loaded: Mutex<BTreeMap<String, Arc<TagDump>>>,
}

pub const DUMP_FILES: [&str; 4] = [
    "traces.jsonl",
    "traces_conditioned.jsonl",
    "generations.jsonl",
    "meta.json",
];

impl DumpSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            loaded: Mutex::new(BTreeMap::new()),
        }
    }

    fn keyed<T: serde::de::DeserializeOwned>(
        path: &Path,
        key: impl Fn(&T) -> &str,
    ) -> Result<BTreeMap<String, T>, AdapterError> {
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        Ok(read_keyed(path, key)?)
    }

    fn tag(&self, model_tag: &str) -> Result<Arc<TagDump>, AdapterError> {
        let mut loaded = self.loaded.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = loaded.get(model_tag) {
            return Ok(d.clone());
        }
        let dir = self.root.join(model_tag);
        let paths: Vec<PathBuf> = DUMP_FILES.iter().map(|f| dir.join(f)).collect();
        let meta_path = &paths[3];
        let meta = if meta_path.exists() {
            let text = std::fs::read_to_string(meta_path).map_err(|source| FormatError::Io {
                path: meta_path.clone(),
                source,
            })?;
            Some(serde_json::from_str(&text).map_err(|e| FormatError::Parse {
                path: meta_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?)
        } else {
            None
        };
        let dump = Arc::new(TagDump {
            traces: Self::keyed(&paths[0], |t: &TokenTrace| &t.example_id)?,
            conditioned: Self::keyed(&paths[1], |t: &TokenTrace| &t.example_id)?,
            generations: Self::keyed(&paths[2], |g: &GenerationRecord| &g.example_id)?,
            meta,
            fingerprint: hash_files(&paths)?,
        });
        loaded.insert(model_tag.to_string(), dump.clone());
        Ok(dump)
    }
}

impl TraceSource for DumpSource {
    fn fingerprint(&self, model_tag: &str) -> Result<String, AdapterError> {
        Ok(self.tag(model_tag)?.fingerprint.clone())
    }

    fn vocab_size(&self, model_tag: &str) -> Result<Option<usize>, AdapterError> {
        Ok(self.tag(model_tag)?.meta.as_ref().map(|m| m.vocab_size))
    }

    fn gather(
        &self,
        model_tag: &str,
        method: Method,
        examples: &[&Example],
        cfg: &MethodConfig,
    ) -> Result<Gathered, AdapterError> {
        let dump = self.tag(model_tag)?;
        let mut inputs = ScoringInputs::default();
        for &kind in required_inputs(method) {
            for e in examples {
                let id = &e.example_id;
                match kind {
                    InputKind::Trace => {
                        if let Some(t) = dump.traces.get(id) {
                            inputs.traces.insert(id.clone(), t.clone());
                        }
                    }
                    InputKind::ConditionedTrace => {
                        if let Some(t) = dump.conditioned.get(id) {
                            inputs.conditioned.insert(id.clone(), t.clone());
                        }
                    }
                    InputKind::PerturbedTraces => {
                        let variants: Option<Vec<TokenTrace>> = (0..cfg.pac_num_perturbations)
                            .map(|j| dump.traces.get(&perturbed_id(id, j)).cloned())
                            .collect();
                        if let Some(v) = variants {
                            inputs.perturbed.insert(id.clone(), v);
                        }
                    }
                    InputKind::Generation => {
                        if let Some(g) = dump.generations.get(id) {
                            inputs.generations.insert(id.clone(), g.clone());
                        }
                    }
                    InputKind::FrequencyTable => {}
                }
            }
        }
        Ok(Gathered {
            inputs,
            similarity: None,
        })
    }
}

/// Fetches inputs from live adapters, memoizing every response.
pub struct HttpSource {
    clients: BTreeMap<String, AdapterClient>,
    reference: Option<AdapterClient>,
    shots: Vec<String>,
    semantic_similarity: bool,
    traces: Mutex<HashMap<(String, String), TokenTrace>>,
    generations: Mutex<HashMap<(String, String, usize), GenerationRecord>>,
    gradients: Mutex<HashMap<(String, String), f64>>,
    meta: Mutex<HashMap<String, AdapterMeta>>,
}

impl HttpSource {
    /// `endpoints` maps model tags to adapter URLs. `shots` are the
    /// non-member texts offered as conditioning prefix, in order.
    pub fn new(
        endpoints: &BTreeMap<String, String>,
        reference_url: Option<&str>,
        shots: Vec<String>,
        semantic_similarity: bool,
        max_in_flight: usize,
    ) -> Self {
        Self {
            clients: endpoints
                .iter()
                .map(|(tag, url)| (tag.clone(), AdapterClient::new(url, max_in_flight)))
                .collect(),
            reference: reference_url.map(|u| AdapterClient::new(u, max_in_flight)),
            shots,
            semantic_similarity,
            traces: Mutex::new(HashMap::new()),
            generations: Mutex::new(HashMap::new()),
            gradients: Mutex::new(HashMap::new()),
            meta: Mutex::new(HashMap::new()),
        }
    }

    fn client(&self, model_tag: &str) -> Result<&AdapterClient, AdapterError> {
        self.clients
            .get(model_tag)
            .ok_or_else(|| AdapterError::Http {
                url: String::new(),
                message: format!("no adapter endpoint for model tag `{model_tag}`"),
            })
    }

    fn memo_trace(
        &self,
        model_tag: &str,
        key: &str,
        fetch: impl FnOnce() -> Result<TokenTrace, AdapterError>,
    ) -> Result<TokenTrace, AdapterError> {
        let k = (model_tag.to_string(), key.to_string());
        if let Some(t) = self
            .traces
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&k)
        {
            return Ok(t.clone());
        }
        let t = fetch()?;
        self.traces
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(k, t.clone());
        Ok(t)
    }

    fn plain_trace(
        &self,
        model_tag: &str,
        e: &Example,
        method: Method,
    ) -> Result<TokenTrace, AdapterError> {
        let client = self.client(model_tag)?;
        let req = TraceRequest::for_example(e);
        let mut t = self.memo_trace(model_tag, &e.example_id, || client.trace(&req))?;
        if method == Method::Refer {
            let reference = self.reference.as_ref().ok_or_else(|| AdapterError::Http {
                url: String::new(),
                message: "no reference adapter configured".into(),
            })?;
            let r = self.memo_trace("\0reference", &e.example_id, || reference.trace(&req))?;
            t.ref_loss = Some(r.loss);
        }
        if method == Method::Gradient {
            let k = (model_tag.to_string(), e.example_id.clone());
            let cached = self
                .gradients
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .get(&k)
                .copied();
            let norm = match cached {
                Some(n) => n,
                None => {
                    let n = client.gradient(&req)?;
                    self.gradients
                        .lock()
                        .unwrap_or_else(|e| e.into_inner())
                        .insert(k, n);
                    n
                }
            };
            t.gradient_norm = Some(norm);
        }
        Ok(t)
    }

    fn generation(
        &self,
        model_tag: &str,
        e: &Example,
        n: usize,
        cfg: &MethodConfig,
    ) -> Result<GenerationRecord, AdapterError> {
        let k = (model_tag.to_string(), e.example_id.clone(), n);
        if let Some(g) = self
            .generations
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&k)
        {
            return Ok(g.clone());
        }
        let (prefix, rest) = generation_cut(&e.tokens);
        let g = self.client(model_tag)?.generate(&GenerateRequest {
            example_id: e.example_id.clone(),
            prefix_tokens: prefix.to_vec(),
            reference_continuation: rest.to_vec(),
            n,
            temperature: cfg.samia_temperature,
            max_new_tokens: rest.len(),
            include_greedy: true,
            seed: example_seed(&e.example_id),
        })?;
        self.generations
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(k, g.clone());
        Ok(g)
    }
}

impl TraceSource for HttpSource {
    fn fingerprint(&self, model_tag: &str) -> Result<String, AdapterError> {
        let mut h = Sha256::new();
        h.update(self.client(model_tag)?.base_url().as_bytes());
        h.update([0]);
        if let Some(r) = &self.reference {
            h.update(r.base_url().as_bytes());
        }
        h.update([0, u8::from(self.semantic_similarity)]);
        for s in &self.shots {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn vocab_size(&self, model_tag: &str) -> Result<Option<usize>, AdapterError> {
        if let Some(m) = self
            .meta
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(model_tag)
        {
            return Ok(Some(m.vocab_size));
        }
        let m = self.client(model_tag)?.meta()?;
        let size = m.vocab_size;
        self.meta
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(model_tag.to_string(), m);
        Ok(Some(size))
    }

    fn gather(
        &self,
        model_tag: &str,
        method: Method,
        examples: &[&Example],
        cfg: &MethodConfig,
    ) -> Result<Gathered, AdapterError> {
        let client = self.client(model_tag)?;
        let mut inputs = ScoringInputs::default();
        let mut similarity = None;
        for e in examples {
            let id = &e.example_id;
            for &kind in required_inputs(method) {
                match kind {
                    InputKind::Trace => {
                        inputs
                            .traces
                            .insert(id.clone(), self.plain_trace(model_tag, e, method)?);
                    }
                    InputKind::ConditionedTrace => {
                        let req = ConditionedRequest {
                            example_id: id.clone(),
                            text: e.text.clone(),
                            tokens: e.tokens.clone(),
                            shots: self
                                .shots
                                .iter()
                                .take(cfg.recall_num_shots)
                                .cloned()
                                .collect(),
                            max_length: CONDITIONED_MAX_LENGTH,
                        };
                        let t =
                            self.memo_trace(model_tag, &format!("{id}\0conditioned"), || {
                                client.trace_conditioned(&req)
                            })?;
                        inputs.conditioned.insert(id.clone(), t);
                    }
                    InputKind::PerturbedTraces => {
                        let variants = perturbed_variants(e, cfg)
                            .iter()
                            .map(|v| {
                                let req = TraceRequest {
                                    example_id: v.example_id.clone(),
                                    text: None,
                                    tokens: v.tokens.clone(),
                                };
                                self.memo_trace(model_tag, &v.example_id, || client.trace(&req))
                            })
                            .collect::<Result<Vec<_>, _>>()?;
                        inputs.perturbed.insert(id.clone(), variants);
                    }
                    InputKind::Generation => {
                        let n = if method == Method::Cdd {
                            cfg.cdd_n
                        } else {
                            cfg.samia_n
                        };
                        let g = self.generation(model_tag, e, n, cfg)?;
                        if method == Method::Samia && self.semantic_similarity {
                            let table = similarity.get_or_insert_with(SimilarityTable::default);
                            for s in &g.sampled_continuations {
                                let pair = (s.clone(), g.reference_continuation.clone());
                                if let Entry::Vacant(slot) = table.0.entry(pair) {
                                    let (candidate, reference) = slot.key();
                                    let v = client.similarity(candidate, reference)?;
                                    slot.insert(v);
                                }
                            }
                        }
                        inputs.generations.insert(id.clone(), g);
                    }
                    InputKind::FrequencyTable => {}
                }
            }
        }
        Ok(Gathered { inputs, similarity })
    }
}
