//! Synthetic experiment fixture shared by the integration tests.
#![allow(dead_code)]

pub mod fake_adapter;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use memscope::adapter::{generation_cut, AdapterMeta};
use memscope::config::parse_config;
use memscope::io::{write_frequency_table, write_jsonl};
use memscope::runner::{load_corpora, needed_examples, plan_matrix};
use memscope_core::{Example, GenerationRecord, Label, TokenFrequencyTable, TokenTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const VOCAB: u32 = 512;
pub const DOMAINS: [&str; 2] = ["code", "wiki"];

/// FNV-1a, stable across processes.
pub fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn rng_for(parts: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fnv(&parts.join("\u{1f}")))
}

pub fn corpus(domain: &str, label: Label, n: usize) -> Vec<Example> {
    let tag = if label == Label::Member { "m" } else { "n" };
    (0..n)
        .map(|i| {
            let id = format!("{domain}-{tag}{i}");
            let mut rng = rng_for(&["corpus", &id]);
            let len =
                2 + (i * 37 + fnv(domain) as usize % 11 + if tag == "m" { 0 } else { 5 }) % 298;
            let tokens: Vec<u32> = (0..len).map(|_| rng.random_range(0..VOCAB)).collect();
            let text = tokens
                .iter()
                .map(|t| format!("w{t}"))
                .collect::<Vec<_>>()
                .join(" ");
            Example {
                example_id: id,
                domain: domain.into(),
                label,
                text,
                tokens,
            }
        })
        .collect()
}

/// True when `id` (possibly a truncated or perturbed derivative) belongs to
/// a member text.
pub fn is_member(id: &str) -> bool {
    id.split('-')
        .nth(1)
        .is_some_and(|rest| rest.starts_with('m'))
}

/// A valid trace for `tokens`; members get slightly higher log-probs.
pub fn synthetic_trace(tag: &str, id: &str, tokens: &[u32], shift: f64) -> TokenTrace {
    let mut rng = rng_for(&["trace", tag, id]);
    let steps = tokens.len().saturating_sub(1);
    let bias = if is_member(id) { 0.25 } else { 0.0 } + shift;
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut lp = Vec::with_capacity(steps);
    let mut mu = Vec::with_capacity(steps);
    let mut sigma = Vec::with_capacity(steps);
    let mut entropy = Vec::with_capacity(steps);
    for _ in 0..steps {
        let m: f64 = -3.0 + noise.sample(&mut rng) * 0.3;
        let x: f64 = (m + bias + noise.sample(&mut rng)).min(-1e-3);
        lp.push(x);
        mu.push(m);
        sigma.push(0.5 + rng.random::<f64>());
        let e: f64 = 2.0 + rng.random::<f64>() * 2.0 - bias;
        entropy.push(e.clamp(0.0, (VOCAB as f64).ln()));
    }
    let loss = -lp.iter().sum::<f64>() / steps.max(1) as f64;
    TokenTrace {
        example_id: id.into(),
        logprob_target: lp,
        mu_logprob: mu,
        sigma_logprob: sigma,
        entropy,
        loss,
        ref_loss: Some(loss + 0.1 + rng.random::<f64>() * 0.2),
        gradient_norm: Some(1.0 + rng.random::<f64>() - if is_member(id) { 0.3 } else { 0.0 }),
    }
}

pub fn synthetic_generation(
    tag: &str,
    e: &Example,
    n: usize,
    temperature: f64,
) -> GenerationRecord {
    let mut rng = rng_for(&["generate", tag, &e.example_id]);
    let (prefix, reference) = generation_cut(&e.tokens);
    let keep = if is_member(&e.example_id) { 0.7 } else { 0.5 };
    let sample = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        reference
            .iter()
            .map(|&t| {
                if rng.random::<f64>() < keep {
                    t
                } else {
                    rng.random_range(0..VOCAB)
                }
            })
            .collect()
    };
    let sampled = (0..n).map(|_| sample(&mut rng)).collect();
    let greedy = sample(&mut rng);
    GenerationRecord {
        example_id: e.example_id.clone(),
        prefix_tokens: prefix.to_vec(),
        reference_continuation: reference.to_vec(),
        sampled_continuations: sampled,
        greedy_continuation: greedy,
        temperature,
        n_samples: n,
    }
}

pub struct FixtureOptions {
    pub per_class: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<&'static str>,
    pub tags: Vec<&'static str>,
    pub workers: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            per_class: 80,
            seeds: vec![1, 2],
            methods: vec![
                "loss", "refer", "zlib", "mink", "minkpp", "gradient", "recall", "dcpdd", "pac",
                "samia", "cdd",
            ],
            tags: vec!["small", "large"],
            workers: 4,
        }
    }
}

fn quoted(xs: &[impl AsRef<str>]) -> String {
    xs.iter()
        .map(|x| format!("\"{}\"", x.as_ref()))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes corpora, trace dumps for every example the plan needs, a
/// frequency table and `config.toml` under `dir`. Returns the config path.
pub fn build_fixture(dir: &Path, opts: &FixtureOptions) -> PathBuf {
    let corpora_dir = dir.join("corpora");
    let mut corpora_toml = String::new();
    for d in DOMAINS {
        let members = corpora_dir.join(format!("{d}_members.jsonl"));
        let nonmembers = corpora_dir.join(format!("{d}_nonmembers.jsonl"));
        write_jsonl(&members, &corpus(d, Label::Member, opts.per_class)).unwrap();
        write_jsonl(&nonmembers, &corpus(d, Label::Nonmember, opts.per_class)).unwrap();
        corpora_toml.push_str(&format!(
            "[corpora.{d}]\nmembers = \"corpora/{d}_members.jsonl\"\nnonmembers = \"corpora/{d}_nonmembers.jsonl\"\n\n"
        ));
    }
    let freqs: BTreeMap<u32, f64> = (0..VOCAB / 2)
        .map(|t| (t, 1.0 / (t as f64 + 2.0)))
        .collect();
    write_frequency_table(
        &dir.join("freq.jsonl"),
        &TokenFrequencyTable::new(freqs, 1e-4).unwrap(),
    )
    .unwrap();

    let seeds = opts
        .seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(", ");
    let config = format!(
        "seeds = [{seeds}]\nworkers = {}\nmin_examples = 5\nmethods = [{}]\nmodel_tags = [{}]\noutput_dir = \"out\"\n\n\
         [splits]\nranges = [[0, 100], [100, 200]]\n\n\
         [inputs]\ntrace_dir = \"traces\"\nfrequency_table = \"freq.jsonl\"\n\n{corpora_toml}",
        opts.workers,
        quoted(&opts.methods),
        quoted(&opts.tags),
    );
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, &config).unwrap();

    let cfg = parse_config(&config, dir, None).unwrap();
    let plan = plan_matrix(&cfg, &load_corpora(&cfg).unwrap()).unwrap();
    let needed = needed_examples(&plan, &cfg.methods, &cfg.method_config);
    for tag in &opts.tags {
        write_dump(
            &dir.join("traces").join(tag),
            tag,
            &needed,
            &cfg.method_config,
        );
    }
    config_path
}

pub fn write_dump(dir: &Path, tag: &str, needed: &[Example], cfg: &memscope_core::MethodConfig) {
    let traces: Vec<TokenTrace> = needed
        .iter()
        .map(|e| synthetic_trace(tag, &e.example_id, &e.tokens, 0.0))
        .collect();
    let originals: Vec<&Example> = needed
        .iter()
        .filter(|e| !e.example_id.contains('#'))
        .collect();
    let conditioned: Vec<TokenTrace> = originals
        .iter()
        .map(|e| {
            let shift = if is_member(&e.example_id) { 0.05 } else { 0.3 };
            let mut t = synthetic_trace(&format!("{tag}|cond"), &e.example_id, &e.tokens, shift);
            t.ref_loss = None;
            t.gradient_norm = None;
            t
        })
        .collect();
    let generations: Vec<GenerationRecord> = originals
        .iter()
        .map(|e| synthetic_generation(tag, e, cfg.samia_n.max(cfg.cdd_n), cfg.samia_temperature))
        .collect();
    write_jsonl(&dir.join("traces.jsonl"), &traces).unwrap();
    write_jsonl(&dir.join("traces_conditioned.jsonl"), &conditioned).unwrap();
    write_jsonl(&dir.join("generations.jsonl"), &generations).unwrap();
    let meta = AdapterMeta {
        model_id: format!("synthetic-{tag}"),
        vocab_size: VOCAB as usize,
        context_length: 2048,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string(&meta).unwrap()).unwrap();
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Relative paths whose bytes differ between two snapshots.
pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect()
}
