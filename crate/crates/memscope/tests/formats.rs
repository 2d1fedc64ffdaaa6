use std::path::Path;

use memscope::config::{parse_config, ConfigError};
use memscope::io::{
    format_decimal, ingest_corpus, read_frequency_table, read_jsonl, read_results,
    serialize_results, write_frequency_table, write_jsonl, FormatError, RESULT_COLUMNS,
};
use memscope_core::{
    EvalResult, Example, GenerationRecord, Label, Method, TokenFrequencyTable, TokenTrace,
    DEFAULT_SEEDS,
};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6f64..1e6, -1e-6f64..1e-6, Just(0.0), -1e300f64..1e300]
}

fn trace_strategy() -> impl Strategy<Value = TokenTrace> {
    (1usize..20).prop_flat_map(|n| {
        (
            "[a-z0-9@#]{1,12}",
            prop::collection::vec(finite(), n),
            prop::collection::vec(finite(), n),
            prop::collection::vec(finite(), n),
            prop::collection::vec(finite(), n),
            finite(),
            prop::option::of(finite()),
            prop::option::of(finite()),
        )
            .prop_map(
                |(id, lp, mu, sigma, entropy, loss, ref_loss, gradient_norm)| TokenTrace {
                    example_id: id,
                    logprob_target: lp,
                    mu_logprob: mu,
                    sigma_logprob: sigma,
                    entropy,
                    loss,
                    ref_loss,
                    gradient_norm,
                },
            )
    })
}

fn tokens() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(any::<u32>(), 0..12)
}

fn generation_strategy() -> impl Strategy<Value = GenerationRecord> {
    (
        "[a-z0-9]{1,8}",
        tokens(),
        tokens(),
        prop::collection::vec(tokens(), 0..4),
        tokens(),
        0.0f64..2.0,
    )
        .prop_map(
            |(id, prefix, reference, sampled, greedy, temperature)| GenerationRecord {
                example_id: id,
                prefix_tokens: prefix,
                reference_continuation: reference,
                n_samples: sampled.len(),
                sampled_continuations: sampled,
                greedy_continuation: greedy,
                temperature,
            },
        )
}

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        0.0f64..1.0,
        -1e20f64..1e20,
        -1e-9f64..1e-9,
        Just(f64::INFINITY),
        Just(f64::NEG_INFINITY),
        Just(0.0),
    ]
}

fn result_strategy() -> impl Strategy<Value = EvalResult> {
    (
        prop::sample::select(Method::ALL.to_vec()),
        "[a-z]{1,6}:[a-z, \"]{1,6}:[0-9]{1,3}-[0-9]{1,4}",
        "[a-z0-9.]{1,6}",
        any::<u64>(),
        prop::collection::vec(value(), 8),
    )
        .prop_map(|(method, split_id, tag, seed, v)| EvalResult {
            method,
            domain: split_id.split(':').nth(1).unwrap().to_string(),
            split_id,
            model_tag: tag,
            seed,
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

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 5e-9 * a.abs().max(b.abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn traces_round_trip_exactly(traces in prop::collection::vec(trace_strategy(), 0..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        write_jsonl(&path, &traces).unwrap();
        prop_assert_eq!(read_jsonl::<TokenTrace>(&path).unwrap(), traces);
    }

    #[test]
    fn generations_round_trip_exactly(gens in prop::collection::vec(generation_strategy(), 0..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        write_jsonl(&path, &gens).unwrap();
        prop_assert_eq!(read_jsonl::<GenerationRecord>(&path).unwrap(), gens);
    }

    #[test]
    fn frequency_tables_round_trip_exactly(
        freqs in prop::collection::btree_map(any::<u32>(), 1e-12f64..=1.0, 0..30),
        fallback in 1e-12f64..=1.0,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.jsonl");
        let table = TokenFrequencyTable::new(freqs, fallback).unwrap();
        write_frequency_table(&path, &table).unwrap();
        prop_assert_eq!(read_frequency_table(&path).unwrap(), table);
    }

    #[test]
    fn results_round_trip_to_printed_precision(rows in prop::collection::vec(result_strategy(), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        serialize_results(&rows, &path).unwrap();
        let back = read_results(&path).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!((&a.method, &a.split_id, &a.domain, &a.model_tag, a.seed),
                            (&b.method, &b.split_id, &b.domain, &b.model_tag, b.seed));
            for (x, y) in [
                (a.auc, b.auc), (a.threshold, b.threshold), (a.val_tpr, b.val_tpr),
                (a.val_fpr, b.val_fpr), (a.text_length_stat, b.text_length_stat),
                (a.ngram_overlap_stat, b.ngram_overlap_stat), (a.ks_statistic, b.ks_statistic),
                (a.ks_p_value, b.ks_p_value),
            ] {
                prop_assert!(close(x, y), "{} vs {}", x, y);
            }
        }
        // Printing is a fixed point after one pass.
        let again = dir.path().join("again.csv");
        serialize_results(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn decimal_rendering_reparses_close(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let back: f64 = format_decimal(x).parse().unwrap();
        prop_assert!(close(x, back), "{} -> {}", x, format_decimal(x));
    }
}

#[test]
fn results_header_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let row = EvalResult {
        method: Method::Minkpp,
        split_id: "truncate:wiki:0-100".into(),
        domain: "wiki".into(),
        model_tag: "160m".into(),
        seed: 7,
        auc: 0.5,
        threshold: f64::NEG_INFINITY,
        val_tpr: 1.0,
        val_fpr: 1.0,
        text_length_stat: 57.25,
        ngram_overlap_stat: 0.125,
        ks_statistic: 0.1,
        ks_p_value: 0.9,
    };
    serialize_results(&[row], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        format!(
            "{}\nminkpp,truncate:wiki:0-100,wiki,160m,7,0.5,-inf,1,1,57.25,0.125,0.1,0.9\n",
            RESULT_COLUMNS.join(",")
        )
    );
    assert!(matches!(
        serialize_results(&[], &path),
        Err(FormatError::NoRows { .. })
    ));
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const OK_LINE: &str = r#"{"example_id":"a","domain":"wiki","text":"hi there","tokens":[1,2]}"#;

#[test]
fn ingest_labels_and_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = write(
        d,
        "ok.jsonl",
        &format!(
            "{OK_LINE}\n\n{}\n",
            r#"{"example_id":"b","domain":"wiki","label":"nonmember","text":"x","tokens":[3]}"#
        ),
    );
    let corpus = ingest_corpus(&ok, Label::Nonmember).unwrap();
    assert_eq!(corpus.len(), 2);
    assert!(corpus.iter().all(|e| e.label == Label::Nonmember));
    assert_eq!(
        corpus[0],
        Example {
            example_id: "a".into(),
            domain: "wiki".into(),
            label: Label::Nonmember,
            text: "hi there".into(),
            tokens: vec![1, 2],
        }
    );

    let line_of =
        |name: &str, body: String, label: Label| match ingest_corpus(&write(d, name, &body), label)
        {
            Err(FormatError::Parse { line, message, .. }) => (line, message),
            Err(FormatError::DuplicateId { line, id, .. }) => (line, format!("duplicate {id}")),
            other => panic!("{name}: unexpected {other:?}"),
        };
    let (line, msg) = line_of(
        "label.jsonl",
        format!("{OK_LINE}\n{OK_LINE}"),
        Label::Member,
    );
    assert_eq!((line, msg.as_str()), (2, "duplicate a"));
    let (line, msg) = line_of(
        "mismatch.jsonl",
        r#"{"example_id":"a","domain":"w","label":"member","text":"","tokens":[1]}"#.into(),
        Label::Nonmember,
    );
    assert_eq!(line, 1);
    assert!(msg.contains("label"), "{msg}");
    let (line, msg) = line_of(
        "empty.jsonl",
        format!(
            "{OK_LINE}\n{}",
            r#"{"example_id":"z","domain":"w","text":"","tokens":[]}"#
        ),
        Label::Member,
    );
    assert_eq!((line, msg.as_str()), (2, "empty token list"));
    let (line, _) = line_of(
        "unknown.jsonl",
        r#"{"example_id":"a","domain":"w","text":"","tokens":[1],"extra":1}"#.into(),
        Label::Member,
    );
    assert_eq!(line, 1);
    let (line, _) = line_of(
        "broken.jsonl",
        format!("{OK_LINE}\n{{not json"),
        Label::Member,
    );
    assert_eq!(line, 2);
    assert!(matches!(
        ingest_corpus(&d.join("missing.jsonl"), Label::Member),
        Err(FormatError::Io { .. })
    ));
}

#[test]
fn frequency_table_needs_exactly_one_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let none = write(d, "none.jsonl", "{\"token_id\":1,\"freq\":0.5}\n");
    assert!(matches!(
        read_frequency_table(&none),
        Err(FormatError::Invalid { .. })
    ));
    let two = write(
        d,
        "two.jsonl",
        "{\"fallback_frequency\":0.1}\n{\"fallback_frequency\":0.2}\n",
    );
    assert!(matches!(
        read_frequency_table(&two),
        Err(FormatError::Parse { line: 2, .. })
    ));
    let bad = write(
        d,
        "bad.jsonl",
        "{\"token_id\":1,\"freq\":1.5}\n{\"fallback_frequency\":0.1}\n",
    );
    assert!(matches!(
        read_frequency_table(&bad),
        Err(FormatError::Invalid { .. })
    ));
    let ok = write(
        d,
        "ok.jsonl",
        "{\"token_id\":1,\"freq\":0.5}\n{\"fallback_frequency\":0.1}\n",
    );
    let t = read_frequency_table(&ok).unwrap();
    assert_eq!((t.frequency(1), t.frequency(2)), (0.5, 0.1));
}

const MINIMAL: &str = r#"
methods = ["loss", "mink"]
model_tags = ["160m"]

[corpora.wiki]
members = "m.jsonl"
nonmembers = "n.jsonl"

[inputs]
trace_dir = "traces"
"#;

#[test]
fn minimal_config_takes_defaults() {
    let cfg = parse_config(MINIMAL, Path::new("/base"), None).unwrap();
    assert_eq!(cfg.seeds, DEFAULT_SEEDS.to_vec());
    assert_eq!(cfg.min_examples, 100);
    assert_eq!(cfg.sample_size, None);
    assert!(cfg.workers >= 1);
    assert_eq!(cfg.methods, vec![Method::Loss, Method::Mink]);
    assert_eq!(cfg.splits.methods.len(), 3);
    assert_eq!(cfg.splits.ranges.len(), 10);
    assert_eq!(cfg.splits.ranges[9], [900, 1000]);
    assert_eq!(cfg.splits.ranges[0], [0, 100]);
    assert_eq!(cfg.method_config, Default::default());
    assert_eq!(cfg.output_dir, Path::new("/base/memscope-out"));
    assert_eq!(cfg.corpora["wiki"].members, Path::new("/base/m.jsonl"));
    assert_eq!(
        cfg.inputs.trace_dir.as_deref(),
        Some(Path::new("/base/traces"))
    );
    assert_eq!(cfg.inputs.max_in_flight, 4);
}

#[test]
fn unknown_keys_are_reported_together() {
    let text = MINIMAL.replace("model_tags", "modle = 1\nmodel_tags")
        + "\n[method_config]\nk_percent = 10.0\nk_percnet = 5.0\n";
    match parse_config(&text, Path::new("."), None) {
        Err(ConfigError::UnknownKeys(keys)) => {
            assert_eq!(
                keys,
                vec!["method_config.k_percnet".to_string(), "modle".to_string()]
            )
        }
        other => panic!("{other:?}"),
    }
    let text = MINIMAL.replace("trace_dir", "trace_dri");
    assert!(matches!(
        parse_config(&text, Path::new("."), None),
        Err(ConfigError::UnknownKeys(k)) if k == ["inputs.trace_dri"]
    ));
}

#[test]
fn invalid_values_are_collected() {
    let text = MINIMAL.replace(
        r#"methods = ["loss", "mink"]"#,
        "methods = []\nworkers = 0\nseeds = [1, 1]",
    );
    match parse_config(&text, Path::new("."), None) {
        Err(ConfigError::Invalid(problems)) => {
            assert!(
                problems
                    .iter()
                    .any(|p| p.contains("methods must not be empty")),
                "{problems:?}"
            );
            assert!(
                problems.iter().any(|p| p.contains("workers")),
                "{problems:?}"
            );
            assert!(
                problems.iter().any(|p| p.contains("repeat")),
                "{problems:?}"
            );
        }
        other => panic!("{other:?}"),
    }
    let text = MINIMAL.replace(r#"["loss", "mink"]"#, r#"["dcpdd"]"#)
        + "\n[method_config]\nk_percent = 0.0\n";
    match parse_config(&text, Path::new("."), None) {
        Err(ConfigError::Invalid(problems)) => {
            assert!(
                problems.iter().any(|p| p.contains("frequency_table")),
                "{problems:?}"
            );
            assert!(
                problems.iter().any(|p| p.contains("k_percent")),
                "{problems:?}"
            );
        }
        other => panic!("{other:?}"),
    }
    let text = MINIMAL.replace(
        "[corpora.wiki]",
        "[splits]\nranges = [[50, 150]]\n\n[corpora.wiki]",
    );
    assert!(matches!(
        parse_config(&text, Path::new("."), None),
        Err(ConfigError::Invalid(_))
    ));
    assert!(matches!(
        parse_config("methods = [", Path::new("."), None),
        Err(ConfigError::Syntax(_))
    ));
    let text = MINIMAL.replace("\"mink\"", "\"mnik\"");
    assert!(matches!(
        parse_config(&text, Path::new("."), None),
        Err(ConfigError::Syntax(_))
    ));
}

#[test]
fn adapter_endpoints_resolve_per_tag() {
    let adapter = MINIMAL
        .replace(
            "trace_dir = \"traces\"",
            "adapter_url = \"http://default:1\"\n[inputs.adapter_urls]\nbig = \"http://big:2\"",
        )
        .replace(r#"["160m"]"#, r#"["160m", "big"]"#);
    let cfg = parse_config(&adapter, Path::new("."), None).unwrap();
    assert_eq!(cfg.adapter_url("160m"), Some("http://default:1"));
    assert_eq!(cfg.adapter_url("big"), Some("http://big:2"));
    let cfg = parse_config(&adapter, Path::new("."), Some("http://env:3".into())).unwrap();
    assert_eq!(cfg.adapter_url("160m"), Some("http://env:3"));
    assert_eq!(cfg.adapter_url("big"), Some("http://big:2"));

    let bare = MINIMAL.replace("trace_dir = \"traces\"", "");
    assert!(matches!(
        parse_config(&bare, Path::new("."), None),
        Err(ConfigError::Invalid(_))
    ));
    assert!(parse_config(&bare, Path::new("."), Some("http://env:3".into())).is_ok());
    let recall = bare.replace("\"mink\"", "\"recall\"");
    match parse_config(&recall, Path::new("."), Some("http://env:3".into())) {
        Err(ConfigError::Invalid(p)) => {
            assert!(p.iter().any(|p| p.contains("recall_shots")), "{p:?}")
        }
        other => panic!("{other:?}"),
    }
}
