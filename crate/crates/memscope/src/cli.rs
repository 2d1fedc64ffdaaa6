//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use memscope_core::features::score_split;
use memscope_core::probe::{
    entropy_curves, layer_separability_profile, memorization_score, DEFAULT_EXTRACTION_LENGTH,
    DEFAULT_MAX_STEP,
};
use memscope_core::split::{build_relative_split, build_split, DEFAULT_MIN_EXAMPLES};
use memscope_core::stats::{
    js_divergence, ks_test, roc_auc, select_threshold, unit_histogram, DensitySpec, Dimension,
    DEFAULT_OUTLIER_CUTOFF, MEMORIZATION_BINS,
};
use memscope_core::{
    Example, GenerationRecord, Label, LayerEmbedding, Method, MethodConfig, SplitMethod,
    SplitOutcome, SplitSet, SplitSpec, TokenTrace,
};
use serde::{Deserialize, Serialize};

use crate::adapter::perturbed_id;
use crate::config::{load_config, ADAPTER_ENV};
use crate::io::{
    ingest_corpus, read_frequency_table, read_jsonl, read_keyed, read_results, write_jsonl,
};
use crate::report::{
    emit_reports, write_density, write_hypothesis, write_outliers, write_overlap, write_spearman,
    write_thresholds, ReportOptions, TaggedCurves,
};
use crate::runner::{run_experiment, trace_source, RunError, KS_ALPHA, TRAIN_FRACTION};

/// Exit status when a run exceeds its failure budget.
pub const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(
    name = "memscope",
    version,
    about = "Membership inference evaluation toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a member/non-member split from two corpora.
    Split(SplitArgs),
    /// Score every example of a split with one method.
    Score(ScoreArgs),
    /// Statistics over scores or a results table.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Embedding, entropy and memorization probes.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Run the full experiment matrix of a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the report bundle for a results table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Column order of per-model tables.
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
        /// Entropy curves JSONL to include.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    method: SplitMethod,
    #[arg(long)]
    domain: String,
    /// Lower length bound of the range; ignored by relative splits.
    #[arg(long, default_value_t = 0)]
    lo: usize,
    #[arg(long, default_value_t = 100)]
    hi: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_EXAMPLES)]
    min: usize,
    /// Examples drawn per class; `--min` when absent.
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long)]
    members: PathBuf,
    #[arg(long)]
    nonmembers: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    method: Method,
    /// Split directory written by `split`.
    #[arg(long)]
    split: PathBuf,
    /// `TokenTrace` JSONL, perturbation variants included.
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    conditioned: Option<PathBuf>,
    #[arg(long)]
    generations: Option<PathBuf>,
    #[arg(long)]
    freq: Option<PathBuf>,
    /// TOML file of method hyperparameters.
    #[arg(long)]
    method_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Labelled scores: a JSONL of rows with `example_id` and `value`, and the
/// split they belong to.
#[derive(Args)]
struct ScoreInput {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    split: PathBuf,
}

#[derive(Args)]
struct ResultsInput {
    /// Results CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ThresholdGroup {
    Domain,
    Model,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// ROC-AUC of member against non-member scores.
    Auc {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select a threshold on a seeded 4:1 split and report validation rates;
    /// with `--results`, boxplot statistics of result thresholds instead.
    Threshold {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Treat `--in` as a results CSV.
        #[arg(long)]
        results: bool,
        #[arg(long, value_enum, default_value = "domain")]
        group_by: ThresholdGroup,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Outlier counts per method and model.
    Outliers {
        #[command(flatten)]
        io: ResultsInput,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_CUTOFF)]
        cutoff: f64,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
    },
    /// Jaccard overlap of outlier sets between methods.
    Overlap {
        #[command(flatten)]
        io: ResultsInput,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_CUTOFF)]
        cutoff: f64,
    },
    /// AUC density histogram along one dimension.
    Density {
        #[command(flatten)]
        io: ResultsInput,
        #[arg(long, value_enum, default_value = "method")]
        dimension: DimensionArg,
        #[arg(long, default_value_t = 0.50)]
        lo: f64,
        #[arg(long, default_value_t = 0.58)]
        hi: f64,
        #[arg(long, default_value_t = 0.005)]
        bin_width: f64,
    },
    /// Spearman correlation of AUC with length and 7-gram overlap.
    Correlate {
        #[command(flatten)]
        io: ResultsInput,
    },
    /// KS pass-rate tables per split method, written into `--out` directory.
    Hypothesis {
        #[command(flatten)]
        io: ResultsInput,
        #[arg(long, default_value_t = KS_ALPHA)]
        alpha: f64,
        #[arg(long, value_delimiter = ',')]
        tags: Vec<String>,
    },
    /// Two-sample KS test of member against non-member scores.
    Ks {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long, default_value_t = KS_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// JS divergence between member and non-member histograms of [0, 1]
    /// valued scores.
    Jsdiv {
        #[command(flatten)]
        input: ScoreInput,
        #[arg(long, default_value_t = MEMORIZATION_BINS)]
        bins: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DimensionArg {
    SplitMethod,
    Model,
    Domain,
    Method,
}

impl From<DimensionArg> for Dimension {
    fn from(d: DimensionArg) -> Self {
        match d {
            DimensionArg::SplitMethod => Dimension::SplitMethod,
            DimensionArg::Model => Dimension::Model,
            DimensionArg::Domain => Dimension::Domain,
            DimensionArg::Method => Dimension::Method,
        }
    }
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Davies-Bouldin index of member against non-member embeddings per layer.
    Db {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-step entropy curves of both classes.
    Entropy {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_STEP)]
        max_step: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy-extraction memorization score per example.
    Memorize {
        #[arg(long)]
        generations: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EXTRACTION_LENGTH)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Files of a split directory.
pub const SPLIT_FILES: [&str; 3] = ["spec.json", "members.jsonl", "nonmembers.jsonl"];

/// Writes `split` as `spec.json`, `members.jsonl` and `nonmembers.jsonl`.
pub fn write_split_dir(split: &SplitSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut spec = serde_json::to_string_pretty(&split.spec)?;
    spec.push('\n');
    fs::write(dir.join(SPLIT_FILES[0]), spec)?;
    write_jsonl(&dir.join(SPLIT_FILES[1]), &split.members)?;
    write_jsonl(&dir.join(SPLIT_FILES[2]), &split.nonmembers)?;
    Ok(())
}

pub fn read_split_dir(dir: &Path) -> Result<SplitSet> {
    let spec_path = dir.join(SPLIT_FILES[0]);
    let spec: SplitSpec = serde_json::from_str(
        &fs::read_to_string(&spec_path)
            .with_context(|| format!("reading {}", spec_path.display()))?,
    )
    .with_context(|| format!("parsing {}", spec_path.display()))?;
    Ok(SplitSet {
        spec,
        members: read_jsonl(&dir.join(SPLIT_FILES[1]))?,
        nonmembers: read_jsonl(&dir.join(SPLIT_FILES[2]))?,
    })
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let members = ingest_corpus(&a.members, Label::Member)?;
    let nonmembers = ingest_corpus(&a.nonmembers, Label::Nonmember)?;
    let outcomes = match a.method {
        SplitMethod::Relative => build_relative_split(
            &members,
            &nonmembers,
            &a.domain,
            a.seed,
            a.min,
            a.sample_size,
        )?,
        m => {
            let spec = SplitSpec {
                min_examples: a.min,
                sample_size: a.sample_size,
                ..SplitSpec::new(m, &a.domain, a.lo, a.hi, a.seed)
            };
            vec![build_split(&members, &nonmembers, &spec)?]
        }
    };
    let single = outcomes.len() == 1;
    let mut built = 0;
    for o in outcomes {
        match o {
            SplitOutcome::Built(s) => {
                let dir = if single {
                    a.out.clone()
                } else {
                    a.out
                        .join(format!("{}-{}", s.spec.length_lo, s.spec.length_hi))
                };
                write_split_dir(&s, &dir)?;
                info!(
                    "{}: {} members, {} non-members",
                    s.split_id(),
                    s.members.len(),
                    s.nonmembers.len()
                );
                built += 1;
            }
            SplitOutcome::Rejected(r) => warn!("rejected {r}"),
        }
    }
    if built == 0 {
        bail!("no split was built");
    }
    Ok(())
}

fn read_method_config(path: Option<&Path>) -> Result<MethodConfig> {
    let Some(p) = path else {
        return Ok(MethodConfig::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let cfg: MethodConfig =
        toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    cfg.validate()
        .map_err(|fields| anyhow!("{}: out of range: {}", p.display(), fields.join(", ")))?;
    Ok(cfg)
}

fn read_traces(path: &Path) -> Result<BTreeMap<String, TokenTrace>> {
    Ok(read_keyed(path, |t: &TokenTrace| &t.example_id)?)
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let split = read_split_dir(&a.split)?;
    let cfg = read_method_config(a.method_config.as_deref())?;
    let frequencies = a.freq.as_deref().map(read_frequency_table).transpose()?;
    let mut inputs = memscope_core::features::ScoringInputs {
        frequencies: frequencies.as_ref(),
        ..Default::default()
    };
    if let Some(p) = &a.traces {
        let all = read_traces(p)?;
        for e in split.members.iter().chain(&split.nonmembers) {
            let variants: Option<Vec<TokenTrace>> = (0..cfg.pac_num_perturbations)
                .map(|j| all.get(&perturbed_id(&e.example_id, j)).cloned())
                .collect();
            if let Some(v) = variants {
                inputs.perturbed.insert(e.example_id.clone(), v);
            }
        }
        inputs.traces = all;
    }
    if let Some(p) = &a.conditioned {
        inputs.conditioned = read_traces(p)?;
    }
    if let Some(p) = &a.generations {
        inputs.generations = read_keyed(p, |g: &GenerationRecord| &g.example_id)?;
    }
    let scores = score_split(&split, a.method, &inputs, &cfg)?;
    write_jsonl(&a.out, scores.members.iter().chain(&scores.nonmembers))?;
    Ok(())
}

#[derive(Deserialize)]
struct ValueRow {
    example_id: String,
    value: f64,
}

/// Member and non-member values of the rows in `input`, in split order.
fn labelled_values(input: &ScoreInput) -> Result<(Vec<f64>, Vec<f64>)> {
    let split = read_split_dir(&input.split)?;
    let rows = read_keyed(&input.input, |r: &ValueRow| &r.example_id)?;
    let pick = |examples: &[Example]| -> Result<Vec<f64>> {
        examples
            .iter()
            .map(|e| {
                rows.get(&e.example_id).map(|r| r.value).ok_or_else(|| {
                    anyhow!("{}: no value for `{}`", input.input.display(), e.example_id)
                })
            })
            .collect()
    };
    Ok((pick(&split.members)?, pick(&split.nonmembers)?))
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_eval(c: &EvalCommand) -> Result<()> {
    match c {
        EvalCommand::Auc { input, out } => {
            let (m, n) = labelled_values(input)?;
            #[derive(Serialize)]
            struct Auc {
                auc: f64,
                members: usize,
                nonmembers: usize,
            }
            emit_json(
                &Auc {
                    auc: roc_auc(&m, &n)?,
                    members: m.len(),
                    nonmembers: n.len(),
                },
                out.as_deref(),
            )
        }
        EvalCommand::Threshold {
            input,
            split,
            seed,
            results,
            group_by,
            out,
        } => {
            if *results {
                let out = out
                    .as_deref()
                    .ok_or_else(|| anyhow!("--out is required with --results"))?;
                let dim = match group_by {
                    ThresholdGroup::Domain => Dimension::Domain,
                    ThresholdGroup::Model => Dimension::Model,
                };
                return Ok(write_thresholds(&read_results(input)?, dim, out)?);
            }
            let split = split
                .clone()
                .ok_or_else(|| anyhow!("--split is required for score input"))?;
            let (m, n) = labelled_values(&ScoreInput {
                input: input.clone(),
                split,
            })?;
            emit_json(
                &select_threshold(&m, &n, TRAIN_FRACTION, *seed)?,
                out.as_deref(),
            )
        }
        EvalCommand::Outliers { io, cutoff, tags } => Ok(write_outliers(
            &read_results(&io.input)?,
            tags,
            *cutoff,
            &io.out,
        )?),
        EvalCommand::Overlap { io, cutoff } => {
            Ok(write_overlap(&read_results(&io.input)?, *cutoff, &io.out)?)
        }
        EvalCommand::Density {
            io,
            dimension,
            lo,
            hi,
            bin_width,
        } => {
            let spec = DensitySpec {
                lo: *lo,
                hi: *hi,
                bin_width: *bin_width,
            };
            Ok(write_density(
                &read_results(&io.input)?,
                &spec,
                (*dimension).into(),
                &io.out,
            )?)
        }
        EvalCommand::Correlate { io } => Ok(write_spearman(&read_results(&io.input)?, &io.out)?),
        EvalCommand::Hypothesis { io, alpha, tags } => {
            let written = write_hypothesis(&read_results(&io.input)?, tags, *alpha, &{
                fs::create_dir_all(&io.out)?;
                io.out.clone()
            })?;
            for p in written {
                info!("wrote {}", p.display());
            }
            Ok(())
        }
        EvalCommand::Ks { input, alpha, out } => {
            let (m, n) = labelled_values(input)?;
            emit_json(&ks_test(&m, &n, *alpha)?, out.as_deref())
        }
        EvalCommand::Jsdiv { input, bins, out } => {
            let (m, n) = labelled_values(input)?;
            #[derive(Serialize)]
            struct Js {
                js_divergence: f64,
                bins: usize,
                member_histogram: Vec<f64>,
                nonmember_histogram: Vec<f64>,
            }
            let (hm, hn) = (unit_histogram(&m, *bins)?, unit_histogram(&n, *bins)?);
            emit_json(
                &Js {
                    js_divergence: js_divergence(&hm, &hn)?,
                    bins: *bins,
                    member_histogram: hm,
                    nonmember_histogram: hn,
                },
                out.as_deref(),
            )
        }
    }
}

fn split_labels(split: &SplitSet) -> BTreeMap<String, Label> {
    split
        .members
        .iter()
        .chain(&split.nonmembers)
        .map(|e| (e.example_id.clone(), e.label))
        .collect()
}

fn cmd_probe(c: &ProbeCommand) -> Result<()> {
    match c {
        ProbeCommand::Db {
            embeddings,
            split,
            out,
        } => {
            let labels = split_labels(&read_split_dir(split)?);
            let embeddings: Vec<LayerEmbedding> = read_jsonl(embeddings)?;
            let profile = layer_separability_profile(&embeddings, &labels)?;
            Ok(write_jsonl(out, &profile)?)
        }
        ProbeCommand::Entropy {
            traces,
            split,
            max_step,
            out,
        } => {
            let split = read_split_dir(split)?;
            let traces = read_traces(traces)?;
            let class = |examples: &[Example]| -> Vec<TokenTrace> {
                examples
                    .iter()
                    .filter_map(|e| traces.get(&e.example_id).cloned())
                    .collect()
            };
            let curves =
                entropy_curves(&class(&split.members), &class(&split.nonmembers), *max_step)?;
            Ok(write_jsonl(out, [&curves])?)
        }
        ProbeCommand::Memorize {
            generations,
            k,
            out,
        } => {
            let gens: Vec<GenerationRecord> = read_jsonl(generations)?;
            #[derive(Serialize)]
            struct Row<'a> {
                example_id: &'a str,
                value: f64,
                k: usize,
            }
            let rows = gens
                .iter()
                .map(|g| {
                    Ok(Row {
                        example_id: &g.example_id,
                        value: memorization_score(g, *k)
                            .with_context(|| format!("memorization of `{}`", g.example_id))?,
                        k: *k,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(write_jsonl(out, &rows)?)
        }
    }
}

fn cmd_report(results: &Path, out: &Path, tags: &[String], curves: Option<&Path>) -> Result<()> {
    let rows = read_results(results)?;
    let curves: Vec<TaggedCurves> = match curves {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let opts = ReportOptions {
        model_tags: tags.to_vec(),
        ..ReportOptions::default()
    };
    emit_reports(&rows, &curves, &opts, out)?;
    Ok(())
}

fn cmd_run(config: &Path) -> Result<ExitCode> {
    let cfg = load_config(config)?;
    if cfg.inputs.trace_dir.is_none() {
        info!("using adapters (override the default with {ADAPTER_ENV})");
    }
    let source = trace_source(&cfg)?;
    match run_experiment(&cfg, source.as_ref()) {
        Ok(s) => {
            println!(
                "{} keys: {} computed, {} cached, {} failed; results in {}",
                s.keys,
                s.computed,
                s.keys - s.computed - s.failures,
                s.failures,
                s.results_path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ RunError::BudgetExceeded { .. }) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(EXIT_BUDGET))
        }
        Err(e) => Err(e.into()),
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Split(a) => cmd_split(&a)?,
        Command::Score(a) => cmd_score(&a)?,
        Command::Eval(c) => cmd_eval(&c)?,
        Command::Probe(c) => cmd_probe(&c)?,
        Command::Run { config } => return cmd_run(&config),
        Command::Report {
            results,
            out,
            tags,
            curves,
        } => cmd_report(&results, &out, &tags, curves.as_deref())?,
    }
    Ok(ExitCode::SUCCESS)
}

/// Entry point of the `memscope` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
