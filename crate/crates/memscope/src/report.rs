//! Report bundle written from a results table.
//!
//! Files under the report directory:
//!
//! * `density_{dimension}.csv`: AUC histogram per group, one file per
//!   dimension.
//! * `outliers.csv`: outlier rows per method and model tag, with `Num`,
//!   `Max` and `Mean` over all tags.
//! * `overlap.csv`: Jaccard overlap of outlier sets between methods.
//! * `thresholds_by_domain.jsonl`, `thresholds_by_model.jsonl`: boxplot
//!   statistics of the selected thresholds.
//! * `spearman.csv`: rank correlation of AUC with text length and 7-gram
//!   overlap per method, split method and domain.
//! * `hypothesis_{split_method}.csv`: fraction of rows whose KS test
//!   rejects, per method and model tag.
//! * `entropy_curves.jsonl`: per-step entropy curves per model tag.
//! * `manifest.json`: options and counting conventions.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use memscope_core::probe::EntropyCurves;
use memscope_core::stats::{
    auc_density, boxplot_stats, outliers_by_method, overlap_matrix, spearman, BoxplotStats,
    DensitySpec, Dimension, DEFAULT_OUTLIER_CUTOFF,
};
use memscope_core::{EvalResult, Method};
use serde::{Deserialize, Serialize};

use crate::io::{format_decimal, write_jsonl, FormatError};

/// Entropy curves of one model tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedCurves {
    pub model_tag: String,
    #[serde(flatten)]
    pub curves: EntropyCurves,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportOptions {
    /// Column order of per-model tables. Tags seen in the results but
    /// missing here are appended in sorted order.
    pub model_tags: Vec<String>,
    pub outlier_cutoff: f64,
    pub density: DensitySpec,
    pub alpha: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            model_tags: Vec::new(),
            outlier_cutoff: DEFAULT_OUTLIER_CUTOFF,
            density: DensitySpec::default(),
            alpha: 0.05,
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, FormatError> {
    let f = File::create(path).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(f)))
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), FormatError> {
    let err = |e: csv::Error| FormatError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn num(x: f64) -> String {
    format_decimal(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Method family of a split id (`truncate:wiki:0-100` → `truncate`).
pub fn split_method_of(split_id: &str) -> &str {
    split_id.split(':').next().unwrap_or(split_id)
}

fn tag_order(results: &[EvalResult], configured: &[String]) -> Vec<String> {
    let mut tags = configured.to_vec();
    let seen: BTreeSet<&str> = results.iter().map(|r| r.model_tag.as_str()).collect();
    for t in seen {
        if !tags.iter().any(|c| c == t) {
            tags.push(t.to_string());
        }
    }
    tags
}

/// AUC density histograms grouped along `dim`.
pub fn write_density(
    results: &[EvalResult],
    spec: &DensitySpec,
    dim: Dimension,
    path: &Path,
) -> Result<(), FormatError> {
    let groups = auc_density(results, spec, dim).map_err(|e| FormatError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut header = vec![
        "group".to_string(),
        "count".into(),
        "below".into(),
        "above".into(),
        "in_range".into(),
    ];
    header.extend((0..spec.bins()).map(|i| format!("bin_{}", num(spec.edge(i)))));
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|g| {
            let mut r = vec![
                g.group.clone(),
                g.count.to_string(),
                num(g.below_fraction),
                num(g.above_fraction),
                num(g.in_range_fraction),
            ];
            r.extend(g.densities.iter().map(|&d| num(d)));
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

/// Rows of the outlier table: per method, the number of outlier rows for
/// every tag, then `Num` (all outlier rows), `Max` and `Mean` of their AUC.
fn outlier_rows(results: &[EvalResult], tags: &[String], cutoff: f64) -> Vec<Vec<String>> {
    let methods: BTreeSet<Method> = results.iter().map(|r| r.method).collect();
    methods
        .into_iter()
        .map(|m| {
            let hits: Vec<&EvalResult> = results
                .iter()
                .filter(|r| r.method == m && r.auc > cutoff)
                .collect();
            let mut row = vec![m.as_str().to_string()];
            row.extend(tags.iter().map(|t| {
                hits.iter()
                    .filter(|r| &r.model_tag == t)
                    .count()
                    .to_string()
            }));
            row.push(hits.len().to_string());
            if hits.is_empty() {
                row.extend([String::new(), String::new()]);
            } else {
                let max = hits.iter().map(|r| r.auc).fold(f64::NEG_INFINITY, f64::max);
                let mean = hits.iter().map(|r| r.auc).sum::<f64>() / hits.len() as f64;
                row.extend([num(max), num(mean)]);
            }
            row
        })
        .collect()
}

/// Outlier table with a column per tag in `tags` order (tags absent from
/// `tags` but present in `results` are appended).
pub fn write_outliers(
    results: &[EvalResult],
    tags: &[String],
    cutoff: f64,
    path: &Path,
) -> Result<(), FormatError> {
    let tags = tag_order(results, tags);
    let mut header = vec!["method".to_string()];
    header.extend(tags.iter().cloned());
    header.extend(["Num".into(), "Max".into(), "Mean".into()]);
    write_table(path, &header, &outlier_rows(results, &tags, cutoff))
}

/// Jaccard overlap of outlier sets between methods.
pub fn write_overlap(results: &[EvalResult], cutoff: f64, path: &Path) -> Result<(), FormatError> {
    let sets = outliers_by_method(results, cutoff);
    let labels: Vec<String> = sets.keys().map(|m| m.as_str().to_string()).collect();
    // A lone method overlaps itself fully.
    let values = match overlap_matrix(&sets) {
        Ok(m) => m.values,
        Err(_) => vec![vec![1.0]; labels.len()],
    };
    let mut header = vec!["method".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = labels
        .iter()
        .zip(&values)
        .map(|(l, vs)| {
            std::iter::once(l.clone())
                .chain(vs.iter().map(|&v| num(v)))
                .collect()
        })
        .collect();
    write_table(path, &header, &rows)
}

#[derive(Serialize)]
struct ThresholdBox<'a> {
    method: &'a str,
    group: &'a str,
    count: usize,
    /// Rows whose threshold is a ±∞ sentinel, left out of the statistics.
    infinite: usize,
    #[serde(flatten)]
    stats: Option<BoxplotStats>,
}

/// Boxplot statistics of thresholds per method and group along `by`.
pub fn write_thresholds(
    results: &[EvalResult],
    by: Dimension,
    path: &Path,
) -> Result<(), FormatError> {
    let mut groups: BTreeMap<(&str, String), Vec<f64>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.method.as_str(), by.key(r)))
            .or_default()
            .push(r.threshold);
    }
    let boxes: Vec<ThresholdBox> = groups
        .iter()
        .map(|((method, group), ts)| {
            let finite: Vec<f64> = ts.iter().copied().filter(|t| t.is_finite()).collect();
            ThresholdBox {
                method,
                group,
                count: ts.len(),
                infinite: ts.len() - finite.len(),
                stats: boxplot_stats(&finite).ok(),
            }
        })
        .collect();
    write_jsonl(path, &boxes)
}

/// Spearman table: a row per method and covariate, a column per
/// `split_method:domain`, then the row average over defined cells.
pub fn write_spearman(results: &[EvalResult], path: &Path) -> Result<(), FormatError> {
    let (header, rows) = spearman_table(results);
    write_table(path, &header, &rows)
}

fn spearman_table(results: &[EvalResult]) -> (Vec<String>, Vec<Vec<String>>) {
    type Cell = (Vec<f64>, Vec<f64>, Vec<f64>);
    let mut cells: BTreeMap<(Method, String), Cell> = BTreeMap::new();
    let mut columns = BTreeSet::new();
    for r in results {
        let col = format!("{}:{}", split_method_of(&r.split_id), r.domain);
        columns.insert(col.clone());
        let c = cells.entry((r.method, col)).or_default();
        c.0.push(r.auc);
        c.1.push(r.text_length_stat);
        c.2.push(r.ngram_overlap_stat);
    }
    let columns: Vec<String> = columns.into_iter().collect();
    let methods: BTreeSet<Method> = results.iter().map(|r| r.method).collect();
    let mut header = vec!["method".to_string(), "covariate".into()];
    header.extend(columns.iter().cloned());
    header.push("Avg".into());
    let mut rows = Vec::new();
    for m in methods {
        for (name, pick) in [("length", 1usize), ("ngram", 2)] {
            let vals: Vec<Option<f64>> = columns
                .iter()
                .map(|col| {
                    let c = cells.get(&(m, col.clone()))?;
                    let cov = if pick == 1 { &c.1 } else { &c.2 };
                    spearman(&c.0, cov).ok()
                })
                .collect();
            let defined: Vec<f64> = vals.iter().flatten().copied().collect();
            let avg =
                (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
            let mut row = vec![m.as_str().to_string(), name.to_string()];
            row.extend(vals.into_iter().map(opt));
            row.push(opt(avg));
            rows.push(row);
        }
    }
    (header, rows)
}

/// One `hypothesis_{split_method}.csv` per split method in `results`.
pub fn write_hypothesis(
    results: &[EvalResult],
    tags: &[String],
    alpha: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>, FormatError> {
    let tags = tag_order(results, tags);
    let mut by_family: BTreeMap<&str, Vec<&EvalResult>> = BTreeMap::new();
    for r in results {
        by_family
            .entry(split_method_of(&r.split_id))
            .or_default()
            .push(r);
    }
    let mut out = Vec::new();
    for (family, rows) in by_family {
        let path = dir.join(format!("hypothesis_{family}.csv"));
        let mut header = vec!["method".to_string()];
        header.extend(tags.iter().cloned());
        header.push("all".into());
        let rate = |sel: &[&&EvalResult]| {
            (!sel.is_empty()).then(|| {
                sel.iter().filter(|r| r.ks_p_value < alpha).count() as f64 / sel.len() as f64
            })
        };
        let methods: BTreeSet<Method> = rows.iter().map(|r| r.method).collect();
        let table: Vec<Vec<String>> = methods
            .into_iter()
            .map(|m| {
                let mine: Vec<&&EvalResult> = rows.iter().filter(|r| r.method == m).collect();
                let mut row = vec![m.as_str().to_string()];
                for t in &tags {
                    let sel: Vec<&&EvalResult> =
                        mine.iter().copied().filter(|r| &r.model_tag == t).collect();
                    row.push(opt(rate(&sel)));
                }
                row.push(opt(rate(&mine)));
                row
            })
            .collect();
        write_table(&path, &header, &table)?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    results: usize,
    options: &'a ReportOptions,
    model_tags: &'a [String],
    outlier_counting: &'static str,
    hypothesis_counting: &'static str,
    threshold_grouping: &'static str,
    files: Vec<String>,
}

/// Writes the report bundle into `dir` and returns the written paths.
/// Identical inputs give byte-identical files.
pub fn emit_reports(
    results: &[EvalResult],
    curves: &[TaggedCurves],
    opts: &ReportOptions,
    dir: &Path,
) -> Result<Vec<PathBuf>, FormatError> {
    std::fs::create_dir_all(dir).map_err(|source| FormatError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let tags = tag_order(results, &opts.model_tags);
    let mut files = Vec::new();
    for dim in Dimension::ALL {
        let path = dir.join(format!("density_{}.csv", dim.as_str()));
        write_density(results, &opts.density, dim, &path)?;
        files.push(path);
    }

    let path = dir.join("outliers.csv");
    write_outliers(results, &tags, opts.outlier_cutoff, &path)?;
    files.push(path);

    let path = dir.join("overlap.csv");
    write_overlap(results, opts.outlier_cutoff, &path)?;
    files.push(path);

    for (name, dim) in [("domain", Dimension::Domain), ("model", Dimension::Model)] {
        let path = dir.join(format!("thresholds_by_{name}.jsonl"));
        write_thresholds(results, dim, &path)?;
        files.push(path);
    }

    let path = dir.join("spearman.csv");
    write_spearman(results, &path)?;
    files.push(path);

    files.extend(write_hypothesis(results, &tags, opts.alpha, dir)?);

    let path = dir.join("entropy_curves.jsonl");
    write_jsonl(&path, curves)?;
    files.push(path);

    let path = dir.join("manifest.json");
    let manifest = Manifest {
        results: results.len(),
        options: opts,
        model_tags: &tags,
        outlier_counting: "Num counts (split, seed, model) result rows with AUC above the cutoff; Max and Mean are over those rows",
        hypothesis_counting: "fraction of result rows whose KS p-value is below alpha",
        threshold_grouping: "per (method, domain) and (method, model); infinite thresholds counted but excluded",
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| FormatError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(files)
}
