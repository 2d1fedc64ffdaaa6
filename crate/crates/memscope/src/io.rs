//! File formats: JSONL records, the frequency table, and the results CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use memscope_core::features::Method;
use memscope_core::model::FrequencyTableError;
use memscope_core::{EvalResult, Example, Label, TokenFrequencyTable, TokenId};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate example_id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: no rows to write")]
    NoRows { path: PathBuf },
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(path: &Path, line: usize, message: impl ToString) -> Self {
        FormatError::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| FormatError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| FormatError::io(path, e))
}

/// Calls `f` with the 1-based line number and text of every non-blank line.
fn for_each_line(
    path: &Path,
    mut f: impl FnMut(usize, &str) -> Result<(), FormatError>,
) -> Result<(), FormatError> {
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| FormatError::io(path, e))?;
        if !line.trim().is_empty() {
            f(i + 1, &line)?;
        }
    }
    Ok(())
}

/// Reads one JSON record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let mut out = Vec::new();
    for_each_line(path, |line, text| {
        out.push(serde_json::from_str(text).map_err(|e| FormatError::parse(path, line, e))?);
        Ok(())
    })?;
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<(), FormatError>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| FormatError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| FormatError::io(path, e))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

/// Example line as accepted on input: the label may be omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleLine {
    example_id: String,
    domain: String,
    #[serde(default)]
    label: Option<Label>,
    text: String,
    tokens: Vec<TokenId>,
}

/// Reads a corpus file, labelling every example with `label`.
///
/// Lines that carry a label must agree with `label`. Ids must be unique and
/// token lists non-empty.
pub fn ingest_corpus(path: &Path, label: Label) -> Result<Vec<Example>, FormatError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for_each_line(path, |line, text| {
        let r: ExampleLine =
            serde_json::from_str(text).map_err(|e| FormatError::parse(path, line, e))?;
        if let Some(found) = r.label.filter(|l| *l != label) {
            return Err(FormatError::parse(
                path,
                line,
                format!(
                    "label `{}` where `{}` was expected",
                    found.as_str(),
                    label.as_str()
                ),
            ));
        }
        if r.tokens.is_empty() {
            return Err(FormatError::parse(path, line, "empty token list"));
        }
        if !seen.insert(r.example_id.clone()) {
            return Err(FormatError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: r.example_id,
            });
        }
        out.push(Example {
            example_id: r.example_id,
            domain: r.domain,
            label,
            text: r.text,
            tokens: r.tokens,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Reads a JSONL file of records keyed by `example_id`; duplicates are errors.
pub fn read_keyed<T, F>(path: &Path, key: F) -> Result<BTreeMap<String, T>, FormatError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> &str,
{
    let mut out = BTreeMap::new();
    for_each_line(path, |line, text| {
        let r: T = serde_json::from_str(text).map_err(|e| FormatError::parse(path, line, e))?;
        let id = key(&r).to_string();
        if out.contains_key(&id) {
            return Err(FormatError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id,
            });
        }
        out.insert(id, r);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum FrequencyLine {
    Entry { token_id: TokenId, freq: f64 },
    Fallback { fallback_frequency: f64 },
}

/// Reads `{token_id, freq}` lines plus exactly one `{fallback_frequency}` line.
pub fn read_frequency_table(path: &Path) -> Result<TokenFrequencyTable, FormatError> {
    let mut freqs = BTreeMap::new();
    let mut fallback = None;
    for_each_line(path, |line, text| {
        match serde_json::from_str(text).map_err(|e| FormatError::parse(path, line, e))? {
            FrequencyLine::Entry { token_id, freq } => {
                if freqs.insert(token_id, freq).is_some() {
                    return Err(FormatError::parse(
                        path,
                        line,
                        format!("duplicate token {token_id}"),
                    ));
                }
            }
            FrequencyLine::Fallback { fallback_frequency } => {
                if fallback.replace(fallback_frequency).is_some() {
                    return Err(FormatError::parse(
                        path,
                        line,
                        "second fallback_frequency line",
                    ));
                }
            }
        }
        Ok(())
    })?;
    let invalid = |message: String| FormatError::Invalid {
        path: path.to_path_buf(),
        message,
    };
    let fallback = fallback.ok_or_else(|| invalid("missing fallback_frequency line".into()))?;
    TokenFrequencyTable::new(freqs, fallback)
        .map_err(|e: FrequencyTableError| invalid(e.to_string()))
}

pub fn write_frequency_table(path: &Path, table: &TokenFrequencyTable) -> Result<(), FormatError> {
    let lines: Vec<FrequencyLine> = table
        .entries()
        .map(|(token_id, freq)| FrequencyLine::Entry { token_id, freq })
        .chain([FrequencyLine::Fallback {
            fallback_frequency: table.fallback_frequency(),
        }])
        .collect();
    write_jsonl(path, &lines)
}

/// Renders `x` with 9 significant digits using `.` as decimal separator.
///
/// Magnitudes in `[1e-5, 1e15)` are written positionally, others in
/// scientific notation; trailing zeros are dropped.
pub fn format_decimal(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("`e` formatting has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    if !(-5..15).contains(&exp) {
        let mut m = format!("{}.{}", &digits[..1], &digits[1..]);
        trim_fraction(&mut m);
        return format!("{sign}{m}e{exp}");
    }
    let mut s = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else {
        let int_len = exp as usize + 1;
        if int_len >= digits.len() {
            format!("{}{}", digits, "0".repeat(int_len - digits.len()))
        } else {
            format!("{}.{}", &digits[..int_len], &digits[int_len..])
        }
    };
    trim_fraction(&mut s);
    format!("{sign}{s}")
}

fn trim_fraction(s: &mut String) {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
}

/// Column order of the results CSV.
pub const RESULT_COLUMNS: [&str; 13] = [
    "method",
    "split_id",
    "domain",
    "model_tag",
    "seed",
    "auc",
    "threshold",
    "val_tpr",
    "val_fpr",
    "text_length_stat",
    "ngram_overlap_stat",
    "ks_statistic",
    "ks_p_value",
];

fn result_record(r: &EvalResult) -> [String; 13] {
    [
        r.method.as_str().to_string(),
        r.split_id.clone(),
        r.domain.clone(),
        r.model_tag.clone(),
        r.seed.to_string(),
        format_decimal(r.auc),
        format_decimal(r.threshold),
        format_decimal(r.val_tpr),
        format_decimal(r.val_fpr),
        format_decimal(r.text_length_stat),
        format_decimal(r.ngram_overlap_stat),
        format_decimal(r.ks_statistic),
        format_decimal(r.ks_p_value),
    ]
}

fn csv_error(path: &Path, e: csv::Error) -> FormatError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    FormatError::parse(path, line, e)
}

/// Writes rows to any sink in the results CSV layout.
pub fn write_results_to<W: Write>(w: W, rows: &[EvalResult]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(result_record(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the results CSV. Identical rows give identical bytes.
pub fn serialize_results(rows: &[EvalResult], path: &Path) -> Result<(), FormatError> {
    if rows.is_empty() {
        return Err(FormatError::NoRows {
            path: path.to_path_buf(),
        });
    }
    let w = create(path)?;
    write_results_to(w, rows).map_err(|e| csv_error(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<EvalResult>, FormatError> {
    let mut reader = csv::Reader::from_reader(open(path)?);
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(FormatError::parse(
            path,
            1,
            format!("expected columns {}", RESULT_COLUMNS.join(",")),
        ));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let num = |col: usize| -> Result<f64, FormatError> {
            record[col].parse().map_err(|_| {
                FormatError::parse(
                    path,
                    line,
                    format!("bad {} `{}`", RESULT_COLUMNS[col], &record[col]),
                )
            })
        };
        out.push(EvalResult {
            method: record[0]
                .parse::<Method>()
                .map_err(|e| FormatError::parse(path, line, e))?,
            split_id: record[1].to_string(),
            domain: record[2].to_string(),
            model_tag: record[3].to_string(),
            seed: record[4].parse().map_err(|_| {
                FormatError::parse(path, line, format!("bad seed `{}`", &record[4]))
            })?,
            auc: num(5)?,
            threshold: num(6)?,
            val_tpr: num(7)?,
            val_fpr: num(8)?,
            text_length_stat: num(9)?,
            ngram_overlap_stat: num(10)?,
            ks_statistic: num(11)?,
            ks_p_value: num(12)?,
        });
    }
    Ok(out)
}
