//! Long-form medical QA data: JSONL loading, validation, statistics and sampling.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::parser::count_words;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {source}")]
    MalformedJson {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: missing required field \"{field}\"")]
    MissingField { line: usize, field: String },
    #[error("line {line}: field \"{field}\" {reason}")]
    InvalidField {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("line {line}: duplicate id \"{id}\"")]
    DuplicateId { line: usize, id: String },
    #[error("dataset is empty")]
    Empty,
    #[error("sample size {n} out of range 1..={len}")]
    SampleOutOfRange { n: usize, len: usize },
    #[error("invalid field map: {0}")]
    FieldMap(String),
}

/// One question with its reference answer and annotated statements.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    #[serde(skip)]
    pub dataset: String,
    #[serde(rename = "Question")]
    pub question: String,
    #[serde(rename = "Free_form_answer")]
    pub reference_answer: String,
    /// Must-have statements.
    #[serde(rename = "Must_have")]
    pub must_have: Vec<String>,
    /// Nice-to-have statements.
    #[serde(rename = "Nice_to_have")]
    pub nice_to_have: Vec<String>,
    #[serde(rename = "Ambiguous", default, skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<bool>,
}

impl QaPair {
    /// |S| = |MH| + |NH|.
    pub fn statement_count(&self) -> usize {
        self.must_have.len() + self.nice_to_have.len()
    }
}

/// Source field names; lets other corpora be loaded without rewriting them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub must_have: String,
    pub nice_to_have: String,
    pub ambiguous: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".into(),
            question: "Question".into(),
            answer: "Free_form_answer".into(),
            must_have: "Must_have".into(),
            nice_to_have: "Nice_to_have".into(),
            ambiguous: "Ambiguous".into(),
        }
    }
}

impl FieldMap {
    pub fn from_file(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DatasetError::FieldMap(e.to_string()))
    }
}

pub fn load_dataset(path: &Path, name: &str) -> Result<Vec<QaPair>, DatasetError> {
    load_dataset_with(path, name, &FieldMap::default())
}

pub fn load_dataset_with(
    path: &Path,
    name: &str,
    fields: &FieldMap,
) -> Result<Vec<QaPair>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut pairs = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(&line).map_err(|source| DatasetError::MalformedJson {
                line: line_no,
                source,
            })?;
        let object = value
            .as_object()
            .ok_or_else(|| DatasetError::InvalidField {
                line: line_no,
                field: "<record>".into(),
                reason: "must be a JSON object".into(),
            })?;
        let pair = parse_record(object, line_no, name, fields)?;
        if !ids.insert(pair.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: pair.id,
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

fn parse_record(
    object: &Map<String, Value>,
    line: usize,
    dataset: &str,
    fields: &FieldMap,
) -> Result<QaPair, DatasetError> {
    let text_field = |field: &str| -> Result<String, DatasetError> {
        match object.get(field) {
            None | Some(Value::Null) => Err(DatasetError::MissingField {
                line,
                field: field.to_string(),
            }),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(DatasetError::InvalidField {
                line,
                field: field.to_string(),
                reason: "must be a string".into(),
            }),
        }
    };
    let list_field = |field: &str| -> Result<Vec<String>, DatasetError> {
        let items = match object.get(field) {
            None | Some(Value::Null) => {
                return Err(DatasetError::MissingField {
                    line,
                    field: field.to_string(),
                })
            }
            Some(Value::Array(items)) => items,
            Some(_) => {
                return Err(DatasetError::InvalidField {
                    line,
                    field: field.to_string(),
                    reason: "must be a list of strings".into(),
                })
            }
        };
        items
            .iter()
            .map(|item| match item.as_str() {
                Some(s) if !s.trim().is_empty() => Ok(s.to_string()),
                Some(_) => Err(DatasetError::InvalidField {
                    line,
                    field: field.to_string(),
                    reason: "contains an empty statement".into(),
                }),
                None => Err(DatasetError::InvalidField {
                    line,
                    field: field.to_string(),
                    reason: "must be a list of strings".into(),
                }),
            })
            .collect()
    };

    let question = text_field(&fields.question)?;
    if question.trim().is_empty() {
        return Err(DatasetError::InvalidField {
            line,
            field: fields.question.clone(),
            reason: "is empty".into(),
        });
    }
    let id = match object.get(&fields.id) {
        None | Some(Value::Null) => format!("{dataset}-{line}"),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => {
            return Err(DatasetError::InvalidField {
                line,
                field: fields.id.clone(),
                reason: "must be a string or number".into(),
            })
        }
    };
    let ambiguous = match object.get(&fields.ambiguous) {
        None | Some(Value::Null) => None,
        Some(Value::Bool(b)) => Some(*b),
        Some(_) => {
            return Err(DatasetError::InvalidField {
                line,
                field: fields.ambiguous.clone(),
                reason: "must be a boolean".into(),
            })
        }
    };
    Ok(QaPair {
        id,
        dataset: dataset.to_string(),
        question,
        reference_answer: text_field(&fields.answer)?,
        must_have: list_field(&fields.must_have)?,
        nice_to_have: list_field(&fields.nice_to_have)?,
        ambiguous,
    })
}

/// Writes pairs in the default field vocabulary, one object per line.
pub fn write_dataset(path: &Path, pairs: &[QaPair]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    for pair in pairs {
        let line = serde_json::to_string(pair).expect("QaPair serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub qa_pair_count: usize,
    pub avg_answer_length_words: f64,
    pub avg_mh_count: f64,
    pub avg_nh_count: f64,
    /// Only known when every record carries an ambiguity flag.
    pub ambiguous_count: Option<usize>,
}

pub fn compute_stats(pairs: &[QaPair]) -> Result<DatasetStats, DatasetError> {
    if pairs.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n = pairs.len() as f64;
    let mean = |f: &dyn Fn(&QaPair) -> usize| pairs.iter().map(|p| f(p) as f64).sum::<f64>() / n;
    let ambiguous_count = pairs
        .iter()
        .map(|p| p.ambiguous)
        .collect::<Option<Vec<bool>>>()
        .map(|flags| flags.into_iter().filter(|b| *b).count());
    Ok(DatasetStats {
        qa_pair_count: pairs.len(),
        avg_answer_length_words: mean(&|p| count_words(&p.reference_answer)),
        avg_mh_count: mean(&|p| p.must_have.len()),
        avg_nh_count: mean(&|p| p.nice_to_have.len()),
        ambiguous_count,
    })
}

/// Seeded subset of `n` pairs, kept in input order.
///
/// Partial Fisher-Yates over positions with a ChaCha8 stream; the chosen
/// positions are then sorted.
pub fn sample(pairs: &[QaPair], n: usize, seed: u64) -> Result<Vec<QaPair>, DatasetError> {
    if n == 0 || n > pairs.len() {
        return Err(DatasetError::SampleOutOfRange {
            n,
            len: pairs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<usize> = (0..pairs.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..positions.len());
        positions.swap(i, j);
    }
    let mut chosen = positions[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Display name for a dataset file: the MedLFQA release names for the five
/// known files, the file stem otherwise.
pub fn display_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    match stem {
        "live_qa" => "LiveQA",
        "medication_qa" => "MedicationQA",
        "healthsearch_qa" => "HealthSearchQA",
        "kqa_golden" => "K-QA Golden",
        "kqa_silver_wogold" => "K-QA Silver",
        other => other,
    }
    .to_string()
}

/// Drops pairs flagged ambiguous.
pub fn exclude_ambiguous(pairs: Vec<QaPair>) -> Vec<QaPair> {
    pairs
        .into_iter()
        .filter(|p| p.ambiguous != Some(true))
        .collect()
}

const STATS_COLUMNS: [&str; 7] = [
    "Dataset",
    "Format",
    "# of QA pairs",
    "# of Ambiguous Questions",
    "Avg. Length of Answers",
    "Avg. # of MH statements",
    "Avg. # of NH Statements",
];

fn stats_cells(name: &str, stats: &DatasetStats) -> [String; 7] {
    [
        name.to_string(),
        "(Q, A, MH, NH)".to_string(),
        stats.qa_pair_count.to_string(),
        stats
            .ambiguous_count
            .map_or_else(|| "-".to_string(), |c| c.to_string()),
        format!("{:.1}", stats.avg_answer_length_words),
        format!("{:.1}", stats.avg_mh_count),
        format!("{:.1}", stats.avg_nh_count),
    ]
}

/// Aligned plain-text table with the dataset-overview column set.
pub fn stats_table_text(rows: &[(String, DatasetStats)]) -> String {
    let mut cells: Vec<Vec<String>> = vec![STATS_COLUMNS.iter().map(|s| s.to_string()).collect()];
    cells.extend(
        rows.iter()
            .map(|(name, stats)| stats_cells(name, stats).to_vec()),
    );
    let widths: Vec<usize> = (0..STATS_COLUMNS.len())
        .map(|c| {
            cells
                .iter()
                .map(|r| r[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c < 2 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(rule));
        }
    }
    out
}

pub fn stats_table_csv(rows: &[(String, DatasetStats)]) -> String {
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    let mut out = String::new();
    let header: Vec<String> = STATS_COLUMNS.iter().map(|s| quote(s)).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for (name, stats) in rows {
        let row: Vec<String> = stats_cells(name, stats).iter().map(|s| quote(s)).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, answer_words: usize, mh: usize, nh: usize) -> QaPair {
        QaPair {
            id: id.into(),
            dataset: "t".into(),
            question: format!("question {id}?"),
            reference_answer: vec!["w"; answer_words].join(" "),
            must_have: (0..mh).map(|i| format!("mh {i}")).collect(),
            nice_to_have: (0..nh).map(|i| format!("nh {i}")).collect(),
            ambiguous: None,
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_records_in_order() {
        let f = write_lines(&[
            r#"{"Question":"Q1?","Free_form_answer":"A1","Must_have":["m"],"Nice_to_have":[]}"#,
            "",
            r#"{"id":"x","Question":"Q2?","Free_form_answer":"A2","Must_have":[],"Nice_to_have":["n"]}"#,
        ]);
        let pairs = load_dataset(f.path(), "live_qa").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].id, "live_qa-1");
        assert_eq!(pairs[0].dataset, "live_qa");
        assert_eq!(pairs[1].id, "x");
        assert_eq!(pairs[1].nice_to_have, vec!["n"]);
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let f = write_lines(&[
            r#"{"Question":"Q1?","Free_form_answer":"A1","Must_have":[],"Nice_to_have":[]}"#,
            r#"{"Free_form_answer":"A2","Must_have":[],"Nice_to_have":[]}"#,
        ]);
        let err = load_dataset(f.path(), "d").unwrap_err();
        assert!(
            matches!(err, DatasetError::MissingField { line: 2, ref field } if field == "Question")
        );
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_lines(&[r#"{"Question": "#]);
        assert!(matches!(
            load_dataset(f.path(), "d"),
            Err(DatasetError::MalformedJson { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_ids_and_empty_values_rejected() {
        let rec =
            r#"{"id":"a","Question":"Q?","Free_form_answer":"A","Must_have":[],"Nice_to_have":[]}"#;
        let f = write_lines(&[rec, rec]);
        assert!(matches!(
            load_dataset(f.path(), "d"),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
        let f = write_lines(&[
            r#"{"Question":"  ","Free_form_answer":"A","Must_have":[],"Nice_to_have":[]}"#,
        ]);
        assert!(matches!(
            load_dataset(f.path(), "d"),
            Err(DatasetError::InvalidField { .. })
        ));
        let f = write_lines(&[
            r#"{"Question":"Q","Free_form_answer":"A","Must_have":[""],"Nice_to_have":[]}"#,
        ]);
        assert!(matches!(
            load_dataset(f.path(), "d"),
            Err(DatasetError::InvalidField { .. })
        ));
    }

    #[test]
    fn field_map_renames_source_fields() {
        let f = write_lines(&[r#"{"q":"Q?","a":"A","mh":["m"],"nh":[]}"#]);
        let map = FieldMap {
            question: "q".into(),
            answer: "a".into(),
            must_have: "mh".into(),
            nice_to_have: "nh".into(),
            ..FieldMap::default()
        };
        let pairs = load_dataset_with(f.path(), "d", &map).unwrap();
        assert_eq!(pairs[0].must_have, vec!["m"]);
    }

    #[test]
    fn stats_single_pair() {
        let stats = compute_stats(&[pair("a", 10, 2, 3)]).unwrap();
        assert_eq!(stats.qa_pair_count, 1);
        assert_eq!(stats.avg_answer_length_words, 10.0);
        assert_eq!(stats.avg_mh_count, 2.0);
        assert_eq!(stats.avg_nh_count, 3.0);
        assert_eq!(stats.ambiguous_count, None);
    }

    #[test]
    fn stats_average_answer_length() {
        let stats = compute_stats(&[pair("a", 4, 0, 0), pair("b", 6, 0, 0)]).unwrap();
        assert_eq!(stats.avg_answer_length_words, 5.0);
        assert!(matches!(compute_stats(&[]), Err(DatasetError::Empty)));
    }

    #[test]
    fn sample_identity_and_range() {
        let pairs: Vec<QaPair> = (0..5).map(|i| pair(&i.to_string(), 1, 1, 1)).collect();
        assert_eq!(sample(&pairs, 5, 9).unwrap(), pairs);
        assert!(matches!(
            sample(&pairs, 0, 1),
            Err(DatasetError::SampleOutOfRange { .. })
        ));
        assert!(matches!(
            sample(&pairs, 6, 1),
            Err(DatasetError::SampleOutOfRange { .. })
        ));
    }

    #[test]
    fn stats_tables_have_overview_columns() {
        let stats = compute_stats(&[pair("a", 10, 2, 3)]).unwrap();
        let rows = vec![("LiveQA".to_string(), stats)];
        let csv = stats_table_csv(&rows);
        assert_eq!(
            csv.lines().next().unwrap(),
            "Dataset,Format,# of QA pairs,# of Ambiguous Questions,Avg. Length of Answers,Avg. # of MH statements,Avg. # of NH Statements"
        );
        assert_eq!(
            csv.lines().nth(1).unwrap(),
            "LiveQA,\"(Q, A, MH, NH)\",1,-,10.0,2.0,3.0"
        );
        let text = stats_table_text(&rows);
        assert!(text.lines().nth(2).unwrap().starts_with("LiveQA"));
        assert_eq!(
            display_name(Path::new("data/kqa_silver_wogold.jsonl")),
            "K-QA Silver"
        );
        assert_eq!(display_name(Path::new("mine.jsonl")), "mine");
    }
}
