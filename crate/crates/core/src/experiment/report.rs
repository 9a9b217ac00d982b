use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::json;

use super::ablation::csv_field;
use super::{ExperimentError, RunResult};
use crate::metrics::{fmt1, round1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Markdown => "md",
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Markdown => "markdown",
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

/// Dataset columns in order of first appearance across results.
fn dataset_columns(results: &[RunResult]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in results {
        for d in &r.datasets {
            if !names.contains(&d.name) {
                names.push(d.name.clone());
            }
        }
    }
    names
}

fn check(results: &[RunResult]) -> Result<Vec<String>, ExperimentError> {
    if results.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    let columns = dataset_columns(results);
    if columns.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    Ok(columns)
}

fn markdown(results: &[RunResult], columns: &[String]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "<!-- {}: config digest {} -->\n",
            r.label, r.digest
        ));
    }
    let mut header = vec!["Method".to_string()];
    for name in columns.iter().map(String::as_str).chain(["Average"]) {
        header.push(format!("{name} Words"));
        header.push(format!("{name} Fact."));
    }
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    let align: Vec<&str> = std::iter::once("---")
        .chain(std::iter::repeat_n("---:", header.len() - 1))
        .collect();
    out.push_str(&format!("|{}|\n", align.join("|")));
    let mut flagged = false;
    for r in results {
        let mut cells = vec![r.label.clone()];
        for name in columns {
            match r.datasets.iter().find(|d| &d.name == name) {
                Some(d) => {
                    let mark = if d.unreliable { "*" } else { "" };
                    flagged |= d.unreliable;
                    cells.push(format!("{}{mark}", fmt1(d.card.words_composition)));
                    cells.push(format!("{}{mark}", fmt1(d.card.factuality)));
                }
                None => cells.extend(["-".to_string(), "-".to_string()]),
            }
        }
        cells.push(fmt1(r.overall.words_composition));
        cells.push(fmt1(r.overall.factuality));
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    if flagged {
        out.push_str(
            "\n\\* more failed pairs than the configured threshold; aggregate unreliable\n",
        );
    }
    out
}

fn csv(results: &[RunResult]) -> String {
    let mut out = String::from(
        "method,digest,dataset,pairs,failed,unreliable,words_composition,comprehensiveness,hallucination,factuality\n",
    );
    for r in results {
        for d in &r.datasets {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                csv_field(&r.label),
                r.digest,
                csv_field(&d.name),
                d.pairs,
                d.failed,
                d.unreliable,
                fmt1(d.card.words_composition),
                fmt1(d.card.comprehensiveness),
                fmt1(d.card.hallucination),
                fmt1(d.card.factuality)
            ));
        }
        out.push_str(&format!(
            "{},{},Average,,,,{},{},{},{}\n",
            csv_field(&r.label),
            r.digest,
            fmt1(r.overall.words_composition),
            fmt1(r.overall.comprehensiveness),
            fmt1(r.overall.hallucination),
            fmt1(r.overall.factuality)
        ));
    }
    out
}

fn json_report(results: &[RunResult]) -> String {
    let rows: Vec<_> = results
        .iter()
        .map(|r| {
            let datasets: Vec<_> = r
                .datasets
                .iter()
                .map(|d| {
                    json!({
                        "name": d.name,
                        "pairs": d.pairs,
                        "failed": d.failed,
                        "unreliable": d.unreliable,
                        "words_composition": round1(d.card.words_composition),
                        "comprehensiveness": round1(d.card.comprehensiveness),
                        "hallucination": round1(d.card.hallucination),
                        "factuality": round1(d.card.factuality),
                    })
                })
                .collect();
            json!({
                "label": r.label,
                "digest": r.digest,
                "method": r.method,
                "mode": r.mode,
                "datasets": datasets,
                "average": {
                    "words_composition": round1(r.overall.words_composition),
                    "comprehensiveness": round1(r.overall.comprehensiveness),
                    "hallucination": round1(r.overall.hallucination),
                    "factuality": round1(r.overall.factuality),
                },
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "results": rows })).expect("report serialises") + "\n"
}

/// Renders the report text. Wall-clock data is left out so reports of
/// identical runs are byte-identical.
pub fn render_report(
    results: &[RunResult],
    format: ReportFormat,
) -> Result<String, ExperimentError> {
    let columns = check(results)?;
    Ok(match format {
        ReportFormat::Markdown => markdown(results, &columns),
        ReportFormat::Csv => csv(results),
        ReportFormat::Json => json_report(results),
    })
}

/// Writes `report.<ext>` into `dir` and returns its path.
pub fn emit_report(
    results: &[RunResult],
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf, ExperimentError> {
    let text = render_report(results, format)?;
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("report.{}", format.extension()));
    fs::write(&path, text)?;
    Ok(path)
}
