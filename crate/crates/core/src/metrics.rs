//! ROUGE, Words Composition and the statement-based factuality scores.
//!
//! All reported scores are percentages in [0, 100].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entailment::{EntailmentJudgment, EntailmentLabel, StatementClass};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no statements to score (|S| = 0)")]
    NoStatements,
    #[error("no must-have statements (|MH| = 0)")]
    NoMustHave,
    #[error("{name} = {value} is outside [0, 100]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("cannot aggregate an empty group")]
    EmptyGroup,
}

/// Lowercased alphanumeric runs. No stemming, no stopword removal.
pub fn tokenize_for_rouge(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Ratios over the two totals; a zero total yields 0 for that component.
    pub fn from_counts(overlap: usize, predicted: usize, reference: usize) -> Self {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(overlap, predicted);
        let recall = ratio(overlap, reference);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
        *counts.entry(key).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap.
pub fn rouge_n<T: AsRef<str>>(prediction: &[T], reference: &[T], n: usize) -> Prf {
    let pred = ngram_counts(prediction, n);
    let refs = ngram_counts(reference, n);
    let overlap = pred
        .iter()
        .map(|(gram, count)| refs.get(gram).map_or(0, |r| (*count).min(*r)))
        .sum();
    Prf::from_counts(overlap, pred.values().sum(), refs.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                row[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// ROUGE-L over whole token sequences.
pub fn rouge_l<T: AsRef<str>>(prediction: &[T], reference: &[T]) -> Prf {
    Prf::from_counts(
        lcs_len(prediction, reference),
        prediction.len(),
        reference.len(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
}

impl RougeScores {
    pub fn compute(prediction: &str, reference: &str) -> Self {
        let p = tokenize_for_rouge(prediction);
        let r = tokenize_for_rouge(reference);
        Self {
            rouge1: rouge_n(&p, &r, 1),
            rouge2: rouge_n(&p, &r, 2),
            rouge_l: rouge_l(&p, &r),
        }
    }
}

/// Mean of the three F1 values, on a 0-100 scale.
pub fn words_composition(rouge: &RougeScores) -> f64 {
    (rouge.rouge1.f1 + rouge.rouge2.f1 + rouge.rouge_l.f1) / 3.0 * 100.0
}

/// Percentage of all statements (MH and NH) that are contradicted.
pub fn hallucination_score(judgments: &[EntailmentJudgment]) -> Result<f64, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::NoStatements);
    }
    let contradicted = judgments
        .iter()
        .filter(|j| j.label == EntailmentLabel::Contradicts)
        .count();
    Ok(100.0 * contradicted as f64 / judgments.len() as f64)
}

/// Percentage of must-have statements that are entailed; NH is ignored.
pub fn comprehensiveness_score(judgments: &[EntailmentJudgment]) -> Result<f64, MetricsError> {
    let must_have: Vec<_> = judgments
        .iter()
        .filter(|j| j.class == StatementClass::MH)
        .collect();
    if must_have.is_empty() {
        return Err(MetricsError::NoMustHave);
    }
    let entailed = must_have
        .iter()
        .filter(|j| j.label == EntailmentLabel::Entails)
        .count();
    Ok(100.0 * entailed as f64 / must_have.len() as f64)
}

fn check_percent(name: &'static str, value: f64) -> Result<(), MetricsError> {
    if (0.0..=100.0).contains(&value) {
        Ok(())
    } else {
        Err(MetricsError::OutOfRange { name, value })
    }
}

/// `(comprehensiveness - hallucination + 100) / 2`.
pub fn factuality_score(comprehensiveness: f64, hallucination: f64) -> Result<f64, MetricsError> {
    check_percent("comprehensiveness", comprehensiveness)?;
    check_percent("hallucination", hallucination)?;
    Ok((comprehensiveness - hallucination + 100.0) / 2.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub words_composition: f64,
    pub comprehensiveness: f64,
    pub hallucination: f64,
    pub factuality: f64,
    pub rouge: RougeScores,
}

impl ScoreCard {
    /// Scores one prediction against its reference answer and judgments.
    pub fn compute(
        prediction: &str,
        reference: &str,
        judgments: &[EntailmentJudgment],
    ) -> Result<Self, MetricsError> {
        let rouge = RougeScores::compute(prediction, reference);
        let comprehensiveness = comprehensiveness_score(judgments)?;
        let hallucination = hallucination_score(judgments)?;
        Ok(Self {
            words_composition: words_composition(&rouge),
            comprehensiveness,
            hallucination,
            factuality: factuality_score(comprehensiveness, hallucination)?,
            rouge,
        })
    }
}

fn mean_prf(items: &[Prf]) -> Prf {
    let n = items.len() as f64;
    Prf {
        precision: items.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: items.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: items.iter().map(|p| p.f1).sum::<f64>() / n,
    }
}

/// Field-wise arithmetic mean.
pub fn mean_card(cards: &[ScoreCard]) -> Result<ScoreCard, MetricsError> {
    if cards.is_empty() {
        return Err(MetricsError::EmptyGroup);
    }
    let n = cards.len() as f64;
    let mean = |f: fn(&ScoreCard) -> f64| cards.iter().map(f).sum::<f64>() / n;
    let prfs = |f: fn(&RougeScores) -> Prf| cards.iter().map(|c| f(&c.rouge)).collect::<Vec<_>>();
    Ok(ScoreCard {
        words_composition: mean(|c| c.words_composition),
        comprehensiveness: mean(|c| c.comprehensiveness),
        hallucination: mean(|c| c.hallucination),
        factuality: mean(|c| c.factuality),
        rouge: RougeScores {
            rouge1: mean_prf(&prfs(|r| r.rouge1)),
            rouge2: mean_prf(&prfs(|r| r.rouge2)),
            rouge_l: mean_prf(&prfs(|r| r.rouge_l)),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetAggregate {
    pub dataset: String,
    pub pairs: usize,
    pub card: ScoreCard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// In order of first appearance.
    pub per_dataset: Vec<DatasetAggregate>,
    /// Unweighted mean of the per-dataset means.
    pub overall: ScoreCard,
}

/// Per-dataset means, then the unweighted mean across datasets.
pub fn aggregate(cards: &[(String, ScoreCard)]) -> Result<Aggregate, MetricsError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<ScoreCard>> = HashMap::new();
    for (dataset, card) in cards {
        let group = groups.entry(dataset).or_insert_with(|| {
            order.push(dataset);
            Vec::new()
        });
        group.push(*card);
    }
    let per_dataset = order
        .iter()
        .map(|dataset| {
            let group = &groups[dataset];
            Ok(DatasetAggregate {
                dataset: dataset.to_string(),
                pairs: group.len(),
                card: mean_card(group)?,
            })
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    let means: Vec<ScoreCard> = per_dataset.iter().map(|d| d.card).collect();
    Ok(Aggregate {
        overall: mean_card(&means)?,
        per_dataset,
    })
}

/// Rounds to one decimal the way the reported tables do: first to
/// hundredths, then half-to-even on the tenths digit.
pub fn round1(value: f64) -> f64 {
    let hundredths = (value * 100.0).round() as i64;
    let mut tenths = hundredths.div_euclid(10);
    let rest = hundredths.rem_euclid(10);
    if rest > 5 || (rest == 5 && tenths % 2 != 0) {
        tenths += 1;
    }
    tenths as f64 / 10.0
}

/// `round1` formatted with exactly one decimal.
pub fn fmt1(value: f64) -> String {
    let rounded = round1(value);
    // avoid "-0.0"
    if rounded == 0.0 {
        "0.0".to_string()
    } else {
        format!("{rounded:.1}")
    }
}
