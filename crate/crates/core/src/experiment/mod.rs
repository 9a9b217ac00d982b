//! End-to-end runs: load, prompt, generate, parse, judge, score, aggregate.
//! Also the ablation suites and report emission.

mod ablation;
mod report;

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dataset::{self, DatasetError, QaPair};
use crate::entailment::{
    judge_all, EntailmentError, EntailmentJudgment, EntailmentProvider, MockEntailment, NliConfig,
    RemoteEntailment,
};
use crate::generation::{self, GenerationError, GenerationOutcome};
use crate::llm_client::sha256_hex;
use crate::llm_client::{
    CachedProvider, CompletionParams, LlmError, MockProvider, OpenAiProvider, ProviderConfig,
    ResponseCache, TextProvider,
};
use crate::metrics::{self, MetricsError, ScoreCard};
use crate::prompt::{
    apply_ablation, baseline_plan, build_med_socot_plan, BaselineKind, PromptError, PromptFeatures,
    PromptMode, PromptPlan, StepSet, StepTransform,
};

pub use ablation::{ablation_suite, delta, AblationRow, AblationSuite, AblationTable, Delta};
pub use report::{emit_report, render_report, ReportFormat};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("dataset {name}: {source}")]
    Dataset {
        name: String,
        #[source]
        source: DatasetError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Entailment(#[from] EntailmentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("I/O: {0}")]
    Io(#[from] io::Error),
    #[error("every pair of dataset {name} failed")]
    DatasetFailed { name: String },
    #[error("nothing to report")]
    EmptyReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    ZeroShot,
    PlainCoT,
    MedSoCoT,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ZeroShot => "Zero-shot",
            Self::PlainCoT => "CoT",
            Self::MedSoCoT => "Med-SoCoT",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "zeroshot" => Ok(Self::ZeroShot),
            "plaincot" | "cot" => Ok(Self::PlainCoT),
            "medsocot" => Ok(Self::MedSoCoT),
            _ => Err(format!("unknown method `{s}` (zero-shot, cot, med-socot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    OneShotExample,
    InstructionReinforcement,
    SpecializedMarkers,
    AllFeatures,
}

impl FeatureName {
    pub fn title(self) -> &'static str {
        match self {
            Self::OneShotExample => "One-shot Example",
            Self::InstructionReinforcement => "Instruction Reinforcement",
            Self::SpecializedMarkers => "Specialized Markers",
            Self::AllFeatures => "All Features",
        }
    }

    pub fn disable(self, features: &PromptFeatures) -> PromptFeatures {
        let mut out = *features;
        match self {
            Self::OneShotExample => out.one_shot_example = false,
            Self::InstructionReinforcement => out.instruction_reinforcement = false,
            Self::SpecializedMarkers => out.specialized_markers = false,
            Self::AllFeatures => {
                out.one_shot_example = false;
                out.instruction_reinforcement = false;
                out.specialized_markers = false;
            }
        }
        out
    }
}

impl FromStr for FeatureName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "one_shot_example" | "one_shot" => Ok(Self::OneShotExample),
            "instruction_reinforcement" => Ok(Self::InstructionReinforcement),
            "specialized_markers" => Ok(Self::SpecializedMarkers),
            "all_features" | "all" => Ok(Self::AllFeatures),
            _ => Err(format!("unknown feature `{s}`")),
        }
    }
}

/// A single prompt variation applied on top of the full structured plan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum AblationSpec {
    RemoveStep(u8),
    RetainSteps(Vec<u8>),
    SwapSteps(u8, u8),
    DisableFeature(FeatureName),
}

impl AblationSpec {
    pub fn label(&self) -> String {
        match self {
            Self::RemoveStep(k) => format!("w/o Step {k}"),
            Self::RetainSteps(ks) => ks
                .iter()
                .map(|k| format!("Step {k}"))
                .collect::<Vec<_>>()
                .join(" + "),
            Self::SwapSteps(a, b) => format!("Step {a} ↔ Step {b}"),
            Self::DisableFeature(f) => format!("w/o {}", f.title()),
        }
    }

    pub fn apply(
        &self,
        steps: &StepSet,
        features: &PromptFeatures,
    ) -> Result<(StepSet, PromptFeatures), PromptError> {
        let transform = match self {
            Self::RemoveStep(k) => StepTransform::RemoveStep(*k),
            Self::RetainSteps(ks) => StepTransform::RetainSteps(ks.clone()),
            Self::SwapSteps(a, b) => StepTransform::SwapSteps(*a, *b),
            Self::DisableFeature(f) => return Ok((steps.clone(), f.disable(features))),
        };
        Ok((apply_ablation(steps, &transform)?, *features))
    }
}

/// `remove:3`, `retain:1,3,6`, `swap:3,6` or `disable:one_shot_example`.
impl FromStr for AblationSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| format!("ablation `{s}` should look like kind:argument"))?;
        let steps = || -> Result<Vec<u8>, String> {
            arg.split(',')
                .map(|k| {
                    k.trim()
                        .parse::<u8>()
                        .map_err(|_| format!("bad step number `{k}`"))
                })
                .collect()
        };
        match kind.trim() {
            "remove" => Ok(Self::RemoveStep(
                arg.trim()
                    .parse()
                    .map_err(|_| format!("bad step number `{arg}`"))?,
            )),
            "retain" => Ok(Self::RetainSteps(steps()?)),
            "swap" => match steps()?.as_slice() {
                [a, b] => Ok(Self::SwapSteps(*a, *b)),
                _ => Err("swap takes exactly two steps".into()),
            },
            "disable" => Ok(Self::DisableFeature(arg.trim().parse()?)),
            other => Err(format!("unknown ablation kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSettings {
    Mock {
        #[serde(default)]
        fixtures: Option<PathBuf>,
    },
    #[serde(rename = "openai")]
    OpenAi(ProviderConfig),
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self::Mock { fixtures: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NliSettings {
    #[default]
    Mock,
    Remote(NliConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n: usize,
    pub seed: u64,
}

/// One experiment arm. Loaded from JSON; missing fields take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Row label in reports; derived from model, method and variant if unset.
    pub label: Option<String>,
    pub method: Method,
    pub mode: PromptMode,
    pub llm: LlmSettings,
    pub nli: NliSettings,
    pub datasets: Vec<DatasetSpec>,
    pub sample: Option<SampleSpec>,
    pub exclude_ambiguous: bool,
    pub features: PromptFeatures,
    pub ablation: Option<AblationSpec>,
    pub params: CompletionParams,
    /// Score the whole structured output instead of the extracted answer.
    pub score_full_text: bool,
    /// Per-dataset failed-pair fraction above which aggregates are flagged.
    pub failure_threshold: f64,
    // not part of the digest
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub workers: usize,
    pub resume: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: None,
            method: Method::MedSoCoT,
            mode: PromptMode::Direct,
            llm: LlmSettings::default(),
            nli: NliSettings::default(),
            datasets: Vec::new(),
            sample: None,
            exclude_ambiguous: false,
            features: PromptFeatures::default(),
            ablation: None,
            params: CompletionParams::default(),
            score_full_text: false,
            failure_threshold: 0.05,
            output_dir: PathBuf::from("runs"),
            cache_dir: None,
            workers: 1,
            resume: false,
        }
    }
}

const NON_DIGEST_FIELDS: [&str; 4] = ["output_dir", "cache_dir", "workers", "resume"];

fn canonical_json(value: &Value) -> String {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body = keys
                .iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        Value::String((*k).clone()),
                        canonical_json(&map[*k])
                    )
                })
                .collect::<Vec<_>>()
                .join(",");
            format!("{{{body}}}")
        }
        Value::Array(items) => format!(
            "[{}]",
            items
                .iter()
                .map(canonical_json)
                .collect::<Vec<_>>()
                .join(",")
        ),
        other => other.to_string(),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.mode == PromptMode::Stepwise && self.method != Method::MedSoCoT {
            return bad("stepwise mode requires the MedSoCoT method");
        }
        if self.ablation.is_some() && self.method != Method::MedSoCoT {
            return bad("ablations require the MedSoCoT method");
        }
        if self.datasets.is_empty() {
            return bad("no datasets configured");
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("dataset names must be unique");
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return bad("failure_threshold must be within [0, 1]");
        }
        if let Some(s) = self.sample {
            if s.n == 0 {
                return bad("sample size must be > 0");
            }
        }
        self.features.validate()?;
        self.params.validate()?;
        Ok(())
    }

    /// sha256 of the canonical JSON form, ignoring where outputs and the
    /// cache live and how many workers run.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(map) = &mut value {
            for key in NON_DIGEST_FIELDS {
                map.remove(key);
            }
        }
        sha256_hex(canonical_json(&value).as_bytes())
    }

    pub fn plan(&self) -> Result<PromptPlan, ExperimentError> {
        match self.method {
            Method::ZeroShot => Ok(baseline_plan(BaselineKind::ZeroShot)),
            Method::PlainCoT => Ok(baseline_plan(BaselineKind::PlainCoT)),
            Method::MedSoCoT => {
                let (steps, features) = match &self.ablation {
                    Some(spec) => spec.apply(&StepSet::full(), &self.features)?,
                    None => (StepSet::full(), self.features),
                };
                Ok(build_med_socot_plan(&steps, &features, self.mode)?)
            }
        }
    }

    pub fn label_for(&self, model: &str) -> String {
        if let Some(label) = &self.label {
            return label.clone();
        }
        let mut label = format!("{model} w/ {}", self.method);
        if self.method == Method::MedSoCoT {
            label.push_str(match self.mode {
                PromptMode::Direct => " (Direct)",
                PromptMode::Stepwise => " (Stepwise)",
            });
        }
        if let Some(spec) = &self.ablation {
            label.push_str(", ");
            label.push_str(&spec.label());
        }
        label
    }
}

/// The generation and entailment backends a run talks to.
#[derive(Clone)]
pub struct Providers {
    pub llm: Arc<dyn TextProvider>,
    pub nli: Arc<dyn EntailmentProvider>,
}

impl Providers {
    pub fn new(llm: Arc<dyn TextProvider>, nli: Arc<dyn EntailmentProvider>) -> Self {
        Self { llm, nli }
    }

    /// Builds the backends named in `config`, wrapping the LLM in a response
    /// cache when `cache_dir` is set.
    pub fn from_config(config: &RunConfig) -> Result<Self, ExperimentError> {
        let llm: Arc<dyn TextProvider> = match &config.llm {
            LlmSettings::Mock {
                fixtures: Some(path),
            } => Arc::new(MockProvider::from_fixture_file(path)?),
            LlmSettings::Mock { fixtures: None } => Arc::new(MockProvider::new("mock")),
            LlmSettings::OpenAi(cfg) => Arc::new(OpenAiProvider::new(cfg.clone())?),
        };
        let nli: Arc<dyn EntailmentProvider> = match &config.nli {
            NliSettings::Mock => Arc::new(MockEntailment),
            NliSettings::Remote(cfg) => Arc::new(RemoteEntailment::new(cfg.clone())?),
        };
        let providers = Self { llm, nli };
        match &config.cache_dir {
            Some(dir) => providers.with_cache(dir),
            None => Ok(providers),
        }
    }

    pub fn with_cache(self, dir: &Path) -> Result<Self, ExperimentError> {
        let cache = ResponseCache::open(dir)?;
        Ok(Self {
            llm: Arc::new(CachedProvider::new(self.llm, cache)),
            nli: self.nli,
        })
    }
}

/// Judgments and scores of one pair; `card` is absent when the pair failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub question_id: String,
    pub dataset: String,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub judgments: Vec<EntailmentJudgment>,
    pub card: Option<ScoreCard>,
}

/// The text scored against the statements: the long-form answer, or with
/// `full_text` every section followed by the answer.
pub fn scored_text(outcome: &GenerationOutcome, full_text: bool) -> String {
    if !full_text {
        return outcome.response.long_form_answer.clone();
    }
    let mut parts: Vec<&str> = outcome
        .response
        .sections
        .iter()
        .filter(|s| !s.step.is_answer())
        .filter_map(|s| s.text.as_deref())
        .filter(|t| !t.trim().is_empty())
        .collect();
    parts.push(&outcome.response.long_form_answer);
    parts.join("\n\n")
}

fn score_one(
    pair: &QaPair,
    outcome: Option<&GenerationOutcome>,
    nli: &dyn EntailmentProvider,
    full_text: bool,
) -> ScoredPair {
    let fail = |error: String| ScoredPair {
        question_id: pair.id.clone(),
        dataset: pair.dataset.clone(),
        failed: true,
        error: Some(error),
        judgments: Vec::new(),
        card: None,
    };
    let outcome = match outcome {
        Some(o) if !o.failed => o,
        Some(o) => {
            return fail(
                o.error
                    .clone()
                    .unwrap_or_else(|| "generation failed".into()),
            )
        }
        None => return fail("no generation for this pair".into()),
    };
    let text = scored_text(outcome, full_text);
    let judgments = match judge_all(&text, pair, nli) {
        Ok(j) => j,
        Err(e) => return fail(e.to_string()),
    };
    match ScoreCard::compute(&text, &pair.reference_answer, &judgments) {
        Ok(card) => ScoredPair {
            question_id: pair.id.clone(),
            dataset: pair.dataset.clone(),
            failed: false,
            error: None,
            judgments,
            card: Some(card),
        },
        Err(e) => ScoredPair {
            judgments,
            ..fail(e.to_string())
        },
    }
}

/// Scores `outcomes` against `pairs`, matching by question id. Output order
/// follows `pairs`.
pub fn score_outcomes(
    pairs: &[QaPair],
    outcomes: &[GenerationOutcome],
    nli: &dyn EntailmentProvider,
    full_text: bool,
    workers: usize,
) -> Result<Vec<ScoredPair>, ExperimentError> {
    let by_id: std::collections::HashMap<&str, &GenerationOutcome> = outcomes
        .iter()
        .map(|o| (o.question_id.as_str(), o))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GenerationError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|pair| score_one(pair, by_id.get(pair.id.as_str()).copied(), nli, full_text))
            .collect()
    }))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub name: String,
    pub pairs: usize,
    pub failed: usize,
    /// Failure rate above the configured threshold.
    pub unreliable: bool,
    pub card: ScoreCard,
}

impl DatasetResult {
    pub fn failure_rate(&self) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            self.failed as f64 / self.pairs as f64
        }
    }
}

/// Per-dataset scores of the successfully scored pairs, with failure
/// accounting. Fails when a dataset has no scored pair at all.
pub fn summarize(
    datasets: &[String],
    scored: &[ScoredPair],
    failure_threshold: f64,
) -> Result<(Vec<DatasetResult>, ScoreCard), ExperimentError> {
    let mut results = Vec::with_capacity(datasets.len());
    for name in datasets {
        let rows: Vec<&ScoredPair> = scored.iter().filter(|s| &s.dataset == name).collect();
        let cards: Vec<ScoreCard> = rows.iter().filter_map(|s| s.card).collect();
        if cards.is_empty() {
            return Err(ExperimentError::DatasetFailed { name: name.clone() });
        }
        let failed = rows.len() - cards.len();
        let result = DatasetResult {
            name: name.clone(),
            pairs: rows.len(),
            failed,
            unreliable: false,
            card: metrics::mean_card(&cards)?,
        };
        let unreliable = result.failure_rate() > failure_threshold;
        if unreliable {
            log::warn!(
                "dataset {name}: {failed} of {} pairs failed; aggregate marked unreliable",
                rows.len()
            );
        } else if failed > 0 {
            log::warn!(
                "dataset {name}: {failed} of {} pairs failed and were excluded",
                rows.len()
            );
        }
        results.push(DatasetResult {
            unreliable,
            ..result
        });
    }
    let means: Vec<ScoreCard> = results.iter().map(|r| r.card).collect();
    let overall = metrics::mean_card(&means)?;
    Ok((results, overall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub digest: String,
    pub label: String,
    pub method: Method,
    pub mode: PromptMode,
    pub datasets: Vec<DatasetResult>,
    /// Unweighted mean over datasets.
    pub overall: ScoreCard,
    pub output_dir: PathBuf,
    pub trace_files: Vec<PathBuf>,
    /// Logical provider calls of the pairs generated in this invocation.
    pub provider_calls: usize,
    pub wall_clock_secs: f64,
}

/// Loads one dataset with the config's ambiguity filter and sampling applied.
pub fn load_pairs(config: &RunConfig, spec: &DatasetSpec) -> Result<Vec<QaPair>, ExperimentError> {
    let wrap = |source| ExperimentError::Dataset {
        name: spec.name.clone(),
        source,
    };
    let mut pairs = dataset::load_dataset(&spec.path, &spec.name).map_err(wrap)?;
    if config.exclude_ambiguous {
        pairs = dataset::exclude_ambiguous(pairs);
    }
    if let Some(s) = config.sample {
        pairs = dataset::sample(&pairs, s.n.min(pairs.len()), s.seed).map_err(wrap)?;
    }
    Ok(pairs)
}

fn append_timings(path: &Path, outcomes: &[GenerationOutcome]) -> io::Result<()> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for o in outcomes.iter().filter(|o| !o.timings.is_empty()) {
        let line = serde_json::json!({ "question_id": o.question_id, "dataset": o.dataset, "calls": o.timings });
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Generates one dataset, reusing outcomes already in the trace when
/// resuming. Outcomes come back in input order with the number of provider
/// calls made.
pub fn generate_dataset(
    config: &RunConfig,
    plan: &PromptPlan,
    providers: &Providers,
    pairs: &[QaPair],
    trace_path: &Path,
) -> Result<(Vec<GenerationOutcome>, usize), ExperimentError> {
    let existing = if config.resume {
        generation::read_trace_if_exists(trace_path)?
    } else {
        Vec::new()
    };
    let done: std::collections::HashMap<String, GenerationOutcome> = existing
        .into_iter()
        .map(|o| (o.question_id.clone(), o))
        .collect();
    let pending: Vec<QaPair> = pairs
        .iter()
        .filter(|p| !done.contains_key(&p.id))
        .cloned()
        .collect();
    if !done.is_empty() {
        log::info!(
            "resuming: {} pairs already in {}",
            done.len(),
            trace_path.display()
        );
    }
    let results = generation::generate_batch(
        &pending,
        plan,
        providers.llm.as_ref(),
        &config.params,
        config.workers,
    )?;
    let mut fresh: std::collections::HashMap<String, GenerationOutcome> =
        std::collections::HashMap::new();
    let mut calls = 0;
    for (pair, result) in pending.iter().zip(results) {
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{e}");
                let calls = usize::from(matches!(e, GenerationError::Provider { .. }));
                GenerationOutcome::failure(pair, plan.mode, calls, &e)
            }
        };
        calls += outcome.provider_calls;
        fresh.insert(pair.id.clone(), outcome);
    }
    let mut done = done;
    let outcomes: Vec<GenerationOutcome> = pairs
        .iter()
        .map(|p| {
            fresh
                .remove(&p.id)
                .or_else(|| done.remove(&p.id))
                .expect("every pair generated or resumed")
        })
        .collect();
    Ok((outcomes, calls))
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Executes one configured arm. Outputs land in `<output_dir>/<digest>/`.
pub fn run(config: &RunConfig, providers: &Providers) -> Result<RunResult, ExperimentError> {
    config.validate()?;
    let clock = Instant::now();
    let digest = config.digest();
    let out = config.output_dir.join(&digest);
    fs::create_dir_all(out.join("traces"))?;
    fs::create_dir_all(out.join("scores"))?;
    let mut config_json = serde_json::to_value(config).map_err(io::Error::other)?;
    config_json["digest"] = Value::String(digest.clone());
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&config_json).map_err(io::Error::other)? + "\n",
    )?;
    let timings_path = out.join("timings.jsonl");

    let plan = config.plan()?;
    let mut names = Vec::new();
    let mut scored_all = Vec::new();
    let mut trace_files = Vec::new();
    let mut provider_calls = 0;
    for spec in &config.datasets {
        let pairs = load_pairs(config, spec)?;
        log::info!("dataset {}: {} pairs", spec.name, pairs.len());
        let trace_path = out
            .join("traces")
            .join(format!("{}.jsonl", file_stem(&spec.name)));
        let (outcomes, calls) = generate_dataset(config, &plan, providers, &pairs, &trace_path)?;
        provider_calls += calls;
        generation::write_trace(&trace_path, &outcomes)?;
        if let Err(e) = append_timings(&timings_path, &outcomes) {
            log::warn!("could not record timings: {e}");
        }
        let scored = score_outcomes(
            &pairs,
            &outcomes,
            providers.nli.as_ref(),
            config.score_full_text,
            config.workers,
        )?;
        write_jsonl(
            &out.join("scores")
                .join(format!("{}.jsonl", file_stem(&spec.name))),
            &scored,
        )?;
        trace_files.push(trace_path);
        names.push(spec.name.clone());
        scored_all.extend(scored);
    }

    let (datasets, overall) = summarize(&names, &scored_all, config.failure_threshold)?;
    let result = RunResult {
        digest,
        label: config.label_for(providers.llm.model_id()),
        method: config.method,
        mode: config.mode,
        datasets,
        overall,
        output_dir: out.clone(),
        trace_files,
        provider_calls,
        wall_clock_secs: clock.elapsed().as_secs_f64(),
    };
    fs::write(out.join("aggregate.csv"), aggregate_csv(&result))?;
    fs::write(
        out.join("result.json"),
        serde_json::to_string_pretty(&result).map_err(io::Error::other)? + "\n",
    )?;
    emit_report(std::slice::from_ref(&result), ReportFormat::Markdown, &out)?;
    Ok(result)
}

/// Flat per-dataset aggregates plus the cross-dataset average.
pub fn aggregate_csv(result: &RunResult) -> String {
    datasets_csv(&result.datasets, &result.overall)
}

pub fn datasets_csv(datasets: &[DatasetResult], overall: &ScoreCard) -> String {
    let mut out = String::from(
        "dataset,pairs,failed,unreliable,words_composition,comprehensiveness,hallucination,factuality,rouge1_f1,rouge2_f1,rougeL_f1\n",
    );
    let row = |out: &mut String,
               name: &str,
               pairs: String,
               failed: String,
               unreliable: String,
               c: &ScoreCard| {
        out.push_str(&format!(
            "{name},{pairs},{failed},{unreliable},{},{},{},{},{},{},{}\n",
            c.words_composition,
            c.comprehensiveness,
            c.hallucination,
            c.factuality,
            c.rouge.rouge1.f1,
            c.rouge.rouge2.f1,
            c.rouge.rouge_l.f1
        ));
    };
    for d in datasets {
        row(
            &mut out,
            &d.name,
            d.pairs.to_string(),
            d.failed.to_string(),
            d.unreliable.to_string(),
            &d.card,
        );
    }
    row(
        &mut out,
        "Average",
        String::new(),
        String::new(),
        String::new(),
        overall,
    );
    out
}
