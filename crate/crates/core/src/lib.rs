//! Structured medical chain-of-thought prompting and long-form answer evaluation.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dataset`] loads and summarises long-form medical QA files (JSONL).
//! * [`prompt`] renders the seven-step structured reasoning prompt and the
//!   baseline prompts, and applies step/feature ablations.
//! * [`llm_client`] is the text-generation provider interface (HTTP, mock,
//!   response cache).
//! * [`generation`] drives a provider in direct or stepwise mode.
//! * [`parser`] turns raw model text into per-step sections plus the answer.
//! * [`entailment`] judges answers against must-have / nice-to-have statements.
//! * [`metrics`] computes ROUGE, Words Composition, Comprehensiveness,
//!   Hallucination and Factuality scores and their aggregates.
//! * [`experiment`] orchestrates runs, ablation suites and reports.

pub mod dataset;
pub mod entailment;
pub mod experiment;
pub mod generation;
mod http;
pub mod llm_client;
pub mod metrics;
pub mod parser;
pub mod prompt;

pub use dataset::{compute_stats, load_dataset, sample, DatasetStats, QaPair};
pub use entailment::{
    judge_all, EntailmentError, EntailmentJudgment, EntailmentLabel, EntailmentProvider,
    MockEntailment, RemoteEntailment, StatementClass,
};
pub use experiment::{
    ablation_suite, emit_report, run, AblationSpec, AblationSuite, AblationTable, Method,
    Providers, ReportFormat, RunConfig, RunResult,
};
pub use generation::{
    generate_direct, generate_stepwise, quality_check, GenerationOutcome, QualityFlags, StepOutput,
};
pub use llm_client::{
    cached_complete, CachedProvider, CompletionParams, LlmError, MockProvider, OpenAiProvider,
    ProviderConfig, ResponseCache, TextProvider,
};
pub use metrics::{
    aggregate, comprehensiveness_score, factuality_score, hallucination_score, rouge_l, rouge_n,
    tokenize_for_rouge, words_composition, Prf, RougeScores, ScoreCard,
};
pub use parser::{
    count_tokens_approx, count_words, parse_structured, render_structured, StructuredResponse,
};
pub use prompt::{
    apply_ablation, baseline_plan, build_baseline_plan, build_med_socot_plan, BaselineKind,
    PromptFeatures, PromptMode, PromptPlan, ReasoningStep, StepSet, StepTransform,
};
