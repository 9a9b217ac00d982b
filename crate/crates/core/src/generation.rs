//! Running prompt plans against a provider: single-call direct generation or
//! stepwise generation with per-step quality checks and a summary call.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::QaPair;
use crate::llm_client::{CompletionParams, LlmError, TextProvider};
use crate::parser::{
    count_words, cut_at_end_marker, match_heading, parse_structured, truncate_to_tokens,
    Diagnostic, Section, StructuredResponse,
};
use crate::prompt::{assets, PromptError, PromptMode, PromptPlan, ReasoningStep, StepSet};

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("question {question_id}: {source}")]
    Provider {
        question_id: String,
        #[source]
        source: LlmError,
    },
    #[error("question {question_id}: {source}")]
    Prompt {
        question_id: String,
        #[source]
        source: PromptError,
    },
    #[error("trace I/O: {0}")]
    Io(#[from] io::Error),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

impl GenerationError {
    pub fn question_id(&self) -> Option<&str> {
        match self {
            Self::Provider { question_id, .. } | Self::Prompt { question_id, .. } => {
                Some(question_id)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityFlags {
    pub over_length_truncated: bool,
    pub off_format_stripped: bool,
    pub duplicate_removed: bool,
    pub empty: bool,
}

impl QualityFlags {
    pub fn any(&self) -> bool {
        self.over_length_truncated
            || self.off_format_stripped
            || self.duplicate_removed
            || self.empty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub step: ReasoningStep,
    pub raw_text: String,
    pub cleaned_text: String,
    pub flags: QualityFlags,
    /// Provider error or empty output; failed steps are left out of the
    /// context of later steps.
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall-clock record of one provider call. Kept out of the trace file so
/// traces stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallTiming {
    pub label: String,
    pub started_unix_ms: u128,
    pub elapsed_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub question_id: String,
    #[serde(default)]
    pub dataset: String,
    pub mode: PromptMode,
    pub steps: Vec<StepOutput>,
    pub raw_final_text: String,
    pub response: StructuredResponse,
    pub provider_calls: usize,
    #[serde(default)]
    pub answer_truncated: bool,
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub timings: Vec<CallTiming>,
}

impl PartialEq for GenerationOutcome {
    // timings are wall-clock data and deliberately not compared
    fn eq(&self, other: &Self) -> bool {
        self.question_id == other.question_id
            && self.dataset == other.dataset
            && self.mode == other.mode
            && self.steps == other.steps
            && self.raw_final_text == other.raw_final_text
            && self.response == other.response
            && self.provider_calls == other.provider_calls
            && self.answer_truncated == other.answer_truncated
            && self.failed == other.failed
            && self.error == other.error
    }
}

impl GenerationOutcome {
    /// Placeholder outcome for a pair whose generation errored outright.
    pub fn failure(
        pair: &QaPair,
        mode: PromptMode,
        provider_calls: usize,
        error: &GenerationError,
    ) -> Self {
        Self {
            question_id: pair.id.clone(),
            dataset: pair.dataset.clone(),
            mode,
            steps: Vec::new(),
            raw_final_text: String::new(),
            response: StructuredResponse::default(),
            provider_calls,
            answer_truncated: false,
            failed: true,
            error: Some(error.to_string()),
            timings: Vec::new(),
        }
    }

    pub fn long_form_answer(&self) -> &str {
        &self.response.long_form_answer
    }
}

fn timed<T>(label: &str, timings: &mut Vec<CallTiming>, f: impl FnOnce() -> T) -> T {
    let started_unix_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let clock = Instant::now();
    let value = f();
    timings.push(CallTiming {
        label: label.to_string(),
        started_unix_ms,
        elapsed_ms: clock.elapsed().as_millis(),
    });
    value
}

fn require_mode(
    plan: &PromptPlan,
    expected: PromptMode,
    pair: &QaPair,
) -> Result<(), GenerationError> {
    if plan.mode != expected {
        return Err(GenerationError::Prompt {
            question_id: pair.id.clone(),
            source: PromptError::ModeMismatch {
                expected,
                actual: plan.mode,
            },
        });
    }
    Ok(())
}

/// One provider call with the stage-1 token budget; the output is parsed
/// against the plan's step set.
pub fn generate_direct(
    pair: &QaPair,
    plan: &PromptPlan,
    provider: &dyn TextProvider,
    params: &CompletionParams,
) -> Result<GenerationOutcome, GenerationError> {
    require_mode(plan, PromptMode::Direct, pair)?;
    let prompt = plan
        .render_direct(&pair.question)
        .map_err(|source| GenerationError::Prompt {
            question_id: pair.id.clone(),
            source,
        })?;
    let call_params = params.with_max_new_tokens(plan.features.stage1_token_limit);
    let mut timings = Vec::new();
    let raw = timed("direct", &mut timings, || {
        provider.complete(&prompt, &call_params)
    })
    .map_err(|source| GenerationError::Provider {
        question_id: pair.id.clone(),
        source,
    })?;
    let response = parse_structured(&raw, &plan.step_set, plan.markers_enabled());
    Ok(GenerationOutcome {
        question_id: pair.id.clone(),
        dataset: pair.dataset.clone(),
        mode: PromptMode::Direct,
        steps: Vec::new(),
        raw_final_text: raw,
        response,
        provider_calls: 1,
        answer_truncated: false,
        failed: false,
        error: None,
        timings,
    })
}

/// One call per reasoning step, each seeing the cleaned text of every
/// earlier successful step, then one summary call that yields the answer.
pub fn generate_stepwise(
    pair: &QaPair,
    plan: &PromptPlan,
    provider: &dyn TextProvider,
    params: &CompletionParams,
) -> Result<GenerationOutcome, GenerationError> {
    require_mode(plan, PromptMode::Stepwise, pair)?;
    let prompt_err = |source| GenerationError::Prompt {
        question_id: pair.id.clone(),
        source,
    };
    let limit = plan.features.step_word_limit as usize;
    let mut timings = Vec::new();
    let mut steps: Vec<StepOutput> = Vec::new();
    let mut calls = 0;

    for step_prompt in plan.step_prompts() {
        let context = previous_context(plan, &steps);
        let prompt = step_prompt
            .render(&pair.question, &context)
            .map_err(prompt_err)?;
        calls += 1;
        let label = format!("step-{}", step_prompt.position);
        let output = match timed(&label, &mut timings, || provider.complete(&prompt, params)) {
            Ok(raw) => {
                let (cleaned_text, flags) = quality_check(&raw, limit, &pair.question);
                StepOutput {
                    step: step_prompt.step,
                    raw_text: raw,
                    failed: cleaned_text.is_empty(),
                    cleaned_text,
                    flags,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!(
                    "question {}: step {} failed: {e}",
                    pair.id,
                    step_prompt.step
                );
                StepOutput {
                    step: step_prompt.step,
                    raw_text: String::new(),
                    cleaned_text: String::new(),
                    flags: QualityFlags::default(),
                    failed: true,
                    error: Some(e.to_string()),
                }
            }
        };
        steps.push(output);
    }

    let context = previous_context(plan, &steps);
    let prompt = plan
        .render_summary(&pair.question, &context)
        .map_err(prompt_err)?;
    let summary_limit = plan.features.final_answer_token_limit;
    calls += 1;
    let summary = timed("summary", &mut timings, || {
        provider.complete(&prompt, &params.with_max_new_tokens(summary_limit))
    });

    let (raw_final_text, answer, answer_truncated, mut diagnostics, error) = match summary {
        Ok(raw) => {
            let answer_only = StepSet::new(vec![ReasoningStep::LongFormAnswer]).expect("valid set");
            let parsed = parse_structured(&raw, &answer_only, plan.markers_enabled());
            let (answer, truncated) =
                truncate_to_tokens(&parsed.long_form_answer, summary_limit as usize);
            let diagnostics = parsed
                .diagnostics
                .into_iter()
                .filter(|d| !matches!(d, Diagnostic::NoHeadings | Diagnostic::MissingSection(_)))
                .collect();
            (raw, answer, truncated, diagnostics, None)
        }
        Err(e) => {
            log::warn!("question {}: summary failed: {e}", pair.id);
            (
                String::new(),
                String::new(),
                false,
                Vec::new(),
                Some(e.to_string()),
            )
        }
    };

    let sections = plan
        .step_set
        .steps()
        .iter()
        .map(|step| {
            let text = if step.is_answer() {
                error.is_none().then(|| answer.clone())
            } else {
                steps
                    .iter()
                    .find(|s| s.step == *step && !s.failed)
                    .map(|s| s.cleaned_text.clone())
            };
            Section { step: *step, text }
        })
        .collect::<Vec<_>>();
    for section in &sections {
        if section.text.is_none() {
            diagnostics.push(Diagnostic::MissingSection(section.step));
        }
    }

    Ok(GenerationOutcome {
        question_id: pair.id.clone(),
        dataset: pair.dataset.clone(),
        mode: PromptMode::Stepwise,
        steps,
        raw_final_text,
        response: StructuredResponse {
            sections,
            long_form_answer: answer,
            diagnostics,
        },
        provider_calls: calls,
        answer_truncated,
        failed: error.is_some(),
        error,
        timings,
    })
}

fn previous_context(plan: &PromptPlan, steps: &[StepOutput]) -> String {
    let done: Vec<(ReasoningStep, &str)> = steps
        .iter()
        .filter(|s| !s.failed)
        .map(|s| (s.step, s.cleaned_text.as_str()))
        .collect();
    plan.render_previous_steps(&done)
}

/// Dispatches on the plan's mode.
pub fn generate(
    pair: &QaPair,
    plan: &PromptPlan,
    provider: &dyn TextProvider,
    params: &CompletionParams,
) -> Result<GenerationOutcome, GenerationError> {
    match plan.mode {
        PromptMode::Direct => generate_direct(pair, plan, provider, params),
        PromptMode::Stepwise => generate_stepwise(pair, plan, provider, params),
    }
}

/// Generates every pair on `workers` threads. Results come back in input
/// order whatever the completion order.
pub fn generate_batch(
    pairs: &[QaPair],
    plan: &PromptPlan,
    provider: &dyn TextProvider,
    params: &CompletionParams,
    workers: usize,
) -> Result<Vec<Result<GenerationOutcome, GenerationError>>, GenerationError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| GenerationError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        pairs
            .par_iter()
            .map(|pair| generate(pair, plan, provider, params))
            .collect()
    }))
}

// ---------------------------------------------------------------------------
// quality checks

fn normalize_line(line: &str) -> String {
    let stripped = line
        .trim()
        .trim_start_matches(|c: char| matches!(c, '-' | '*' | '•') || c.is_whitespace())
        .replace("{{", "")
        .replace("}}", "");
    stripped
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn is_slot_line(line: &str) -> bool {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| regex::Regex::new(r"\{\{[a-z_][a-z0-9_]*\}\}").expect("valid regex"))
        .is_match(line)
}

/// Normalised lines of the prompt assets that a model may echo back.
fn guidance_set() -> &'static HashSet<String> {
    static SET: OnceLock<HashSet<String>> = OnceLock::new();
    SET.get_or_init(|| {
        let chain = assets::chain();
        let mut lines: Vec<&str> = chain.guidance_lines().collect();
        lines.extend(chain.header.lines());
        lines.extend(chain.end_block.lines());
        lines.push(assets::ANSWER_MARKER_GUIDANCE);
        lines.extend(assets::structured_outputs_directive().lines());
        lines.extend(assets::step_template().lines());
        lines.extend(assets::summary_template().lines());
        lines.extend(assets::part1().lines());
        lines
            .into_iter()
            .filter(|l| !is_slot_line(l))
            .map(normalize_line)
            .filter(|l| !l.is_empty())
            .collect()
    })
}

fn strip_echo(text: &str, question: &str, flags: &mut QualityFlags) -> String {
    let q = normalize_line(question);
    let prefixed = format!("question: {q}");
    let guidance = guidance_set();
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if let Some((_, inline_at)) = match_heading(body, &ReasoningStep::ALL) {
            flags.off_format_stripped = true;
            let rest = &line[inline_at..];
            if !rest.trim().is_empty() {
                out.push_str(rest);
            }
            continue;
        }
        let norm = normalize_line(body);
        if !norm.is_empty()
            && (guidance.contains(&norm) || (!q.is_empty() && (norm == q || norm == prefixed)))
        {
            flags.off_format_stripped = true;
            continue;
        }
        out.push_str(line);
    }
    out
}

/// A sentence span: `sep` is the whitespace before it, `start..end` the
/// sentence itself.
#[derive(Debug, Clone, Copy)]
struct Piece {
    sep: usize,
    start: usize,
    end: usize,
}

fn sentence_pieces(text: &str) -> Vec<Piece> {
    let bytes = text.as_bytes();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let sep = i;
        while i < bytes.len() && (bytes[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        // non-ASCII whitespace is treated as sentence text; it cannot end one
        if i >= bytes.len() {
            break;
        }
        let start = i;
        let end = loop {
            if i >= bytes.len() {
                break i;
            }
            match bytes[i] {
                b'\n' => break i,
                b'.' | b'!' | b'?' => {
                    while i < bytes.len() && matches!(bytes[i], b'.' | b'!' | b'?') {
                        i += 1;
                    }
                    if i >= bytes.len() || (bytes[i] as char).is_ascii_whitespace() {
                        break i;
                    }
                }
                _ => i += 1,
            }
        };
        pieces.push(Piece { sep, start, end });
    }
    pieces
}

fn sentence_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn word_end_offset(text: &str, words: usize) -> usize {
    text.split_whitespace()
        .nth(words - 1)
        .map(|w| w.as_ptr() as usize - text.as_ptr() as usize + w.len())
        .unwrap_or(text.len())
}

fn qc_pass(text: &str, limit: usize, question: &str, flags: &mut QualityFlags) -> String {
    let cut = cut_at_end_marker(text);
    if cut.len() != text.len() {
        flags.off_format_stripped = true;
    }
    let stripped = strip_echo(cut, question, flags);

    let pieces = sentence_pieces(&stripped);
    let mut kept: Vec<Piece> = Vec::with_capacity(pieces.len());
    for piece in pieces {
        let key = sentence_key(&stripped[piece.start..piece.end]);
        if let Some(last) = kept.last() {
            if sentence_key(&stripped[last.start..last.end]) == key {
                flags.duplicate_removed = true;
                continue;
            }
        }
        kept.push(piece);
    }

    let total: usize = kept
        .iter()
        .map(|p| count_words(&stripped[p.start..p.end]))
        .sum();
    let mut chosen = kept.as_slice();
    if total > limit {
        flags.over_length_truncated = true;
        let mut words = 0;
        let mut n = 0;
        for p in &kept {
            words += count_words(&stripped[p.start..p.end]);
            if words > limit {
                break;
            }
            n += 1;
        }
        chosen = &kept[..n];
    }
    let mut out = String::with_capacity(stripped.len());
    for (i, p) in chosen.iter().enumerate() {
        let from = if i == 0 { p.start } else { p.sep };
        out.push_str(&stripped[from..p.end]);
    }
    if total > limit && chosen.is_empty() {
        // no sentence boundary fits: hard cut
        let joined: String = {
            let mut s = String::new();
            for (i, p) in kept.iter().enumerate() {
                let from = if i == 0 { p.start } else { p.sep };
                s.push_str(&stripped[from..p.end]);
            }
            s
        };
        out = joined[..word_end_offset(&joined, limit)].to_string();
    }
    out.trim().to_string()
}

/// Cleans one step output: cuts at `### END`, strips echoed headings,
/// guidance lines and the question, collapses consecutive duplicate
/// sentences and enforces `limit_words`, preferring a sentence boundary.
///
/// Every stage only deletes text, so iterating to a fixpoint terminates and
/// makes the function idempotent.
pub fn quality_check(raw: &str, limit_words: usize, question: &str) -> (String, QualityFlags) {
    let limit = limit_words.max(1);
    let mut flags = QualityFlags::default();
    let mut current = raw.to_string();
    loop {
        let next = qc_pass(&current, limit, question, &mut flags);
        if next == current {
            break;
        }
        current = next;
    }
    flags.empty = current.is_empty();
    (current, flags)
}

// ---------------------------------------------------------------------------
// traces

/// Writes one JSON line per outcome, replacing `path`.
pub fn write_trace(path: &Path, outcomes: &[GenerationOutcome]) -> Result<(), GenerationError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for outcome in outcomes {
        let line = serde_json::to_string(outcome).map_err(io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<GenerationOutcome>, GenerationError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut outcomes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let outcome = serde_json::from_str(&line).map_err(|e| GenerationError::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// Outcomes already present in `path`, for resuming; a missing file is empty.
pub fn read_trace_if_exists(path: &Path) -> Result<Vec<GenerationOutcome>, GenerationError> {
    if path.exists() {
        read_trace(path)
    } else {
        Ok(Vec::new())
    }
}
