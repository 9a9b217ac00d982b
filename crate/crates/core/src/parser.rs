//! Parsing of structured model output into per-step sections and an answer.
//!
//! Parsing is total: any text yields a [`StructuredResponse`], with
//! [`Diagnostic`]s describing what was missing or recovered.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::prompt::{ReasoningStep, StepSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub step: ReasoningStep,
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "step", rename_all = "snake_case")]
pub enum Diagnostic {
    MissingSection(ReasoningStep),
    DuplicateSection(ReasoningStep),
    EmptySection(ReasoningStep),
    /// Markers were expected but the answer had no `ANSWER END`.
    UnterminatedAnswerMarker,
    /// No answer section; the text after the last heading was used.
    AnswerFromLastSection(ReasoningStep),
    /// No recognised headings; the whole text was used as the answer.
    NoHeadings,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredResponse {
    /// One entry per expected step, in expected order.
    pub sections: Vec<Section>,
    pub long_form_answer: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl StructuredResponse {
    pub fn section(&self, step: ReasoningStep) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.step == step)
            .and_then(|s| s.text.as_deref())
    }

    pub fn present_steps(&self) -> Vec<ReasoningStep> {
        self.sections
            .iter()
            .filter(|s| s.text.is_some())
            .map(|s| s.step)
            .collect()
    }
}

fn title_pattern(title: &str) -> String {
    title
        .split(' ')
        .map(|word| {
            word.split('-')
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"(?:[ \t]*-[ \t]*|[ \t]+)")
        })
        .collect::<Vec<_>>()
        .join(r"[ \t]+")
}

struct HeadingMatcher {
    step: ReasoningStep,
    regex: Regex,
}

fn heading_matchers() -> &'static [HeadingMatcher] {
    static MATCHERS: OnceLock<Vec<HeadingMatcher>> = OnceLock::new();
    MATCHERS.get_or_init(|| {
        ReasoningStep::ALL
            .into_iter()
            .map(|step| {
                let mut titles = vec![title_pattern(step.title())];
                if step.is_answer() {
                    titles.push(title_pattern("Answer"));
                }
                let pattern = format!(
                    r"(?i)^[ \t]*(?:(?P<hash>#{{1,6}})[ \t]*)?(?:\*\*[ \t]*)?(?:(?P<num>\d{{1,2}})[ \t]*[.)]?[ \t]*)?(?:\*\*[ \t]*)?(?:{})\b[ \t]*(?:\*\*)?[ \t]*(?P<colon>:)?[ \t]*(?:\*\*)?",
                    titles.join("|")
                );
                HeadingMatcher {
                    step,
                    regex: Regex::new(&pattern).expect("valid heading regex"),
                }
            })
            .collect()
    })
}

fn end_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)###[ \t]*END\b").expect("valid regex"))
}

fn answer_end_marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)ANSWER[ \t]*END\b").expect("valid regex"))
}

/// Recognises a heading line for one of `expected`, returning the step and
/// the byte offset where inline content starts.
pub(crate) fn match_heading(
    line: &str,
    expected: &[ReasoningStep],
) -> Option<(ReasoningStep, usize)> {
    for step in expected {
        let matcher = heading_matchers()
            .iter()
            .find(|m| m.step == *step)
            .expect("matcher per step");
        if let Some(caps) = matcher.regex.captures(line) {
            let qualified = caps.name("hash").is_some()
                || caps.name("num").is_some()
                || caps.name("colon").is_some();
            if qualified {
                return Some((*step, caps.get(0).expect("group 0").end()));
            }
        }
    }
    None
}

/// Text before the first `### END`.
pub(crate) fn cut_at_end_marker(text: &str) -> &str {
    match end_marker().find(text) {
        Some(m) => &text[..m.start()],
        None => text,
    }
}

fn cut_at_answer_marker(text: &str) -> (&str, bool) {
    match answer_end_marker().find(text) {
        Some(m) => (&text[..m.start()], true),
        None => (text, false),
    }
}

struct RawSection {
    step: ReasoningStep,
    content: String,
}

pub fn parse_structured(
    raw: &str,
    expected: &StepSet,
    markers_enabled: bool,
) -> StructuredResponse {
    let effective = cut_at_end_marker(raw);
    let mut found: Vec<RawSection> = Vec::new();
    let mut preamble = String::new();
    for line in effective.lines() {
        match match_heading(line, expected.steps()) {
            Some((step, inline_at)) => found.push(RawSection {
                step,
                content: line[inline_at..].to_string(),
            }),
            None => {
                let target = match found.last_mut() {
                    Some(section) => &mut section.content,
                    None => &mut preamble,
                };
                if !target.is_empty() {
                    target.push('\n');
                }
                target.push_str(line);
            }
        }
    }

    let mut diagnostics = Vec::new();
    let mut sections: Vec<Section> = expected
        .steps()
        .iter()
        .map(|step| Section {
            step: *step,
            text: None,
        })
        .collect();
    let mut seen: Vec<ReasoningStep> = Vec::new();
    for raw_section in &found {
        if seen.contains(&raw_section.step) {
            diagnostics.push(Diagnostic::DuplicateSection(raw_section.step));
            continue;
        }
        seen.push(raw_section.step);
        let mut text = raw_section.content.trim();
        if raw_section.step.is_answer() && markers_enabled {
            let (cut, terminated) = cut_at_answer_marker(text);
            if !terminated {
                diagnostics.push(Diagnostic::UnterminatedAnswerMarker);
            }
            text = cut.trim();
        }
        let slot = sections
            .iter_mut()
            .find(|s| s.step == raw_section.step)
            .expect("expected step");
        if text.is_empty() {
            diagnostics.push(Diagnostic::EmptySection(raw_section.step));
        }
        slot.text = Some(text.to_string());
    }

    if found.is_empty() {
        diagnostics.push(Diagnostic::NoHeadings);
    } else {
        for section in &sections {
            if section.text.is_none() {
                diagnostics.push(Diagnostic::MissingSection(section.step));
            }
        }
    }

    let answer_text = sections
        .iter()
        .find(|s| s.step.is_answer())
        .and_then(|s| s.text.clone())
        .filter(|t| !t.is_empty());
    let long_form_answer = match answer_text {
        Some(text) => text,
        None => fallback_answer(&found, effective, markers_enabled, &mut diagnostics),
    };

    StructuredResponse {
        sections,
        long_form_answer,
        diagnostics,
    }
}

fn fallback_answer(
    found: &[RawSection],
    effective: &str,
    markers_enabled: bool,
    diagnostics: &mut Vec<Diagnostic>,
) -> String {
    let marker_cut = |text: &str| -> String {
        if markers_enabled {
            cut_at_answer_marker(text).0.trim().to_string()
        } else {
            text.trim().to_string()
        }
    };
    if let Some(last) = found
        .iter()
        .rev()
        .find(|s| !marker_cut(&s.content).is_empty())
    {
        diagnostics.push(Diagnostic::AnswerFromLastSection(last.step));
        return marker_cut(&last.content);
    }
    if found.is_empty() {
        let whole = marker_cut(effective);
        if !whole.is_empty() {
            return whole;
        }
    }
    effective.trim().to_string()
}

/// Lossy variant for arbitrary bytes.
pub fn parse_structured_bytes(
    raw: &[u8],
    expected: &StepSet,
    markers_enabled: bool,
) -> StructuredResponse {
    parse_structured(&String::from_utf8_lossy(raw), expected, markers_enabled)
}

/// Canonical text form: `### n. Title:` sections in order, the answer
/// section, then `### END`.
pub fn render_structured(resp: &StructuredResponse) -> String {
    let mut parts = Vec::new();
    let mut answer_position = None;
    for (i, section) in resp.sections.iter().enumerate() {
        if section.step.is_answer() {
            answer_position = Some(i + 1);
            continue;
        }
        if let Some(text) = &section.text {
            parts.push(format!(
                "{}\n{}",
                crate::prompt::heading(i + 1, section.step),
                text.trim()
            ));
        }
    }
    if !resp.long_form_answer.trim().is_empty() {
        let position = answer_position.unwrap_or(resp.sections.len() + 1);
        parts.push(format!(
            "{}\n{}",
            crate::prompt::heading(position, ReasoningStep::LongFormAnswer),
            resp.long_form_answer.trim()
        ));
    }
    parts.push("### END".to_string());
    parts.join("\n\n")
}

/// Number of Unicode-whitespace separated words.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Approximate token count: `ceil(words * 4 / 3)`.
pub fn count_tokens_approx(text: &str) -> usize {
    tokens_for_words(count_words(text))
}

pub(crate) fn tokens_for_words(words: usize) -> usize {
    (4 * words).div_ceil(3)
}

/// Keeps the first `limit` words, re-joined with single spaces. Returns the
/// input unchanged when it is already within the limit.
pub fn truncate_words(text: &str, limit: usize) -> (String, bool) {
    if count_words(text) <= limit {
        return (text.to_string(), false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(limit).collect();
    (kept.join(" "), true)
}

/// Truncates so that [`count_tokens_approx`] of the result is at most `limit`.
pub fn truncate_to_tokens(text: &str, limit: usize) -> (String, bool) {
    // largest w with ceil(4w/3) <= limit
    let max_words = limit * 3 / 4;
    truncate_words(text, max_words)
}
