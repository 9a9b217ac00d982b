//! Prompt construction for the structured reasoning chain and the baselines.

pub mod assets;
mod steps;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use steps::{apply_ablation, ReasoningStep, StepSet, StepTransform};
pub use template::Template;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown reasoning step `{0}`")]
    UnknownStep(String),
    #[error("step set is empty")]
    EmptyStepSet,
    #[error("step {0} appears more than once")]
    DuplicateStep(ReasoningStep),
    #[error("LongFormAnswer must be the last step")]
    AnswerNotLast,
    #[error("the long-form answer step cannot be removed")]
    CannotRemoveAnswer,
    #[error("the long-form answer step cannot be reordered")]
    CannotMoveAnswer,
    #[error("step {0} is not part of the step set")]
    StepNotPresent(u8),
    #[error("unresolved placeholder {{{{{0}}}}}")]
    UnresolvedPlaceholder(String),
    #[error("{0} must be greater than zero")]
    InvalidLimit(&'static str),
    #[error("plan is in {actual:?} mode, expected {expected:?}")]
    ModeMismatch {
        expected: PromptMode,
        actual: PromptMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    Direct,
    Stepwise,
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "stepwise" => Ok(Self::Stepwise),
            _ => Err(format!("unknown mode `{s}` (direct, stepwise)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    ZeroShot,
    PlainCoT,
}

/// Optimisation features layered on top of the reasoning chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptFeatures {
    pub one_shot_example: bool,
    pub instruction_reinforcement: bool,
    pub specialized_markers: bool,
    /// Words allowed per reasoning step.
    pub step_word_limit: u32,
    /// Token budget of the final (summary) answer.
    pub final_answer_token_limit: u32,
    /// Token budget of a single-call structured generation.
    pub stage1_token_limit: u32,
}

impl Default for PromptFeatures {
    fn default() -> Self {
        Self {
            one_shot_example: true,
            instruction_reinforcement: true,
            specialized_markers: true,
            step_word_limit: 200,
            final_answer_token_limit: 512,
            stage1_token_limit: 4096,
        }
    }
}

impl PromptFeatures {
    /// Default limits with every optional feature switched off.
    pub fn none() -> Self {
        Self {
            one_shot_example: false,
            instruction_reinforcement: false,
            specialized_markers: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.step_word_limit == 0 {
            return Err(PromptError::InvalidLimit("step_word_limit"));
        }
        if self.final_answer_token_limit == 0 {
            return Err(PromptError::InvalidLimit("final_answer_token_limit"));
        }
        if self.stage1_token_limit == 0 {
            return Err(PromptError::InvalidLimit("stage1_token_limit"));
        }
        Ok(())
    }
}

/// Prompt for one reasoning step of a stepwise plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPrompt {
    pub step: ReasoningStep,
    /// 1-based position within the plan's step set; used for headings.
    pub position: usize,
    template: Template,
}

impl StepPrompt {
    pub fn heading(&self) -> String {
        heading(self.position, self.step)
    }

    pub fn render(&self, question: &str, previous_steps: &str) -> Result<String, PromptError> {
        self.template.render(&[
            ("question", question.trim()),
            ("previous_steps", previous_steps),
        ])
    }
}

/// A rendered prompt (direct) or an ordered set of step prompts plus a
/// summary prompt (stepwise). Question text is bound at generation time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPlan {
    pub mode: PromptMode,
    pub step_set: StepSet,
    pub features: PromptFeatures,
    pub baseline: Option<BaselineKind>,
    direct: Option<Template>,
    steps: Vec<StepPrompt>,
    summary: Option<Template>,
}

impl PromptPlan {
    pub fn markers_enabled(&self) -> bool {
        self.features.specialized_markers
    }

    /// The full single-call prompt for `question`.
    pub fn render_direct(&self, question: &str) -> Result<String, PromptError> {
        self.direct_template()?
            .render(&[("question", question.trim())])
    }

    fn direct_template(&self) -> Result<&Template, PromptError> {
        self.direct.as_ref().ok_or(PromptError::ModeMismatch {
            expected: PromptMode::Direct,
            actual: self.mode,
        })
    }

    pub fn step_prompts(&self) -> &[StepPrompt] {
        &self.steps
    }

    pub fn render_summary(
        &self,
        question: &str,
        previous_steps: &str,
    ) -> Result<String, PromptError> {
        self.summary
            .as_ref()
            .ok_or(PromptError::ModeMismatch {
                expected: PromptMode::Stepwise,
                actual: self.mode,
            })?
            .render(&[
                ("question", question.trim()),
                ("previous_steps", previous_steps),
            ])
    }

    pub fn has_summary(&self) -> bool {
        self.summary.is_some()
    }

    /// Number of provider calls one question costs under this plan.
    pub fn call_count(&self) -> usize {
        match self.mode {
            PromptMode::Direct => 1,
            PromptMode::Stepwise => self.steps.len() + 1,
        }
    }

    /// Formats completed steps as chain context for later prompts.
    pub fn render_previous_steps(&self, completed: &[(ReasoningStep, &str)]) -> String {
        completed
            .iter()
            .map(|(step, text)| {
                let position = self.step_set.position(*step).unwrap_or(0);
                format!("{}\n{}", heading(position, *step), text.trim())
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Heading line for `step` at `position`, in the template's format.
pub fn heading(position: usize, step: ReasoningStep) -> String {
    if step.is_answer() {
        format!("### {position}.{}:", step.title())
    } else {
        format!("### {position}. {}:", step.title())
    }
}

fn step_block(position: usize, step: ReasoningStep, features: &PromptFeatures) -> String {
    let mut block = format!(
        "{}\n{}",
        heading(position, step),
        assets::chain().body(step)
    );
    if step.is_answer() && features.specialized_markers {
        block.push_str("\n\n");
        block.push_str(assets::ANSWER_MARKER_GUIDANCE);
    }
    block
}

fn chain_block(step_set: &StepSet, features: &PromptFeatures) -> String {
    let chain = assets::chain();
    let mut parts = vec![chain.header.clone()];
    if features.instruction_reinforcement {
        parts.push(assets::structured_outputs_directive().to_string());
    }
    for (i, step) in step_set.steps().iter().enumerate() {
        parts.push(step_block(i + 1, *step, features));
    }
    if features.specialized_markers {
        parts.push(chain.end_block.clone());
    }
    parts.join("\n\n")
}

fn one_shot_block(step_set: &StepSet, features: &PromptFeatures) -> String {
    let example = assets::one_shot();
    let mut parts = vec![example.preamble.clone()];
    if features.instruction_reinforcement {
        parts.push(assets::structured_outputs_directive().to_string());
    }
    for (i, step) in step_set.steps().iter().enumerate() {
        parts.push(format!("{}. {}", i + 1, example.entry(*step)));
    }
    parts.push(example.closing.clone());
    parts.join("\n\n")
}

fn part1(features: &PromptFeatures) -> Template {
    Template::parse(assets::part1()).bind("step_word_limit", &features.step_word_limit.to_string())
}

fn reinforce(template: Template, features: &PromptFeatures) -> Template {
    if features.instruction_reinforcement {
        template
            .then("\n\n")
            .then(assets::structured_outputs_directive())
    } else {
        template
    }
}

/// Builds the structured reasoning plan.
///
/// Direct layout: instructions, reasoning chain, optional worked example, then
/// the question on the line right after, then the reinforcement directive.
/// Stepwise plans carry one prompt per reasoning step; the long-form answer
/// stage is produced by the summary prompt.
pub fn build_med_socot_plan(
    step_set: &StepSet,
    features: &PromptFeatures,
    mode: PromptMode,
) -> Result<PromptPlan, PromptError> {
    if step_set.is_empty() {
        return Err(PromptError::EmptyStepSet);
    }
    features.validate()?;
    let limit = features.step_word_limit.to_string();
    let plan = match mode {
        PromptMode::Direct => {
            let mut body = format!(
                "{}\n\n{}",
                part1(features).render(&[])?,
                chain_block(step_set, features)
            );
            if features.one_shot_example {
                body.push_str("\n\n");
                body.push_str(&one_shot_block(step_set, features));
            }
            body.push_str("\nQuestion: ");
            let direct = reinforce(Template::literal(body).then_slot("question"), features);
            PromptPlan {
                mode,
                step_set: step_set.clone(),
                features: *features,
                baseline: None,
                direct: Some(direct),
                steps: Vec::new(),
                summary: None,
            }
        }
        PromptMode::Stepwise => {
            let step_template =
                Template::parse(assets::step_template()).bind("step_word_limit", &limit);
            let steps = step_set
                .reasoning_steps()
                .map(|step| {
                    let position = step_set.position(step).expect("member");
                    let mut current = step_block(position, step, features);
                    if features.specialized_markers {
                        current.push_str("\n\n");
                        current.push_str(&assets::chain().end_block);
                    }
                    StepPrompt {
                        step,
                        position,
                        template: reinforce(step_template.bind("current_step", &current), features),
                    }
                })
                .collect();
            let answer_position = step_set
                .position(ReasoningStep::LongFormAnswer)
                .unwrap_or(step_set.len() + 1);
            let mut answer = step_block(answer_position, ReasoningStep::LongFormAnswer, features);
            if features.specialized_markers {
                answer.push_str("\n\n");
                answer.push_str(&assets::chain().end_block);
            }
            let summary = reinforce(
                Template::parse(assets::summary_template()).bind("answer_step", &answer),
                features,
            );
            PromptPlan {
                mode,
                step_set: step_set.clone(),
                features: *features,
                baseline: None,
                direct: None,
                steps,
                summary: Some(summary),
            }
        }
    };
    Ok(plan)
}

/// Plan for a baseline arm with `question` already bound.
pub fn build_baseline_plan(kind: BaselineKind, question: &str) -> PromptPlan {
    let template = baseline_template(kind).bind("question", question.trim());
    PromptPlan {
        mode: PromptMode::Direct,
        step_set: StepSet::empty(),
        features: PromptFeatures::none(),
        baseline: Some(kind),
        direct: Some(template),
        steps: Vec::new(),
        summary: None,
    }
}

/// Baseline plan whose question is bound per item at generation time.
pub fn baseline_plan(kind: BaselineKind) -> PromptPlan {
    PromptPlan {
        mode: PromptMode::Direct,
        step_set: StepSet::empty(),
        features: PromptFeatures::none(),
        baseline: Some(kind),
        direct: Some(baseline_template(kind)),
        steps: Vec::new(),
        summary: None,
    }
}

fn baseline_template(kind: BaselineKind) -> Template {
    match kind {
        BaselineKind::ZeroShot => Template::parse("{{question}}"),
        BaselineKind::PlainCoT => Template::parse(assets::plain_cot_template()),
    }
}
