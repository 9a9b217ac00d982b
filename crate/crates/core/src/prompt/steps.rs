use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PromptError;

/// One stage of the structured reasoning chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasoningStep {
    UnderstandQuestion,
    RecallKnowledge,
    AnalyzeInformation,
    AssessImpacts,
    AdditionalInformation,
    FollowUpSteps,
    ReferenceSources,
    LongFormAnswer,
}

impl ReasoningStep {
    pub const ALL: [ReasoningStep; 8] = [
        ReasoningStep::UnderstandQuestion,
        ReasoningStep::RecallKnowledge,
        ReasoningStep::AnalyzeInformation,
        ReasoningStep::AssessImpacts,
        ReasoningStep::AdditionalInformation,
        ReasoningStep::FollowUpSteps,
        ReasoningStep::ReferenceSources,
        ReasoningStep::LongFormAnswer,
    ];

    /// Canonical position in the full chain, 1..=8.
    pub fn ordinal(self) -> u8 {
        Self::ALL.iter().position(|s| *s == self).expect("listed") as u8 + 1
    }

    pub fn from_ordinal(ordinal: u8) -> Option<Self> {
        Self::ALL.get(usize::from(ordinal).checked_sub(1)?).copied()
    }

    /// Heading title as it appears in the prompt.
    pub fn title(self) -> &'static str {
        match self {
            ReasoningStep::UnderstandQuestion => "Understand the Question",
            ReasoningStep::RecallKnowledge => "Recall Relevant Medical Knowledge",
            ReasoningStep::AnalyzeInformation => "Analyze Medical Information",
            ReasoningStep::AssessImpacts => "Assess Impacts and Considerations",
            ReasoningStep::AdditionalInformation => "Provide Additional Relevant Information",
            ReasoningStep::FollowUpSteps => "Suggest Follow-Up Steps or Actions",
            ReasoningStep::ReferenceSources => "Reference Reliable Sources",
            ReasoningStep::LongFormAnswer => "Long-Form Answer",
        }
    }

    pub fn is_answer(self) -> bool {
        self == ReasoningStep::LongFormAnswer
    }

    fn name(self) -> &'static str {
        match self {
            ReasoningStep::UnderstandQuestion => "UnderstandQuestion",
            ReasoningStep::RecallKnowledge => "RecallKnowledge",
            ReasoningStep::AnalyzeInformation => "AnalyzeInformation",
            ReasoningStep::AssessImpacts => "AssessImpacts",
            ReasoningStep::AdditionalInformation => "AdditionalInformation",
            ReasoningStep::FollowUpSteps => "FollowUpSteps",
            ReasoningStep::ReferenceSources => "ReferenceSources",
            ReasoningStep::LongFormAnswer => "LongFormAnswer",
        }
    }
}

impl fmt::Display for ReasoningStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReasoningStep {
    type Err = PromptError;

    /// Accepts the variant name, the heading title (any case) or the ordinal.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if let Ok(n) = trimmed.parse::<u8>() {
            return Self::from_ordinal(n).ok_or_else(|| PromptError::UnknownStep(s.to_string()));
        }
        let key: String = trimmed
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Self::ALL
            .into_iter()
            .find(|step| {
                step.name().to_lowercase() == key
                    || step
                        .title()
                        .chars()
                        .filter(|c| c.is_alphanumeric())
                        .collect::<String>()
                        .to_lowercase()
                        == key
            })
            .ok_or_else(|| PromptError::UnknownStep(s.to_string()))
    }
}

/// Ordered selection of reasoning steps.
///
/// No duplicates; `LongFormAnswer`, when present, is last.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<ReasoningStep>", into = "Vec<ReasoningStep>")]
pub struct StepSet(Vec<ReasoningStep>);

impl StepSet {
    pub fn new(steps: Vec<ReasoningStep>) -> Result<Self, PromptError> {
        for (i, step) in steps.iter().enumerate() {
            if steps[..i].contains(step) {
                return Err(PromptError::DuplicateStep(*step));
            }
            if step.is_answer() && i + 1 != steps.len() {
                return Err(PromptError::AnswerNotLast);
            }
        }
        Ok(Self(steps))
    }

    /// All seven reasoning steps followed by the long-form answer.
    pub fn full() -> Self {
        Self(ReasoningStep::ALL.to_vec())
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Parses names, titles or ordinals.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, PromptError> {
        let steps = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps)
    }

    pub fn steps(&self) -> &[ReasoningStep] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, step: ReasoningStep) -> bool {
        self.0.contains(&step)
    }

    pub fn has_answer(&self) -> bool {
        self.0.last().is_some_and(|s| s.is_answer())
    }

    /// Steps other than the long-form answer, in order.
    pub fn reasoning_steps(&self) -> impl Iterator<Item = ReasoningStep> + '_ {
        self.0.iter().copied().filter(|s| !s.is_answer())
    }

    /// 1-based position of `step` in this set.
    pub fn position(&self, step: ReasoningStep) -> Option<usize> {
        self.0.iter().position(|s| *s == step).map(|i| i + 1)
    }
}

impl TryFrom<Vec<ReasoningStep>> for StepSet {
    type Error = PromptError;

    fn try_from(steps: Vec<ReasoningStep>) -> Result<Self, Self::Error> {
        Self::new(steps)
    }
}

impl From<StepSet> for Vec<ReasoningStep> {
    fn from(set: StepSet) -> Self {
        set.0
    }
}

impl FromStr for StepSet {
    type Err = PromptError;

    /// Comma-separated names, titles or ordinals; `full` selects every step.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("full") {
            return Ok(Self::full());
        }
        let names: Vec<&str> = s.split(',').filter(|p| !p.trim().is_empty()).collect();
        Self::from_names(&names)
    }
}

/// Step-level ablation, addressed by canonical step ordinal (1..=8).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepTransform {
    RemoveStep(u8),
    RetainSteps(Vec<u8>),
    SwapSteps(u8, u8),
}

fn present(set: &StepSet, ordinal: u8) -> Result<ReasoningStep, PromptError> {
    ReasoningStep::from_ordinal(ordinal)
        .filter(|step| set.contains(*step))
        .ok_or(PromptError::StepNotPresent(ordinal))
}

pub fn apply_ablation(set: &StepSet, transform: &StepTransform) -> Result<StepSet, PromptError> {
    match transform {
        StepTransform::RemoveStep(n) => {
            let step = present(set, *n)?;
            if step.is_answer() {
                return Err(PromptError::CannotRemoveAnswer);
            }
            StepSet::new(set.0.iter().copied().filter(|s| *s != step).collect())
        }
        StepTransform::RetainSteps(ordinals) => {
            let keep = ordinals
                .iter()
                .map(|n| present(set, *n))
                .collect::<Result<Vec<_>, _>>()?;
            StepSet::new(
                set.0
                    .iter()
                    .copied()
                    .filter(|s| s.is_answer() || keep.contains(s))
                    .collect(),
            )
        }
        StepTransform::SwapSteps(a, b) => {
            let first = present(set, *a)?;
            let second = present(set, *b)?;
            if first.is_answer() || second.is_answer() {
                return Err(PromptError::CannotMoveAnswer);
            }
            let mut steps = set.0.clone();
            let i = steps.iter().position(|s| *s == first).expect("present");
            let j = steps.iter().position(|s| *s == second).expect("present");
            steps.swap(i, j);
            StepSet::new(steps)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ReasoningStep::*;

    #[test]
    fn remove_step_three_drops_analysis() {
        let out = apply_ablation(&StepSet::full(), &StepTransform::RemoveStep(3)).unwrap();
        assert_eq!(out.len(), 7);
        assert!(!out.contains(AnalyzeInformation));
        assert_eq!(out.steps()[2], AssessImpacts);
    }

    #[test]
    fn retain_core_steps_keeps_answer() {
        let out =
            apply_ablation(&StepSet::full(), &StepTransform::RetainSteps(vec![6, 1, 3])).unwrap();
        assert_eq!(
            out.steps(),
            &[
                UnderstandQuestion,
                AnalyzeInformation,
                FollowUpSteps,
                LongFormAnswer
            ]
        );
    }

    #[test]
    fn swap_is_an_involution() {
        let full = StepSet::full();
        let once = apply_ablation(&full, &StepTransform::SwapSteps(3, 6)).unwrap();
        assert_eq!(once.steps()[2], FollowUpSteps);
        assert_eq!(once.steps()[5], AnalyzeInformation);
        let twice = apply_ablation(&once, &StepTransform::SwapSteps(3, 6)).unwrap();
        assert_eq!(twice, full);
    }

    #[test]
    fn answer_cannot_be_removed_or_moved() {
        let full = StepSet::full();
        assert!(matches!(
            apply_ablation(&full, &StepTransform::RemoveStep(8)),
            Err(PromptError::CannotRemoveAnswer)
        ));
        assert!(matches!(
            apply_ablation(&full, &StepTransform::SwapSteps(1, 8)),
            Err(PromptError::CannotMoveAnswer)
        ));
    }

    #[test]
    fn absent_steps_are_rejected() {
        let reduced = apply_ablation(&StepSet::full(), &StepTransform::RemoveStep(2)).unwrap();
        assert!(matches!(
            apply_ablation(&reduced, &StepTransform::RemoveStep(2)),
            Err(PromptError::StepNotPresent(2))
        ));
        assert!(matches!(
            apply_ablation(&reduced, &StepTransform::RetainSteps(vec![2])),
            Err(PromptError::StepNotPresent(2))
        ));
        assert!(apply_ablation(&reduced, &StepTransform::RemoveStep(9)).is_err());
    }

    #[test]
    fn step_set_invariants() {
        assert!(matches!(
            StepSet::new(vec![LongFormAnswer, UnderstandQuestion]),
            Err(PromptError::AnswerNotLast)
        ));
        assert!(matches!(
            StepSet::new(vec![RecallKnowledge, RecallKnowledge]),
            Err(PromptError::DuplicateStep(RecallKnowledge))
        ));
    }

    #[test]
    fn parses_names_titles_and_ordinals() {
        let set: StepSet = "UnderstandQuestion, analyze medical information, 6, 8"
            .parse()
            .unwrap();
        assert_eq!(
            set.steps(),
            &[
                UnderstandQuestion,
                AnalyzeInformation,
                FollowUpSteps,
                LongFormAnswer
            ]
        );
        assert!(matches!(
            "Diagnose".parse::<StepSet>(),
            Err(PromptError::UnknownStep(_))
        ));
        assert_eq!("full".parse::<StepSet>().unwrap(), StepSet::full());
    }
}
