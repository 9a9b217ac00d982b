//! Versioned prompt text. The `v1` assets are the canonical wording;
//! code only filters, renumbers and appends to them.

use std::sync::OnceLock;

use super::ReasoningStep;

pub const TEMPLATE_VERSION: &str = "v1";

const PART1: &str = include_str!("../../templates/v1/part1.txt");
const PART2: &str = include_str!("../../templates/v1/part2.txt");
const ONE_SHOT: &str = include_str!("../../templates/v1/one_shot.txt");
const STEP: &str = include_str!("../../templates/v1/step.txt");
const SUMMARY: &str = include_str!("../../templates/v1/summary.txt");
const STRUCTURED_OUTPUTS: &str = include_str!("../../templates/v1/structured_outputs.txt");
const PLAIN_COT: &str = include_str!("../../templates/v1/plain_cot.txt");

/// Guidance line added to the answer stage when specialized markers are on.
pub const ANSWER_MARKER_GUIDANCE: &str =
    "- {{End the long-form answer with \"ANSWER END\" on its own line.}}";

pub fn part1() -> &'static str {
    PART1.trim_end()
}

pub fn step_template() -> &'static str {
    STEP.trim_end()
}

pub fn summary_template() -> &'static str {
    SUMMARY.trim_end()
}

pub fn structured_outputs_directive() -> &'static str {
    STRUCTURED_OUTPUTS.trim_end()
}

pub fn plain_cot_template() -> &'static str {
    PLAIN_COT.trim_end()
}

/// The reasoning-chain template split into its header, per-step bodies and the
/// closing END block.
#[derive(Debug)]
pub struct Chain {
    pub header: String,
    /// Guidance lines under each heading, in canonical order; trailing blank
    /// lines removed, leading blank lines kept.
    pub bodies: Vec<(ReasoningStep, String)>,
    pub end_block: String,
}

impl Chain {
    pub fn body(&self, step: ReasoningStep) -> &str {
        self.bodies
            .iter()
            .find(|(s, _)| *s == step)
            .map(|(_, b)| b.as_str())
            .expect("every step has a body")
    }

    /// Every guidance line of every step, trimmed.
    pub fn guidance_lines(&self) -> impl Iterator<Item = &str> {
        self.bodies
            .iter()
            .flat_map(|(_, body)| body.lines())
            .map(str::trim)
            .filter(|l| !l.is_empty())
    }
}

fn step_for_heading(line: &str) -> Option<ReasoningStep> {
    ReasoningStep::ALL
        .into_iter()
        .find(|step| line.contains(step.title()))
}

pub fn chain() -> &'static Chain {
    static CHAIN: OnceLock<Chain> = OnceLock::new();
    CHAIN.get_or_init(|| {
        let text = PART2.trim_end();
        let mut header = Vec::new();
        let mut bodies: Vec<(ReasoningStep, Vec<&str>)> = Vec::new();
        let mut end_block: Vec<&str> = Vec::new();
        for line in text.lines() {
            if !end_block.is_empty() || line.trim_start().starts_with("### END") {
                end_block.push(line);
            } else if line.starts_with("### ") {
                let step = step_for_heading(line).expect("asset heading names a step");
                bodies.push((step, Vec::new()));
            } else if let Some((_, body)) = bodies.last_mut() {
                body.push(line);
            } else {
                header.push(line);
            }
        }
        let trim_tail = |lines: &[&str]| {
            let end = lines
                .iter()
                .rposition(|l| !l.trim().is_empty())
                .map_or(0, |i| i + 1);
            lines[..end].join("\n")
        };
        Chain {
            header: trim_tail(&header),
            bodies: bodies
                .into_iter()
                .map(|(step, body)| (step, trim_tail(&body)))
                .collect(),
            end_block: end_block.join("\n"),
        }
    })
}

/// The worked example split into its preamble, per-step paragraphs and END line.
#[derive(Debug)]
pub struct OneShot {
    /// Lines up to and including "Chain of Thought:".
    pub preamble: String,
    /// Paragraph text after the "N. " prefix, per step.
    pub entries: Vec<(ReasoningStep, String)>,
    pub closing: String,
}

impl OneShot {
    pub fn entry(&self, step: ReasoningStep) -> &str {
        self.entries
            .iter()
            .find(|(s, _)| *s == step)
            .map(|(_, e)| e.as_str())
            .expect("every step has an example paragraph")
    }
}

pub fn one_shot() -> &'static OneShot {
    static ONE: OnceLock<OneShot> = OnceLock::new();
    ONE.get_or_init(|| {
        let paragraphs: Vec<&str> = ONE_SHOT
            .trim_end()
            .split("\n\n")
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .collect();
        let mut preamble = Vec::new();
        let mut entries = Vec::new();
        let mut closing = String::new();
        for para in paragraphs {
            let numbered = para
                .split_once(". ")
                .filter(|(n, _)| n.chars().all(|c| c.is_ascii_digit()) && !n.is_empty());
            match numbered {
                Some((_, rest)) => {
                    let step = step_for_heading(rest.split(':').next().unwrap_or(rest))
                        .expect("example paragraph names a step");
                    entries.push((step, rest.to_string()));
                }
                None if entries.is_empty() => preamble.push(para),
                None => closing = para.to_string(),
            }
        }
        OneShot {
            preamble: preamble.join("\n\n"),
            entries,
            closing,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_asset_covers_every_step() {
        let chain = chain();
        assert_eq!(chain.header, "## Chain of Thought:");
        assert_eq!(chain.bodies.len(), 8);
        assert!(chain.end_block.starts_with("### END"));
        assert!(chain
            .body(ReasoningStep::LongFormAnswer)
            .contains("400-500 words"));
        assert_eq!(chain.guidance_lines().count(), 16);
    }

    #[test]
    fn one_shot_asset_covers_every_step() {
        let example = one_shot();
        assert_eq!(example.entries.len(), 8);
        assert!(example.preamble.ends_with("Chain of Thought:"));
        assert_eq!(example.closing, "END");
        assert!(example
            .entry(ReasoningStep::ReferenceSources)
            .starts_with("Reference Reliable Sources:"));
    }
}
