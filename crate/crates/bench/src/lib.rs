//! Inputs for the criterion benches.

use medsocot_core::prompt::{heading, ReasoningStep};

const VOCAB: [&str; 16] = [
    "the", "patient", "dose", "risk", "liver", "kidney", "may", "increase", "bleeding", "with",
    "warfarin", "aspirin", "should", "monitor", "levels", "daily",
];

/// `words` words cycling through a small vocabulary with stride `stride`,
/// punctuated every twelve words.
pub fn synthetic_text(words: usize, stride: usize) -> String {
    let mut out = String::new();
    for i in 0..words {
        if i > 0 {
            out.push(if i % 12 == 0 { '\n' } else { ' ' });
        }
        out.push_str(VOCAB[(i * stride + i / 7) % VOCAB.len()]);
        if i % 12 == 11 {
            out.push('.');
        }
    }
    out
}

/// A full direct-mode response: seven sections of `section_words` each and
/// an answer of `answer_words`.
pub fn structured_response(section_words: usize, answer_words: usize) -> String {
    let mut out = String::new();
    for (i, step) in ReasoningStep::ALL[..7].iter().enumerate() {
        out.push_str(&heading(i + 1, *step));
        out.push('\n');
        out.push_str(&synthetic_text(section_words, i + 3));
        out.push_str("\n\n");
    }
    out.push_str(&heading(8, ReasoningStep::LongFormAnswer));
    out.push('\n');
    out.push_str(&synthetic_text(answer_words, 5));
    out.push_str("\nANSWER END\n\n### END\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use medsocot_core::{count_words, parse_structured, StepSet};

    #[test]
    fn generators_have_the_requested_shape() {
        assert_eq!(count_words(&synthetic_text(100, 3)), 100);
        let parsed = parse_structured(&structured_response(50, 400), &StepSet::full(), true);
        assert_eq!(parsed.present_steps().len(), 8);
        assert_eq!(count_words(&parsed.long_form_answer), 400);
    }
}
