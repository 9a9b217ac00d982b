use std::sync::OnceLock;

use regex::Regex;

use super::PromptError;

/// A parsed prompt template.
///
/// Placeholders are double-brace identifiers such as `{{question}}`. Any other
/// double-brace text (the guidance lines of the reasoning chain are written as
/// `{{Explain the background ...}}`) is literal prompt text. Bound values are
/// stored as literal segments and are never re-scanned for placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

fn slot_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"\{\{([a-z_][a-z0-9_]*)\}\}").expect("valid regex"))
}

impl Template {
    pub fn parse(src: &str) -> Self {
        let mut segments = Vec::new();
        let mut last = 0;
        for caps in slot_pattern().captures_iter(src) {
            let whole = caps.get(0).expect("group 0");
            if whole.start() > last {
                segments.push(Segment::Text(src[last..whole.start()].to_string()));
            }
            segments.push(Segment::Slot(caps[1].to_string()));
            last = whole.end();
        }
        if last < src.len() {
            segments.push(Segment::Text(src[last..].to_string()));
        }
        Self { segments }.merged()
    }

    pub fn literal(text: impl Into<String>) -> Self {
        Self {
            segments: vec![Segment::Text(text.into())],
        }
    }

    /// Replaces every occurrence of `name` with `value`, leaving other slots open.
    pub fn bind(&self, name: &str, value: &str) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|seg| match seg {
                Segment::Slot(slot) if slot == name => Segment::Text(value.to_string()),
                other => other.clone(),
            })
            .collect();
        Self { segments }.merged()
    }

    pub fn slots(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Slot(name) = seg {
                if !names.contains(&name.as_str()) {
                    names.push(name);
                }
            }
        }
        names
    }

    /// Renders the template. Every open slot must have a binding.
    pub fn render(&self, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(text) => out.push_str(text),
                Segment::Slot(name) => {
                    let value = bindings
                        .iter()
                        .find(|(key, _)| key == name)
                        .map(|(_, value)| *value)
                        .ok_or_else(|| PromptError::UnresolvedPlaceholder(name.clone()))?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }

    /// Appends literal text.
    pub fn then(mut self, text: &str) -> Self {
        self.segments.push(Segment::Text(text.to_string()));
        self.merged()
    }

    /// Appends an open placeholder.
    pub fn then_slot(mut self, name: &str) -> Self {
        self.segments.push(Segment::Slot(name.to_string()));
        self
    }

    fn merged(self) -> Self {
        let mut segments: Vec<Segment> = Vec::with_capacity(self.segments.len());
        for seg in self.segments {
            match (segments.last_mut(), seg) {
                (Some(Segment::Text(prev)), Segment::Text(next)) => prev.push_str(&next),
                (_, Segment::Text(next)) if next.is_empty() => {}
                (_, seg) => segments.push(seg),
            }
        }
        Self { segments }
    }
}
