//! Prompt construction for the five generation kinds.
//!
//! The templates live in `templates/*.txt` and are compiled in; tests diff
//! rendered output against independently transcribed golden files.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::GenerationKind;

pub const DEFAULT_NUM_OF_TOPICS: u32 = 8;
pub const DEFAULT_NUM_OF_MARGIN: u32 = 2;
pub const DEFAULT_CONTEXT: &str = "general knowledge";

pub const EVENTS_TEMPLATE: &str = include_str!("../templates/events.txt");
pub const EXPLAIN_TEMPLATE: &str = include_str!("../templates/explain.txt");
pub const QUESTIONS_TEMPLATE: &str = include_str!("../templates/questions.txt");
pub const RELATIONSHIP_TEMPLATE: &str = include_str!("../templates/relationship.txt");
pub const IMAGE_TEMPLATE: &str = include_str!("../templates/image.txt");

/// Names that may appear as `{name}` inside a template.
pub const PLACEHOLDERS: [&str; 6] = [
    "numOfTopics",
    "numOfMargin",
    "topic",
    "context",
    "subevents",
    "result",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("invalid prompt parameters: {0}")]
    InvalidParams(String),
    #[error("a relationship needs at least two events, got {0}")]
    TooFewEvents(usize),
}

pub fn template(kind: GenerationKind) -> &'static str {
    match kind {
        GenerationKind::Events => EVENTS_TEMPLATE,
        GenerationKind::Explain => EXPLAIN_TEMPLATE,
        GenerationKind::Questions => QUESTIONS_TEMPLATE,
        GenerationKind::Relationship => RELATIONSHIP_TEMPLATE,
        GenerationKind::Image => IMAGE_TEMPLATE,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptParams {
    pub num_of_topics: u32,
    pub num_of_margin: u32,
    pub topic: String,
    pub context: String,
    #[serde(default)]
    pub subevents: Vec<String>,
    #[serde(default)]
    pub result: String,
}

impl Default for PromptParams {
    fn default() -> Self {
        Self {
            num_of_topics: DEFAULT_NUM_OF_TOPICS,
            num_of_margin: DEFAULT_NUM_OF_MARGIN,
            topic: String::new(),
            context: DEFAULT_CONTEXT.to_string(),
            subevents: Vec::new(),
            result: String::new(),
        }
    }
}

impl PromptParams {
    pub fn new(topic: impl Into<String>, context: impl Into<String>) -> Self {
        Self {
            topic: topic.into(),
            context: context.into(),
            ..Self::default()
        }
    }

    pub fn with_counts(mut self, num_of_topics: u32, num_of_margin: u32) -> Self {
        self.num_of_topics = num_of_topics;
        self.num_of_margin = num_of_margin;
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        require_topic(&self.topic)?;
        if self.num_of_topics == 0 {
            return Err(PromptError::InvalidParams(
                "num_of_topics must be positive".into(),
            ));
        }
        if self.num_of_topics.saturating_sub(self.num_of_margin) < 1 {
            return Err(PromptError::InvalidParams(format!(
                "num_of_topics ({}) minus num_of_margin ({}) must be at least 1",
                self.num_of_topics, self.num_of_margin
            )));
        }
        Ok(())
    }
}

fn require_topic(topic: &str) -> Result<(), PromptError> {
    if topic.trim().is_empty() {
        Err(PromptError::InvalidParams("topic must be nonempty".into()))
    } else {
        Ok(())
    }
}

fn context_or_default(context: &str) -> &str {
    if context.trim().is_empty() {
        DEFAULT_CONTEXT
    } else {
        context
    }
}

/// Substitutes `{name}` placeholders in a single left-to-right pass, so values
/// that themselves contain placeholder text are never expanded again. Braces
/// that do not form a known placeholder are copied verbatim.
fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 128);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let replaced = tail.find('}').and_then(|close| {
            let name = &tail[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (close, *v))
        });
        match replaced {
            Some((close, value)) => {
                out.push_str(value);
                rest = &tail[close + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn build_events_prompt(p: &PromptParams) -> Result<String, PromptError> {
    p.validate()?;
    let topics = p.num_of_topics.to_string();
    let margin = p.num_of_margin.to_string();
    Ok(render(
        EVENTS_TEMPLATE,
        &[
            ("numOfTopics", &topics),
            ("numOfMargin", &margin),
            ("topic", p.topic.trim()),
            ("context", context_or_default(p.context.trim())),
        ],
    ))
}

pub fn build_explain_prompt(topic: &str, context: &str) -> Result<String, PromptError> {
    require_topic(topic)?;
    Ok(render(
        EXPLAIN_TEMPLATE,
        &[
            ("topic", topic.trim()),
            ("context", context_or_default(context.trim())),
        ],
    ))
}

pub fn build_questions_prompt(topic: &str, context: &str) -> Result<String, PromptError> {
    require_topic(topic)?;
    Ok(render(
        QUESTIONS_TEMPLATE,
        &[
            ("topic", topic.trim()),
            ("context", context_or_default(context.trim())),
        ],
    ))
}

/// Subevents are rendered as `[A, B, C]` in the given order.
pub fn build_relationship_prompt<S: AsRef<str>>(
    topic: &str,
    context: &str,
    subevents: &[S],
) -> Result<String, PromptError> {
    if subevents.len() < 2 {
        return Err(PromptError::TooFewEvents(subevents.len()));
    }
    require_topic(topic)?;
    let list = format!(
        "[{}]",
        subevents
            .iter()
            .map(|s| s.as_ref().trim())
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(render(
        RELATIONSHIP_TEMPLATE,
        &[
            ("topic", topic.trim()),
            ("context", context_or_default(context.trim())),
            ("subevents", &list),
        ],
    ))
}

pub fn build_image_prompt(topic: &str, result: &str) -> Result<String, PromptError> {
    require_topic(topic)?;
    if result.trim().is_empty() {
        return Err(PromptError::InvalidParams("result must be nonempty".into()));
    }
    Ok(render(
        IMAGE_TEMPLATE,
        &[("topic", topic.trim()), ("result", result.trim())],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn events_prompt_with_example_inputs() {
        let p = PromptParams::new("Age of Discovery", "North America");
        let out = build_events_prompt(&p).unwrap();
        assert!(out.starts_with(
            "Give me 8 give or take 2 events that helped to directly support Age of Discovery \
             within the broader context of North America."
        ));
        assert!(out
            .ends_with(r#"{"events":[{"Event_name":"Event_name","Year":"Year","Type":"Type"}]}"#));
        assert!(out.contains("within 500 years"));
    }

    #[test]
    fn events_prompt_minimal_counts() {
        let p = PromptParams::new("X", "Y").with_counts(1, 0);
        assert!(build_events_prompt(&p)
            .unwrap()
            .starts_with("Give me 1 give or take 0 events"));
    }

    #[test]
    fn events_prompt_rejects_bad_params() {
        assert!(matches!(
            build_events_prompt(&PromptParams::new("  ", "Y")),
            Err(PromptError::InvalidParams(_))
        ));
        let p = PromptParams::new("X", "Y").with_counts(2, 2);
        assert!(matches!(
            build_events_prompt(&p),
            Err(PromptError::InvalidParams(_))
        ));
    }

    #[test]
    fn explain_and_questions() {
        let e = build_explain_prompt("Age of Discovery", "North America").unwrap();
        assert!(e.contains("Explain Age of Discovery within the broader context of North America."));
        assert!(e.contains("3000 characters"));
        assert!(build_explain_prompt("A", "B")
            .unwrap()
            .contains("focus on A"));
        assert!(build_explain_prompt("", "B").is_err());

        let q = build_questions_prompt("Age of Discovery", "North America").unwrap();
        assert!(q.contains(
            "I need to learn about Age of Discovery in relation to the overall context of North America."
        ));
        assert!(q.contains("comma separated values (CSV)"));
        assert!(build_questions_prompt("A", "B")
            .unwrap()
            .contains("total of 5 questions"));
    }

    #[test]
    fn relationship_prompt() {
        let out = build_relationship_prompt("T", "C", &["A", "B"]).unwrap();
        assert_eq!(out.matches("[A, B]").count(), 1);
        assert_eq!(
            build_relationship_prompt("T", "C", &["A"]),
            Err(PromptError::TooFewEvents(1))
        );
    }

    #[test]
    fn image_prompt() {
        let out = build_image_prompt("Age of Discovery", "desc").unwrap();
        assert!(out.contains("sketch-like image for the concept: Age of Discovery"));
        assert!(build_image_prompt("A", "B")
            .unwrap()
            .contains("representative of the following content: B"));
        assert!(build_image_prompt("A", " ").is_err());
    }

    #[test]
    fn values_are_not_re_expanded() {
        let out = build_explain_prompt("{context}", "ctx").unwrap();
        assert!(out.starts_with("Explain {context} within the broader context of ctx."));
    }

    #[test]
    fn empty_context_falls_back() {
        let out = build_explain_prompt("A", "").unwrap();
        assert!(out.contains("context of general knowledge."));
    }

    fn residue(s: &str) -> bool {
        PLACEHOLDERS.iter().any(|p| s.contains(&format!("{{{p}}}")))
    }

    proptest! {
        #[test]
        fn no_placeholder_residue(
            topic in "[^{}]{1,40}".prop_filter("nonblank", |s| !s.trim().is_empty()),
            context in "[^{}]{0,40}",
            a in "[^{}]{1,20}",
            b in "[^{}]{1,20}",
            n in 1u32..20,
        ) {
            let p = PromptParams::new(topic.clone(), context.clone()).with_counts(n + 1, n);
            let outs = [
                build_events_prompt(&p).unwrap(),
                build_explain_prompt(&topic, &context).unwrap(),
                build_questions_prompt(&topic, &context).unwrap(),
                build_relationship_prompt(&topic, &context, &[a.clone(), b.clone()]).unwrap(),
                build_image_prompt(&topic, &a).unwrap_or_default(),
            ];
            for o in &outs {
                prop_assert!(!residue(o), "residue in {o}");
            }
            prop_assert_eq!(build_events_prompt(&p).unwrap(), outs[0].clone());
        }
    }
}
