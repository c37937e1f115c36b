//! Parsers for the model's output grammars.
//!
//! Every parser is lenient: recoverable problems become warnings on the
//! result instead of errors, and none of them panic on arbitrary input.

mod events;
mod markup;
mod questions;
mod summary;

use thiserror::Error;

pub use events::{parse_events, parse_events_with, serialize_events, ParsedEvents, Strictness};
pub use markup::{parse_relationship_markup, ParsedMarkup};
pub use questions::{parse_questions, ParsedQuestions, MAX_QUESTIONS};
pub use summary::{derive_short_summary, MAX_SUMMARY_CHARS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}
