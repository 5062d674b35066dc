//! Question-answer generation for salient sentences.
//!
//! A [`QaGenerator`] turns one sentence into candidate pairs. Two backends
//! exist: the rule-based [`ClozeGenerator`] and the HTTP [`RemoteGenerator`].
//! Exactly one pair per sentence survives [`select_longest_answer`].

mod cloze;
mod remote;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;

pub use cloze::{ClozeGenerator, VerbLexicon};
pub use remote::{
    parse_generate_response, AnswerFilter, FilterFailure, RemoteConfig, RemoteGenerator, RemoteStats,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Cloze,
    Remote,
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorKind::Cloze => "cloze",
            GeneratorKind::Remote => "remote",
        })
    }
}

/// Character (Unicode scalar) offsets into the sentence text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn from_byte_range(text: &str, start: usize, end: usize) -> Self {
        let start_chars = text[..start].chars().count();
        Self { start: start_chars, end: start_chars + text[start..end].chars().count() }
    }

    /// The byte range of this span in `text`, if it lies within it.
    pub fn byte_range(&self, text: &str) -> Option<std::ops::Range<usize>> {
        let mut offsets = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = offsets.nth(self.start)?;
        let end = if self.end == self.start { start } else { offsets.nth(self.end - self.start - 1)? };
        (self.start <= self.end).then_some(start..end)
    }

    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        self.byte_range(text).map(|r| &text[r])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub answer_span: CharSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate_hint: Option<usize>,
    pub source: GeneratorKind,
}

impl QaPair {
    pub fn answer_len(&self) -> usize {
        self.answer.split_whitespace().count()
    }

    /// Checks the pair's structural invariants against its sentence.
    pub fn is_consistent_with(&self, sentence: &str) -> bool {
        !self.answer.is_empty()
            && self.question.trim().ends_with('?')
            && self.answer_span.slice(sentence) == Some(self.answer.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum QaGenError {
    #[error("no question-answer pairs to choose from")]
    NoPairs,
    #[error("transport error talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("protocol error from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
}

impl QaGenError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, QaGenError::Transport { .. })
    }
}

pub trait QaGenerator: Send + Sync {
    fn kind(&self) -> GeneratorKind;

    fn generate(&self, sentence: &Sentence, context: Option<&str>) -> Result<Vec<QaPair>, QaGenError>;
}

/// The pair with the most whitespace tokens in its answer. Ties go to the
/// earliest answer span, then to the lexicographically smallest question.
pub fn select_longest_answer(pairs: &[QaPair]) -> Result<&QaPair, QaGenError> {
    pairs
        .iter()
        .min_by(|a, b| {
            b.answer_len()
                .cmp(&a.answer_len())
                .then(a.answer_span.start.cmp(&b.answer_span.start))
                .then_with(|| a.question.cmp(&b.question))
        })
        .ok_or(QaGenError::NoPairs)
}
