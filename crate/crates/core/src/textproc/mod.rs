//! Sentence segmentation, tokenization, stemming and n-gram extraction.
//!
//! Everything here is pure; the segmenter holds only its abbreviation set.

mod porter;

use std::collections::{HashMap, HashSet};
use std::hash::Hash;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;

pub use porter::stem;

const DEFAULT_ABBREVIATIONS: &str = include_str!("../../data/abbreviations.txt");

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Rule-based sentence splitter.
///
/// A boundary is a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) followed by whitespace and an uppercase letter, or by the end of
/// the text. A period after a listed abbreviation or a single capital initial
/// is never a boundary.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: HashSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::from_list(DEFAULT_ABBREVIATIONS)
    }
}

impl Segmenter {
    /// Parse an abbreviation list: one entry per line, `#` starts a comment.
    pub fn from_list(list: &str) -> Self {
        let abbreviations = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.trim_end_matches('.').to_lowercase())
            .collect();
        Self { abbreviations }
    }

    pub fn from_file(path: &Path) -> Result<Self, TextError> {
        let list = std::fs::read_to_string(path).map_err(|source| TextError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_list(&list))
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
        let mut chars = word.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_uppercase() {
                return true;
            }
        }
        self.abbreviations.contains(&word.to_lowercase())
    }

    /// Byte spans of each sentence, trimmed of surrounding whitespace.
    pub fn sentence_spans(&self, text: &str) -> Vec<Range<usize>> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if start.is_none() {
                if c.is_whitespace() {
                    i += 1;
                    continue;
                }
                start = Some(pos);
            }
            if !is_terminal(c) {
                i += 1;
                continue;
            }
            // Extend over the whole terminal run, e.g. `?!` or `."`.
            let mut j = i + 1;
            while j < chars.len() && (is_terminal(chars[j].1) || is_closer(chars[j].1)) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            if self.is_boundary(text, &chars, i, j) {
                let s = start.take().expect("sentence start set");
                spans.push(s..end);
            }
            i = j;
        }
        if let Some(s) = start {
            let end = s + text[s..].trim_end().len();
            if end > s {
                spans.push(s..end);
            }
        }
        spans
    }

    fn is_boundary(&self, text: &str, chars: &[(usize, char)], term: usize, after: usize) -> bool {
        // Only whitespace (or nothing) may follow before the next sentence.
        let mut k = after;
        if k < chars.len() && !chars[k].1.is_whitespace() {
            return false;
        }
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k < chars.len() {
            while k < chars.len() && is_opener(chars[k].1) {
                k += 1;
            }
            if k >= chars.len() || !chars[k].1.is_uppercase() {
                return false;
            }
        }
        if chars[term].1 == '.' {
            let word_start = chars[..term]
                .iter()
                .rposition(|&(_, c)| c.is_whitespace())
                .map_or(0, |p| p + 1);
            let word = &text[chars.get(word_start).map_or(0, |&(p, _)| p)..chars[term].0];
            if !word.is_empty() && self.is_abbreviation(word) {
                return false;
            }
        }
        true
    }

    pub fn segment(&self, text: &str) -> Vec<Sentence> {
        self.sentence_spans(text)
            .into_iter()
            .enumerate()
            .map(|(index, span)| Sentence::new(index, text[span.clone()].to_string(), span))
            .collect()
    }
}

fn is_terminal(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(c, '"' | '\'' | ')' | ']' | '\u{201D}' | '\u{2019}' | '\u{00BB}')
}

fn is_opener(c: char) -> bool {
    matches!(c, '"' | '\'' | '(' | '[' | '\u{201C}' | '\u{2018}' | '\u{00AB}')
}

/// Segment with the built-in abbreviation list.
pub fn segment_sentences(raw_text: &str) -> Vec<Sentence> {
    static DEFAULT: OnceLock<Segmenter> = OnceLock::new();
    DEFAULT.get_or_init(Segmenter::default).segment(raw_text)
}

/// Whitespace tokens with their byte ranges in `text`.
pub fn token_spans(text: &str) -> Vec<(Range<usize>, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s..i, &text[s..i]));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s..text.len(), &text[s..]));
    }
    out
}

/// Trim leading and trailing non-alphanumeric characters.
pub fn strip_punctuation(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

pub fn tokenize(text: &str, lowercase: bool, strip_punct: bool) -> Vec<String> {
    text.split_whitespace()
        .map(|t| if strip_punct { strip_punctuation(t) } else { t })
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Token normalization applied before ROUGE comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenNorm {
    pub lowercase: bool,
    pub strip_punct: bool,
    /// Porter-stem tokens longer than three characters.
    pub stem: bool,
}

impl Default for TokenNorm {
    fn default() -> Self {
        Self::scoring()
    }
}

impl TokenNorm {
    /// Salience scoring: lowercase, no punctuation, no stemming.
    pub const fn scoring() -> Self {
        Self { lowercase: true, strip_punct: true, stem: false }
    }

    /// Summary evaluation: as scoring, plus stemming.
    pub const fn evaluation() -> Self {
        Self { lowercase: true, strip_punct: true, stem: true }
    }

    pub fn apply(&self, text: &str) -> Vec<String> {
        let mut tokens = tokenize(text, self.lowercase, self.strip_punct);
        if self.stem {
            for t in &mut tokens {
                if t.chars().count() > 3 {
                    *t = stem(t);
                }
            }
        }
        tokens
    }
}

pub type NgramCounts<'a, T> = HashMap<&'a [T], usize>;

/// Multiset of contiguous `n`-token windows.
pub fn ngrams<T: Eq + Hash>(tokens: &[T], n: usize) -> Result<NgramCounts<'_, T>, TextError> {
    if n == 0 {
        return Err(TextError::ZeroOrder);
    }
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    Ok(counts)
}
