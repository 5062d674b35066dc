use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use super::{CharSpan, GeneratorKind, QaGenError, QaGenerator, QaPair};
use crate::corpus::Sentence;
use crate::textproc::{strip_punctuation, token_spans};

const DEFAULT_VERBS: &str = include_str!("../../data/verbs.txt");

/// Function words the suffix heuristics would otherwise mistake for verbs.
const NON_PREDICATES: &[&str] = &[
    "this", "its", "his", "hers", "ours", "yours", "theirs", "thus", "plus", "always", "perhaps", "towards",
    "afterwards", "whereas", "besides", "news", "series", "species", "during", "nothing", "something",
    "anything", "everything", "morning", "evening", "thing", "things", "years", "hundred",
];

/// Words after which a predicate cannot start.
const DETERMINERS: &[&str] =
    &["a", "an", "the", "its", "his", "their", "our", "your", "my", "these", "those", "this", "every", "each"];

#[derive(Debug, Clone)]
pub struct VerbLexicon {
    words: Arc<HashSet<String>>,
}

impl Default for VerbLexicon {
    fn default() -> Self {
        Self::from_list(DEFAULT_VERBS)
    }
}

impl VerbLexicon {
    pub fn from_list(list: &str) -> Self {
        let words = list
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words: Arc::new(words) }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_list(&std::fs::read_to_string(path)?))
    }

    pub fn empty() -> Self {
        Self { words: Arc::new(HashSet::new()) }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Rule-based question generator.
///
/// Predicates are lexicon verbs or words that look inflected (`-ed`, `-ing`,
/// or `-s` after a consonant). The first token and tokens right after a
/// determiner never qualify. Each predicate yields up to two answers: the
/// clause-bounded run of tokens after it and the run before it, which also
/// stops at the previous predicate. The question is the sentence with the
/// answer replaced by "what" and a final "?".
#[derive(Debug, Clone, Default)]
pub struct ClozeGenerator {
    lexicon: VerbLexicon,
}

fn is_clause_break(c: char) -> bool {
    matches!(c, ',' | ';' | ':')
}

/// Byte offsets of clause breaks in a token. A break directly followed by an
/// alphanumeric character (as in "40,000" or "10:30") does not count.
fn clause_breaks(tok: &str) -> impl DoubleEndedIterator<Item = usize> + '_ {
    tok.char_indices()
        .filter(|&(_, c)| is_clause_break(c))
        .filter(move |&(i, _)| !tok[i + 1..].starts_with(|c: char| c.is_alphanumeric()))
        .map(|(i, _)| i)
}

fn looks_inflected(word: &str) -> bool {
    if !word.chars().all(|c| c.is_ascii_lowercase()) || NON_PREDICATES.contains(&word) {
        return false;
    }
    let n = word.len();
    if word.ends_with("ing") {
        return n >= 5;
    }
    if word.ends_with("ed") {
        return n >= 4;
    }
    if let Some(stem) = word.strip_suffix('s') {
        let before = stem.chars().last();
        return n >= 4 && before.is_some_and(|c| !matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 's'));
    }
    false
}

/// Shrink a byte range of `text` to start and end on alphanumeric characters.
fn trim_to_word_chars(text: &str, range: Range<usize>) -> Option<Range<usize>> {
    let slice = &text[range.clone()];
    let lead = slice.len() - slice.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
    let trail = slice.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
    (trail > lead).then(|| range.start + lead..range.start + trail)
}

impl ClozeGenerator {
    pub fn new(lexicon: VerbLexicon) -> Self {
        Self { lexicon }
    }

    pub fn is_predicate(&self, token: &str) -> bool {
        self.in_lexicon(token) || looks_inflected(strip_punctuation(token))
    }

    fn in_lexicon(&self, token: &str) -> bool {
        let word = strip_punctuation(token);
        !word.is_empty() && self.lexicon.contains(&word.to_lowercase())
    }

    /// Suffix-only matches followed by a lexicon verb are taken as nouns,
    /// as in "officials said".
    fn is_predicate_at(&self, tokens: &[(Range<usize>, &str)], i: usize) -> bool {
        if follows_determiner(tokens, i) {
            return false;
        }
        if self.in_lexicon(tokens[i].1) {
            return true;
        }
        let tok = tokens[i].1;
        let ends_clause = clause_breaks(tok).next().is_some();
        looks_inflected(strip_punctuation(tok))
            && (ends_clause || !tokens.get(i + 1).is_some_and(|(_, next)| self.in_lexicon(next)))
    }

    /// All candidate pairs, in predicate order; for each predicate the
    /// following-span pair precedes the preceding-span pair.
    pub fn generate_pairs(&self, text: &str) -> Vec<QaPair> {
        let tokens = token_spans(text);
        let mut pairs = Vec::new();
        let mut previous = 0;
        for i in 1..tokens.len() {
            if !self.is_predicate_at(&tokens, i) {
                continue;
            }
            for range in [post_run(text, &tokens, i), pre_run(text, &tokens, previous, i)].into_iter().flatten() {
                pairs.push(self.make_pair(text, range, i));
            }
            previous = i + 1;
        }
        pairs
    }

    fn make_pair(&self, text: &str, answer: Range<usize>, predicate: usize) -> QaPair {
        let at_start = text[..answer.start].chars().all(|c| !c.is_alphanumeric());
        let what = if at_start { "What" } else { "what" };
        let mut question = String::with_capacity(text.len());
        question.push_str(&text[..answer.start]);
        question.push_str(what);
        question.push_str(&text[answer.end..]);
        let body_len = question.trim_end_matches(|c: char| !c.is_alphanumeric()).len();
        question.truncate(body_len);
        question.push('?');
        QaPair {
            question,
            answer: text[answer.clone()].to_string(),
            answer_span: CharSpan::from_byte_range(text, answer.start, answer.end),
            predicate_hint: Some(predicate),
            source: GeneratorKind::Cloze,
        }
    }
}

/// Maximal run after the predicate, stopping at a clause break.
fn post_run(text: &str, tokens: &[(Range<usize>, &str)], predicate: usize) -> Option<Range<usize>> {
    if clause_breaks(tokens[predicate].1).next().is_some() {
        return None;
    }
    let start = tokens.get(predicate + 1)?.0.start;
    let mut end = start;
    for (range, tok) in &tokens[predicate + 1..] {
        match clause_breaks(tok).next() {
            Some(0) => break,
            Some(cut) => {
                end = range.start + cut;
                break;
            }
            None => end = range.end,
        }
    }
    trim_to_word_chars(text, start..end)
}

fn follows_determiner(tokens: &[(Range<usize>, &str)], i: usize) -> bool {
    let prev = tokens[i - 1].1;
    prev.chars().all(char::is_alphabetic) && DETERMINERS.contains(&prev.to_lowercase().as_str())
}

/// Maximal run in `tokens[from..predicate]`, stopping at a clause break.
fn pre_run(text: &str, tokens: &[(Range<usize>, &str)], from: usize, predicate: usize) -> Option<Range<usize>> {
    if from >= predicate {
        return None;
    }
    let end = tokens[predicate - 1].0.end;
    let mut start = end;
    for (range, tok) in tokens[from..predicate].iter().rev() {
        match clause_breaks(tok).next_back() {
            Some(cut) => {
                start = range.start + cut + 1;
                break;
            }
            None => start = range.start,
        }
    }
    if start >= end {
        return None;
    }
    trim_to_word_chars(text, start..end)
}

impl QaGenerator for ClozeGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Cloze
    }

    fn generate(&self, sentence: &Sentence, _context: Option<&str>) -> Result<Vec<QaPair>, QaGenError> {
        Ok(self.generate_pairs(&sentence.text))
    }
}
