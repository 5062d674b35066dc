//! Pre-training instance assembly.
//!
//! For every document of a cluster, its most salient sentence is turned into
//! a question-answer pair and up to three instances are emitted, one per
//! context mode:
//!
//! * `A`: the held-out document is removed from the context;
//! * `B`: the salient sentence is replaced by the mask token;
//! * `C`: only the answer span inside the salient sentence is masked.
//!
//! Every mode shares the target `answer + separator + salient sentence`.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::corpus::DocumentCluster;
use crate::metrics::RougeVariant;
use crate::qagen::{select_longest_answer, AnswerFilter, CharSpan, GeneratorKind, QaGenerator};
use crate::salience::{cd_gsg_scores, precomputed_scores, select_salient, ScoredSentence};
use crate::textproc::TokenNorm;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    A,
    B,
    C,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::A, Mode::B, Mode::C];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Mode::A),
            "B" => Ok(Mode::B),
            "C" => Ok(Mode::C),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionPlacement {
    #[default]
    AfterContext,
    BeforeContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub rouge_variant: RougeVariant,
    /// Token normalization for salience scoring.
    pub scoring_norm: TokenNorm,
    /// Prefer salience scores supplied with the corpus when every document
    /// of a cluster has them.
    pub use_precomputed_scores: bool,
    pub mask_token: String,
    pub doc_sep_token: String,
    pub target_separator: String,
    pub max_input_tokens: usize,
    pub max_output_tokens: usize,
    pub modes_enabled: BTreeSet<Mode>,
    pub question_placement: QuestionPlacement,
    pub use_prefixes: bool,
    pub include_question: bool,
    /// Emit only the answer as the target, without the salient sentence.
    pub answer_only_target: bool,
    pub min_docs: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            rouge_variant: RougeVariant::R1F1,
            scoring_norm: TokenNorm::scoring(),
            use_precomputed_scores: true,
            mask_token: "<mask>".into(),
            doc_sep_token: "<doc-sep>".into(),
            target_separator: ", ".into(),
            max_input_tokens: 4096,
            max_output_tokens: 1024,
            modes_enabled: Mode::ALL.into_iter().collect(),
            question_placement: QuestionPlacement::AfterContext,
            use_prefixes: false,
            include_question: true,
            answer_only_target: false,
            min_docs: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    ZeroBudget(&'static str),
    #[error("no modes enabled")]
    NoModes,
    #[error("{0} must be a single non-empty token without whitespace")]
    BadToken(&'static str),
    #[error("target_separator must not be empty")]
    EmptySeparator,
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_input_tokens == 0 {
            return Err(ConfigError::ZeroBudget("max_input_tokens"));
        }
        if self.max_output_tokens == 0 {
            return Err(ConfigError::ZeroBudget("max_output_tokens"));
        }
        if self.modes_enabled.is_empty() {
            return Err(ConfigError::NoModes);
        }
        for (name, tok) in [("mask_token", &self.mask_token), ("doc_sep_token", &self.doc_sep_token)] {
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(ConfigError::BadToken(name));
            }
        }
        if self.target_separator.is_empty() {
            return Err(ConfigError::EmptySeparator);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainInstance {
    pub schema_version: u32,
    pub cluster_id: String,
    /// The held-out document.
    pub doc_id: String,
    pub mode: Mode,
    pub input_text: String,
    pub target_text: String,
    pub question: String,
    pub answer: String,
    pub salient_sentence: String,
    pub global_token_positions: Option<Vec<usize>>,
    pub generator: GeneratorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("mode A needs at least two documents")]
    ModeSkipped,
    #[error("held-out document {0} does not exist")]
    NoSuchDocument(usize),
    #[error("salient sentence does not belong to the held-out document")]
    ForeignSentence,
    #[error("answer span lies outside the salient sentence")]
    BadAnswerSpan,
}

/// Context documents for one mode, rendered as sentences joined by spaces.
pub fn build_context(
    cluster: &DocumentCluster,
    held_out: usize,
    salient: &ScoredSentence,
    answer_span: CharSpan,
    mode: Mode,
    config: &GenerationConfig,
) -> Result<Vec<String>, ContextError> {
    let doc = cluster.documents.get(held_out).ok_or(ContextError::NoSuchDocument(held_out))?;
    if salient.doc_index != held_out {
        return Err(ContextError::ForeignSentence);
    }
    let sentence = doc.sentences.get(salient.sent_index).ok_or(ContextError::ForeignSentence)?;
    let answer_bytes = answer_span.byte_range(&sentence.text).ok_or(ContextError::BadAnswerSpan)?;
    if answer_bytes.is_empty() {
        return Err(ContextError::BadAnswerSpan);
    }
    if mode == Mode::A && cluster.documents.len() < 2 {
        return Err(ContextError::ModeSkipped);
    }

    let masked_sentence = match mode {
        Mode::A => None,
        Mode::B => Some(config.mask_token.clone()),
        Mode::C => {
            let t = &sentence.text;
            Some(format!("{}{}{}", &t[..answer_bytes.start], config.mask_token, &t[answer_bytes.end..]))
        }
    };
    let mut docs = Vec::with_capacity(cluster.documents.len());
    for (i, d) in cluster.documents.iter().enumerate() {
        if i != held_out {
            docs.push(d.joined_text());
            continue;
        }
        let Some(replacement) = &masked_sentence else { continue };
        let texts: Vec<&str> = d
            .sentences
            .iter()
            .map(|s| if s.index == salient.sent_index { replacement.as_str() } else { s.text.as_str() })
            .collect();
        docs.push(texts.join(" "));
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInput {
    pub text: String,
    /// Whitespace-token indices of every document separator.
    pub global_token_positions: Vec<usize>,
}

pub fn assemble_input(context_docs: &[String], question: &str, config: &GenerationConfig) -> AssembledInput {
    let sep = format!(" {} ", config.doc_sep_token);
    let mut context = context_docs.join(&sep);
    if config.use_prefixes {
        context.insert_str(0, "context: ");
    }
    let text = if !config.include_question {
        context
    } else {
        let question = if config.use_prefixes { format!("question: {question}") } else { question.to_string() };
        let joiner = if config.use_prefixes { " " } else { sep.as_str() };
        match (context_docs.is_empty(), config.question_placement) {
            (true, _) => question,
            (false, QuestionPlacement::AfterContext) => format!("{context}{joiner}{question}"),
            (false, QuestionPlacement::BeforeContext) => format!("{question}{joiner}{context}"),
        }
    };
    let global_token_positions = text
        .split_whitespace()
        .enumerate()
        .filter(|(_, t)| *t == config.doc_sep_token)
        .map(|(i, _)| i)
        .collect();
    AssembledInput { text, global_token_positions }
}

fn truncate_tokens(text: &str, budget: usize) -> Option<String> {
    let mut tokens = text.split_whitespace();
    let kept: Vec<&str> = tokens.by_ref().take(budget).collect();
    tokens.next().map(|_| kept.join(" "))
}

/// Cut every document to an equal share of the input budget left after
/// `reserved` tokens, keeping leading tokens.
pub fn truncate_budget(context_docs: &[String], reserved: usize, config: &GenerationConfig) -> Vec<String> {
    if context_docs.is_empty() {
        return Vec::new();
    }
    let per_doc = config.max_input_tokens.saturating_sub(reserved) / context_docs.len();
    context_docs.iter().map(|d| truncate_tokens(d, per_doc).unwrap_or_else(|| d.clone())).collect()
}

pub fn build_target(answer: &str, salient_sentence: &str, config: &GenerationConfig) -> String {
    let target = if config.answer_only_target {
        answer.to_string()
    } else {
        format!("{answer}{}{salient_sentence}", config.target_separator)
    };
    truncate_tokens(&target, config.max_output_tokens).unwrap_or(target)
}

fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Per-run counters. Additive across clusters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationCounters {
    pub clusters: usize,
    pub single_document_clusters: usize,
    pub precomputed_score_clusters: usize,
    pub documents: usize,
    pub instances: usize,
    /// Documents without any sentence.
    pub skipped_no_sentences: usize,
    /// Documents whose salient sentence produced no usable pair.
    pub skipped_no_qa: usize,
    /// Documents where the generator failed.
    pub skipped_qa_error: usize,
    /// Generated pairs rejected because their answer is not grounded.
    pub invalid_pairs: usize,
    /// Pairs removed by the answerability filter.
    pub filtered_pairs: usize,
    pub mode_a_skipped: usize,
    pub over_budget: usize,
    /// Mode B/C instances dropped because the input did not hold exactly one mask.
    pub mask_lost: usize,
    pub truncated_documents: usize,
    pub truncated_targets: usize,
    /// Mode B/C instances whose question contains the answer verbatim.
    pub answer_in_question: usize,
}

impl AddAssign<&GenerationCounters> for GenerationCounters {
    fn add_assign(&mut self, o: &GenerationCounters) {
        self.clusters += o.clusters;
        self.single_document_clusters += o.single_document_clusters;
        self.precomputed_score_clusters += o.precomputed_score_clusters;
        self.documents += o.documents;
        self.instances += o.instances;
        self.skipped_no_sentences += o.skipped_no_sentences;
        self.skipped_no_qa += o.skipped_no_qa;
        self.skipped_qa_error += o.skipped_qa_error;
        self.invalid_pairs += o.invalid_pairs;
        self.filtered_pairs += o.filtered_pairs;
        self.mode_a_skipped += o.mode_a_skipped;
        self.over_budget += o.over_budget;
        self.mask_lost += o.mask_lost;
        self.truncated_documents += o.truncated_documents;
        self.truncated_targets += o.truncated_targets;
        self.answer_in_question += o.answer_in_question;
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClusterOutput {
    pub instances: Vec<PretrainInstance>,
    pub counters: GenerationCounters,
}

/// Run the full generation procedure over one cluster.
///
/// Output order is document order, then mode order A, B, C. Per-document
/// failures are counted, never fatal.
pub fn generate_cluster_instances(
    cluster: &DocumentCluster,
    config: &GenerationConfig,
    generator: &dyn QaGenerator,
    filter: &AnswerFilter,
) -> Result<ClusterOutput, ConfigError> {
    config.validate()?;
    let mut out = ClusterOutput::default();
    let c = &mut out.counters;
    c.clusters = 1;
    c.documents = cluster.documents.len();
    if cluster.documents.len() < 2 {
        c.single_document_clusters = 1;
    }

    let precomputed = config.use_precomputed_scores.then(|| precomputed_scores(cluster)).flatten();
    if precomputed.is_some() {
        c.precomputed_score_clusters = 1;
    }
    let scores = precomputed.unwrap_or_else(|| cd_gsg_scores(cluster, config.rouge_variant, config.scoring_norm));

    for (k, doc) in cluster.documents.iter().enumerate() {
        let Ok(salient) = select_salient(&scores, k) else {
            c.skipped_no_sentences += 1;
            continue;
        };
        let sentence = &doc.sentences[salient.sent_index];
        let doc_text = doc.joined_text();
        let mut pairs = match generator.generate(sentence, Some(&doc_text)) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("cluster `{}` doc `{}`: {e}", cluster.cluster_id, doc.doc_id);
                c.skipped_qa_error += 1;
                continue;
            }
        };
        let before = pairs.len();
        pairs.retain(|p| p.is_consistent_with(&sentence.text));
        c.invalid_pairs += before - pairs.len();
        if filter.is_enabled() {
            let before = pairs.len();
            pairs.retain(|p| filter.is_answerable(p, &doc_text));
            c.filtered_pairs += before - pairs.len();
        }
        let Ok(pair) = select_longest_answer(&pairs) else {
            c.skipped_no_qa += 1;
            continue;
        };

        let target_full = if config.answer_only_target {
            pair.answer.clone()
        } else {
            format!("{}{}{}", pair.answer, config.target_separator, sentence.text)
        };
        let target_text = build_target(&pair.answer, &sentence.text, config);
        if target_text != target_full {
            c.truncated_targets += 1;
        }
        let question = if config.include_question { pair.question.as_str() } else { "" };

        for &mode in &config.modes_enabled {
            let context = match build_context(cluster, k, &salient, pair.answer_span, mode, config) {
                Ok(ctx) => ctx,
                Err(ContextError::ModeSkipped) => {
                    c.mode_a_skipped += 1;
                    continue;
                }
                Err(e) => unreachable!("pair was validated against its sentence: {e}"),
            };
            let draft = assemble_input(&context, question, config);
            let reserved = count_tokens(&draft.text) - context.iter().map(|d| count_tokens(d)).sum::<usize>();
            if reserved >= config.max_input_tokens {
                c.over_budget += 1;
                continue;
            }
            let fitted = truncate_budget(&context, reserved, config);
            c.truncated_documents += fitted.iter().zip(&context).filter(|(a, b)| a != b).count();
            let input = assemble_input(&fitted, question, config);
            if mode != Mode::A {
                if input.text.matches(config.mask_token.as_str()).count() != 1 {
                    c.mask_lost += 1;
                    continue;
                }
                if question.contains(pair.answer.as_str()) {
                    c.answer_in_question += 1;
                }
            }
            out.instances.push(PretrainInstance {
                schema_version: SCHEMA_VERSION,
                cluster_id: cluster.cluster_id.clone(),
                doc_id: doc.doc_id.clone(),
                mode,
                input_text: input.text,
                target_text: target_text.clone(),
                question: pair.question.clone(),
                answer: pair.answer.clone(),
                salient_sentence: sentence.text.clone(),
                global_token_positions: Some(input.global_token_positions),
                generator: pair.source,
            });
        }
    }
    out.counters.instances = out.instances.len();
    Ok(out)
}
