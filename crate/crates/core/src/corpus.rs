//! Document clusters: the input hierarchy, streaming loaders and validation.
//!
//! Two on-disk layouts are supported. JSON-lines holds one cluster per line:
//!
//! ```text
//! {"cluster_id": "c1", "documents": [{"doc_id": "d1", "text": "..."}]}
//! ```
//!
//! A document may carry a pre-split `sentences` list (then `text` is
//! optional) and a `salience_scores` list aligned with its sentences.
//!
//! The directory layout holds one sub-directory per cluster and one plain
//! text file per document; lexicographic names define both orders.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::textproc::Segmenter;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{location}: {message}")]
    Record { location: String, message: String },
}

impl CorpusError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, CorpusError::Io { .. })
    }

    fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io { path: path.display().to_string(), source }
    }
}

/// One sentence of a document.
#[derive(Debug, Clone)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Byte range of `text` within the owning document's raw text.
    pub span: Range<usize>,
    tokens: OnceLock<Vec<String>>,
}

impl Sentence {
    pub fn new(index: usize, text: String, span: Range<usize>) -> Self {
        Self { index, text, span, tokens: OnceLock::new() }
    }

    /// Whitespace tokens, computed on first use.
    pub fn tokens(&self) -> &[String] {
        self.tokens
            .get_or_init(|| self.text.split_whitespace().map(str::to_string).collect())
    }
}

impl PartialEq for Sentence {
    fn eq(&self, other: &Self) -> bool {
        self.index == other.index && self.text == other.text && self.span == other.span
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
    /// Externally supplied salience scores, one per sentence.
    pub precomputed_scores: Option<Vec<f64>>,
    presegmented: bool,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, raw_text: impl Into<String>, segmenter: &Segmenter) -> Self {
        let raw_text = raw_text.into();
        let sentences = segmenter.segment(&raw_text);
        Self { doc_id: doc_id.into(), raw_text, sentences, precomputed_scores: None, presegmented: false }
    }

    /// Build from an existing sentence split. The raw text becomes the
    /// sentences joined by single spaces.
    pub fn from_sentences<S: AsRef<str>>(doc_id: impl Into<String>, sentences: &[S]) -> Self {
        let mut raw_text = String::new();
        let mut out = Vec::new();
        for s in sentences.iter().map(|s| s.as_ref().trim()).filter(|s| !s.is_empty()) {
            if !raw_text.is_empty() {
                raw_text.push(' ');
            }
            let start = raw_text.len();
            raw_text.push_str(s);
            out.push(Sentence::new(out.len(), s.to_string(), start..raw_text.len()));
        }
        Self { doc_id: doc_id.into(), raw_text, sentences: out, precomputed_scores: None, presegmented: true }
    }

    /// Sentences joined by single spaces.
    pub fn joined_text(&self) -> String {
        let texts: Vec<&str> = self.sentences.iter().map(|s| s.text.as_str()).collect();
        texts.join(" ")
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// A group of topically related documents. Immutable after ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentCluster {
    pub cluster_id: String,
    pub documents: Vec<Document>,
}

impl DocumentCluster {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    JsonLines,
    DirectoryPerCluster,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            "directory-per-cluster" | "dir" => Ok(Self::DirectoryPerCluster),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

/// Text normalization applied to raw document text before segmentation.
pub type Normalizer = Arc<dyn Fn(&str) -> String + Send + Sync>;

/// Collapse every whitespace run to a single space and trim.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    /// Stop at the first malformed record instead of reporting and skipping it.
    pub strict: bool,
    pub segmenter: Segmenter,
    pub normalizer: Option<Normalizer>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { format: CorpusFormat::JsonLines, strict: false, segmenter: Segmenter::default(), normalizer: None }
    }
}

impl fmt::Debug for LoadOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoadOptions")
            .field("format", &self.format)
            .field("strict", &self.strict)
            .field("normalizer", &self.normalizer.is_some())
            .finish()
    }
}

pub type ClusterStream = Box<dyn Iterator<Item = Result<DocumentCluster, CorpusError>> + Send>;

/// Open a corpus for streaming. Clusters are yielded in file order; only one
/// cluster is materialized at a time.
pub fn load_clusters(path: &Path, options: LoadOptions) -> Result<ClusterStream, CorpusError> {
    match options.format {
        CorpusFormat::JsonLines => {
            let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
            Ok(Box::new(JsonLinesReader::new(BufReader::new(file), path.display().to_string(), options)))
        }
        CorpusFormat::DirectoryPerCluster => Ok(Box::new(DirectoryReader::new(path, options)?)),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentences: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    salience_scores: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterRecord {
    cluster_id: String,
    documents: Vec<DocumentRecord>,
}

fn build_cluster(record: ClusterRecord, options: &LoadOptions) -> Result<DocumentCluster, String> {
    if record.cluster_id.trim().is_empty() {
        return Err("empty `cluster_id`".into());
    }
    if record.documents.is_empty() {
        return Err("cluster has no documents".into());
    }
    let mut documents = Vec::with_capacity(record.documents.len());
    for d in record.documents {
        let mut doc = match (d.sentences, d.text) {
            (Some(sentences), _) => Document::from_sentences(d.doc_id, &sentences),
            (None, Some(text)) => {
                let text = match &options.normalizer {
                    Some(n) => n(&text),
                    None => text,
                };
                Document::new(d.doc_id, text, &options.segmenter)
            }
            (None, None) => return Err(format!("document `{}` has neither `text` nor `sentences`", d.doc_id)),
        };
        if let Some(scores) = d.salience_scores {
            if scores.len() != doc.sentences.len() {
                return Err(format!(
                    "document `{}` has {} salience scores for {} sentences",
                    doc.doc_id,
                    scores.len(),
                    doc.sentences.len()
                ));
            }
            if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return Err(format!("document `{}` has a salience score outside [0, 1]", doc.doc_id));
            }
            doc.precomputed_scores = Some(scores);
        }
        documents.push(doc);
    }
    Ok(DocumentCluster { cluster_id: record.cluster_id, documents })
}

/// Streaming JSON-lines cluster reader.
pub struct JsonLinesReader<R> {
    reader: R,
    source: String,
    line_no: usize,
    options: LoadOptions,
    seen_ids: HashSet<String>,
    done: bool,
    buf: String,
}

impl<R: BufRead> JsonLinesReader<R> {
    pub fn new(reader: R, source: String, options: LoadOptions) -> Self {
        Self { reader, source, line_no: 0, options, seen_ids: HashSet::new(), done: false, buf: String::new() }
    }

    fn record_error(&mut self, message: String) -> CorpusError {
        if self.options.strict {
            self.done = true;
        }
        CorpusError::Record { location: format!("{}:{}", self.source, self.line_no), message }
    }
}

impl<R: BufRead> Iterator for JsonLinesReader<R> {
    type Item = Result<DocumentCluster, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.done {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => {
                    self.done = true;
                    return None;
                }
                Ok(_) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(CorpusError::Io { path: self.source.clone(), source: e }));
                }
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            let record: ClusterRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => return Some(Err(self.record_error(e.to_string()))),
            };
            let cluster = match build_cluster(record, &self.options) {
                Ok(c) => c,
                Err(msg) => return Some(Err(self.record_error(msg))),
            };
            if !self.seen_ids.insert(cluster.cluster_id.clone()) {
                let msg = format!("duplicate cluster_id `{}`", cluster.cluster_id);
                return Some(Err(self.record_error(msg)));
            }
            return Some(Ok(cluster));
        }
        None
    }
}

/// Streaming reader over a directory of cluster directories.
pub struct DirectoryReader {
    clusters: std::vec::IntoIter<PathBuf>,
    options: LoadOptions,
    done: bool,
}

impl DirectoryReader {
    pub fn new(root: &Path, options: LoadOptions) -> Result<Self, CorpusError> {
        let mut dirs = Vec::new();
        for entry in std::fs::read_dir(root).map_err(|e| CorpusError::io(root, e))? {
            let entry = entry.map_err(|e| CorpusError::io(root, e))?;
            if entry.path().is_dir() {
                dirs.push(entry.path());
            }
        }
        dirs.sort();
        Ok(Self { clusters: dirs.into_iter(), options, done: false })
    }

    fn read_cluster(&self, dir: &Path) -> Result<DocumentCluster, CorpusError> {
        let cluster_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))? {
            let path = entry.map_err(|e| CorpusError::io(dir, e))?.path();
            if path.is_file() {
                files.push(path);
            }
        }
        files.sort();
        let mut documents = Vec::with_capacity(files.len());
        for path in files {
            let bytes = std::fs::read(&path).map_err(|e| CorpusError::io(&path, e))?;
            let text = String::from_utf8(bytes).map_err(|_| CorpusError::Record {
                location: path.display().to_string(),
                message: "document is not valid UTF-8".into(),
            })?;
            let text = match &self.options.normalizer {
                Some(n) => n(&text),
                None => text,
            };
            let doc_id = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            documents.push(Document::new(doc_id, text, &self.options.segmenter));
        }
        if documents.is_empty() {
            return Err(CorpusError::Record {
                location: dir.display().to_string(),
                message: "cluster has no documents".into(),
            });
        }
        Ok(DocumentCluster { cluster_id, documents })
    }
}

impl Iterator for DirectoryReader {
    type Item = Result<DocumentCluster, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let dir = self.clusters.next()?;
        let result = self.read_cluster(&dir);
        if let Err(e) = &result {
            if e.is_fatal() || self.options.strict {
                self.done = true;
            }
        }
        Some(result)
    }
}

/// Write clusters as JSON-lines in the format `load_clusters` reads.
pub fn write_clusters<'a, W: Write>(
    clusters: impl IntoIterator<Item = &'a DocumentCluster>,
    mut out: W,
) -> io::Result<()> {
    for c in clusters {
        let record = ClusterRecord {
            cluster_id: c.cluster_id.clone(),
            documents: c
                .documents
                .iter()
                .map(|d| DocumentRecord {
                    doc_id: d.doc_id.clone(),
                    text: (!d.presegmented).then(|| d.raw_text.clone()),
                    sentences: d.presegmented.then(|| d.sentences.iter().map(|s| s.text.clone()).collect()),
                    salience_scores: d.precomputed_scores.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooFewDocuments { found: usize, min: usize },
    DuplicateDocId { doc_id: String },
    EmptyDocument { doc_id: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewDocuments { found, min } => write!(f, "too few documents: {found} < {min}"),
            Violation::DuplicateDocId { doc_id } => write!(f, "duplicate doc_id `{doc_id}`"),
            Violation::EmptyDocument { doc_id } => write!(f, "empty document `{doc_id}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cluster_id: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_cluster(cluster: &DocumentCluster, min_docs: usize) -> ValidationReport {
    let mut violations = Vec::new();
    if cluster.documents.len() < min_docs {
        violations.push(Violation::TooFewDocuments { found: cluster.documents.len(), min: min_docs });
    }
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for d in &cluster.documents {
        if !seen.insert(d.doc_id.as_str()) && reported.insert(d.doc_id.as_str()) {
            violations.push(Violation::DuplicateDocId { doc_id: d.doc_id.clone() });
        }
        if d.is_empty() {
            violations.push(Violation::EmptyDocument { doc_id: d.doc_id.clone() });
        }
    }
    ValidationReport { cluster_id: cluster.cluster_id.clone(), violations }
}
