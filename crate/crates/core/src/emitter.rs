//! Instance serialization, held-out splitting, corpus statistics and
//! fine-tuning formats.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::assembler::{
    assemble_input, truncate_budget, GenerationConfig, GenerationCounters, Mode, PretrainInstance, SCHEMA_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum EmitError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{location}: {message}")]
    Record { location: String, message: String },
    #[error("held-out fraction {0} outside [0, 1)")]
    BadFraction(f64),
}

impl EmitError {
    fn record(location: impl Into<String>, message: impl Into<String>) -> Self {
        EmitError::Record { location: location.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteReport {
    pub count: usize,
    pub bytes: u64,
    /// Hex sha256 of the written bytes.
    pub sha256: String,
}

/// A writer that hashes and counts everything passing through it.
pub struct DigestWriter<W> {
    inner: W,
    hasher: Sha256,
    bytes: u64,
    count: usize,
}

impl<W: Write> DigestWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, hasher: Sha256::new(), bytes: 0, count: 0 }
    }

    /// Serialize one record as a JSON line.
    pub fn write_record<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        self.inner.write_all(&line)?;
        self.hasher.update(&line);
        self.bytes += line.len() as u64;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<WriteReport> {
        self.inner.flush()?;
        Ok(WriteReport { count: self.count, bytes: self.bytes, sha256: hex::encode(self.hasher.finalize()) })
    }
}

pub fn write_instances<'a, W: Write>(
    instances: impl IntoIterator<Item = &'a PretrainInstance>,
    out: W,
) -> io::Result<WriteReport> {
    let mut w = DigestWriter::new(out);
    for inst in instances {
        w.write_record(inst)?;
    }
    w.finish()
}

/// Hex sha256 of a file's contents.
pub fn sha256_file(path: &std::path::Path) -> io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    io::copy(&mut file, &mut hasher)?;
    Ok(hex::encode(hasher.finalize()))
}

/// Stream instances back from JSON-lines. Blank lines are ignored.
pub fn read_instances<R: BufRead>(
    reader: R,
    source: String,
) -> impl Iterator<Item = Result<PretrainInstance, EmitError>> {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(EmitError::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(serde_json::from_str(&line).map_err(|e| EmitError::record(format!("{source}:{}", i + 1), e.to_string())))
    })
}

/// Deterministic cluster-level assignment to the held-out set.
#[derive(Debug, Clone, Copy)]
pub struct HeldoutSplitter {
    fraction: f64,
    seed: u64,
}

impl HeldoutSplitter {
    pub fn new(fraction: f64, seed: u64) -> Result<Self, EmitError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(EmitError::BadFraction(fraction));
        }
        Ok(Self { fraction, seed })
    }

    /// Maps the cluster id to `[0, 1)` through sha256 of seed and id.
    pub fn is_heldout(&self, cluster_id: &str) -> bool {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(cluster_id.as_bytes());
        let digest = h.finalize();
        let head = u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"));
        (head as f64 / 2f64.powi(64)) < self.fraction
    }
}

/// Partition instances into (train, held-out) by cluster.
pub fn split_heldout(
    instances: impl IntoIterator<Item = PretrainInstance>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<PretrainInstance>, Vec<PretrainInstance>), EmitError> {
    let splitter = HeldoutSplitter::new(fraction, seed)?;
    Ok(instances.into_iter().partition(|i| !splitter.is_heldout(&i.cluster_id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub instances: usize,
    /// Clusters contributing at least one instance.
    pub clusters_with_instances: usize,
    pub per_mode: BTreeMap<Mode, usize>,
    pub per_generator: BTreeMap<String, usize>,
    pub instances_per_cluster: Option<Distribution>,
    pub unique_salient_sentences: usize,
    /// Mode B/C instances whose question contains the answer verbatim.
    pub answer_in_question: usize,
    /// Run counters from generation, when available.
    pub generation: Option<GenerationCounters>,
}

#[derive(Debug, Default)]
pub struct StatsAccumulator {
    instances: usize,
    per_mode: BTreeMap<Mode, usize>,
    per_generator: BTreeMap<String, usize>,
    per_cluster: HashMap<String, usize>,
    salient: std::collections::HashSet<(String, String)>,
    answer_in_question: usize,
}

impl StatsAccumulator {
    pub fn add(&mut self, inst: &PretrainInstance) {
        self.instances += 1;
        *self.per_mode.entry(inst.mode).or_default() += 1;
        *self.per_generator.entry(inst.generator.to_string()).or_default() += 1;
        *self.per_cluster.entry(inst.cluster_id.clone()).or_default() += 1;
        self.salient.insert((inst.cluster_id.clone(), inst.doc_id.clone()));
        if inst.mode != Mode::A && inst.question.contains(inst.answer.as_str()) {
            self.answer_in_question += 1;
        }
    }

    pub fn finish(self, generation: Option<GenerationCounters>) -> CorpusStats {
        let counts = self.per_cluster.values();
        let instances_per_cluster = (!self.per_cluster.is_empty()).then(|| Distribution {
            mean: self.instances as f64 / self.per_cluster.len() as f64,
            min: *counts.clone().min().unwrap(),
            max: *counts.max().unwrap(),
        });
        CorpusStats {
            instances: self.instances,
            clusters_with_instances: self.per_cluster.len(),
            per_mode: self.per_mode,
            per_generator: self.per_generator,
            instances_per_cluster,
            unique_salient_sentences: self.salient.len(),
            answer_in_question: self.answer_in_question,
            generation,
        }
    }
}

pub fn corpus_stats<'a>(
    instances: impl IntoIterator<Item = &'a PretrainInstance>,
    generation: Option<GenerationCounters>,
) -> CorpusStats {
    let mut acc = StatsAccumulator::default();
    instances.into_iter().for_each(|i| acc.add(i));
    acc.finish(generation)
}

impl CorpusStats {
    /// Input clusters if generation counters are known, else clusters seen.
    pub fn clusters(&self) -> usize {
        self.generation.as_ref().map_or(self.clusters_with_instances, |g| g.clusters)
    }

    /// A plain-text cluster/instance table.
    pub fn render_table(&self) -> String {
        let clusters = self.clusters();
        let ratio = if clusters == 0 { 0.0 } else { self.instances as f64 / clusters as f64 };
        let mut s = String::new();
        let _ = writeln!(s, "{:<24}{:>12}", "clusters", clusters);
        let _ = writeln!(s, "{:<24}{:>12}", "instances", self.instances);
        let _ = writeln!(s, "{:<24}{:>12.2}", "instances / cluster", ratio);
        for (mode, n) in &self.per_mode {
            let _ = writeln!(s, "{:<24}{:>12}", format!("mode {mode}"), n);
        }
        for (g, n) in &self.per_generator {
            let _ = writeln!(s, "{:<24}{:>12}", format!("generator {g}"), n);
        }
        if let Some(d) = &self.instances_per_cluster {
            let _ = writeln!(s, "{:<24}{:>12}", "per-cluster min/max", format!("{}/{}", d.min, d.max));
        }
        let _ = writeln!(s, "{:<24}{:>12}", "answer in question", self.answer_in_question);
        if let Some(g) = &self.generation {
            let skipped = g.skipped_no_sentences + g.skipped_no_qa + g.skipped_qa_error;
            let _ = writeln!(s, "{:<24}{:>12}", "skipped documents", skipped);
            let _ = writeln!(s, "{:<24}{:>12}", "mode A skipped", g.mode_a_skipped);
            let _ = writeln!(s, "{:<24}{:>12}", "truncated documents", g.truncated_documents);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneTask {
    Qa,
    Mds,
    Qmds,
}

impl std::str::FromStr for FinetuneTask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "qa" => Ok(FinetuneTask::Qa),
            "mds" => Ok(FinetuneTask::Mds),
            "qmds" => Ok(FinetuneTask::Qmds),
            other => Err(format!("unknown task `{other}` (expected qa, mds or qmds)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneExample {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub input_text: String,
    pub target_text: String,
    pub global_token_positions: Vec<usize>,
}

fn field_str(record: &Value, name: &str, location: &str) -> Result<String, EmitError> {
    match record.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(EmitError::record(location, format!("field `{name}` must be a string"))),
        None => Err(EmitError::record(location, format!("missing field `{name}`"))),
    }
}

fn field_strings(record: &Value, name: &str, location: &str) -> Result<Vec<String>, EmitError> {
    let bad = || EmitError::record(location, format!("field `{name}` must be a list of strings"));
    match record.get(name) {
        Some(Value::Array(items)) => {
            items.iter().map(|v| v.as_str().map(str::to_string).ok_or_else(bad)).collect()
        }
        Some(_) => Err(bad()),
        None => Err(EmitError::record(location, format!("missing field `{name}`"))),
    }
}

/// Convert one task record into a model input/target pair.
///
/// Required fields: `qa` needs `question`, `contexts`, `answer`; `mds` needs
/// `documents`, `summary`; `qmds` needs `query`, `documents`, `summary`.
/// An optional string `id` is carried over.
pub fn emit_finetune(
    task: FinetuneTask,
    record: &Value,
    config: &GenerationConfig,
    location: &str,
) -> Result<FinetuneExample, EmitError> {
    let (docs, question, target) = match task {
        FinetuneTask::Qa => (
            field_strings(record, "contexts", location)?,
            Some(field_str(record, "question", location)?),
            field_str(record, "answer", location)?,
        ),
        FinetuneTask::Mds => (field_strings(record, "documents", location)?, None, field_str(record, "summary", location)?),
        FinetuneTask::Qmds => (
            field_strings(record, "documents", location)?,
            Some(field_str(record, "query", location)?),
            field_str(record, "summary", location)?,
        ),
    };
    let config = GenerationConfig { include_question: question.is_some(), ..config.clone() };
    let question = question.unwrap_or_default();
    let draft = assemble_input(&docs, &question, &config);
    let doc_tokens: usize = docs.iter().map(|d| d.split_whitespace().count()).sum();
    let reserved = draft.text.split_whitespace().count() - doc_tokens;
    let input = if draft.text.split_whitespace().count() <= config.max_input_tokens {
        draft
    } else {
        assemble_input(&truncate_budget(&docs, reserved, &config), &question, &config)
    };
    Ok(FinetuneExample {
        schema_version: SCHEMA_VERSION,
        id: record.get("id").and_then(Value::as_str).map(str::to_string),
        input_text: input.text,
        target_text: target,
        global_token_positions: input.global_token_positions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qagen::GeneratorKind;
    use serde_json::json;

    fn inst(cluster: &str, doc: &str, mode: Mode) -> PretrainInstance {
        PretrainInstance {
            schema_version: SCHEMA_VERSION,
            cluster_id: cluster.into(),
            doc_id: doc.into(),
            mode,
            input_text: "X <doc-sep> Q?".into(),
            target_text: "a, s".into(),
            question: "Q?".into(),
            answer: "a".into(),
            salient_sentence: "s".into(),
            global_token_positions: Some(vec![1]),
            generator: GeneratorKind::Cloze,
        }
    }

    #[test]
    fn write_read_round_trip() {
        let items = vec![inst("c1", "d", Mode::A), inst("c1", "d", Mode::B), inst("c2", "e", Mode::C)];
        let mut buf = Vec::new();
        let report = write_instances(&items, &mut buf).unwrap();
        assert_eq!(report.count, 3);
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 3);
        assert_eq!(report.bytes, buf.len() as u64);
        let again = write_instances(&items, Vec::new()).unwrap();
        assert_eq!(report.sha256, again.sha256);

        let back: Vec<_> = read_instances(&buf[..], "mem".into()).map(Result::unwrap).collect();
        assert_eq!(back, items);
        assert!(String::from_utf8(buf).unwrap().starts_with("{\"schema_version\":1,"));
    }

    #[test]
    fn empty_stream_writes_nothing() {
        let mut buf = Vec::new();
        let report = write_instances(&[], &mut buf).unwrap();
        assert_eq!(report.count, 0);
        assert!(buf.is_empty());
        assert_eq!(report.sha256, hex::encode(Sha256::digest(b"")));
    }

    #[test]
    fn bad_lines_report_location() {
        let err = read_instances("\n{oops\n".as_bytes(), "f.jsonl".into()).next().unwrap().unwrap_err();
        assert!(err.to_string().starts_with("f.jsonl:2:"), "{err}");
    }

    #[test]
    fn split_is_by_cluster_and_deterministic() {
        let items: Vec<_> = (0..200)
            .flat_map(|c| Mode::ALL.map(|m| inst(&format!("c{c}"), "d", m)))
            .collect();
        let (train, held) = split_heldout(items.clone(), 0.0, 7).unwrap();
        assert_eq!((train.len(), held.len()), (600, 0));

        let (train, held) = split_heldout(items.clone(), 0.3, 7).unwrap();
        let train_ids: std::collections::HashSet<_> = train.iter().map(|i| &i.cluster_id).collect();
        assert!(held.iter().all(|i| !train_ids.contains(&i.cluster_id)));
        assert_eq!(held.len() % 3, 0);
        assert!(!held.is_empty());
        assert_eq!(split_heldout(items, 0.3, 7).unwrap().1, held);

        assert!(HeldoutSplitter::new(1.0, 0).is_err());
        assert!(HeldoutSplitter::new(-0.1, 0).is_err());
    }

    #[test]
    fn stats_per_mode_sum_to_total() {
        let items: Vec<_> = ["d0", "d1", "d2", "d3"]
            .iter()
            .flat_map(|d| Mode::ALL.map(|m| inst("c", d, m)))
            .collect();
        let stats = corpus_stats(&items, None);
        assert_eq!(stats.instances, 12);
        assert_eq!(stats.per_mode.values().sum::<usize>(), 12);
        assert_eq!(stats.instances_per_cluster.unwrap().mean, 12.0);
        assert_eq!(stats.unique_salient_sentences, 4);
        assert_eq!(stats.answer_in_question, 0);
        let table = stats.render_table();
        assert!(table.contains("instances / cluster") && table.contains("12.00"), "{table}");
    }

    #[test]
    fn finetune_formats() {
        let cfg = GenerationConfig::default();
        let qa = json!({"question": "Q", "contexts": ["X", "Y"], "answer": "A"});
        let ex = emit_finetune(FinetuneTask::Qa, &qa, &cfg, "t").unwrap();
        assert_eq!((ex.input_text.as_str(), ex.target_text.as_str()), ("X <doc-sep> Y <doc-sep> Q", "A"));

        let mds = json!({"documents": ["X", "Y"], "summary": "S"});
        let ex = emit_finetune(FinetuneTask::Mds, &mds, &cfg, "t").unwrap();
        assert_eq!((ex.input_text.as_str(), ex.target_text.as_str()), ("X <doc-sep> Y", "S"));

        let qmds = json!({"query": "Q", "documents": ["X", "Y"], "summary": "S"});
        let ex = emit_finetune(FinetuneTask::Qmds, &qmds, &cfg, "t").unwrap();
        assert_eq!(ex.input_text, "X <doc-sep> Y <doc-sep> Q");

        let prefixed = GenerationConfig { use_prefixes: true, ..GenerationConfig::default() };
        let ex = emit_finetune(FinetuneTask::Qa, &qa, &prefixed, "t").unwrap();
        assert_eq!(ex.input_text.matches("question: ").count(), 1);

        let err = emit_finetune(FinetuneTask::Qa, &json!({"question": "Q", "answer": "A"}), &cfg, "f:3").unwrap_err();
        assert_eq!(err.to_string(), "f:3: missing field `contexts`");
    }

    #[test]
    fn finetune_respects_input_budget() {
        let cfg = GenerationConfig { max_input_tokens: 9, ..GenerationConfig::default() };
        let rec = json!({"question": "Q", "contexts": ["a b c d e f", "g h i j k l"], "answer": "A"});
        let ex = emit_finetune(FinetuneTask::Qa, &rec, &cfg, "t").unwrap();
        assert!(ex.input_text.split_whitespace().count() <= 9, "{}", ex.input_text);
        assert_eq!(ex.input_text, "a b c <doc-sep> g h i <doc-sep> Q");
    }
}
