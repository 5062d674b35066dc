use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use xdoc_core::assembler::{GenerationConfig, GenerationCounters, SCHEMA_VERSION};
use xdoc_core::corpus::{collapse_whitespace, load_clusters, validate_cluster, CorpusFormat, LoadOptions};
use xdoc_core::emitter::{
    emit_finetune, read_instances, sha256_file, DigestWriter, HeldoutSplitter, StatsAccumulator, WriteReport,
};
use xdoc_core::pipeline::{default_workers, Pipeline};
use xdoc_core::qagen::{AnswerFilter, ClozeGenerator, FilterFailure, QaGenerator, RemoteGenerator, RemoteStats, VerbLexicon};
use xdoc_core::salience::{cd_gsg_scores, precomputed_scores, select_salient};
use xdoc_core::textproc::Segmenter;

use crate::config::{self, CorpusSection, FileConfig};
use crate::{eval, Cli, Command, CorpusArgs, GenerateArgs, GenerationArgs};

/// Sidecar record written next to every output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    /// Effective configuration after flags were applied.
    pub config: Value,
    pub output: WriteReport,
    #[serde(default)]
    pub counters: Option<GenerationCounters>,
    #[serde(default)]
    pub record_errors: usize,
    #[serde(default)]
    pub remote: Option<RemoteStats>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    /// Absent for directories.
    pub sha256: Option<String>,
}

impl RunMetadata {
    fn new(command: &str, inputs: &[&Path], config: Value, output: WriteReport) -> anyhow::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let sha256 = if p.is_file() { Some(sha256_file(p)?) } else { None };
                Ok(InputDigest { path: p.display().to_string(), sha256 })
            })
            .collect::<std::io::Result<_>>()?;
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            inputs,
            config,
            output,
            counters: None,
            record_errors: 0,
            remote: None,
            workers: None,
        })
    }

    fn write_beside(&self, output: &Path) -> anyhow::Result<()> {
        let path = meta_path(output);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

fn create(path: &Path) -> anyhow::Result<DigestWriter<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(DigestWriter::new(BufWriter::new(file)))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn exit_status(strict: bool, record_errors: usize) -> ExitCode {
    if record_errors > 0 {
        eprintln!("{record_errors} record error(s)");
    }
    if strict && record_errors > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn apply_corpus_args(section: &mut CorpusSection, args: &CorpusArgs) {
    if let Some(f) = args.format {
        section.format = f;
    } else if args.input.is_dir() && section.format == CorpusFormat::JsonLines {
        section.format = CorpusFormat::DirectoryPerCluster;
    }
    section.strict |= args.strict;
    section.normalize_whitespace |= args.normalize_whitespace;
    if args.abbreviations.is_some() {
        section.abbreviations = args.abbreviations.clone();
    }
}

fn load_options(section: &CorpusSection) -> anyhow::Result<LoadOptions> {
    let segmenter = match &section.abbreviations {
        Some(p) => Segmenter::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => Segmenter::default(),
    };
    Ok(LoadOptions {
        format: section.format,
        strict: section.strict,
        segmenter,
        normalizer: section.normalize_whitespace.then(|| Arc::new(collapse_whitespace) as _),
    })
}

fn apply_generation_args(g: &mut GenerationConfig, a: &GenerationArgs) {
    if let Some(v) = a.rouge_variant {
        g.rouge_variant = v;
    }
    g.scoring_norm.stem |= a.stem_scoring;
    if a.recompute_scores {
        g.use_precomputed_scores = false;
    }
    if let Some(modes) = &a.modes {
        g.modes_enabled = modes.iter().copied().collect::<BTreeSet<_>>();
    }
    let strings = [
        (&a.mask_token, &mut g.mask_token),
        (&a.doc_sep_token, &mut g.doc_sep_token),
        (&a.target_separator, &mut g.target_separator),
    ];
    for (flag, field) in strings {
        if let Some(v) = flag {
            field.clone_from(v);
        }
    }
    if let Some(n) = a.max_input_tokens {
        g.max_input_tokens = n;
    }
    if let Some(n) = a.max_output_tokens {
        g.max_output_tokens = n;
    }
    if let Some(p) = a.question_placement {
        g.question_placement = p.into();
    }
    g.use_prefixes |= a.prefixes;
    if a.no_question {
        g.include_question = false;
    }
    g.answer_only_target |= a.answer_only;
    if let Some(n) = a.min_docs {
        g.min_docs = n;
    }
}

pub fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Validate(args) => {
            apply_corpus_args(&mut cfg.corpus, &args.corpus);
            if let Some(n) = args.min_docs {
                cfg.generation.min_docs = n;
            }
            validate(&cfg, &args.corpus.input)
        }
        Command::Score(args) => {
            apply_corpus_args(&mut cfg.corpus, &args.corpus);
            if let Some(v) = args.rouge_variant {
                cfg.generation.rouge_variant = v;
            }
            cfg.generation.scoring_norm.stem |= args.stem;
            if args.recompute {
                cfg.generation.use_precomputed_scores = false;
            }
            score(&cfg, &args.corpus.input, args.out.as_deref())
        }
        Command::Generate(args) => generate(cfg, args),
        Command::Stats(args) => stats(&args.input, args.meta.as_deref(), args.json),
        Command::Split(args) => split(&args.input, &args.train, &args.heldout, args.fraction, args.seed),
        Command::EmitFinetune(args) => {
            apply_generation_args(&mut cfg.generation, &args.generation);
            finetune(&cfg, args.task, &args.input, &args.out, cfg.corpus.strict || args.strict)
        }
        Command::Eval(cmd) => eval::run(cmd),
    }
}

fn validate(cfg: &FileConfig, input: &Path) -> anyhow::Result<ExitCode> {
    let stream = load_clusters(input, load_options(&cfg.corpus)?)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let (mut clusters, mut flagged, mut record_errors) = (0, 0, 0);
    for item in stream {
        match item {
            Ok(c) => {
                clusters += 1;
                let report = validate_cluster(&c, cfg.generation.min_docs);
                if !report.is_clean() {
                    flagged += 1;
                    serde_json::to_writer(&mut out, &report)?;
                    writeln!(out)?;
                }
            }
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                record_errors += 1;
                eprintln!("warning: {e}");
            }
        }
    }
    eprintln!("{clusters} cluster(s), {flagged} with violations");
    Ok(exit_status(cfg.corpus.strict, record_errors))
}

fn score(cfg: &FileConfig, input: &Path, out: Option<&Path>) -> anyhow::Result<ExitCode> {
    let stream = load_clusters(input, load_options(&cfg.corpus)?)?;
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let g = &cfg.generation;
    let mut record_errors = 0;
    for item in stream {
        let c = match item {
            Ok(c) => c,
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                record_errors += 1;
                eprintln!("warning: {e}");
                continue;
            }
        };
        let pre = g.use_precomputed_scores.then(|| precomputed_scores(&c)).flatten();
        let source = if pre.is_some() { "precomputed" } else { "cross-document" };
        let scores = pre.unwrap_or_else(|| cd_gsg_scores(&c, g.rouge_variant, g.scoring_norm));
        let salient: Vec<_> = (0..c.documents.len()).filter_map(|k| select_salient(&scores, k).ok()).collect();
        let record = json!({
            "schema_version": SCHEMA_VERSION,
            "cluster_id": c.cluster_id,
            "source": source,
            "rouge_variant": g.rouge_variant,
            "scores": scores,
            "salient": salient,
        });
        serde_json::to_writer(&mut sink, &record)?;
        writeln!(sink)?;
    }
    sink.flush()?;
    Ok(exit_status(cfg.corpus.strict, record_errors))
}

fn generate(mut cfg: FileConfig, args: GenerateArgs) -> anyhow::Result<ExitCode> {
    apply_corpus_args(&mut cfg.corpus, &args.corpus);
    apply_generation_args(&mut cfg.generation, &args.generation);
    if args.qg_endpoint.is_some() {
        cfg.qg.endpoint = args.qg_endpoint.clone();
    }
    cfg.qg.fallback |= args.qg_fallback;
    if args.verbs.is_some() {
        cfg.qg.verbs = args.verbs.clone();
    }
    if args.filter_endpoint.is_some() {
        cfg.filter.endpoint = args.filter_endpoint.clone();
    }
    if args.filter_fail_closed {
        cfg.filter.on_failure = FilterFailure::Closed;
    }
    if args.workers.is_some() {
        cfg.run.workers = args.workers;
    }
    cfg.generation.validate()?;

    let lexicon = match &cfg.qg.verbs {
        Some(p) => VerbLexicon::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => VerbLexicon::default(),
    };
    let cloze = ClozeGenerator::new(lexicon);
    let remote = cfg.qg.endpoint.as_deref().map(|e| RemoteGenerator::new(cfg.qg.remote_config(e), cloze.clone()));
    let generator: &dyn QaGenerator = match &remote {
        Some(r) => r,
        None => &cloze,
    };
    let filter = match &cfg.filter.endpoint {
        Some(e) => AnswerFilter::remote(&cfg.qg.remote_config(e), cfg.filter.on_failure),
        None => AnswerFilter::disabled(),
    };
    let workers = cfg.run.workers.unwrap_or_else(default_workers).max(1);

    let stream = load_clusters(&args.corpus.input, load_options(&cfg.corpus)?)?;
    let mut writer = create(&args.out)?;
    let pipeline = Pipeline { workers, ..Pipeline::new(&cfg.generation, generator, &filter) };
    let summary = pipeline.run(stream, |inst| writer.write_record(&inst), |e| eprintln!("warning: {e}"))?;
    let report = writer.finish()?;

    let mut meta = RunMetadata::new("generate", &[&args.corpus.input], serde_json::to_value(&cfg)?, report)?;
    meta.counters = Some(summary.counters.clone());
    meta.record_errors = summary.record_errors;
    meta.remote = remote.as_ref().map(RemoteGenerator::stats);
    meta.workers = Some(workers);
    meta.write_beside(&args.out)?;

    let c = &summary.counters;
    eprintln!(
        "{} instance(s) from {} cluster(s); skipped documents: {} without sentences, {} without QA, {} QA errors",
        c.instances, c.clusters, c.skipped_no_sentences, c.skipped_no_qa, c.skipped_qa_error
    );
    Ok(exit_status(cfg.corpus.strict, summary.record_errors))
}

fn stats(input: &Path, meta: Option<&Path>, as_json: bool) -> anyhow::Result<ExitCode> {
    let mut acc = StatsAccumulator::default();
    for inst in read_instances(open(input)?, input.display().to_string()) {
        acc.add(&inst?);
    }
    let default_meta = meta_path(input);
    let meta = meta.map(Path::to_path_buf).or_else(|| default_meta.is_file().then_some(default_meta));
    let counters = match meta {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            let meta: RunMetadata = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            meta.counters
        }
        None => None,
    };
    let stats = acc.finish(counters);
    if as_json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        print!("{}", stats.render_table());
    }
    Ok(ExitCode::SUCCESS)
}

fn split(input: &Path, train: &Path, heldout: &Path, fraction: f64, seed: u64) -> anyhow::Result<ExitCode> {
    let splitter = HeldoutSplitter::new(fraction, seed)?;
    let mut train_w = create(train)?;
    let mut held_w = create(heldout)?;
    for inst in read_instances(open(input)?, input.display().to_string()) {
        let inst = inst?;
        if splitter.is_heldout(&inst.cluster_id) {
            held_w.write_record(&inst)?;
        } else {
            train_w.write_record(&inst)?;
        }
    }
    let config = json!({ "fraction": fraction, "seed": seed });
    for (path, w) in [(train, train_w), (heldout, held_w)] {
        let report = w.finish()?;
        eprintln!("{}: {} instance(s)", path.display(), report.count);
        RunMetadata::new("split", &[input], config.clone(), report)?.write_beside(path)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn finetune(
    cfg: &FileConfig,
    task: xdoc_core::emitter::FinetuneTask,
    input: &Path,
    out: &Path,
    strict: bool,
) -> anyhow::Result<ExitCode> {
    cfg.generation.validate()?;
    let mut writer = create(out)?;
    let mut record_errors = 0;
    for (i, line) in open(input)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", input.display(), i + 1);
        let result = serde_json::from_str::<Value>(&line)
            .map_err(|e| format!("{location}: {e}"))
            .and_then(|v| emit_finetune(task, &v, &cfg.generation, &location).map_err(|e| e.to_string()));
        match result {
            Ok(ex) => writer.write_record(&ex)?,
            Err(message) => {
                record_errors += 1;
                eprintln!("warning: {message}");
                if strict {
                    break;
                }
            }
        }
    }
    let report = writer.finish()?;
    let config = json!({ "task": task, "generation": cfg.generation });
    let mut meta = RunMetadata::new("emit-finetune", &[input], config, report)?;
    meta.record_errors = record_errors;
    meta.write_beside(out)?;
    Ok(exit_status(strict, record_errors))
}
