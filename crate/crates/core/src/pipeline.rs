//! Parallel generation over a cluster stream.
//!
//! Clusters are read in fixed-size batches, processed on a rayon pool, and
//! handed to the sink in input order, so output does not depend on the
//! number of workers.

use rayon::prelude::*;

use crate::assembler::{generate_cluster_instances, ConfigError, GenerationConfig, GenerationCounters, PretrainInstance};
use crate::corpus::{CorpusError, DocumentCluster};
use crate::qagen::{AnswerFilter, QaGenerator};

pub const DEFAULT_BATCH: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("output: {0}")]
    Sink(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub counters: GenerationCounters,
    /// Non-fatal record errors reported by the reader.
    pub record_errors: usize,
}

pub struct Pipeline<'a> {
    pub config: &'a GenerationConfig,
    pub generator: &'a dyn QaGenerator,
    pub filter: &'a AnswerFilter,
    pub workers: usize,
    pub batch_size: usize,
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a GenerationConfig, generator: &'a dyn QaGenerator, filter: &'a AnswerFilter) -> Self {
        Self { config, generator, filter, workers: default_workers(), batch_size: DEFAULT_BATCH }
    }

    /// Process every cluster, passing instances to `sink` in input order.
    ///
    /// Record errors go to `on_error` and the run continues; fatal corpus
    /// errors abort it.
    pub fn run<I, S, E>(&self, clusters: I, mut sink: S, mut on_error: E) -> Result<RunSummary, PipelineError>
    where
        I: IntoIterator<Item = Result<DocumentCluster, CorpusError>>,
        S: FnMut(PretrainInstance) -> std::io::Result<()>,
        E: FnMut(&CorpusError),
    {
        self.config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers.max(1))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        let mut summary = RunSummary::default();
        let mut stream = clusters.into_iter();
        let mut batch = Vec::with_capacity(self.batch_size);
        loop {
            batch.clear();
            for item in stream.by_ref() {
                match item {
                    Ok(c) => batch.push(c),
                    Err(e) if e.is_fatal() => return Err(e.into()),
                    Err(e) => {
                        summary.record_errors += 1;
                        on_error(&e);
                    }
                }
                if batch.len() == self.batch_size.max(1) {
                    break;
                }
            }
            if batch.is_empty() {
                break;
            }
            let outputs: Vec<_> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|c| generate_cluster_instances(c, self.config, self.generator, self.filter))
                    .collect()
            });
            for out in outputs {
                let out = out?;
                summary.counters += &out.counters;
                for inst in out.instances {
                    sink(inst)?;
                }
            }
        }
        Ok(summary)
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
