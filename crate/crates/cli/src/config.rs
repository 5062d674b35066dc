//! TOML run configuration. Every section is optional; command-line flags
//! override file values.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use xdoc_core::assembler::GenerationConfig;
use xdoc_core::corpus::CorpusFormat;
use xdoc_core::qagen::{FilterFailure, RemoteConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub corpus: CorpusSection,
    pub generation: GenerationConfig,
    pub qg: QgSection,
    pub filter: FilterSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub format: CorpusFormat,
    pub strict: bool,
    pub abbreviations: Option<PathBuf>,
    pub normalize_whitespace: bool,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { format: CorpusFormat::JsonLines, strict: false, abbreviations: None, normalize_whitespace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QgSection {
    /// Remote generator base URL; the cloze generator is used when unset.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub max_inflight: usize,
    pub fallback: bool,
    pub verbs: Option<PathBuf>,
}

impl Default for QgSection {
    fn default() -> Self {
        let r = RemoteConfig::new("");
        Self {
            endpoint: None,
            timeout_ms: r.timeout.as_millis() as u64,
            retries: r.retries,
            max_inflight: r.max_inflight,
            fallback: r.fallback,
            verbs: None,
        }
    }
}

impl QgSection {
    pub fn remote_config(&self, endpoint: &str) -> RemoteConfig {
        RemoteConfig {
            timeout: Duration::from_millis(self.timeout_ms),
            retries: self.retries,
            max_inflight: self.max_inflight.max(1),
            fallback: self.fallback,
            ..RemoteConfig::new(endpoint)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub endpoint: Option<String>,
    pub on_failure: FilterFailure,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub workers: Option<usize>,
}

pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
