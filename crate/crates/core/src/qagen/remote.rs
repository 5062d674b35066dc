//! Client side of the question-generation service.
//!
//! Wire contract (JSON over HTTP):
//!
//! ```text
//! POST {endpoint}/generate  {"sentence": str, "context"?: str}
//!   -> {"qa_pairs": [{"question": str, "answer": str, "predicate_index"?: int}], "model_info": any}
//! POST {endpoint}/filter    {"question": str, "answer": str, "context": str}
//!   -> {"answerable": bool, "score": float}
//! ```

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CharSpan, ClozeGenerator, GeneratorKind, QaGenError, QaGenerator, QaPair};
use crate::corpus::Sentence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8000`.
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: u32,
    pub max_inflight: usize,
    /// Use the cloze generator for sentences the service fails on.
    pub fallback: bool,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(10),
            retries: 2,
            max_inflight: 8,
            fallback: false,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InflightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InflightLimiter);

impl InflightLimiter {
    fn new(max: usize) -> Self {
        Self { max: max.max(1), active: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.max {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug)]
struct HttpClient {
    client: reqwest::blocking::Client,
    retries: u32,
    limiter: InflightLimiter,
}

impl HttpClient {
    fn new(timeout: Duration, retries: u32, max_inflight: usize) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("HTTP client configuration is static");
        Self { client, retries, limiter: InflightLimiter::new(max_inflight) }
    }

    /// POST a JSON body, retrying transport failures and 5xx responses.
    fn post<B: Serialize>(&self, url: &str, body: &B) -> Result<String, QaGenError> {
        let _permit = self.limiter.acquire();
        let transport = |message: String| QaGenError::Transport { endpoint: url.to_string(), message };
        let mut last = transport("no attempt made".into());
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
            }
            match self.client.post(url).json(body).send() {
                Ok(resp) if resp.status().is_success() => {
                    return resp.text().map_err(|e| transport(e.to_string()));
                }
                Ok(resp) if resp.status().is_server_error() => {
                    last = transport(format!("server returned {}", resp.status()));
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    return Err(QaGenError::Protocol {
                        endpoint: url.to_string(),
                        message: format!("{status}: {}", text.chars().take(200).collect::<String>()),
                    });
                }
                Err(e) => last = transport(e.to_string()),
            }
        }
        Err(last)
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    sentence: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    context: Option<&'a str>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    qa_pairs: Vec<WirePair>,
    #[serde(default)]
    #[allow(dead_code)]
    model_info: serde_json::Value,
}

#[derive(Deserialize)]
struct WirePair {
    question: String,
    answer: String,
    #[serde(default)]
    predicate_index: Option<usize>,
}

/// Parse a `/generate` response for `sentence`.
///
/// Pairs whose answer does not occur verbatim in the sentence, or whose
/// question is empty or lacks a final `?`, are dropped; the second value is
/// the number dropped. Spans are recovered from the answer's first occurrence.
pub fn parse_generate_response(sentence: &str, body: &str) -> Result<(Vec<QaPair>, usize), String> {
    let response: GenerateResponse = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let mut pairs = Vec::with_capacity(response.qa_pairs.len());
    let mut dropped = 0;
    for p in response.qa_pairs {
        let question = p.question.trim();
        let answer = p.answer.trim();
        let found = (!answer.is_empty()).then(|| sentence.find(answer)).flatten();
        match found {
            Some(start) if !question.is_empty() && question.ends_with('?') => pairs.push(QaPair {
                question: question.to_string(),
                answer: answer.to_string(),
                answer_span: CharSpan::from_byte_range(sentence, start, start + answer.len()),
                predicate_hint: p.predicate_index,
                source: GeneratorKind::Remote,
            }),
            _ => {
                log::warn!("dropping generated pair {:?} / {:?}: not grounded in the sentence", p.question, p.answer);
                dropped += 1;
            }
        }
    }
    Ok((pairs, dropped))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteStats {
    pub requests: usize,
    pub dropped_pairs: usize,
    pub failures: usize,
    pub fallbacks: usize,
}

#[derive(Debug)]
pub struct RemoteGenerator {
    config: RemoteConfig,
    http: HttpClient,
    fallback: ClozeGenerator,
    requests: AtomicUsize,
    dropped: AtomicUsize,
    failures: AtomicUsize,
    fallbacks: AtomicUsize,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig, fallback: ClozeGenerator) -> Self {
        let http = HttpClient::new(config.timeout, config.retries, config.max_inflight);
        Self {
            config,
            http,
            fallback,
            requests: AtomicUsize::new(0),
            dropped: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
            fallbacks: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn stats(&self) -> RemoteStats {
        RemoteStats {
            requests: self.requests.load(Ordering::Relaxed),
            dropped_pairs: self.dropped.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            fallbacks: self.fallbacks.load(Ordering::Relaxed),
        }
    }

    fn request(&self, sentence: &str, context: Option<&str>) -> Result<Vec<QaPair>, QaGenError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let url = format!("{}/generate", self.config.endpoint);
        let body = self.http.post(&url, &GenerateRequest { sentence, context })?;
        let (pairs, dropped) = parse_generate_response(sentence, &body)
            .map_err(|message| QaGenError::Protocol { endpoint: url.clone(), message })?;
        self.dropped.fetch_add(dropped, Ordering::Relaxed);
        Ok(pairs)
    }
}

impl QaGenerator for RemoteGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Remote
    }

    fn generate(&self, sentence: &Sentence, context: Option<&str>) -> Result<Vec<QaPair>, QaGenError> {
        match self.request(&sentence.text, context) {
            Ok(pairs) => Ok(pairs),
            Err(e) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
                if self.config.fallback {
                    log::warn!("{e}; falling back to cloze generation");
                    self.fallbacks.fetch_add(1, Ordering::Relaxed);
                    self.fallback.generate(sentence, context)
                } else {
                    Err(e)
                }
            }
        }
    }
}

/// What to answer when the filter service cannot be reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterFailure {
    /// Keep the pair.
    #[default]
    Open,
    /// Drop the pair.
    Closed,
}

#[derive(Serialize)]
struct FilterRequest<'a> {
    question: &'a str,
    answer: &'a str,
    context: &'a str,
}

#[derive(Deserialize)]
struct FilterResponse {
    answerable: bool,
    #[serde(default)]
    #[allow(dead_code)]
    score: Option<f64>,
}

/// Answerability filter. Without an endpoint every pair passes.
#[derive(Debug, Default)]
pub struct AnswerFilter {
    endpoint: Option<String>,
    on_failure: FilterFailure,
    http: Option<HttpClient>,
}

impl AnswerFilter {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn remote(config: &RemoteConfig, on_failure: FilterFailure) -> Self {
        Self {
            endpoint: Some(config.endpoint.clone()),
            on_failure,
            http: Some(HttpClient::new(config.timeout, config.retries, config.max_inflight)),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.endpoint.is_some()
    }

    pub fn verdict(&self, pair: &QaPair, context: &str) -> Result<bool, QaGenError> {
        let (Some(endpoint), Some(http)) = (&self.endpoint, &self.http) else {
            return Ok(true);
        };
        let url = format!("{endpoint}/filter");
        let body = http.post(&url, &FilterRequest { question: &pair.question, answer: &pair.answer, context })?;
        let resp: FilterResponse = serde_json::from_str(&body)
            .map_err(|e| QaGenError::Protocol { endpoint: url, message: e.to_string() })?;
        Ok(resp.answerable)
    }

    pub fn is_answerable(&self, pair: &QaPair, context: &str) -> bool {
        self.verdict(pair, context).unwrap_or_else(|e| {
            log::warn!("answerability filter failed: {e}");
            self.on_failure == FilterFailure::Open
        })
    }
}
