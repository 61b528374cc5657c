//! Client side of the sequence-generation service.
//!
//! Wire contract (JSON over HTTP POST):
//!
//! ```text
//! request:  {"sentences": ["..."], "num_beams": N, "max_length": M}
//! response: {"results": [[{"sequence": "...", "score": s}, ...], ...],
//!            "score_kind": "nll" | "logprob"}      (score_kind optional, default nll)
//! ```
//!
//! `results[i]` holds at most `num_beams` hypotheses for `sentences[i]`.
//! [`MockGenerator`] replays a fixture in the same shape, keyed by sentence.

use crate::rank::BeamHypothesis;
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::thread::sleep;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub sentences: Vec<String>,
    pub num_beams: usize,
    pub max_length: usize,
}

impl GenerationRequest {
    pub fn new(
        sentences: Vec<String>,
        num_beams: usize,
        max_length: usize,
    ) -> Result<Self, GenerateError> {
        if sentences.is_empty() {
            return Err(GenerateError::InvalidRequest("no sentences".into()));
        }
        if num_beams == 0 {
            return Err(GenerateError::InvalidRequest(
                "num_beams must be at least 1".into(),
            ));
        }
        Ok(GenerationRequest {
            sentences,
            num_beams,
            max_length,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Negative log-likelihood: lower is better.
    #[default]
    Nll,
    /// Log-probability: higher is better.
    Logprob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub results: Vec<Vec<BeamHypothesis>>,
    #[serde(default)]
    pub score_kind: ScoreKind,
}

impl GenerationResponse {
    /// Checks the response against the request it answers.
    pub fn check_shape(&self, req: &GenerationRequest) -> Result<(), GenerateError> {
        if self.results.len() != req.sentences.len() {
            return Err(GenerateError::SchemaMismatch {
                path: "results".into(),
                message: format!(
                    "expected {} result lists, got {}",
                    req.sentences.len(),
                    self.results.len()
                ),
            });
        }
        for (i, hyps) in self.results.iter().enumerate() {
            if hyps.len() > req.num_beams {
                return Err(GenerateError::SchemaMismatch {
                    path: format!("results[{i}]"),
                    message: format!("{} hypotheses for {} beams", hyps.len(), req.num_beams),
                });
            }
        }
        Ok(())
    }

    /// Rewrites scores as NLLs, the ranker's convention.
    pub fn into_nll(mut self) -> Self {
        if self.score_kind == ScoreKind::Logprob {
            for h in self.results.iter_mut().flatten() {
                h.score = -h.score;
            }
            self.score_kind = ScoreKind::Nll;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Connect,
    Dns,
    Io,
    Protocol,
    Other,
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TransportKind::Connect => "connection failed",
            TransportKind::Dns => "host not found",
            TransportKind::Io => "i/o",
            TransportKind::Protocol => "protocol",
            TransportKind::Other => "other",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("transport error ({kind}) after {attempts} attempt(s): {message}")]
    Transport {
        kind: TransportKind,
        message: String,
        attempts: u32,
    },
    #[error("service returned HTTP {code}")]
    BadStatus { code: u16 },
    #[error("response does not match schema at `{path}`: {message}")]
    SchemaMismatch { path: String, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no fixture entry for sentence {0:?}")]
    MissingFixture(String),
    #[error("cannot load fixture: {0}")]
    Fixture(String),
}

impl GenerateError {
    fn is_transient(&self) -> bool {
        match self {
            GenerateError::Transport { .. } | GenerateError::Timeout { .. } => true,
            GenerateError::BadStatus { code } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait Generator: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GenerateError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    /// Per-attempt timeout for the whole request.
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(10),
            timeout: Duration::from_secs(120),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base, 2·base, 4·base, ...
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32 << (retry.saturating_sub(1)).min(16);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Upper bound on the total time spent sleeping between attempts.
    pub fn total_backoff(&self) -> Duration {
        (1..self.attempts).map(|r| self.delay(r)).sum()
    }
}

pub struct HttpGenerator {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(retry.timeout))
            .build()
            .new_agent();
        HttpGenerator {
            endpoint: endpoint.into(),
            agent,
            retry,
        }
    }

    fn attempt(
        &self,
        req: &GenerationRequest,
        attempt: u32,
    ) -> Result<GenerationResponse, GenerateError> {
        let transport = |kind, e: &dyn fmt::Display| GenerateError::Transport {
            kind,
            message: e.to_string(),
            attempts: attempt,
        };
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => GenerateError::Timeout { attempts: attempt },
            ureq::Error::ConnectionFailed => transport(TransportKind::Connect, &e),
            ureq::Error::HostNotFound => transport(TransportKind::Dns, &e),
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                GenerateError::Timeout { attempts: attempt }
            }
            ureq::Error::Io(_) => transport(TransportKind::Io, &e),
            ureq::Error::Protocol(_) => transport(TransportKind::Protocol, &e),
            ureq::Error::StatusCode(code) => GenerateError::BadStatus { code },
            other => transport(TransportKind::Other, &other),
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(req)
            .map_err(map_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(GenerateError::BadStatus { code: status });
        }
        let body = resp.body_mut().read_to_string().map_err(map_err)?;
        let de = &mut serde_json::Deserializer::from_str(&body);
        let parsed: GenerationResponse =
            serde_path_to_error::deserialize(de).map_err(|e| GenerateError::SchemaMismatch {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        parsed.check_shape(req)?;
        Ok(parsed)
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GenerateError> {
        let mut attempt = 1;
        loop {
            match self.attempt(req, attempt) {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() && attempt < self.retry.attempts => {
                    let delay = self.retry.delay(attempt);
                    warn!("generation attempt {attempt} failed: {e}; retrying in {delay:?}");
                    sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    debug!("generation failed after {attempt} attempt(s): {e}");
                    return Err(e);
                }
            }
        }
    }
}

/// Canned responses keyed by sentence text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    #[serde(default)]
    pub score_kind: ScoreKind,
    pub results: BTreeMap<String, Vec<BeamHypothesis>>,
}

impl Fixture {
    pub fn load(path: &Path) -> Result<Self, GenerateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerateError::Fixture(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GenerateError::Fixture(format!("{}: {e}", path.display())))
    }
}

/// Deterministic replay of a [`Fixture`].
#[derive(Debug, Clone)]
pub struct MockGenerator {
    pub fixture: Fixture,
    /// Answer unknown sentences with an empty list instead of failing.
    pub fallback_empty: bool,
}

impl MockGenerator {
    pub fn new(fixture: Fixture) -> Self {
        MockGenerator {
            fixture,
            fallback_empty: true,
        }
    }
}

pub fn mock_generate(
    fixture: &Fixture,
    req: &GenerationRequest,
    fallback_empty: bool,
) -> Result<GenerationResponse, GenerateError> {
    let results = req
        .sentences
        .iter()
        .map(|s| match fixture.results.get(s) {
            Some(hyps) => Ok(hyps.iter().take(req.num_beams).cloned().collect()),
            None if fallback_empty => Ok(Vec::new()),
            None => Err(GenerateError::MissingFixture(s.clone())),
        })
        .collect::<Result<_, _>>()?;
    Ok(GenerationResponse {
        results,
        score_kind: fixture.score_kind,
    })
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, GenerateError> {
        mock_generate(&self.fixture, req, self.fallback_empty)
    }
}
