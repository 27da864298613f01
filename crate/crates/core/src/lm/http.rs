//! Client for a token-logprob LM server.
//!
//! Wire contract:
//!
//! ```text
//! POST /v1/score  {model, prompt, continuation}
//!              -> {tokens: [...], token_logprobs: [...]}
//! POST /v1/sample {model, prompt, n, top_p, temperature, max_tokens}
//!              -> {samples: [{tokens, token_logprobs}]}
//! ```
//!
//! Scoring is idempotent and retried with exponential backoff on transport
//! failures and 5xx responses. Sampling is never retried.

use super::{Context, LmError, Sample, SamplingConfig, ScoreRequest, Scorer};
use crate::scoring::{ContextSpec, TokenizedText};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;

pub const ENDPOINT_ENV: &str = "PCMI_LM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Model id per context spec, e.g. the base model for `FULL`.
    pub models: BTreeMap<ContextSpec, String>,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000".into(),
            models: ContextSpec::ALL
                .iter()
                .map(|s| (*s, format!("pcmi-{}", s.as_str().to_lowercase())))
                .collect(),
            max_retries: 3,
            initial_backoff_ms: 100,
            timeout_ms: 30_000,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Serialize)]
struct ScoreBody<'a> {
    model: &'a str,
    prompt: &'a str,
    continuation: &'a str,
}

#[derive(Debug, Deserialize)]
struct ScoreReply {
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct SampleBody<'a> {
    model: &'a str,
    prompt: &'a str,
    n: usize,
    top_p: f64,
    temperature: f64,
    max_tokens: usize,
}

#[derive(Debug, Deserialize)]
struct SampleReply {
    samples: Vec<SampledSequence>,
}

#[derive(Debug, Deserialize)]
struct SampledSequence {
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
    #[serde(default)]
    token_ids: Option<Vec<u32>>,
}

/// Transport or server failure, with whether a retry may help.
struct Failure {
    error: LmError,
    retryable: bool,
}

pub struct HttpScorer {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpScorer {
    /// Builds a client; `PCMI_LM_ENDPOINT`, when set, replaces the configured
    /// endpoint.
    pub fn new(config: HttpConfig) -> Result<Self, LmError> {
        Self::with_endpoint_override(config, std::env::var(ENDPOINT_ENV).ok())
    }

    pub fn with_endpoint_override(mut config: HttpConfig, endpoint: Option<String>) -> Result<Self, LmError> {
        if let Some(endpoint) = endpoint.filter(|e| !e.trim().is_empty()) {
            config.endpoint = endpoint;
        }
        config.endpoint = config.endpoint.trim_end_matches('/').to_string();
        if let Some(missing) = ContextSpec::ALL.iter().find(|s| !config.models.contains_key(s)) {
            return Err(LmError::InvalidConfig(format!("no model id configured for {missing}")));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, agent })
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, Failure> {
        let url = format!("{}{path}", self.config.endpoint);
        let mut response = self.agent.post(&url).send_json(body).map_err(|e| Failure {
            error: LmError::Transport(e.to_string()),
            retryable: true,
        })?;
        let status = response.status().as_u16();
        if status >= 400 {
            return Err(Failure {
                error: LmError::Transport(format!("{url} returned HTTP {status}")),
                retryable: status >= 500,
            });
        }
        response.body_mut().read_json::<R>().map_err(|e| Failure {
            error: LmError::MalformedResponse(e.to_string()),
            retryable: false,
        })
    }

    fn post_with_retry<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B) -> Result<R, LmError> {
        let mut attempt = 0;
        loop {
            match self.post(path, body) {
                Ok(reply) => return Ok(reply),
                Err(f) if f.retryable && attempt < self.config.max_retries => {
                    let delay = self.config.initial_backoff_ms.saturating_mul(1 << attempt.min(20));
                    log::warn!("{path} attempt {} failed ({}), retrying in {delay} ms", attempt + 1, f.error);
                    std::thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(f) => return Err(f.error),
            }
        }
    }

    fn model(&self, spec: ContextSpec) -> &str {
        &self.config.models[&spec]
    }

    pub fn http_score(&self, spec: ContextSpec, context: &Context<'_>, continuation: &str) -> Result<(Vec<String>, Vec<f64>), LmError> {
        let prompt = context.prompt(spec);
        let body = ScoreBody {
            model: self.model(spec),
            prompt: &prompt,
            continuation,
        };
        let reply: ScoreReply = self.post_with_retry("/v1/score", &body)?;
        if reply.tokens.len() != reply.token_logprobs.len() {
            return Err(LmError::AlignmentMismatch {
                spec,
                expected: reply.tokens.len(),
                got: reply.token_logprobs.len(),
            });
        }
        Ok((reply.tokens, reply.token_logprobs))
    }

    pub fn http_sample(&self, context: &Context<'_>, config: &SamplingConfig) -> Result<Vec<Sample>, LmError> {
        config.validate()?;
        let prompt = context.prompt(ContextSpec::Full);
        let body = SampleBody {
            model: self.model(ContextSpec::Full),
            prompt: &prompt,
            n: config.num_candidates,
            top_p: config.top_p,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let reply: SampleReply = self.post("/v1/sample", &body).map_err(|f| f.error)?;
        reply
            .samples
            .into_iter()
            .map(|s| {
                if s.tokens.len() != s.token_logprobs.len() || s.tokens.is_empty() {
                    return Err(LmError::MalformedResponse(format!(
                        "sample with {} tokens and {} logprobs",
                        s.tokens.len(),
                        s.token_logprobs.len()
                    )));
                }
                let ids = match s.token_ids {
                    Some(ids) if ids.len() == s.tokens.len() => ids,
                    Some(_) => return Err(LmError::MalformedResponse("token_ids length differs from tokens".into())),
                    None => vec![0; s.tokens.len()],
                };
                Ok(Sample {
                    text: s.tokens.concat(),
                    response: TokenizedText::new(s.tokens, ids),
                })
            })
            .collect()
    }
}

impl Scorer for HttpScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, LmError> {
        let (tokens, logprobs) = self.http_score(request.spec, &request.context, request.response_text)?;
        if tokens.len() != request.response.len() {
            return Err(LmError::AlignmentMismatch {
                spec: request.spec,
                expected: request.response.len(),
                got: tokens.len(),
            });
        }
        Ok(logprobs)
    }

    fn sample(&self, context: &Context<'_>, config: &SamplingConfig, _seed: u64) -> Result<Vec<Sample>, LmError> {
        self.http_sample(context, config)
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight.max(1)
    }
}
