//! Conditional log-probability sources behind a single scorer contract.
//!
//! Three backends are provided: [`ngram::OracleScorer`] (four interpolated
//! trigram models, one per [`ContextSpec`]), [`replay::ReplayStore`] (recorded
//! series) and [`http::HttpScorer`] (any token-logprob LM server).

pub mod http;
pub mod ngram;
pub mod nucleus;
pub mod replay;

use crate::scoring::{ContextSpec, ScoringError, TokenScoreSeries, TokenizedText};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum LmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("alignment mismatch for {spec}: expected {expected} token scores, got {got}")]
    AlignmentMismatch {
        spec: ContextSpec,
        expected: usize,
        got: usize,
    },
    #[error("no replay record for instance {instance_id}, candidate {candidate_id}, spec {spec}")]
    NotFound {
        instance_id: String,
        candidate_id: usize,
        spec: ContextSpec,
    },
    #[error("model was trained for {model}, asked to score {requested}")]
    SpecMismatch {
        model: ContextSpec,
        requested: ContextSpec,
    },
    #[error("cannot train on an empty corpus")]
    EmptyCorpus,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} is not supported by this backend")]
    Unsupported(&'static str),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// Decoding parameters for candidate generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub top_p: f64,
    pub temperature: f64,
    pub num_candidates: usize,
    pub max_tokens: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            top_p: 0.9,
            temperature: 0.9,
            num_candidates: 10,
            max_tokens: 40,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), LmError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LmError::InvalidConfig(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(LmError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.num_candidates == 0 || self.max_tokens == 0 {
            return Err(LmError::InvalidConfig("num_candidates and max_tokens must be positive".into()));
        }
        Ok(())
    }
}

/// The two conditioning contexts of an instance.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    /// Prior turns, oldest first.
    pub history: &'a [String],
    pub knowledge: &'a str,
}

impl<'a> Context<'a> {
    pub fn new(history: &'a [String], knowledge: &'a str) -> Self {
        Self { history, knowledge }
    }

    /// Context segments included under `spec`, in canonical order: history
    /// turns oldest first, then the knowledge snippet.
    pub fn segments(&self, spec: ContextSpec) -> Vec<&'a str> {
        let mut out = Vec::new();
        if spec.use_history() {
            out.extend(self.history.iter().map(String::as_str));
        }
        if spec.use_knowledge() {
            out.push(self.knowledge);
        }
        out
    }

    /// Text prompt shared by every backend:
    /// `<bos> seg1 <sep> seg2 <sep> ... <sep>`, or just `<bos>` with no contexts.
    pub fn prompt(&self, spec: ContextSpec) -> String {
        let segments = self.segments(spec);
        if segments.is_empty() {
            BOS.to_string()
        } else {
            format!("{BOS} {} {SEP}", segments.join(&format!(" {SEP} ")))
        }
    }
}

/// One scoring call: per-token log-probs of `response` under `spec`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub instance_id: &'a str,
    pub candidate_id: usize,
    pub spec: ContextSpec,
    pub context: Context<'a>,
    pub response: &'a TokenizedText,
    pub response_text: &'a str,
}

/// A source of conditional log-probabilities and candidate samples.
pub trait Scorer: Send + Sync {
    /// Per-token natural-log probabilities of the response; one entry per token.
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Vec<f64>, LmError>;

    /// Draws `config.num_candidates` responses conditioned on both contexts.
    fn sample(&self, context: &Context<'_>, config: &SamplingConfig, seed: u64) -> Result<Vec<Sample>, LmError>;

    /// False for backends whose scores may vary between calls.
    fn is_deterministic(&self) -> bool;

    /// Upper bound on concurrent in-flight `score` calls.
    fn max_in_flight(&self) -> usize {
        1
    }
}

/// A generated response and its display text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub text: String,
    #[serde(flatten)]
    pub response: TokenizedText,
}

/// Scores one response under all four specs and checks that every series has
/// exactly one entry per response token.
pub fn score_series(
    scorer: &dyn Scorer,
    instance_id: &str,
    candidate_id: usize,
    context: Context<'_>,
    response: &TokenizedText,
    response_text: &str,
) -> Result<TokenScoreSeries, LmError> {
    let requests: Vec<ScoreRequest<'_>> = ContextSpec::ALL
        .iter()
        .map(|&spec| ScoreRequest {
            instance_id,
            candidate_id,
            spec,
            context,
            response,
            response_text,
        })
        .collect();
    let mut results = score_batch(scorer, &requests).into_iter();
    let mut next = |spec: ContextSpec| -> Result<Vec<f64>, LmError> {
        let scores = results.next().expect("one result per spec")?;
        if scores.len() != response.len() {
            return Err(LmError::AlignmentMismatch {
                spec,
                expected: response.len(),
                got: scores.len(),
            });
        }
        Ok(scores)
    };
    let full = next(ContextSpec::Full)?;
    let h = next(ContextSpec::HistoryOnly)?;
    let k = next(ContextSpec::KnowledgeOnly)?;
    let none = next(ContextSpec::None)?;
    Ok(TokenScoreSeries::new(full, h, k, none)?)
}

/// Runs `requests` with at most `scorer.max_in_flight()` concurrent calls.
/// Results keep the order of `requests`.
pub fn score_batch(scorer: &dyn Scorer, requests: &[ScoreRequest<'_>]) -> Vec<Result<Vec<f64>, LmError>> {
    let workers = scorer.max_in_flight().clamp(1, requests.len().max(1));
    if workers == 1 {
        return requests.iter().map(|r| scorer.score(r)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<_>>> = Mutex::new((0..requests.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(request) = requests.get(i) else { break };
                let result = scorer.score(request);
                slots.lock().expect("result slots")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every request scored"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_template() {
        let h = vec!["hello there".to_string(), "hi".to_string()];
        let ctx = Context::new(&h, "cats purr");
        assert_eq!(ctx.prompt(ContextSpec::Full), "<bos> hello there <sep> hi <sep> cats purr <sep>");
        assert_eq!(ctx.prompt(ContextSpec::HistoryOnly), "<bos> hello there <sep> hi <sep>");
        assert_eq!(ctx.prompt(ContextSpec::KnowledgeOnly), "<bos> cats purr <sep>");
        assert_eq!(ctx.prompt(ContextSpec::None), "<bos>");
    }

    #[test]
    fn sampling_defaults() {
        let c = SamplingConfig::default();
        assert_eq!((c.top_p, c.temperature, c.num_candidates), (0.9, 0.9, 10));
        assert!(c.validate().is_ok());
        assert!(SamplingConfig { top_p: 0.0, ..c.clone() }.validate().is_err());
        assert!(SamplingConfig { temperature: 0.0, ..c }.validate().is_err());
    }

    struct Fixed(Vec<f64>, usize);

    impl Scorer for Fixed {
        fn score(&self, r: &ScoreRequest<'_>) -> Result<Vec<f64>, LmError> {
            let mut v = self.0.clone();
            if r.spec == ContextSpec::KnowledgeOnly {
                v.pop();
            }
            Ok(v)
        }
        fn sample(&self, _: &Context<'_>, _: &SamplingConfig, _: u64) -> Result<Vec<Sample>, LmError> {
            Err(LmError::Unsupported("sampling"))
        }
        fn is_deterministic(&self) -> bool {
            true
        }
        fn max_in_flight(&self) -> usize {
            self.1
        }
    }

    #[test]
    fn series_alignment_is_enforced() {
        let g = TokenizedText::new(vec!["a".into(), "b".into()], vec![4, 5]);
        let h = vec![String::new(), String::new()];
        for cap in [1, 4] {
            let err = score_series(&Fixed(vec![-1.0, -2.0], cap), "i", 0, Context::new(&h, ""), &g, "a b").unwrap_err();
            assert!(matches!(
                err,
                LmError::AlignmentMismatch {
                    spec: ContextSpec::KnowledgeOnly,
                    expected: 2,
                    got: 1
                }
            ));
        }
    }
}
