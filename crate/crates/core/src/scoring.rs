//! Sequence- and token-level PMI / PCMI scores.
//!
//! Every quantity is derived from four aligned per-token log-probability series
//! for a response `g`: conditioned on both contexts, on the history `h` only, on
//! the knowledge `k` only, and on neither. All values are natural-log (nats).
//!
//! ```text
//! pmi_hk = s_full - s_none        pcmi_h = pmi_hk - pmi_k = s_full - s_k
//! pmi_h  = s_h    - s_none        pcmi_k = pmi_hk - pmi_h = s_full - s_h
//! pmi_k  = s_k    - s_none
//! ```

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("series lengths differ: full={full}, h={h}, k={k}, none={none}")]
    LengthMismatch {
        full: usize,
        h: usize,
        k: usize,
        none: usize,
    },
    #[error("cannot score an empty sequence")]
    EmptySequence,
    #[error("log-probability at token {index} is {value}, expected a finite value <= 0")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("attribution total {0} is too close to zero")]
    DegenerateTotal(f64),
    #[error("span [{start}, {end}) is invalid for {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
}

/// A response (or context) as the scorer saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub token_ids: Vec<u32>,
}

impl TokenizedText {
    pub fn new(tokens: Vec<String>, token_ids: Vec<u32>) -> Self {
        Self { tokens, token_ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when the response can be scored: tokens and ids agree and are non-empty.
    pub fn is_scorable(&self) -> bool {
        !self.tokens.is_empty() && self.tokens.len() == self.token_ids.len()
    }
}

/// Which contexts a distribution conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextSpec {
    /// p(g | h, k)
    #[serde(rename = "FULL")]
    Full,
    /// p(g | h)
    #[serde(rename = "H_ONLY")]
    HistoryOnly,
    /// p(g | k)
    #[serde(rename = "K_ONLY")]
    KnowledgeOnly,
    /// p(g)
    #[serde(rename = "NONE")]
    None,
}

impl ContextSpec {
    pub const ALL: [ContextSpec; 4] = [
        ContextSpec::Full,
        ContextSpec::HistoryOnly,
        ContextSpec::KnowledgeOnly,
        ContextSpec::None,
    ];

    pub fn from_flags(use_history: bool, use_knowledge: bool) -> Self {
        match (use_history, use_knowledge) {
            (true, true) => ContextSpec::Full,
            (true, false) => ContextSpec::HistoryOnly,
            (false, true) => ContextSpec::KnowledgeOnly,
            (false, false) => ContextSpec::None,
        }
    }

    pub fn use_history(self) -> bool {
        matches!(self, ContextSpec::Full | ContextSpec::HistoryOnly)
    }

    pub fn use_knowledge(self) -> bool {
        matches!(self, ContextSpec::Full | ContextSpec::KnowledgeOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextSpec::Full => "FULL",
            ContextSpec::HistoryOnly => "H_ONLY",
            ContextSpec::KnowledgeOnly => "K_ONLY",
            ContextSpec::None => "NONE",
        }
    }
}

impl fmt::Display for ContextSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContextSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextSpec::ALL
            .into_iter()
            .find(|spec| spec.as_str() == s)
            .ok_or_else(|| format!("unknown context spec `{s}`"))
    }
}

/// Per-token log-probabilities of one response under the four distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScoreSeries {
    pub logp_full: Vec<f64>,
    pub logp_h: Vec<f64>,
    pub logp_k: Vec<f64>,
    pub logp_none: Vec<f64>,
}

impl TokenScoreSeries {
    /// Builds a validated series.
    pub fn new(
        logp_full: Vec<f64>,
        logp_h: Vec<f64>,
        logp_k: Vec<f64>,
        logp_none: Vec<f64>,
    ) -> Result<Self, ScoringError> {
        let series = Self {
            logp_full,
            logp_h,
            logp_k,
            logp_none,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn len(&self) -> usize {
        self.logp_full.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logp_full.is_empty()
    }

    pub fn get(&self, spec: ContextSpec) -> &[f64] {
        match spec {
            ContextSpec::Full => &self.logp_full,
            ContextSpec::HistoryOnly => &self.logp_h,
            ContextSpec::KnowledgeOnly => &self.logp_k,
            ContextSpec::None => &self.logp_none,
        }
    }

    pub fn validate(&self) -> Result<(), ScoringError> {
        let lens = [
            self.logp_full.len(),
            self.logp_h.len(),
            self.logp_k.len(),
            self.logp_none.len(),
        ];
        if lens.iter().any(|&l| l != lens[0]) {
            return Err(ScoringError::LengthMismatch {
                full: lens[0],
                h: lens[1],
                k: lens[2],
                none: lens[3],
            });
        }
        if lens[0] == 0 {
            return Err(ScoringError::EmptySequence);
        }
        for spec in ContextSpec::ALL {
            if let Some((index, &value)) = self
                .get(spec)
                .iter()
                .enumerate()
                .find(|(_, v)| !(v.is_finite() && **v <= 0.0))
            {
                return Err(ScoringError::InvalidLogProb { index, value });
            }
        }
        Ok(())
    }
}

/// Sequence log-probabilities and every score derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub s_full: f64,
    pub s_h: f64,
    pub s_k: f64,
    pub s_none: f64,
    pub pmi_hk: f64,
    pub pmi_h: f64,
    pub pmi_k: f64,
    pub pcmi_h: f64,
    pub pcmi_k: f64,
}

impl ScoreBundle {
    /// Derives all scores from the four sequence log-probabilities.
    pub fn from_sums(s_full: f64, s_h: f64, s_k: f64, s_none: f64) -> Self {
        Self {
            s_full,
            s_h,
            s_k,
            s_none,
            pmi_hk: s_full - s_none,
            pmi_h: s_h - s_none,
            pmi_k: s_k - s_none,
            pcmi_h: s_full - s_k,
            pcmi_k: s_full - s_h,
        }
    }
}

pub fn derive_bundle(series: &TokenScoreSeries) -> Result<ScoreBundle, ScoringError> {
    series.validate()?;
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    Ok(ScoreBundle::from_sums(
        sum(&series.logp_full),
        sum(&series.logp_h),
        sum(&series.logp_k),
        sum(&series.logp_none),
    ))
}

/// Token-wise decomposition of the sequence scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDecomposition {
    pub pmi: Vec<f64>,
    pub pmi_h: Vec<f64>,
    pub pcmi_h: Vec<f64>,
    pub pcmi_k: Vec<f64>,
}

/// Which token-level score an attribution is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScoreKind {
    Pmi,
    PmiH,
    PcmiH,
    PcmiK,
}

impl TokenDecomposition {
    pub fn get(&self, kind: TokenScoreKind) -> &[f64] {
        match kind {
            TokenScoreKind::Pmi => &self.pmi,
            TokenScoreKind::PmiH => &self.pmi_h,
            TokenScoreKind::PcmiH => &self.pcmi_h,
            TokenScoreKind::PcmiK => &self.pcmi_k,
        }
    }
}

pub fn token_series(series: &TokenScoreSeries) -> Result<TokenDecomposition, ScoringError> {
    series.validate()?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
    Ok(TokenDecomposition {
        pmi: diff(&series.logp_full, &series.logp_none),
        pmi_h: diff(&series.logp_h, &series.logp_none),
        pcmi_h: diff(&series.logp_full, &series.logp_k),
        pcmi_k: diff(&series.logp_full, &series.logp_h),
    })
}

/// Half-open token interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl From<[usize; 2]> for Span {
    fn from([start, end]: [usize; 2]) -> Self {
        Span { start, end }
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// Sorted, non-overlapping token spans of one response.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpanSet {
    pub spans: Vec<Span>,
}

impl SpanSet {
    pub fn new(spans: Vec<Span>) -> Self {
        Self { spans }
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Checks `0 <= start < end <= len` and that spans are sorted and disjoint.
    pub fn validate(&self, len: usize) -> Result<(), ScoringError> {
        let mut prev_end = 0;
        for span in &self.spans {
            if span.start >= span.end || span.end > len || span.start < prev_end {
                return Err(ScoringError::InvalidSpan {
                    start: span.start,
                    end: span.end,
                    len,
                });
            }
            prev_end = span.end;
        }
        Ok(())
    }

    pub fn contains(&self, index: usize) -> bool {
        self.spans.iter().any(|s| s.start <= index && index < s.end)
    }

    pub fn covered_len(&self) -> usize {
        self.spans.iter().map(|s| s.end - s.start).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    /// Signed token scores.
    #[default]
    Raw,
    /// Only the positive part of each token score.
    PositivePart,
}

const MIN_ATTRIBUTION_TOTAL: f64 = 1e-12;

/// Share of the total token score that falls inside `spans`.
pub fn attribution_ratio(
    token_scores: &[f64],
    spans: &SpanSet,
    mode: AttributionMode,
) -> Result<f64, ScoringError> {
    spans.validate(token_scores.len())?;
    let value = |s: f64| match mode {
        AttributionMode::Raw => s,
        AttributionMode::PositivePart => s.max(0.0),
    };
    let total: f64 = token_scores.iter().copied().map(value).sum();
    if total.abs() < MIN_ATTRIBUTION_TOTAL {
        return Err(ScoringError::DegenerateTotal(total));
    }
    let inside: f64 = spans
        .spans
        .iter()
        .flat_map(|s| token_scores[s.start..s.end].iter().copied())
        .map(value)
        .sum();
    Ok(inside / total)
}

pub const TOKEN_CSV_HEADER: &str = "index,token,logp_full,logp_h,logp_k,logp_none,pmi,pcmi_h,pcmi_k";

/// Renders the token-wise plot table for one response.
pub fn token_csv(tokens: &[String], series: &TokenScoreSeries) -> Result<String, ScoringError> {
    let decomposition = token_series(series)?;
    if tokens.len() != series.len() {
        return Err(ScoringError::LengthMismatch {
            full: series.len(),
            h: tokens.len(),
            k: series.len(),
            none: series.len(),
        });
    }
    let mut out = String::from(TOKEN_CSV_HEADER);
    out.push('\n');
    for (i, token) in tokens.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{},{},{},{}\n",
            csv_field(token),
            series.logp_full[i],
            series.logp_h[i],
            series.logp_k[i],
            series.logp_none[i],
            decomposition.pmi[i],
            decomposition.pcmi_h[i],
            decomposition.pcmi_k[i],
        ));
    }
    Ok(out)
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
