//! Information-theoretic response selection for knowledge-grounded dialogue.
//!
//! A response `g` to conversational history `h` and new factual content `k` is
//! scored by how much each context raises its likelihood: PMI against both
//! contexts jointly, and PCMI against each context with the other held fixed.
//! Candidates are selected by maximum PMI or by the Fused-PCMI rule, which
//! trades a little PMI for a response that also engages with the history.

pub mod dataset;
pub mod experiments;
pub mod lm;
pub mod pipeline;
pub mod scoring;
pub mod selection;
pub mod text;

pub use scoring::{ContextSpec, ScoreBundle, Span, SpanSet, TokenScoreSeries, TokenizedText};
