//! Pairwise comparison experiments and their aggregate statistics.

pub mod analysis;
pub mod pairs;
pub mod simulate;
pub mod stats;

use crate::scoring::{ScoringError, SpanSet};
use crate::selection::SelectionError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

pub use analysis::{attribution_report, distribution_summary, AttributionItem, AttributionReport, DistributionSummary};
pub use pairs::{build_exp1_pairs, build_exp2_pairs, build_exp3_pairs, Exp2Build};
pub use stats::{binomial_test, fleiss_kappa, majority_vote, Majority};

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("pool for instance {instance_id} has {size} candidates, need at least 2")]
    PoolTooSmall { instance_id: String, size: usize },
    #[error("pair {pair_id} has {count} annotations, expected 3")]
    WrongAnnotationCount { pair_id: String, count: usize },
    #[error("invalid counts: K={k} with n={n}")]
    InvalidCounts { n: u64, k: u64 },
    #[error("group {0} is empty")]
    EmptyGroup(String),
    #[error("no annotated spans to attribute")]
    NoSpans,
    #[error("annotation refers to unknown pair {0}")]
    UnknownPair(String),
    #[error("invalid rating matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Experiment {
    /// Max-PMI vs a random other candidate.
    Exp1,
    /// Exp 1 pair whose random opponent ranks in the top half by PMI.
    Exp1Top,
    /// Exp 1 pair whose random opponent ranks in the bottom half by PMI.
    Exp1Bottom,
    /// High vs low `pcmi_h` at matched `pcmi_k`; annotators also mark spans.
    Exp2,
    /// Fused-PCMI vs Max-PMI where they differ.
    Exp3,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Exp1,
        Experiment::Exp1Top,
        Experiment::Exp1Bottom,
        Experiment::Exp2,
        Experiment::Exp3,
    ];

    /// Whether pairs tagged `self` are counted in the report row for `row`.
    pub fn reported_under(self, row: Experiment) -> bool {
        self == row || (row == Experiment::Exp1 && matches!(self, Experiment::Exp1Top | Experiment::Exp1Bottom))
    }

    pub fn collects_spans(self) -> bool {
        self == Experiment::Exp2
    }
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Exp1 => "EXP1",
            Experiment::Exp1Top => "EXP1_TOP",
            Experiment::Exp1Bottom => "EXP1_BOTTOM",
            Experiment::Exp2 => "EXP2",
            Experiment::Exp3 => "EXP3",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

/// A candidate as shown to annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRef {
    pub candidate_id: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

/// One A/B task. `hypothesis_side` records where the randomized presentation
/// order put the candidate the experiment expects to win.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonPair {
    pub pair_id: String,
    pub instance_id: String,
    pub experiment: Experiment,
    pub history: Vec<String>,
    pub side_a: CandidateRef,
    pub side_b: CandidateRef,
    pub hypothesis_side: Side,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pcmi_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pcmi_k: Option<f64>,
}

impl ComparisonPair {
    pub fn side(&self, side: Side) -> &CandidateRef {
        match side {
            Side::A => &self.side_a,
            Side::B => &self.side_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "BOTH_NONSENSICAL")]
    BothNonsensical,
}

impl Choice {
    pub fn side(self) -> Option<Side> {
        match self {
            Choice::A => Some(Side::A),
            Choice::B => Some(Side::B),
            Choice::BothNonsensical => None,
        }
    }

    pub(crate) fn category(self) -> usize {
        match self {
            Choice::A => 0,
            Choice::B => 1,
            Choice::BothNonsensical => 2,
        }
    }
}

impl From<Side> for Choice {
    fn from(side: Side) -> Self {
        match side {
            Side::A => Choice::A,
            Side::B => Choice::B,
        }
    }
}

/// One annotator judgment; `spans` mark the acknowledgement in the chosen
/// response and are only recorded for span-collecting experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub pair_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<SpanSet>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

pub const RATERS_PER_PAIR: usize = 3;

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub exp: Experiment,
    /// Pairs with a majority for one of the two candidates.
    pub n: u64,
    /// Pairs whose majority favors the hypothesis side.
    #[serde(rename = "K")]
    pub k: u64,
    pub p: f64,
    pub kappa: f64,
    /// Pairs with all three annotations.
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    pub experiment: Experiment,
    pub majority: Majority,
    pub hypothesis_won: Option<bool>,
}

/// Annotations grouped per pair, in pair-id order.
pub fn group_annotations<'a>(
    pairs: &[ComparisonPair],
    annotations: &'a [Annotation],
) -> Result<BTreeMap<String, Vec<&'a Annotation>>, ExperimentError> {
    let known: std::collections::HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let mut grouped: BTreeMap<String, Vec<&Annotation>> = BTreeMap::new();
    for a in annotations {
        if !known.contains(a.pair_id.as_str()) {
            return Err(ExperimentError::UnknownPair(a.pair_id.clone()));
        }
        grouped.entry(a.pair_id.clone()).or_default().push(a);
    }
    if let Some((pair_id, list)) = grouped.iter().find(|(_, v)| v.len() > RATERS_PER_PAIR) {
        return Err(ExperimentError::WrongAnnotationCount {
            pair_id: pair_id.clone(),
            count: list.len(),
        });
    }
    Ok(grouped)
}

/// Majority outcome for every pair with a full set of annotations.
pub fn pair_outcomes(pairs: &[ComparisonPair], annotations: &[Annotation]) -> Result<Vec<PairOutcome>, ExperimentError> {
    let grouped = group_annotations(pairs, annotations)?;
    let mut out = Vec::new();
    for pair in pairs {
        let Some(list) = grouped.get(&pair.pair_id).filter(|l| l.len() == RATERS_PER_PAIR) else {
            continue;
        };
        let choices: Vec<Choice> = list.iter().map(|a| a.choice).collect();
        let majority = majority_vote(&pair.pair_id, &choices)?;
        let hypothesis_won = majority.side().map(|s| s == pair.hypothesis_side);
        out.push(PairOutcome {
            pair_id: pair.pair_id.clone(),
            experiment: pair.experiment,
            majority,
            hypothesis_won,
        });
    }
    Ok(out)
}

/// Results table: one row per experiment with at least one complete pair.
/// The `EXP1` row pools both opponent strata.
pub fn aggregate(pairs: &[ComparisonPair], annotations: &[Annotation]) -> Result<Vec<AggregateResult>, ExperimentError> {
    let grouped = group_annotations(pairs, annotations)?;
    let mut rows = Vec::new();
    for row in Experiment::ALL {
        let mut n = 0;
        let mut k = 0;
        let mut matrix = Vec::new();
        for pair in pairs.iter().filter(|p| p.experiment.reported_under(row)) {
            let Some(list) = grouped.get(&pair.pair_id).filter(|l| l.len() == RATERS_PER_PAIR) else {
                continue;
            };
            let choices: Vec<Choice> = list.iter().map(|a| a.choice).collect();
            let mut counts = vec![0usize; 3];
            for c in &choices {
                counts[c.category()] += 1;
            }
            matrix.push(counts);
            if let Some(side) = majority_vote(&pair.pair_id, &choices)?.side() {
                n += 1;
                if side == pair.hypothesis_side {
                    k += 1;
                }
            }
        }
        if matrix.is_empty() {
            continue;
        }
        rows.push(AggregateResult {
            exp: row,
            n,
            k,
            p: binomial_test(n, k)?,
            kappa: fleiss_kappa(&matrix)?,
            total: matrix.len() as u64,
        });
    }
    Ok(rows)
}

/// Deterministic 64-bit seed for `key` under a base seed (FNV-1a, then a
/// splitmix64 finalizer). Stable across platforms and releases.
pub fn stable_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}
