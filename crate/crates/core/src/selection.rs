//! Max-PMI and Fused-PCMI response selection.
//!
//! Fused-PCMI starts from the Max-PMI candidate. If that candidate's `pcmi_h`
//! is low, it looks for an alternative whose `pcmi_h` is high and whose PMI
//! rank is still acceptable, and takes the best such alternative by PMI.

use crate::scoring::{ScoreBundle, TokenScoreSeries, TokenizedText};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("need at least 4 bundles to calibrate, got {0}")]
    InsufficientData(usize),
    #[error("candidate index {index} out of range for pool of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: usize,
    pub text: String,
    #[serde(flatten)]
    pub response: TokenizedText,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<TokenScoreSeries>,
    pub bundle: ScoreBundle,
}

/// Scored candidates for one instance, plus the contexts they were scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub instance_id: String,
    pub history: Vec<String>,
    pub knowledge: String,
    pub candidates: Vec<Candidate>,
}

impl CandidatePool {
    pub fn bundles(&self) -> Vec<ScoreBundle> {
        self.candidates.iter().map(|c| c.bundle).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdConfig {
    pub pcmi_h_low: f64,
    pub pcmi_h_high: f64,
    pub pmi_acceptable_fraction: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            pcmi_h_low: 5.0,
            pcmi_h_high: 14.0,
            pmi_acceptable_fraction: 0.5,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.pcmi_h_low.is_finite() && self.pcmi_h_high.is_finite()) || self.pcmi_h_low > self.pcmi_h_high {
            return Err(SelectionError::InvalidThresholds(format!(
                "need finite pcmi_h_low <= pcmi_h_high, got {} and {}",
                self.pcmi_h_low, self.pcmi_h_high
            )));
        }
        if !(self.pmi_acceptable_fraction > 0.0 && self.pmi_acceptable_fraction <= 1.0) {
            return Err(SelectionError::InvalidThresholds(format!(
                "pmi_acceptable_fraction must be in (0, 1], got {}",
                self.pmi_acceptable_fraction
            )));
        }
        Ok(())
    }
}

/// Index of the maximal `pmi_hk`; the lowest index wins ties.
pub fn max_pmi_index(bundles: &[ScoreBundle]) -> Result<usize, SelectionError> {
    let mut best: Option<usize> = None;
    for (i, b) in bundles.iter().enumerate() {
        if best.is_none_or(|j| b.pmi_hk > bundles[j].pmi_hk) {
            best = Some(i);
        }
    }
    best.ok_or(SelectionError::EmptyPool)
}

pub fn max_pmi_select(pool: &CandidatePool) -> Result<usize, SelectionError> {
    max_pmi_index(&pool.bundles())
}

/// 1-based descending PMI rank of `index`; earlier candidates rank first on ties.
pub fn pmi_rank(bundles: &[ScoreBundle], index: usize) -> Result<usize, SelectionError> {
    let me = bundles.get(index).ok_or(SelectionError::IndexOutOfRange {
        index,
        len: bundles.len(),
    })?;
    Ok(1 + bundles
        .iter()
        .enumerate()
        .filter(|(j, b)| b.pmi_hk > me.pmi_hk || (b.pmi_hk == me.pmi_hk && *j < index))
        .count())
}

/// True iff the candidate's PMI rank is within the top `ceil(N * fraction)`.
pub fn pmi_acceptable_in(bundles: &[ScoreBundle], index: usize, fraction: f64) -> Result<bool, SelectionError> {
    let rank = pmi_rank(bundles, index)?;
    Ok(rank <= acceptable_count(bundles.len(), fraction))
}

pub fn pmi_acceptable(pool: &CandidatePool, index: usize, fraction: f64) -> Result<bool, SelectionError> {
    pmi_acceptable_in(&pool.bundles(), index, fraction)
}

pub(crate) fn acceptable_count(n: usize, fraction: f64) -> usize {
    // ceil of a positive product is at least 1; the epsilon absorbs products
    // that land a hair above an integer
    (((n as f64 * fraction) - 1e-9).ceil() as usize).clamp(n.min(1), n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trace {
    /// Max-PMI candidate kept: its `pcmi_h` is not low.
    Default,
    /// Replaced by a high-`pcmi_h`, PMI-acceptable alternative.
    Swapped,
    /// Max-PMI candidate kept: no alternative qualified.
    Fallback,
    /// Plain Max-PMI selection.
    MaxPmi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDecision {
    pub index: usize,
    pub max_pmi_index: usize,
    pub trace: Trace,
    /// Candidates meeting both the high-`pcmi_h` and the acceptability test.
    pub qualifying: Vec<usize>,
}

pub fn fused_pcmi_index(bundles: &[ScoreBundle], thresholds: &ThresholdConfig) -> Result<FusedDecision, SelectionError> {
    let m = max_pmi_index(bundles)?;
    if bundles[m].pcmi_h >= thresholds.pcmi_h_low {
        return Ok(FusedDecision {
            index: m,
            max_pmi_index: m,
            trace: Trace::Default,
            qualifying: Vec::new(),
        });
    }
    let cutoff = acceptable_count(bundles.len(), thresholds.pmi_acceptable_fraction);
    let qualifying: Vec<usize> = (0..bundles.len())
        .filter(|&i| {
            bundles[i].pcmi_h >= thresholds.pcmi_h_high
                && pmi_rank(bundles, i).expect("index in range") <= cutoff
        })
        .collect();
    let best = qualifying
        .iter()
        .copied()
        .reduce(|a, b| if bundles[b].pmi_hk > bundles[a].pmi_hk { b } else { a });
    Ok(match best {
        Some(index) => FusedDecision {
            index,
            max_pmi_index: m,
            trace: Trace::Swapped,
            qualifying,
        },
        None => FusedDecision {
            index: m,
            max_pmi_index: m,
            trace: Trace::Fallback,
            qualifying,
        },
    })
}

pub fn fused_pcmi_select(pool: &CandidatePool, thresholds: &ThresholdConfig) -> Result<FusedDecision, SelectionError> {
    fused_pcmi_index(&pool.bundles(), thresholds)
}

/// Quantile by linear interpolation between order statistics of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sorted_values(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Low and high `pcmi_h` thresholds from the first and third quartiles.
pub fn calibrate_thresholds(bundles: &[ScoreBundle]) -> Result<ThresholdConfig, SelectionError> {
    if bundles.len() < 4 {
        return Err(SelectionError::InsufficientData(bundles.len()));
    }
    let values = sorted_values(bundles.iter().map(|b| b.pcmi_h));
    Ok(ThresholdConfig {
        pcmi_h_low: quantile_sorted(&values, 0.25),
        pcmi_h_high: quantile_sorted(&values, 0.75),
        ..ThresholdConfig::default()
    })
}

/// Which validation bundles feed threshold calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationScope {
    #[default]
    AllCandidates,
    MaxPmiPerInstance,
}

pub fn calibration_bundles(pools: &[CandidatePool], scope: CalibrationScope) -> Vec<ScoreBundle> {
    match scope {
        CalibrationScope::AllCandidates => pools.iter().flat_map(CandidatePool::bundles).collect(),
        CalibrationScope::MaxPmiPerInstance => pools
            .iter()
            .filter_map(|p| max_pmi_select(p).ok().map(|i| p.candidates[i].bundle))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaxPmi,
    Fused,
}

/// One line of the selection export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub instance_id: String,
    pub method: Method,
    pub selected_candidate_id: usize,
    pub trace: Trace,
    pub pmi_hk: f64,
    pub pcmi_h: f64,
    pub pcmi_k: f64,
}

pub fn select(pool: &CandidatePool, method: Method, thresholds: &ThresholdConfig) -> Result<SelectionRecord, SelectionError> {
    let (index, trace) = match method {
        Method::MaxPmi => (max_pmi_select(pool)?, Trace::MaxPmi),
        Method::Fused => {
            let d = fused_pcmi_select(pool, thresholds)?;
            (d.index, d.trace)
        }
    };
    let c = &pool.candidates[index];
    Ok(SelectionRecord {
        instance_id: pool.instance_id.clone(),
        method,
        selected_candidate_id: c.candidate_id,
        trace,
        pmi_hk: c.bundle.pmi_hk,
        pcmi_h: c.bundle.pcmi_h,
        pcmi_k: c.bundle.pcmi_k,
    })
}
