//! Score distributions of candidate groups and span attribution.

use super::{group_annotations, majority_vote, Choice, ComparisonPair, Annotation, Experiment, ExperimentError, RATERS_PER_PAIR};
use crate::scoring::{attribution_ratio, csv_field, token_series, AttributionMode, ScoreBundle, ScoringError, SpanSet, TokenScoreKind, TokenScoreSeries};
use crate::selection::{fused_pcmi_select, max_pmi_select, quantile_sorted, sorted_values, CandidatePool, ThresholdConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v = sorted_values(values);
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Fixed-bin 2-D histogram; `counts[h][k]` counts bundles whose `pcmi_h` falls
/// in row `h` and `pcmi_k` in column `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub bins: usize,
    pub pcmi_k_range: (f64, f64),
    pub pcmi_h_range: (f64, f64),
    pub counts: Vec<Vec<u64>>,
}

fn bin(value: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    (((value - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub count: usize,
    pub pcmi_h: FiveNumber,
    pub pcmi_k: FiveNumber,
    pub histogram: Histogram2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub groups: Vec<GroupSummary>,
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Five-number summaries and histograms over a range shared by all groups.
pub fn distribution_summary(groups: &[(String, Vec<ScoreBundle>)]) -> Result<DistributionSummary, ExperimentError> {
    if let Some((name, _)) = groups.iter().find(|(_, b)| b.is_empty()) {
        return Err(ExperimentError::EmptyGroup(name.clone()));
    }
    let all = || groups.iter().flat_map(|(_, b)| b.iter());
    let k_range = padded_range(all().map(|b| b.pcmi_k));
    let h_range = padded_range(all().map(|b| b.pcmi_h));
    let groups = groups
        .iter()
        .map(|(name, bundles)| {
            let mut counts = vec![vec![0u64; HISTOGRAM_BINS]; HISTOGRAM_BINS];
            for b in bundles {
                counts[bin(b.pcmi_h, h_range, HISTOGRAM_BINS)][bin(b.pcmi_k, k_range, HISTOGRAM_BINS)] += 1;
            }
            GroupSummary {
                group: name.clone(),
                count: bundles.len(),
                pcmi_h: FiveNumber::of(bundles.iter().map(|b| b.pcmi_h)).expect("non-empty"),
                pcmi_k: FiveNumber::of(bundles.iter().map(|b| b.pcmi_k)).expect("non-empty"),
                histogram: Histogram2d {
                    bins: HISTOGRAM_BINS,
                    pcmi_k_range: k_range,
                    pcmi_h_range: h_range,
                    counts,
                },
            }
        })
        .collect();
    Ok(DistributionSummary { groups })
}

/// `ALL` candidates, the `MAXPMI` pick and the `FUSED` pick of every pool.
pub fn selection_groups(
    pools: &[CandidatePool],
    thresholds: &ThresholdConfig,
) -> Result<Vec<(String, Vec<ScoreBundle>)>, ExperimentError> {
    let mut max_pmi = Vec::with_capacity(pools.len());
    let mut fused = Vec::with_capacity(pools.len());
    for pool in pools {
        max_pmi.push(pool.candidates[max_pmi_select(pool)?].bundle);
        fused.push(pool.candidates[fused_pcmi_select(pool, thresholds)?.index].bundle);
    }
    Ok(vec![
        ("ALL".to_string(), pools.iter().flat_map(CandidatePool::bundles).collect()),
        ("MAXPMI".to_string(), max_pmi),
        ("FUSED".to_string(), fused),
    ])
}

impl DistributionSummary {
    pub fn group(&self, name: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// `group,score,min,q1,median,q3,max`
    pub fn quartiles_csv(&self) -> String {
        let mut out = String::from("group,score,min,q1,median,q3,max\n");
        for g in &self.groups {
            for (score, f) in [("pcmi_h", g.pcmi_h), ("pcmi_k", g.pcmi_k)] {
                out.push_str(&format!(
                    "{},{score},{},{},{},{},{}\n",
                    csv_field(&g.group),
                    f.min,
                    f.q1,
                    f.median,
                    f.q3,
                    f.max
                ));
            }
        }
        out
    }

    /// Non-empty cells as `group,pcmi_k_lo,pcmi_k_hi,pcmi_h_lo,pcmi_h_hi,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("group,pcmi_k_lo,pcmi_k_hi,pcmi_h_lo,pcmi_h_hi,count\n");
        for g in &self.groups {
            let h = &g.histogram;
            let width = |(lo, hi): (f64, f64)| (hi - lo) / h.bins as f64;
            let (kw, hw) = (width(h.pcmi_k_range), width(h.pcmi_h_range));
            for (row, cells) in h.counts.iter().enumerate() {
                for (col, &count) in cells.iter().enumerate().filter(|(_, c)| **c > 0) {
                    let k_lo = h.pcmi_k_range.0 + col as f64 * kw;
                    let h_lo = h.pcmi_h_range.0 + row as f64 * hw;
                    out.push_str(&format!(
                        "{},{},{},{},{},{count}\n",
                        csv_field(&g.group),
                        k_lo,
                        k_lo + kw,
                        h_lo,
                        h_lo + hw
                    ));
                }
            }
        }
        out
    }
}

/// A response with annotated spans and its token-level scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionItem {
    pub series: TokenScoreSeries,
    pub spans: SpanSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub mode: AttributionMode,
    pub responses: usize,
    /// Mean span share of `pcmi_h`; `None` if every total was degenerate.
    pub pcmi_h: Option<f64>,
    pub pmi_h: Option<f64>,
    pub pcmi_k: Option<f64>,
    /// Ratios dropped because the response's total score was ~0.
    pub skipped: usize,
}

impl AttributionReport {
    pub fn get(&self, kind: TokenScoreKind) -> Option<f64> {
        match kind {
            TokenScoreKind::PcmiH => self.pcmi_h,
            TokenScoreKind::PmiH => self.pmi_h,
            TokenScoreKind::PcmiK => self.pcmi_k,
            TokenScoreKind::Pmi => None,
        }
    }
}

/// Mean fraction of each token score falling inside the annotated spans.
pub fn attribution_report(items: &[AttributionItem], mode: AttributionMode) -> Result<AttributionReport, ExperimentError> {
    if items.is_empty() {
        return Err(ExperimentError::NoSpans);
    }
    let kinds = [TokenScoreKind::PcmiH, TokenScoreKind::PmiH, TokenScoreKind::PcmiK];
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut skipped = 0;
    for item in items {
        let decomposition = token_series(&item.series)?;
        for (slot, kind) in kinds.iter().enumerate() {
            match attribution_ratio(decomposition.get(*kind), &item.spans, mode) {
                Ok(r) => {
                    sums[slot] += r;
                    counts[slot] += 1;
                }
                Err(ScoringError::DegenerateTotal(_)) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
    }
    let mean = |slot: usize| (counts[slot] > 0).then(|| sums[slot] / counts[slot] as f64);
    Ok(AttributionReport {
        mode,
        responses: items.len(),
        pcmi_h: mean(0),
        pmi_h: mean(1),
        pcmi_k: mean(2),
        skipped,
    })
}

/// Span-marked winning responses from complete `EXP2` pairs with a choice
/// majority. Each annotator who sided with the majority and marked spans
/// contributes one item; the series comes from the scored pool.
pub fn exp2_attribution_items(
    pairs: &[ComparisonPair],
    annotations: &[Annotation],
    pools: &[CandidatePool],
) -> Result<Vec<AttributionItem>, ExperimentError> {
    let grouped = group_annotations(pairs, annotations)?;
    let pools: HashMap<&str, &CandidatePool> = pools.iter().map(|p| (p.instance_id.as_str(), p)).collect();
    let mut items = Vec::new();
    for pair in pairs.iter().filter(|p| p.experiment == Experiment::Exp2) {
        let Some(list) = grouped.get(&pair.pair_id).filter(|l| l.len() == RATERS_PER_PAIR) else {
            continue;
        };
        let choices: Vec<Choice> = list.iter().map(|a| a.choice).collect();
        let Some(winner) = majority_vote(&pair.pair_id, &choices)?.side() else {
            continue;
        };
        let candidate_id = pair.side(winner).candidate_id;
        let series = pools
            .get(pair.instance_id.as_str())
            .and_then(|p| p.candidates.iter().find(|c| c.candidate_id == candidate_id))
            .and_then(|c| c.series.clone());
        let Some(series) = series else {
            log::warn!("no token series for {} candidate {candidate_id}, skipping", pair.instance_id);
            continue;
        };
        for a in list.iter().filter(|a| a.choice == Choice::from(winner)) {
            if let Some(spans) = a.spans.as_ref().filter(|s| !s.is_empty()) {
                items.push(AttributionItem {
                    series: series.clone(),
                    spans: spans.clone(),
                });
            }
        }
    }
    Ok(items)
}
