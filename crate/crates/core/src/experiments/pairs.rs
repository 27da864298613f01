//! Comparison-pair construction for the three experiments.
//!
//! Randomness is drawn per instance from [`stable_seed`], so results depend
//! only on the base seed and the instance id, not on pool order or threading.

use super::{stable_seed, CandidateRef, ComparisonPair, Experiment, ExperimentError, Side};
use crate::selection::{acceptable_count, fused_pcmi_select, max_pmi_select, pmi_rank, quantile_sorted, sorted_values, ThresholdConfig, Trace};
use crate::selection::CandidatePool;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub const DEFAULT_EXP2_DELTA_H_MIN: f64 = 15.0;

fn candidate_ref(pool: &CandidatePool, index: usize) -> CandidateRef {
    let c = &pool.candidates[index];
    CandidateRef {
        candidate_id: c.candidate_id,
        text: c.text.clone(),
        tokens: c.response.tokens.clone(),
    }
}

/// Places `hypothesis` and `other` in random presentation order.
fn make_pair(
    pool: &CandidatePool,
    experiment: Experiment,
    hypothesis: usize,
    other: usize,
    rng: &mut ChaCha8Rng,
) -> ComparisonPair {
    let hypothesis_side = if rng.random_bool(0.5) { Side::B } else { Side::A };
    let (a, b) = match hypothesis_side {
        Side::A => (hypothesis, other),
        Side::B => (other, hypothesis),
    };
    let (ha, hb) = (&pool.candidates[hypothesis].bundle, &pool.candidates[other].bundle);
    ComparisonPair {
        pair_id: format!("{}:{}", family(experiment), pool.instance_id),
        instance_id: pool.instance_id.clone(),
        experiment,
        history: pool.history.clone(),
        side_a: candidate_ref(pool, a),
        side_b: candidate_ref(pool, b),
        hypothesis_side,
        delta_pcmi_h: Some((ha.pcmi_h - hb.pcmi_h).abs()),
        delta_pcmi_k: Some((ha.pcmi_k - hb.pcmi_k).abs()),
    }
}

fn family(experiment: Experiment) -> &'static str {
    match experiment {
        Experiment::Exp1 | Experiment::Exp1Top | Experiment::Exp1Bottom => "EXP1",
        Experiment::Exp2 => "EXP2",
        Experiment::Exp3 => "EXP3",
    }
}

fn rng_for(seed: u64, experiment: Experiment, pool: &CandidatePool) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_seed(seed, &format!("{}:{}", family(experiment), pool.instance_id)))
}

/// Max-PMI candidate vs a uniformly drawn other candidate, one pair per pool.
/// Pairs are tagged `EXP1_TOP` / `EXP1_BOTTOM` by the opponent's PMI half.
pub fn build_exp1_pairs(pools: &[CandidatePool], seed: u64) -> Result<Vec<ComparisonPair>, ExperimentError> {
    pools
        .par_iter()
        .map(|pool| {
            let n = pool.candidates.len();
            if n < 2 {
                return Err(ExperimentError::PoolTooSmall {
                    instance_id: pool.instance_id.clone(),
                    size: n,
                });
            }
            let mut rng = rng_for(seed, Experiment::Exp1, pool);
            let best = max_pmi_select(pool)?;
            let mut opponent = rng.random_range(0..n - 1);
            if opponent >= best {
                opponent += 1;
            }
            let rank = pmi_rank(&pool.bundles(), opponent)?;
            let tag = if rank <= acceptable_count(n, 0.5) {
                Experiment::Exp1Top
            } else {
                Experiment::Exp1Bottom
            };
            Ok(make_pair(pool, tag, best, opponent, &mut rng))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Build {
    pub pairs: Vec<ComparisonPair>,
    /// Median `|Δpcmi_k|` over the selected pairs.
    pub median_abs_delta_pcmi_k: Option<f64>,
    pub skipped: usize,
}

/// Per pool, the candidate pair with `|Δpcmi_h| > delta_h_min` and the closest
/// `pcmi_k`. The higher-`pcmi_h` side is the hypothesis side.
pub fn build_exp2_pairs(pools: &[CandidatePool], delta_h_min: f64, seed: u64) -> Exp2Build {
    let picked: Vec<Option<ComparisonPair>> = pools
        .par_iter()
        .map(|pool| {
            let b = pool.bundles();
            let mut best: Option<(f64, usize, usize)> = None;
            for i in 0..b.len() {
                for j in i + 1..b.len() {
                    if (b[i].pcmi_h - b[j].pcmi_h).abs() <= delta_h_min {
                        continue;
                    }
                    let dk = (b[i].pcmi_k - b[j].pcmi_k).abs();
                    if best.is_none_or(|(d, _, _)| dk < d) {
                        best = Some((dk, i, j));
                    }
                }
            }
            let (_, i, j) = best?;
            let (hi, lo) = if b[i].pcmi_h > b[j].pcmi_h { (i, j) } else { (j, i) };
            let mut rng = rng_for(seed, Experiment::Exp2, pool);
            Some(make_pair(pool, Experiment::Exp2, hi, lo, &mut rng))
        })
        .collect();
    let skipped = picked.iter().filter(|p| p.is_none()).count();
    let pairs: Vec<ComparisonPair> = picked.into_iter().flatten().collect();
    let deltas = sorted_values(pairs.iter().filter_map(|p| p.delta_pcmi_k));
    Exp2Build {
        median_abs_delta_pcmi_k: (!deltas.is_empty()).then(|| quantile_sorted(&deltas, 0.5)),
        pairs,
        skipped,
    }
}

/// Fused-PCMI vs Max-PMI for every pool where Fused-PCMI swapped.
pub fn build_exp3_pairs(
    pools: &[CandidatePool],
    thresholds: &ThresholdConfig,
    seed: u64,
) -> Result<Vec<ComparisonPair>, ExperimentError> {
    thresholds.validate()?;
    let picked: Vec<Option<ComparisonPair>> = pools
        .par_iter()
        .map(|pool| {
            let decision = fused_pcmi_select(pool, thresholds)?;
            if decision.trace != Trace::Swapped {
                return Ok(None);
            }
            let mut rng = rng_for(seed, Experiment::Exp3, pool);
            Ok(Some(make_pair(pool, Experiment::Exp3, decision.index, decision.max_pmi_index, &mut rng)))
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(picked.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{ScoreBundle, TokenizedText};
    use crate::selection::Candidate;

    fn pool(id: &str, scores: &[(f64, f64, f64)]) -> CandidatePool {
        CandidatePool {
            instance_id: id.into(),
            history: vec!["one".into(), "two".into()],
            knowledge: "k".into(),
            candidates: scores
                .iter()
                .enumerate()
                .map(|(i, &(pmi_hk, pcmi_h, pcmi_k))| {
                    let s_none = -300.0;
                    let s_full = s_none + pmi_hk;
                    Candidate {
                        candidate_id: i,
                        text: format!("cand {i}"),
                        response: TokenizedText::new(vec!["cand".into(), i.to_string()], vec![4, 5]),
                        series: None,
                        bundle: ScoreBundle::from_sums(s_full, s_full - pcmi_k, s_full - pcmi_h, s_none),
                    }
                })
                .collect(),
        }
    }

    fn ids(p: &ComparisonPair) -> (usize, usize) {
        let hyp = p.side(p.hypothesis_side).candidate_id;
        let other = p.side(p.hypothesis_side.other()).candidate_id;
        (hyp, other)
    }

    #[test]
    fn exp1_pool_of_two_is_forced() {
        let pools = vec![pool("x", &[(1.0, 0.0, 0.0), (9.0, 0.0, 0.0)])];
        let pairs = build_exp1_pairs(&pools, 3).unwrap();
        assert_eq!(ids(&pairs[0]), (1, 0));
        assert_eq!(pairs[0].experiment, Experiment::Exp1Bottom);
    }

    #[test]
    fn exp1_is_reproducible() {
        let scores: Vec<_> = (0..10).map(|i| (i as f64, 0.0, 0.0)).collect();
        let pools = vec![pool("x", &scores), pool("y", &scores)];
        assert_eq!(build_exp1_pairs(&pools, 42).unwrap(), build_exp1_pairs(&pools, 42).unwrap());
        let small = vec![pool("z", &[(1.0, 0.0, 0.0)])];
        assert!(matches!(build_exp1_pairs(&small, 0), Err(ExperimentError::PoolTooSmall { size: 1, .. })));
    }

    #[test]
    fn exp1_opponent_rank_is_uniform() {
        let scores: Vec<_> = (0..10).map(|i| (i as f64 * 3.0, 0.0, 0.0)).collect();
        let pools = vec![pool("x", &scores)];
        let bundles = pools[0].bundles();
        let runs = 10_000u64;
        let mut counts = [0u32; 11];
        let mut top = 0u32;
        for seed in 0..runs {
            let p = &build_exp1_pairs(&pools, seed).unwrap()[0];
            let (best, opp) = ids(p);
            assert_eq!(best, 9);
            let rank = pmi_rank(&bundles, opp).unwrap();
            counts[rank] += 1;
            top += u32::from(p.experiment == Experiment::Exp1Top);
            assert_eq!(p.experiment == Experiment::Exp1Top, rank <= 5);
        }
        assert_eq!(counts[0] + counts[1], 0);
        let expected = runs as f64 / 9.0;
        let chi2: f64 = counts[2..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square, 8 degrees of freedom, 0.001 critical value
        assert!(chi2 < 26.12, "chi2 = {chi2}");
        assert!((top as f64 / runs as f64 - 4.0 / 9.0).abs() < 0.03);
    }

    #[test]
    fn exp2_picks_closest_pcmi_k() {
        let pools = vec![pool("x", &[(0.0, 0.0, 5.0), (0.0, 20.0, 5.5), (0.0, 16.0, 9.0)])];
        let built = build_exp2_pairs(&pools, 15.0, 1);
        assert_eq!(built.pairs.len(), 1);
        let p = &built.pairs[0];
        assert_eq!(ids(p), (1, 0));
        assert!(p.delta_pcmi_h.unwrap() > 15.0);
        assert!((p.delta_pcmi_k.unwrap() - 0.5).abs() < 1e-12);
        assert!((built.median_abs_delta_pcmi_k.unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exp2_skips_narrow_pools() {
        let pools = vec![pool("x", &[(0.0, 0.0, 1.0), (0.0, 10.0, 1.0), (0.0, 15.0, 1.0)])];
        let built = build_exp2_pairs(&pools, 15.0, 1);
        assert!(built.pairs.is_empty());
        assert_eq!(built.skipped, 1);
        assert_eq!(built.median_abs_delta_pcmi_k, None);
    }

    #[test]
    fn exp3_only_on_swaps() {
        let t = ThresholdConfig::default();
        let swapped = pool("s", &[(150.0, 4.0, 0.0), (87.0, 14.0, 0.0), (60.0, 2.0, 0.0), (40.0, 20.0, 0.0)]);
        let default = pool("d", &[(150.0, 6.0, 0.0), (87.0, 14.0, 0.0), (60.0, 2.0, 0.0), (40.0, 20.0, 0.0)]);
        let fallback = pool("f", &[(150.0, 4.0, 0.0), (40.0, 20.0, 0.0)]);
        let pairs = build_exp3_pairs(&[swapped, default, fallback], &t, 9).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].instance_id, "s");
        assert_eq!(ids(&pairs[0]), (1, 0));
    }
}
