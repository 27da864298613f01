use pcmi_core::scoring::{attribution_ratio, derive_bundle, token_series, AttributionMode, Span, SpanSet};
use pcmi_core::selection::{fused_pcmi_index, max_pmi_index, pmi_rank, Trace, ThresholdConfig};
use pcmi_core::{ScoreBundle, TokenScoreSeries};
use proptest::prelude::*;

fn series_strategy(max_len: usize) -> impl Strategy<Value = TokenScoreSeries> {
    (1..=max_len).prop_flat_map(|n| {
        let col = || prop::collection::vec(-10.0f64..=0.0, n);
        (col(), col(), col(), col()).prop_map(|(a, b, c, d)| TokenScoreSeries::new(a, b, c, d).unwrap())
    })
}

fn bundle_strategy() -> impl Strategy<Value = ScoreBundle> {
    (-200.0f64..-1.0, -200.0f64..-1.0, -200.0f64..-1.0, -200.0f64..-1.0)
        .prop_map(|(f, h, k, n)| ScoreBundle::from_sums(f, h, k, n))
}

fn pool_strategy() -> impl Strategy<Value = Vec<ScoreBundle>> {
    prop::collection::vec(bundle_strategy(), 1..16)
}

fn thresholds_strategy() -> impl Strategy<Value = ThresholdConfig> {
    (-40.0f64..40.0, 0.0f64..60.0, 0.05f64..=1.0).prop_map(|(low, width, f)| ThresholdConfig {
        pcmi_h_low: low,
        pcmi_h_high: low + width,
        pmi_acceptable_fraction: f,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn pmi_identities_hold(series in series_strategy(300)) {
        let b = derive_bundle(&series).unwrap();
        let tol = 1e-12 * (series.len() as f64 / 100.0).ceil();
        prop_assert!((b.pcmi_h + b.pmi_k - b.pmi_hk).abs() <= tol);
        prop_assert!((b.pcmi_k + b.pmi_h - b.pmi_hk).abs() <= tol);
    }

    #[test]
    fn token_series_sums_to_the_bundle(series in series_strategy(200)) {
        let b = derive_bundle(&series).unwrap();
        let t = token_series(&series).unwrap();
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        prop_assert!((sum(&t.pmi) - b.pmi_hk).abs() < 1e-9);
        prop_assert!((sum(&t.pmi_h) - b.pmi_h).abs() < 1e-9);
        prop_assert!((sum(&t.pcmi_h) - b.pcmi_h).abs() < 1e-9);
        prop_assert!((sum(&t.pcmi_k) - b.pcmi_k).abs() < 1e-9);
    }

    #[test]
    fn attribution_is_additive_over_disjoint_spans(
        scores in prop::collection::vec(-5.0f64..5.0, 4..60),
        cuts in prop::collection::vec(0.0f64..1.0, 4),
    ) {
        let total: f64 = scores.iter().sum();
        prop_assume!(total.abs() > 1e-3);
        let n = scores.len();
        let mut idx: Vec<usize> = cuts.iter().map(|c| (c * n as f64) as usize).collect();
        idx.sort_unstable();
        let (a, b, c, d) = (idx[0], idx[1].max(idx[0] + 1), idx[2].max(idx[1] + 1), idx[3].max(idx[2] + 2));
        prop_assume!(d <= n && c < d);
        let first = SpanSet::new(vec![Span { start: a, end: b }]);
        let second = SpanSet::new(vec![Span { start: c, end: d }]);
        let both = SpanSet::new(vec![Span { start: a, end: b }, Span { start: c, end: d }]);
        let r = |s: &SpanSet| attribution_ratio(&scores, s, AttributionMode::Raw).unwrap();
        prop_assert!((r(&both) - r(&first) - r(&second)).abs() < 1e-9);
    }

    #[test]
    fn fused_only_departs_from_max_pmi_below_the_low_threshold(
        pool in pool_strategy(),
        t in thresholds_strategy(),
    ) {
        let m = max_pmi_index(&pool).unwrap();
        let d = fused_pcmi_index(&pool, &t).unwrap();
        prop_assert_eq!(d.max_pmi_index, m);
        if d.index != m {
            prop_assert!(pool[m].pcmi_h < t.pcmi_h_low);
        }
        match d.trace {
            Trace::Default => prop_assert!(pool[m].pcmi_h >= t.pcmi_h_low && d.index == m),
            Trace::Fallback => prop_assert!(d.qualifying.is_empty() && d.index == m),
            Trace::Swapped => {
                let cutoff = ((pool.len() as f64 * t.pmi_acceptable_fraction) - 1e-9).ceil().max(1.0) as usize;
                prop_assert!(pool[d.index].pcmi_h >= t.pcmi_h_high);
                prop_assert!(pmi_rank(&pool, d.index).unwrap() <= cutoff);
                prop_assert!(d.qualifying.contains(&d.index));
            }
            Trace::MaxPmi => prop_assert!(false, "fused never reports max_pmi"),
        }
    }

    #[test]
    fn shifting_s_none_changes_no_choice(
        pool in pool_strategy(),
        t in thresholds_strategy(),
        shift in -50.0f64..50.0,
    ) {
        let shifted: Vec<ScoreBundle> = pool
            .iter()
            .map(|b| ScoreBundle::from_sums(b.s_full, b.s_h, b.s_k, b.s_none + shift))
            .collect();
        for (a, b) in pool.iter().zip(&shifted) {
            prop_assert!((a.pmi_hk - shift - b.pmi_hk).abs() < 1e-9);
        }
        prop_assert_eq!(max_pmi_index(&pool).unwrap(), max_pmi_index(&shifted).unwrap());
        prop_assert_eq!(fused_pcmi_index(&pool, &t).unwrap().index, fused_pcmi_index(&shifted, &t).unwrap().index);
    }

    #[test]
    fn selection_is_permutation_invariant(
        pool in pool_strategy(),
        t in thresholds_strategy(),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(perm_seed));
        let permuted: Vec<ScoreBundle> = order.iter().map(|&i| pool[i]).collect();
        // Continuous random scores: ties have probability zero.
        prop_assert_eq!(order[max_pmi_index(&permuted).unwrap()], max_pmi_index(&pool).unwrap());
        let a = fused_pcmi_index(&pool, &t).unwrap();
        let b = fused_pcmi_index(&permuted, &t).unwrap();
        prop_assert_eq!(order[b.index], a.index);
        prop_assert_eq!(a.trace, b.trace);
        // Bundles are a pure function of the sums, so reordering changes none.
        for (i, &j) in order.iter().enumerate() {
            prop_assert_eq!(permuted[i], pool[j]);
        }
    }
}

#[test]
fn ties_go_to_the_lowest_index() {
    let b = ScoreBundle::from_sums(-10.0, -20.0, -20.0, -30.0);
    assert_eq!(max_pmi_index(&[b, b, b]).unwrap(), 0);
    let low = ScoreBundle::from_sums(-10.0, -20.0, -11.0, -30.0);
    let high = ScoreBundle::from_sums(-10.0, -20.0, -40.0, -30.0);
    let d = fused_pcmi_index(&[low, high, high, low], &ThresholdConfig::default()).unwrap();
    assert_eq!((d.index, d.trace), (1, Trace::Swapped));
}
