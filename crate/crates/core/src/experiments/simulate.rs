//! Synthetic annotators with a planted preference rate, and fixed annotation
//! logs with prescribed table counts.

use super::{stable_seed, Annotation, Choice, ComparisonPair, RATERS_PER_PAIR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that at least two of three independent raters prefer the
/// hypothesis side when each does so with probability `q`.
pub fn majority_rate(q: f64) -> f64 {
    q.powi(3) + 3.0 * q * q * (1.0 - q)
}

/// d/dq of [`majority_rate`].
pub fn majority_rate_slope(q: f64) -> f64 {
    6.0 * q * (1.0 - q)
}

/// Inverts [`majority_rate`] on `[0, 1]` by bisection.
pub fn invert_majority_rate(rate: f64) -> f64 {
    let target = rate.clamp(0.0, 1.0);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if majority_rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticAnnotators {
    /// Chance a rater prefers the hypothesis side.
    pub preference_rate: f64,
    /// Chance a rater marks both responses nonsensical instead.
    pub nonsensical_rate: f64,
}

impl SyntheticAnnotators {
    pub fn new(preference_rate: f64) -> Self {
        Self {
            preference_rate,
            nonsensical_rate: 0.0,
        }
    }

    /// Three independent judgments per pair.
    pub fn annotate(&self, pairs: &[ComparisonPair], seed: u64) -> Vec<Annotation> {
        let mut out = Vec::with_capacity(pairs.len() * RATERS_PER_PAIR);
        for pair in pairs {
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, &pair.pair_id));
            for rater in 0..RATERS_PER_PAIR {
                let choice = if rng.random_bool(self.nonsensical_rate) {
                    Choice::BothNonsensical
                } else if rng.random_bool(self.preference_rate) {
                    pair.hypothesis_side.into()
                } else {
                    pair.hypothesis_side.other().into()
                };
                out.push(Annotation {
                    pair_id: pair.pair_id.clone(),
                    annotator_id: format!("sim-{rater}"),
                    choice,
                    spans: None,
                    timestamp: 0,
                });
            }
        }
        out
    }
}

/// A log in which the first `k` pairs have a hypothesis-side majority, the next
/// `n - k` an opposing majority, and the rest no majority.
///
/// # Panics
///
/// If `k > n` or `n > pairs.len()`.
pub fn fixture_annotations(pairs: &[ComparisonPair], n: usize, k: usize) -> Vec<Annotation> {
    assert!(k <= n && n <= pairs.len(), "need k <= n <= pairs");
    let mut out = Vec::with_capacity(pairs.len() * RATERS_PER_PAIR);
    for (i, pair) in pairs.iter().enumerate() {
        let h: Choice = pair.hypothesis_side.into();
        let o: Choice = pair.hypothesis_side.other().into();
        // alternate unanimous and 2-1 majorities so kappa is informative
        let choices = if i < k {
            if i % 2 == 0 { [h, h, h] } else { [h, o, h] }
        } else if i < n {
            if i % 2 == 0 { [o, o, o] } else { [o, h, o] }
        } else {
            [h, o, Choice::BothNonsensical]
        };
        for (rater, choice) in choices.into_iter().enumerate() {
            out.push(Annotation {
                pair_id: pair.pair_id.clone(),
                annotator_id: format!("fixture-{rater}"),
                choice,
                spans: None,
                timestamp: (i * RATERS_PER_PAIR + rater) as u64,
            });
        }
    }
    out
}
