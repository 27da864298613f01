//! Majority voting, the exact binomial sign test and Fleiss' kappa.

use super::{Choice, ExperimentError, Side, RATERS_PER_PAIR};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Majority {
    A,
    B,
    /// Majority marked both responses nonsensical; the pair is excluded from `n`.
    Nonsensical,
    NoMajority,
}

impl Majority {
    pub fn side(self) -> Option<Side> {
        match self {
            Majority::A => Some(Side::A),
            Majority::B => Some(Side::B),
            _ => None,
        }
    }
}

/// At least two identical choices out of three win.
pub fn majority_vote(pair_id: &str, choices: &[Choice]) -> Result<Majority, ExperimentError> {
    if choices.len() != RATERS_PER_PAIR {
        return Err(ExperimentError::WrongAnnotationCount {
            pair_id: pair_id.to_string(),
            count: choices.len(),
        });
    }
    let count = |c: Choice| choices.iter().filter(|x| **x == c).count();
    Ok(if count(Choice::A) >= 2 {
        Majority::A
    } else if count(Choice::B) >= 2 {
        Majority::B
    } else if count(Choice::BothNonsensical) >= 2 {
        Majority::Nonsensical
    } else {
        Majority::NoMajority
    })
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut table = Vec::with_capacity(n as usize + 1);
    let mut acc = 0.0;
    table.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        table.push(acc);
    }
    table
}

/// One-sided exact tail `P(X >= k)` for `X ~ Binomial(n, 1/2)`, summed in log space.
pub fn binomial_test(n: u64, k: u64) -> Result<f64, ExperimentError> {
    if k > n {
        return Err(ExperimentError::InvalidCounts { n, k });
    }
    if k == 0 {
        return Ok(1.0);
    }
    let lf = ln_factorials(n);
    let log_half_n = n as f64 * 0.5f64.ln();
    let terms: Vec<f64> = (k..=n)
        .map(|i| lf[n as usize] - lf[i as usize] - lf[(n - i) as usize] + log_half_n)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).exp().min(1.0))
}

/// Fleiss' kappa over an items × categories count matrix. Every item must have
/// the same number of raters (at least two).
///
/// When chance agreement is 1 (every rating in one category) kappa is
/// undefined; 1.0 is returned and a warning logged.
pub fn fleiss_kappa(matrix: &[Vec<usize>]) -> Result<f64, ExperimentError> {
    let Some(first) = matrix.first() else {
        return Err(ExperimentError::InvalidMatrix("no items".into()));
    };
    let categories = first.len();
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(ExperimentError::InvalidMatrix("need at least two raters per item".into()));
    }
    if matrix.iter().any(|row| row.len() != categories || row.iter().sum::<usize>() != raters) {
        return Err(ExperimentError::InvalidMatrix("items differ in rater or category count".into()));
    }
    let items = matrix.len() as f64;
    let r = raters as f64;
    let p_bar = matrix
        .iter()
        .map(|row| (row.iter().map(|&c| (c * c) as f64).sum::<f64>() - r) / (r * (r - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..categories)
        .map(|j| {
            let pj = matrix.iter().map(|row| row[j] as f64).sum::<f64>() / (items * r);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        log::warn!("fleiss kappa undefined (all ratings in one category), reporting 1.0");
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Choice::*;

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote("p", &[A, A, B]).unwrap(), Majority::A);
        assert_eq!(majority_vote("p", &[A, B, BothNonsensical]).unwrap(), Majority::NoMajority);
        assert_eq!(
            majority_vote("p", &[BothNonsensical, BothNonsensical, A]).unwrap(),
            Majority::Nonsensical
        );
        assert!(matches!(
            majority_vote("p", &[A, A]),
            Err(ExperimentError::WrongAnnotationCount { count: 2, .. })
        ));
    }

    #[test]
    fn binomial_single_tail_term() {
        let p = binomial_test(5, 5).unwrap();
        assert!((p - 0.03125).abs() < 1e-15, "{p}");
        assert_eq!(binomial_test(10, 0).unwrap(), 1.0);
        assert!(binomial_test(3, 4).is_err());
    }

    #[test]
    fn binomial_matches_direct_sum() {
        // direct sum with exact integer binomial coefficients
        fn direct(n: u32, k: u32) -> f64 {
            let mut c = 1u128;
            let mut total = 0u128;
            for i in 0..=n {
                if i >= k {
                    total += c;
                }
                c = c * u128::from(n - i) / u128::from(i + 1);
            }
            total as f64 / 2f64.powi(n as i32)
        }
        for (n, k) in [(87, 55), (95, 70), (99, 59), (20, 13), (1, 1), (60, 30)] {
            let got = binomial_test(n as u64, k as u64).unwrap();
            let want = direct(n, k);
            assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15, "({n},{k}) {got} vs {want}");
        }
    }

    #[test]
    fn kappa_two_item_example() {
        // P_i = (4 + 1 - 3) / 6 = 1/3 for both items; p = (1/2, 1/2, 0); P_e = 1/2.
        let k = fleiss_kappa(&[vec![2, 1, 0], vec![1, 2, 0]]).unwrap();
        assert!((k - (-1.0 / 3.0)).abs() < 1e-9, "{k}");
    }

    #[test]
    fn kappa_perfect_and_degenerate() {
        let k = fleiss_kappa(&[vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3]]).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        assert_eq!(fleiss_kappa(&[vec![3, 0, 0], vec![3, 0, 0]]).unwrap(), 1.0);
        assert!(fleiss_kappa(&[vec![3, 0], vec![1, 1]]).is_err());
        assert!(fleiss_kappa(&[]).is_err());
    }
}
