//! Temperature-scaled nucleus (top-p) sampling.

use super::LmError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASS_TOLERANCE: f64 = 1e-9;

/// The truncated, renormalized support as `(token index, probability)` pairs in
/// descending probability order (ties broken by lower index).
pub fn nucleus_support(distribution: &[f64], top_p: f64, temperature: f64) -> Result<Vec<(usize, f64)>, LmError> {
    if distribution.is_empty() {
        return Err(LmError::InvalidDistribution("empty distribution".into()));
    }
    if let Some(p) = distribution.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(LmError::InvalidDistribution(format!("entry {p} is not a probability")));
    }
    let sum: f64 = distribution.iter().sum();
    if (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(LmError::InvalidDistribution(format!("mass sums to {sum}")));
    }
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(LmError::InvalidConfig(format!("top_p must be in (0, 1], got {top_p}")));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(LmError::InvalidConfig(format!("temperature must be positive, got {temperature}")));
    }

    // p^(1/τ), computed relative to the largest entry to stay in range.
    let max_log = distribution
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let mut scaled: Vec<(usize, f64)> = distribution
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (i, ((p.ln() - max_log) / temperature).exp()))
        .collect();
    let total: f64 = scaled.iter().map(|(_, w)| w).sum();
    scaled.iter_mut().for_each(|(_, w)| *w /= total);
    scaled.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut kept = 0;
    let mut cumulative = 0.0;
    for (_, p) in &scaled {
        kept += 1;
        cumulative += p;
        if cumulative >= top_p - 1e-12 {
            break;
        }
    }
    scaled.truncate(kept);
    scaled.iter_mut().for_each(|(_, p)| *p /= cumulative);
    Ok(scaled)
}

pub fn nucleus_sample_with<R: Rng + ?Sized>(
    rng: &mut R,
    distribution: &[f64],
    top_p: f64,
    temperature: f64,
) -> Result<usize, LmError> {
    let support = nucleus_support(distribution, top_p, temperature)?;
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for &(index, p) in &support {
        cumulative += p;
        if u < cumulative {
            return Ok(index);
        }
    }
    Ok(support.last().expect("non-empty support").0)
}

/// Draws one token index; the same seed always yields the same index.
pub fn nucleus_sample(distribution: &[f64], top_p: f64, temperature: f64, seed: u64) -> Result<usize, LmError> {
    nucleus_sample_with(&mut ChaCha8Rng::seed_from_u64(seed), distribution, top_p, temperature)
}
