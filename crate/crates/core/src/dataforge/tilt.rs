//! Exponential length tilting and weighted resampling.

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

const BETA_MAX: f64 = 10.0;
const TARGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltConfig {
    pub beta: f64,
    /// Mean length of the source distribution.
    pub mu_a: f64,
    pub cap: f64,
    /// When set, `beta` is solved for instead of taken as given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_mean: Option<f64>,
}

impl TiltConfig {
    pub const DEFAULT_CAP: f64 = 20.0;

    /// Fixed `beta` around the sample mean of `lengths`.
    pub fn around(lengths: &[usize], beta: f64) -> Self {
        TiltConfig { beta, mu_a: mean(lengths), cap: Self::DEFAULT_CAP, target_mean: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cap >= 1.0) {
            return Err(Error::Config(format!("cap {} must be at least 1", self.cap)));
        }
        if !self.beta.is_finite() || !self.mu_a.is_finite() {
            return Err(Error::Config("beta and mu_a must be finite".into()));
        }
        Ok(())
    }
}

fn mean(lengths: &[usize]) -> f64 {
    lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64
}

fn weights_for(lengths: &[usize], beta: f64, mu_a: f64, cap: f64) -> Vec<f64> {
    lengths.iter().map(|&l| (beta * (l as f64 - mu_a)).exp().min(cap)).collect()
}

/// `Σ wᵢℓᵢ / Σ wᵢ` under the capped tilt.
pub fn capped_weighted_mean(lengths: &[usize], beta: f64, mu_a: f64, cap: f64) -> f64 {
    let w = weights_for(lengths, beta, mu_a, cap);
    let num: f64 = w.iter().zip(lengths).map(|(w, &l)| w * l as f64).sum();
    num / w.iter().sum::<f64>()
}

/// Solves `β ∈ [0, 10]` so the capped-weighted mean equals `target` by
/// bisection; the mean is nondecreasing in `β`.
pub fn solve_beta(lengths: &[usize], mu_a: f64, cap: f64, target: f64) -> Result<f64> {
    let f = |b: f64| capped_weighted_mean(lengths, b, mu_a, cap) - target;
    let (lo_v, hi_v) = (f(0.0), f(BETA_MAX));
    if lo_v.abs() <= TARGET_TOL {
        return Ok(0.0);
    }
    if lo_v > 0.0 || hi_v < -TARGET_TOL {
        return Err(Error::InfeasibleTarget(format!(
            "target mean {target} outside [{}, {}] reachable with cap {cap}",
            lo_v + target,
            hi_v + target
        )));
    }
    let (mut lo, mut hi) = (0.0, BETA_MAX);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() <= TARGET_TOL {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `wᵢ = min(e^{β(ℓᵢ − μ_a)}, cap)`, with `β` solved when a target mean is
/// configured.
pub fn tilt_weights(lengths: &[usize], cfg: &TiltConfig) -> Result<Vec<f64>> {
    if lengths.is_empty() {
        return Err(Error::Argument("no lengths to tilt".into()));
    }
    cfg.validate()?;
    let beta = match cfg.target_mean {
        Some(t) => solve_beta(lengths, cfg.mu_a, cfg.cap, t)?,
        None => cfg.beta,
    };
    Ok(weights_for(lengths, beta, cfg.mu_a, cfg.cap))
}

/// `m` multinomial draws of indices with probability proportional to
/// `weights`.
pub fn resample_indices(weights: &[f64], m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::Argument("weights must be nonnegative with positive sum".into()));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::Argument(e.to_string()))?;
    let mut rng = seeds::rng(&[seed, 0x5A4F]);
    Ok((0..m).map(|_| dist.sample(&mut rng)).collect())
}

pub fn resample<T: Clone>(dataset: &[T], weights: &[f64], m: usize, seed: u64) -> Result<Vec<T>> {
    if dataset.len() != weights.len() {
        return Err(Error::Argument(format!("{} items but {} weights", dataset.len(), weights.len())));
    }
    Ok(resample_indices(weights, m, seed)?.into_iter().map(|i| dataset[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identities() {
        let l = [2, 3, 7, 11];
        let w = tilt_weights(&l, &TiltConfig { beta: 0.0, mu_a: 5.0, cap: 20.0, target_mean: None }).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
        let w = tilt_weights(&[5, 5], &TiltConfig { beta: 3.7, mu_a: 5.0, cap: 20.0, target_mean: None }).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        assert!(tilt_weights(&[], &TiltConfig::around(&[1], 0.1)).is_err());
        assert!(tilt_weights(&l, &TiltConfig { cap: 0.5, ..TiltConfig::around(&l, 0.1) }).is_err());
    }

    proptest! {
        #[test]
        fn weights_never_exceed_cap(l in proptest::collection::vec(1usize..40, 1..50), beta in 0.0f64..5.0, cap in 1.0f64..50.0) {
            let cfg = TiltConfig { beta, mu_a: mean(&l), cap, target_mean: None };
            for w in tilt_weights(&l, &cfg).unwrap() {
                prop_assert!(w <= cap && w > 0.0);
            }
        }
    }

    #[test]
    fn unreachable_target_is_infeasible() {
        let l = [2, 3, 4, 30];
        let cfg = TiltConfig { target_mean: Some(100.0), ..TiltConfig::around(&l, 0.0) };
        assert!(matches!(tilt_weights(&l, &cfg), Err(Error::InfeasibleTarget(_))));
        let cfg = TiltConfig { target_mean: Some(1.0), ..TiltConfig::around(&l, 0.0) };
        assert!(matches!(tilt_weights(&l, &cfg), Err(Error::InfeasibleTarget(_))));
    }

    #[test]
    fn resample_edge_cases() {
        let d = ['a', 'b', 'c'];
        let r = resample(&d, &[0.0, 2.0, 0.0], 50, 1).unwrap();
        assert!(r.iter().all(|&c| c == 'b'));
        assert!(resample(&d, &[0.0, 0.0, 0.0], 5, 1).is_err());
        assert!(resample(&d, &[1.0, 1.0], 5, 1).is_err());
        assert!(resample(&d, &[1.0, 1.0, 1.0], 0, 1).is_err());
        assert_eq!(resample(&d, &[1.0, 2.0, 3.0], 40, 9).unwrap(), resample(&d, &[1.0, 2.0, 3.0], 40, 9).unwrap());
    }

    #[test]
    fn uniform_frequencies_within_three_sigma() {
        let n = 10;
        let m = 20_000;
        let idx = resample_indices(&vec![1.0; n], m, 4).unwrap();
        let mut counts = vec![0usize; n];
        for i in idx {
            counts[i] += 1;
        }
        let p = 1.0 / n as f64;
        let sigma = (m as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - m as f64 * p).abs() <= 3.0 * sigma, "{c}");
        }
    }
}
