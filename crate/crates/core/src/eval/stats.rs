use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Outcome of a matched-pairs test on per-utterance error rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedPairs {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub z: f64,
    /// Two-sided p-value under the normal approximation.
    pub p_value: f64,
    /// All differences equal and nonzero: the statistic is unbounded.
    pub degenerate: bool,
}

/// Matched-pairs test of `H0: E[a − b] = 0` with the sample standard
/// deviation and a normal reference distribution.
pub fn matched_pairs_test(a: &[f64], b: &[f64]) -> Result<MatchedPairs> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("matched pairs need equal lengths, got {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Domain("matched pairs need at least two items".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite error rate".into()));
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd <= 1e-15 * mean.abs().max(1.0) {
        let zero = mean.abs() <= 1e-15;
        return Ok(MatchedPairs {
            n,
            mean_diff: mean,
            z: if zero { 0.0 } else { mean.signum() * f64::INFINITY },
            p_value: if zero { 1.0 } else { 0.0 },
            degenerate: !zero,
        });
    }
    let z = mean / (sd / (n as f64).sqrt());
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * (1.0 - normal.cdf(z.abs()))).clamp(0.0, 1.0);
    Ok(MatchedPairs {
        n,
        mean_diff: mean,
        z,
        p_value: p,
        degenerate: false,
    })
}
