//! Split-R̂ (potential scale reduction) on half-chains.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RhatError {
    #[error("split R-hat needs at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("split R-hat needs at least 4 draws per chain, got {0}")]
    TooFewDraws(usize),
    #[error("chains have unequal lengths")]
    Ragged,
}

/// Result of [`compute_rhat`]. Zero within-chain variance is `Degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Rhat {
    Value(f64),
    Degenerate,
}

impl Rhat {
    /// Numeric value; `Degenerate` maps to `+inf`.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Rhat::Value(v) => v,
            Rhat::Degenerate => f64::INFINITY,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Rhat::Degenerate)
    }

    /// True when the value is finite and below `threshold`.
    pub fn below(&self, threshold: f64) -> bool {
        match *self {
            Rhat::Value(v) => v < threshold,
            Rhat::Degenerate => false,
        }
    }
}

impl fmt::Display for Rhat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rhat::Value(v) => write!(f, "{v:.4}"),
            Rhat::Degenerate => f.write_str("inf (degenerate: zero within-chain variance)"),
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Split-R̂ of `chains[c][t]`. Each chain is cut in half (the middle draw
/// is dropped for odd lengths) and the classic between/within variance
/// ratio is evaluated on the resulting `2 * n_chains` half-chains.
pub fn compute_rhat<C: AsRef<[f64]>>(chains: &[C]) -> Result<Rhat, RhatError> {
    if chains.len() < 2 {
        return Err(RhatError::TooFewChains(chains.len()));
    }
    let n_draws = chains[0].as_ref().len();
    if chains.iter().any(|c| c.as_ref().len() != n_draws) {
        return Err(RhatError::Ragged);
    }
    if n_draws < 4 {
        return Err(RhatError::TooFewDraws(n_draws));
    }
    let half = n_draws / 2;
    let mut stats = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = c.as_ref();
        stats.push(mean_var(&c[..half]));
        stats.push(mean_var(&c[n_draws - half..]));
    }

    let m = stats.len() as f64;
    let n = half as f64;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let between = n / (m - 1.0) * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>();
    let within = stats.iter().map(|s| s.1).sum::<f64>() / m;
    if within <= 0.0 || !within.is_finite() {
        return Ok(Rhat::Degenerate);
    }
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok(Rhat::Value((var_plus / within).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_chains_are_degenerate() {
        let chains = vec![vec![3.0; 10]; 4];
        let r = compute_rhat(&chains).unwrap();
        assert!(r.is_degenerate());
        assert_eq!(r.as_f64(), f64::INFINITY);
        assert!(!r.below(1.1));
    }

    #[test]
    fn input_validation() {
        assert_eq!(
            compute_rhat(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap_err(),
            RhatError::TooFewChains(1)
        );
        assert_eq!(
            compute_rhat(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap_err(),
            RhatError::TooFewDraws(3)
        );
        assert_eq!(
            compute_rhat(&[vec![1.0; 4], vec![1.0; 5]]).unwrap_err(),
            RhatError::Ragged
        );
    }

    #[test]
    fn hand_computed_value() {
        // halves: [1,2] [3,4] [2,3] [4,5]; means 1.5 3.5 2.5 4.5, vars 0.5 each
        // B = 2/3 * (1.5^2+0.5^2+0.5^2+1.5^2) = 2/3*5 = 10/3, W = 0.5
        // var+ = 0.5*0.5 + (10/3)/2 = 0.25 + 5/3
        let r = compute_rhat(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 3.0, 4.0, 5.0]]).unwrap();
        let expected = ((0.25 + 5.0 / 3.0) / 0.5f64).sqrt();
        assert!((r.as_f64() - expected).abs() < 1e-12);
    }

    #[test]
    fn odd_length_drops_middle_draw() {
        let a = compute_rhat(&[vec![1.0, 2.0, 99.0, 3.0, 4.0], vec![2.0, 3.0, -50.0, 4.0, 5.0]])
            .unwrap();
        let b = compute_rhat(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 3.0, 4.0, 5.0]]).unwrap();
        assert_eq!(a, b);
    }
}
