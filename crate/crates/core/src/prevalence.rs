//! Points on the probability simplex.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};

/// Tolerance used for internal simplex invariants.
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Tolerance used when accepting user supplied vectors.
pub const INPUT_TOL: f64 = 1e-6;

/// A class-prevalence vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Prevalence(Vec<f64>);

impl Prevalence {
    /// Validates `values` as a simplex point.
    ///
    /// Slightly negative entries (down to `-1e-9`) are clamped to zero and the
    /// sum is renormalised if it drifted by less than `1e-6`. A vector that
    /// already satisfies the invariants is returned unchanged.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(QuantError::NotASimplexPoint("empty vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(QuantError::NotASimplexPoint(format!("non-finite entry {v}")));
        }
        if let Some(v) = values.iter().find(|&&v| v < -SIMPLEX_TOL) {
            return Err(QuantError::NotASimplexPoint(format!("negative entry {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > INPUT_TOL {
            return Err(QuantError::NotASimplexPoint(format!("entries sum to {sum}")));
        }
        if values.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= SIMPLEX_TOL {
            return Ok(Self(values));
        }
        Ok(Self::normalize_unchecked(values))
    }

    /// Clips negatives to zero and L1-normalises; an all-zero vector maps to
    /// the uniform vector.
    pub fn from_weights(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(QuantError::NotASimplexPoint("empty vector".into()));
        }
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(QuantError::NotASimplexPoint(format!("non-finite entry {v}")));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Ok(Self::uniform(values.len()));
        }
        Ok(Self::normalize_unchecked(values))
    }

    fn normalize_unchecked(mut values: Vec<f64>) -> Self {
        for v in values.iter_mut() {
            *v = v.max(0.0);
        }
        let sum: f64 = values.iter().sum();
        for v in values.iter_mut() {
            *v /= sum;
        }
        Self(values)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1, "simplex dimension must be at least 1");
        Self(vec![1.0 / n as f64; n])
    }

    /// The `i`-th vertex of the simplex.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// L1 distance to another vector of the same length.
    pub fn l1_distance(&self, other: &Prevalence) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

impl Index<usize> for Prevalence {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for Prevalence {
    type Error = QuantError;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Prevalence::new(v)
    }
}

impl From<Prevalence> for Vec<f64> {
    fn from(p: Prevalence) -> Vec<f64> {
        p.0
    }
}

impl AsRef<[f64]> for Prevalence {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn accepts_exact_simplex_point() {
        let p = Prevalence::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(p.as_slice(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn accepts_degenerate_simplex() {
        let p = Prevalence::new(vec![1.0]).unwrap();
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn rejects_sum_above_tolerance() {
        assert!(matches!(
            Prevalence::new(vec![0.5, 0.6]),
            Err(QuantError::NotASimplexPoint(_))
        ));
    }

    #[test]
    fn rejects_empty_and_negative() {
        assert!(Prevalence::new(vec![]).is_err());
        assert!(Prevalence::new(vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn clamps_tiny_negatives() {
        let p = Prevalence::new(vec![-5e-10, 1.0]).unwrap();
        assert_eq!(p[0], 0.0);
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn from_weights_zero_is_uniform() {
        let p = Prevalence::from_weights(vec![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p, Prevalence::uniform(3));
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(raw in prop::collection::vec(0.0f64..10.0, 1..8)) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-3);
            let v: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let once = Prevalence::new(v).unwrap();
            let twice = Prevalence::new(once.as_slice().to_vec()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
