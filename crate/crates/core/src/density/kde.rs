use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};

use super::LogDensity;
use crate::data::Posteriors;
use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;

/// Lower bound applied to every log-density, `ln(1e-300)`.
pub const LOG_DENSITY_FLOOR: f64 = -690.775_527_898_213_7;

/// Gaussian kernel density estimate with isotropic bandwidth `h`.
///
/// `p(x) = 1/|X| * sum_i N(x | x_i, h^2 I)`. There is nothing to fit: the
/// model just keeps its reference points.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    references: Array2<f64>,
    bandwidth: f64,
    log_norm: f64,
}

impl Kde {
    pub fn new(references: Array2<f64>, bandwidth: f64) -> Result<Self> {
        if references.nrows() == 0 {
            return Err(QuantError::EmptyReferenceSet);
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(QuantError::NonPositiveBandwidth(bandwidth));
        }
        let d = references.ncols() as f64;
        let log_norm =
            -0.5 * d * (2.0 * PI * bandwidth * bandwidth).ln() - (references.nrows() as f64).ln();
        Ok(Self {
            references,
            bandwidth,
            log_norm,
        })
    }

    pub fn from_posteriors(points: &Posteriors, bandwidth: f64) -> Result<Self> {
        Self::new(points.view().to_owned(), bandwidth)
    }

    pub fn references(&self) -> ArrayView2<'_, f64> {
        self.references.view()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.references.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.references.nrows() == 0
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.references.ncols() {
            return Err(QuantError::DimensionMismatch {
                expected: self.references.ncols(),
                found,
            });
        }
        Ok(())
    }

    fn log_density_unchecked(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let inv = -0.5 / (self.bandwidth * self.bandwidth);
        scratch.clear();
        let mut max = f64::NEG_INFINITY;
        for r in self.references.outer_iter() {
            let sq: f64 = r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            let e = sq * inv;
            max = max.max(e);
            scratch.push(e);
        }
        let sum: f64 = scratch.iter().map(|e| (e - max).exp()).sum();
        (self.log_norm + max + sum.ln()).max(LOG_DENSITY_FLOOR)
    }

    /// Log-densities at every row of `queries`.
    pub fn log_densities(&self, queries: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_dim(queries.ncols())?;
        let mut scratch = Vec::with_capacity(self.len());
        Ok(queries
            .outer_iter()
            .map(|q| match q.as_slice() {
                Some(s) => self.log_density_unchecked(s, &mut scratch),
                None => self.log_density_unchecked(&q.to_vec(), &mut scratch),
            })
            .collect())
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// One draw: a uniformly chosen reference point plus `N(0, h^2 I)` noise.
    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let i = rng.random_range(0..self.len());
        for (o, &r) in out.iter_mut().zip(self.references.row(i)) {
            let z: f64 = StandardNormal.sample(rng);
            *o = r + self.bandwidth * z;
        }
    }
}

impl LogDensity for Kde {
    fn dim(&self) -> usize {
        self.references.ncols()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut scratch = Vec::with_capacity(self.len());
        Ok(self.log_density_unchecked(x, &mut scratch))
    }
}

/// Weighted mixture of class-wise KDEs sharing bandwidth and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeMixture {
    components: Vec<Kde>,
    weights: Prevalence,
}

impl KdeMixture {
    pub fn new(components: Vec<Kde>, weights: Prevalence) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(QuantError::LengthMismatch {
                left: components.len(),
                right: weights.len(),
            });
        }
        let first = &components[0];
        for c in &components[1..] {
            if c.bandwidth != first.bandwidth {
                return Err(QuantError::ShapeMismatch("components must share the bandwidth".into()));
            }
            first.check_dim(c.dim())?;
        }
        Ok(Self {
            components,
            weights,
        })
    }

    pub fn components(&self) -> &[Kde] {
        &self.components
    }

    pub fn weights(&self) -> &Prevalence {
        &self.weights
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (c, &w) in self.components.iter().zip(self.weights.as_slice()) {
            if w > 0.0 {
                total += w * c.density(x)?;
            }
        }
        Ok(total)
    }

    /// `t` i.i.d. draws: component by weight, then reference point uniformly,
    /// then Gaussian noise of scale `h` per coordinate.
    pub fn sample<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let chooser = WeightedIndex::new(self.weights.as_slice()).expect("simplex weights");
        let mut out = Array2::zeros((t, d));
        for mut row in out.outer_iter_mut() {
            let k = chooser.sample(rng);
            self.components[k].sample_one(rng, row.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

impl LogDensity for KdeMixture {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (c, &w) in self.components.iter().zip(self.weights.as_slice()) {
            if w > 0.0 {
                terms.push(w.ln() + c.log_density(x)?);
            }
        }
        let max = terms.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = terms.iter().map(|v| (v - max).exp()).sum();
        Ok((max + sum.ln()).max(LOG_DENSITY_FLOOR))
    }
}
