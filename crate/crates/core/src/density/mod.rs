//! Representations of a bag of posteriors: Gaussian kernel density
//! estimates and class-wise histograms.

mod histogram;
mod kde;

pub use histogram::{histogram, histogram_of_bag, HistogramLayout, Histograms};
pub use kde::{Kde, KdeMixture, LOG_DENSITY_FLOOR};

use crate::error::Result;

/// Anything that can report a log-density at a point.
pub trait LogDensity {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> Result<f64>;
}
