use serde::{Deserialize, Serialize};

use crate::data::Posteriors;
use crate::error::{QuantError, Result};

/// How the class-wise histograms of a bag are combined by a divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramLayout {
    /// One divergence over the concatenation of all histograms, each scaled
    /// by `1/n`.
    Concatenated,
    /// Mean of the per-column divergences.
    Averaged,
}

/// One normalised `b`-bin histogram per posterior column.
#[derive(Debug, Clone, PartialEq)]
pub struct Histograms {
    per_class: Vec<Vec<f64>>,
    bins: usize,
    layout: HistogramLayout,
}

impl Histograms {
    pub fn new(per_class: Vec<Vec<f64>>, bins: usize, layout: HistogramLayout) -> Result<Self> {
        if bins < 2 {
            return Err(QuantError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
        }
        if per_class.is_empty() || per_class.iter().any(|h| h.len() != bins) {
            return Err(QuantError::ShapeMismatch("histogram lengths must equal bins".into()));
        }
        Ok(Self {
            per_class,
            bins,
            layout,
        })
    }

    pub fn per_class(&self) -> &[Vec<f64>] {
        &self.per_class
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn layout(&self) -> HistogramLayout {
        self.layout
    }

    pub fn n_classes(&self) -> usize {
        self.per_class.len()
    }
}

/// Normalised equal-width histogram on `[0, 1]`; bins are `[i/b, (i+1)/b)`
/// with the last one closed.
pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let mut total = 0.0;
    for v in values {
        let idx = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        counts[idx] += 1.0;
        total += 1.0;
    }
    if total > 0.0 {
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    counts
}

/// Class-wise histograms of a bag of posteriors.
pub fn histogram_of_bag(
    posteriors: &Posteriors,
    bins: usize,
    layout: HistogramLayout,
) -> Result<Histograms> {
    if bins < 2 {
        return Err(QuantError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let per_class = posteriors
        .view()
        .columns()
        .into_iter()
        .map(|col| histogram(col.iter().copied(), bins))
        .collect();
    Histograms::new(per_class, bins, layout)
}
