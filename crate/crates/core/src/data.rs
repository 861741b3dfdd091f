//! Labelled datasets, unlabelled bags and posterior matrices.

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{QuantError, Result};
use crate::prevalence::{Prevalence, SIMPLEX_TOL};

/// Covariates with class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if labels.len() != features.nrows() {
            return Err(QuantError::LengthMismatch {
                left: labels.len(),
                right: features.nrows(),
            });
        }
        if n_classes == 0 {
            return Err(QuantError::InvalidArgument("n_classes must be positive".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(QuantError::InvalidArgument(format!(
                "label {l} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row indices of each class, in ascending order.
    pub fn class_split(&self) -> Vec<Vec<usize>> {
        class_split(&self.labels, self.n_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Empirical class prevalence.
    pub fn prevalence(&self) -> Result<Prevalence> {
        prevalence_of_labels(&self.labels, self.n_classes)
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Stacks two datasets with the same class count and dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_classes != other.n_classes {
            return Err(QuantError::ShapeMismatch(format!(
                "{} vs {} classes",
                self.n_classes, other.n_classes
            )));
        }
        if self.dim() != other.dim() {
            return Err(QuantError::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        let features = concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .expect("dimensions checked");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Dataset {
            features,
            labels,
            n_classes: self.n_classes,
        })
    }

    /// Drops the labels.
    pub fn to_bag(&self) -> Result<Bag> {
        Bag::new(self.features.clone())
    }
}

/// Partitions row indices by label.
pub fn class_split(labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); n_classes];
    for (row, &l) in labels.iter().enumerate() {
        sets[l].push(row);
    }
    sets
}

pub(crate) fn prevalence_of_labels(labels: &[usize], n_classes: usize) -> Result<Prevalence> {
    if labels.is_empty() {
        return Err(QuantError::TooFewExamples("no labels".into()));
    }
    let mut counts = vec![0.0; n_classes];
    for &l in labels {
        counts[l] += 1.0;
    }
    let total = labels.len() as f64;
    Prevalence::new(counts.into_iter().map(|c| c / total).collect())
}

/// An unlabelled sample whose class prevalence is to be estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    features: Array2<f64>,
}

impl Bag {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(QuantError::TooFewExamples("a bag needs at least one row".into()));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Row-stochastic matrix of class posteriors, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors(Array2<f64>);

impl Posteriors {
    /// Checks every row is a simplex point within `1e-9`.
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.ncols() == 0 {
            return Err(QuantError::ShapeMismatch("posteriors need at least one column".into()));
        }
        for (i, row) in rows.outer_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(QuantError::NotASimplexPoint(format!("posterior row {i}")));
            }
        }
        Ok(Self(rows))
    }

    /// Builds from nested rows; convenient in tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(QuantError::ShapeMismatch("ragged posterior rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = Array2::from_shape_vec((rows.len(), n), flat)
            .map_err(|e| QuantError::ShapeMismatch(e.to_string()))?;
        Self::new(m)
    }

    pub(crate) fn from_array_unchecked(rows: Array2<f64>) -> Self {
        Self(rows)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Posteriors {
        Posteriors(self.0.select(Axis(0), rows))
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Per-row argmax, ties broken towards the lowest class index.
    pub fn argmax(&self) -> Vec<usize> {
        self.0
            .outer_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        self.0
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }
}
