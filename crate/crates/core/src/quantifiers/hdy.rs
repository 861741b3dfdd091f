//! Hellinger-distance histogram matching for binary problems, and its
//! one-vs-all multiclass extension.

use super::{check_classes, split_by_class, Aggregation};
use crate::data::Posteriors;
use crate::density::histogram;
use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;

const GRID_STEPS: usize = 1_000;

fn hd2_mixture(alpha: f64, pos: &[f64], neg: &[f64], test: &[f64]) -> f64 {
    let bc: f64 = pos
        .iter()
        .zip(neg)
        .zip(test)
        .map(|((p, n), t)| ((alpha * p + (1.0 - alpha) * n) * t).sqrt())
        .sum();
    1.0 - bc
}

/// Best mixing weight for one bin count: grid search, then a golden-section
/// refinement around the grid winner that is kept only on strict improvement.
fn best_alpha(pos: &[f64], neg: &[f64], test: &[f64]) -> f64 {
    let mut best = (0.0, hd2_mixture(0.0, pos, neg, test));
    for k in 1..=GRID_STEPS {
        let a = k as f64 / GRID_STEPS as f64;
        let v = hd2_mixture(a, pos, neg, test);
        if v < best.1 {
            best = (a, v);
        }
    }
    let step = 1.0 / GRID_STEPS as f64;
    let (mut lo, mut hi) = ((best.0 - step).max(0.0), (best.0 + step).min(1.0));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let x1 = hi - ratio * (hi - lo);
        let x2 = lo + ratio * (hi - lo);
        if hd2_mixture(x1, pos, neg, test) <= hd2_mixture(x2, pos, neg, test) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let refined = 0.5 * (lo + hi);
    if hd2_mixture(refined, pos, neg, test) < best.1 {
        refined
    } else {
        best.0
    }
}

/// Binary HDy: the median, over bin counts 10, 20, ..., 110, of the positive
/// prevalence minimising the squared Hellinger distance between the mixture
/// of positive/negative score histograms and the test score histogram.
///
/// When every mixing weight is optimal (identical class histograms) the
/// lowest weight, 0, is returned for that bin count.
pub fn hdy_binary_quantify(pos: &[f64], neg: &[f64], test: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(QuantError::EmptyClass(1));
    }
    if neg.is_empty() {
        return Err(QuantError::EmptyClass(0));
    }
    if test.is_empty() {
        return Err(QuantError::TooFewExamples("empty test bag".into()));
    }
    let mut estimates: Vec<f64> = (10..=110)
        .step_by(10)
        .map(|bins| {
            let hp = histogram(pos.iter().copied(), bins);
            let hn = histogram(neg.iter().copied(), bins);
            let ht = histogram(test.iter().copied(), bins);
            best_alpha(&hp, &hn, &ht)
        })
        .collect();
    estimates.sort_by(f64::total_cmp);
    Ok(estimates[estimates.len() / 2])
}

/// L1-normalises per-class one-vs-all estimates; all zeros map to uniform.
pub fn hdy_ova_quantify(estimates: &[f64]) -> Result<Prevalence> {
    if estimates.iter().any(|&e| e < 0.0) {
        return Err(QuantError::InvalidArgument("negative one-vs-all estimate".into()));
    }
    Prevalence::from_weights(estimates.to_vec())
}

/// HDy on each posterior column against the rest of the classes, followed by
/// L1 normalisation. With two classes this is plain binary HDy.
#[derive(Debug, Clone, Default)]
pub struct Hdy {
    /// `scores[i] = (column i for rows of class i, column i for other rows)`
    scores: Vec<(Vec<f64>, Vec<f64>)>,
    ova: bool,
}

impl Hdy {
    pub fn new() -> Self {
        Self::default()
    }

    /// One-vs-all for every class count, including two.
    pub fn one_vs_all() -> Self {
        Self {
            scores: Vec::new(),
            ova: true,
        }
    }
}

impl Aggregation for Hdy {
    fn name(&self) -> String {
        if self.ova { "HDy-OvA" } else { "HDy" }.into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        // Fails on empty classes.
        split_by_class(posteriors, labels, n_classes)?;
        self.scores = (0..n_classes)
            .map(|i| {
                let mut pos = Vec::new();
                let mut neg = Vec::new();
                for (row, &y) in posteriors.view().outer_iter().zip(labels) {
                    if y == i {
                        pos.push(row[i]);
                    } else {
                        neg.push(row[i]);
                    }
                }
                (pos, neg)
            })
            .collect();
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let n = self.scores.len();
        if n == 0 {
            return Err(QuantError::NotFitted);
        }
        check_classes(posteriors, n)?;
        if n == 1 {
            return Ok(Prevalence::uniform(1));
        }
        let column = |i: usize| -> Vec<f64> { posteriors.view().column(i).to_vec() };
        if n == 2 && !self.ova {
            let (pos, neg) = &self.scores[1];
            let a = hdy_binary_quantify(pos, neg, &column(1))?;
            return Prevalence::from_weights(vec![1.0 - a, a]);
        }
        let estimates = self
            .scores
            .iter()
            .enumerate()
            .map(|(i, (pos, neg))| hdy_binary_quantify(pos, neg, &column(i)))
            .collect::<Result<Vec<_>>>()?;
        hdy_ova_quantify(&estimates)
    }
}
