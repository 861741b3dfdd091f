//! Closed-form Cauchy-Schwarz divergence between Gaussian KDE mixtures.
//!
//! With all kernels sharing covariance `h^2 I`, every cross term of the
//! divergence is a Gaussian of covariance `2 h^2 I` evaluated at a pairwise
//! difference, so the whole objective only needs the sums of three Gram
//! blocks: train-test (`a_bar`), train-train (`b_bar`) and test-test
//! (`c_bar`). The last one does not depend on the prevalence vector and is
//! skipped during optimisation.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;

/// `N(a | b, 2 h^2 I)`.
pub fn pairwise_kernel(a: &[f64], b: &[f64], h: f64) -> f64 {
    let d = a.len() as f64;
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (4.0 * PI * h * h).powf(-0.5 * d) * (-sq / (4.0 * h * h)).exp()
}

fn norm_and_scale(d: usize, h: f64) -> (f64, f64) {
    ((4.0 * PI * h * h).powf(-0.5 * d as f64), -1.0 / (4.0 * h * h))
}

/// Sum of `N(x_j | y_k, 2h^2 I)` over all pairs.
fn gram_sum(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, h: f64) -> f64 {
    let (norm, scale) = norm_and_scale(x.ncols(), h);
    let mut total = 0.0;
    for a in x.outer_iter() {
        let mut row = 0.0;
        for b in y.outer_iter() {
            let sq: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            row += (sq * scale).exp();
        }
        total += row;
    }
    norm * total
}

/// Sum of the symmetric Gram matrix of `x` with itself, from its upper
/// triangle.
fn gram_self_sum(x: ArrayView2<'_, f64>, h: f64) -> f64 {
    let (norm, scale) = norm_and_scale(x.ncols(), h);
    let m = x.nrows();
    let mut off = 0.0;
    for j in 0..m {
        let a = x.row(j);
        let mut row = 0.0;
        for k in (j + 1)..m {
            let b = x.row(k);
            let sq: f64 = a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            row += (sq * scale).exp();
        }
        off += row;
    }
    norm * (m as f64 + 2.0 * off)
}

/// Test-test Gram sum `c_bar`; only needed to report the full divergence.
pub fn test_self_sum(test: ArrayView2<'_, f64>, h: f64) -> f64 {
    gram_self_sum(test, h)
}

/// Train-train statistics, computable once per training set.
#[derive(Debug, Clone, PartialEq)]
pub struct CsTrainStats {
    classes: Vec<Array2<f64>>,
    b_bar: Array2<f64>,
    bandwidth: f64,
}

impl CsTrainStats {
    pub fn new(classes: Vec<Array2<f64>>, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(QuantError::NonPositiveBandwidth(bandwidth));
        }
        if let Some(i) = classes.iter().position(|c| c.nrows() == 0) {
            return Err(QuantError::EmptyClass(i));
        }
        let n = classes.len();
        if n == 0 {
            return Err(QuantError::EmptyReferenceSet);
        }
        let d = classes[0].ncols();
        for c in &classes {
            if c.ncols() != d {
                return Err(QuantError::DimensionMismatch {
                    expected: d,
                    found: c.ncols(),
                });
            }
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
        let sums: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                if i == j {
                    gram_self_sum(classes[i].view(), bandwidth)
                } else {
                    gram_sum(classes[i].view(), classes[j].view(), bandwidth)
                }
            })
            .collect();
        let mut b_bar = Array2::zeros((n, n));
        for (&(i, j), &s) in pairs.iter().zip(&sums) {
            b_bar[[i, j]] = s;
            b_bar[[j, i]] = s;
        }
        Ok(Self {
            classes,
            b_bar,
            bandwidth,
        })
    }

    pub fn b_bar(&self) -> &Array2<f64> {
        &self.b_bar
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Completes the statistics with a test bag.
    pub fn with_test(&self, test: ArrayView2<'_, f64>) -> Result<CsPrecomputation> {
        if test.nrows() == 0 {
            return Err(QuantError::EmptyReferenceSet);
        }
        let d = self.classes[0].ncols();
        if test.ncols() != d {
            return Err(QuantError::DimensionMismatch {
                expected: d,
                found: test.ncols(),
            });
        }
        let a_bar = self
            .classes
            .iter()
            .map(|c| gram_sum(c.view(), test, self.bandwidth))
            .collect();
        Ok(CsPrecomputation {
            a_bar,
            b_bar: self.b_bar.clone(),
            class_sizes: self.classes.iter().map(|c| c.nrows()).collect(),
            t: 1.0 / test.nrows() as f64,
        })
    }
}

/// Everything the CS objective needs for one (training set, test bag) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CsPrecomputation {
    pub a_bar: Vec<f64>,
    pub b_bar: Array2<f64>,
    pub class_sizes: Vec<usize>,
    /// `1 / |U|`
    pub t: f64,
}

/// Gram statistics for per-class reference points and a test bag.
pub fn cs_precompute(
    classes: &[ArrayView2<'_, f64>],
    test: ArrayView2<'_, f64>,
    h: f64,
) -> Result<CsPrecomputation> {
    CsTrainStats::new(classes.iter().map(|c| c.to_owned()).collect(), h)?.with_test(test)
}

/// `-ln(r.a t) + 1/2 ln(r' B r)` with `r_i = alpha_i / |L_i|`.
pub fn cs_objective(pre: &CsPrecomputation, alpha: &Prevalence) -> Result<f64> {
    if alpha.len() != pre.a_bar.len() {
        return Err(QuantError::LengthMismatch {
            left: alpha.len(),
            right: pre.a_bar.len(),
        });
    }
    cs_objective_raw(pre, alpha.as_slice())
}

pub(crate) fn cs_objective_raw(pre: &CsPrecomputation, alpha: &[f64]) -> Result<f64> {
    let n = alpha.len();
    let r: Vec<f64> = alpha
        .iter()
        .zip(&pre.class_sizes)
        .map(|(a, &s)| a / s as f64)
        .collect();
    let cross: f64 = r.iter().zip(&pre.a_bar).map(|(r, a)| r * a).sum::<f64>() * pre.t;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += r[i] * pre.b_bar[[i, j]] * r[j];
        }
    }
    if !(cross > 0.0) || !(quad > 0.0) || !cross.is_finite() || !quad.is_finite() {
        return Err(QuantError::DegenerateGram(format!(
            "cross term {cross:e}, quadratic term {quad:e}; the bandwidth is likely too small"
        )));
    }
    Ok(-cross.ln() + 0.5 * quad.ln())
}

/// Full divergence, restoring the constant `1/2 ln(t^2 c_bar)` term.
pub fn cs_divergence(pre: &CsPrecomputation, alpha: &Prevalence, c_bar: f64) -> Result<f64> {
    let constant = pre.t * pre.t * c_bar;
    if !(constant > 0.0) {
        return Err(QuantError::DegenerateGram(format!("test self term {c_bar:e}")));
    }
    Ok(cs_objective(pre, alpha)? + 0.5 * constant.ln())
}
