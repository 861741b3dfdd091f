//! Expectation-maximisation re-estimation of priors and posteriors.

use super::{check_classes, Aggregation};
use crate::data::{prevalence_of_labels, Posteriors};
use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;

pub const EMQ_TOL: f64 = 1e-6;
pub const EMQ_MAX_ITER: usize = 1_000;
const PRIOR_FLOOR: f64 = 1e-12;

/// Alternates rescaling the posteriors by `alpha / prior` (E-step) and
/// setting `alpha` to their mean (M-step) until the infinity-norm change
/// drops below `tol`. Always returns the last iterate.
pub fn emq_quantify(
    training_prior: &Prevalence,
    posteriors: &Posteriors,
    max_iter: usize,
    tol: f64,
) -> Result<Prevalence> {
    let n = training_prior.len();
    check_classes(posteriors, n)?;
    if posteriors.n_rows() == 0 {
        return Err(QuantError::TooFewExamples("empty posterior matrix".into()));
    }
    let prior = Prevalence::from_weights(
        training_prior
            .as_slice()
            .iter()
            .map(|&p| p.max(PRIOR_FLOOR))
            .collect(),
    )?;
    let prior = prior.as_slice();
    let rows = posteriors.n_rows() as f64;
    let mut alpha = prior.to_vec();
    let mut scaled = vec![0.0; n];
    for _ in 0..max_iter {
        let ratio: Vec<f64> = alpha.iter().zip(prior).map(|(a, p)| a / p).collect();
        let mut next = vec![0.0; n];
        for row in posteriors.view().outer_iter() {
            let mut sum = 0.0;
            for ((s, &p), &r) in scaled.iter_mut().zip(row.iter()).zip(&ratio) {
                *s = p * r;
                sum += *s;
            }
            if sum > 0.0 {
                for (acc, s) in next.iter_mut().zip(&scaled) {
                    *acc += s / sum;
                }
            }
        }
        for v in next.iter_mut() {
            *v /= rows;
        }
        let change = next
            .iter()
            .zip(&alpha)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        alpha = next;
        if change < tol {
            break;
        }
    }
    Prevalence::from_weights(alpha)
}

#[derive(Debug, Clone)]
pub struct Emq {
    max_iter: usize,
    tol: f64,
    prior: Option<Prevalence>,
}

impl Default for Emq {
    fn default() -> Self {
        Self {
            max_iter: EMQ_MAX_ITER,
            tol: EMQ_TOL,
            prior: None,
        }
    }
}

impl Emq {
    pub fn new(max_iter: usize, tol: f64) -> Self {
        Self {
            max_iter,
            tol,
            prior: None,
        }
    }
}

impl Aggregation for Emq {
    fn name(&self) -> String {
        "EMQ".into()
    }

    fn fit(&mut self, _posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        self.prior = Some(prevalence_of_labels(labels, n_classes)?);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let prior = self.prior.as_ref().ok_or(QuantError::NotFitted)?;
        emq_quantify(prior, posteriors, self.max_iter, self.tol)
    }
}
