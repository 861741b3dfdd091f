//! DIR: class-conditional Dirichlet models of the posteriors, mixed by
//! maximum likelihood.

use statrs::function::gamma::{digamma, ln_gamma};

use super::kdey::MlProblem;
use super::{check_classes, split_by_class, Aggregation};
use crate::data::Posteriors;
use crate::error::{QuantError, Result};
use crate::optim::OptimizerConfig;
use crate::prevalence::Prevalence;

/// Posterior coordinates are clipped into `[DIR_CLIP, 1 - DIR_CLIP]`.
pub const DIR_CLIP: f64 = 1e-4;

const MAX_ITER: usize = 10_000;
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletFit {
    pub params: Vec<f64>,
    /// False when the fixed point did not settle; `params` then hold the
    /// method-of-moments estimate.
    pub converged: bool,
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + x2 / x * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

fn inverse_digamma(y: f64) -> f64 {
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y - digamma(1.0))
    };
    for _ in 0..8 {
        x -= (digamma(x) - y) / trigamma(x);
        if x <= 0.0 {
            x = f64::MIN_POSITIVE.sqrt();
        }
    }
    x
}

fn clip_rows(posteriors: &Posteriors) -> Vec<Vec<f64>> {
    posteriors
        .view()
        .outer_iter()
        .map(|row| {
            let clipped: Vec<f64> = row.iter().map(|v| v.clamp(DIR_CLIP, 1.0 - DIR_CLIP)).collect();
            let s: f64 = clipped.iter().sum();
            clipped.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn moments(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows[0].len();
    let m = rows.len() as f64;
    let mean: Vec<f64> = (0..n).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m).collect();
    let second: Vec<f64> = (0..n).map(|k| rows.iter().map(|r| r[k] * r[k]).sum::<f64>() / m).collect();
    // Precision estimated per coordinate and averaged.
    let mut precisions = Vec::new();
    for k in 0..n {
        let var = second[k] - mean[k] * mean[k];
        if var > 0.0 {
            let s = mean[k] * (1.0 - mean[k]) / var - 1.0;
            if s.is_finite() && s > 0.0 {
                precisions.push(s);
            }
        }
    }
    let s = if precisions.is_empty() {
        n as f64
    } else {
        precisions.iter().sum::<f64>() / precisions.len() as f64
    };
    mean.iter().map(|mk| (mk * s).max(1e-6)).collect()
}

#[cfg(test)]
fn mean_log_likelihood(params: &[f64], mean_logs: &[f64]) -> f64 {
    let total: f64 = params.iter().sum();
    ln_gamma(total) - params.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + params.iter().zip(mean_logs).map(|(a, l)| (a - 1.0) * l).sum::<f64>()
}

/// Maximum-likelihood Dirichlet fit of clipped posterior rows.
pub fn dir_fit_class(posteriors: &Posteriors) -> Result<DirichletFit> {
    if posteriors.n_rows() < 2 {
        return Err(QuantError::TooFewExamples(format!(
            "Dirichlet fit needs at least 2 rows, got {}",
            posteriors.n_rows()
        )));
    }
    let rows = clip_rows(posteriors);
    let n = rows[0].len();
    let m = rows.len() as f64;
    let mean_logs: Vec<f64> = (0..n)
        .map(|k| rows.iter().map(|r| r[k].ln()).sum::<f64>() / m)
        .collect();
    let start = moments(&rows);
    let mut params = start.clone();
    for _ in 0..MAX_ITER {
        let psi_total = digamma(params.iter().sum());
        let next: Vec<f64> = mean_logs.iter().map(|l| inverse_digamma(psi_total + l)).collect();
        let change = next
            .iter()
            .zip(&params)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        params = next;
        if !params.iter().all(|a| a.is_finite() && *a > 0.0) {
            break;
        }
        if change < TOL {
            return Ok(DirichletFit {
                params,
                converged: true,
            });
        }
    }
    log::warn!("Dirichlet fixed point did not converge; using moment estimate");
    Ok(DirichletFit {
        params: start,
        converged: false,
    })
}

/// Log-density of a Dirichlet at a point in the open simplex.
pub fn dirichlet_log_pdf(params: &[f64], x: &[f64]) -> f64 {
    let total: f64 = params.iter().sum();
    ln_gamma(total) - params.iter().map(|&a| ln_gamma(a)).sum::<f64>()
        + params.iter().zip(x).map(|(a, v)| (a - 1.0) * v.ln()).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct DirichletMl {
    optimizer: OptimizerConfig,
    fits: Vec<DirichletFit>,
}

impl DirichletMl {
    pub fn new(optimizer: OptimizerConfig) -> Self {
        Self {
            optimizer,
            fits: Vec::new(),
        }
    }

    pub fn fits(&self) -> &[DirichletFit] {
        &self.fits
    }
}

impl Aggregation for DirichletMl {
    fn name(&self) -> String {
        "DIR".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        self.fits = split_by_class(posteriors, labels, n_classes)?
            .iter()
            .map(dir_fit_class)
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        if self.fits.is_empty() {
            return Err(QuantError::NotFitted);
        }
        check_classes(posteriors, self.fits.len())?;
        let rows = clip_rows(posteriors);
        let logs: Vec<Vec<f64>> = self
            .fits
            .iter()
            .map(|f| rows.iter().map(|r| dirichlet_log_pdf(&f.params, r)).collect())
            .collect();
        MlProblem::new(&logs).solve(&self.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma};

    fn sample(params: &[f64], m: usize, seed: u64) -> Posteriors {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gammas: Vec<Gamma<f64>> = params.iter().map(|&a| Gamma::new(a, 1.0).unwrap()).collect();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let g: Vec<f64> = gammas.iter().map(|d| d.sample(&mut rng)).collect();
                let s: f64 = g.iter().sum();
                g.into_iter().map(|v| v / s).collect()
            })
            .collect();
        Posteriors::from_rows(&rows).unwrap()
    }

    #[test]
    fn trigamma_matches_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        assert!((trigamma(0.5) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-11);
        // Finite difference of digamma.
        for x in [0.3, 2.5, 11.0] {
            let fd = (digamma(x + 1e-5) - digamma(x - 1e-5)) / 2e-5;
            assert!((trigamma(x) - fd).abs() < 1e-6 * fd.abs());
        }
    }

    #[test]
    fn inverse_digamma_round_trips() {
        for x in [1e-3, 0.1, 1.0, 4.2, 150.0] {
            assert!((inverse_digamma(digamma(x)) - x).abs() < 1e-9 * x.max(1.0));
        }
    }

    #[test]
    fn recovers_known_parameters() {
        let truth = [2.0, 5.0, 3.0];
        let fit = dir_fit_class(&sample(&truth, 10_000, 7)).unwrap();
        assert!(fit.converged);
        for (a, t) in fit.params.iter().zip(truth) {
            assert!((a - t).abs() / t < 0.1, "{:?}", fit.params);
        }
    }

    #[test]
    fn symmetric_data_gives_symmetric_parameters() {
        let fit = dir_fit_class(&sample(&[50.0, 50.0, 50.0], 2_000, 3)).unwrap();
        let mean = fit.params.iter().sum::<f64>() / 3.0;
        for a in &fit.params {
            assert!((a - mean).abs() / mean < 0.05, "{:?}", fit.params);
        }
    }

    #[test]
    fn fit_does_not_decrease_likelihood() {
        let post = sample(&[0.7, 1.5, 4.0], 500, 11);
        let rows = clip_rows(&post);
        let m = rows.len() as f64;
        let mean_logs: Vec<f64> = (0..3).map(|k| rows.iter().map(|r| r[k].ln()).sum::<f64>() / m).collect();
        let fit = dir_fit_class(&post).unwrap();
        assert!(mean_log_likelihood(&fit.params, &mean_logs) >= mean_log_likelihood(&moments(&rows), &mean_logs));
    }

    #[test]
    fn log_pdf_of_flat_dirichlet() {
        // Dirichlet(1,1,1) has density 2 everywhere on the 2-simplex.
        assert!((dirichlet_log_pdf(&[1.0, 1.0, 1.0], &[0.2, 0.3, 0.5]) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        let post = Posteriors::from_rows(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(dir_fit_class(&post), Err(QuantError::TooFewExamples(_))));
    }

    #[test]
    fn mixture_of_dirichlets_is_recovered() {
        let a = sample(&[8.0, 2.0], 400, 1);
        let b = sample(&[2.0, 8.0], 400, 2);
        let mut rows: Vec<Vec<f64>> = a.view().outer_iter().map(|r| r.to_vec()).collect();
        rows.extend(b.view().outer_iter().map(|r| r.to_vec()));
        let labels: Vec<usize> = (0..800).map(|i| usize::from(i >= 400)).collect();
        let train = Posteriors::from_rows(&rows).unwrap();
        let mut dir = DirichletMl::new(OptimizerConfig::default());
        dir.fit(&train, &labels, 2).unwrap();
        let test_rows: Vec<Vec<f64>> = rows[..300].iter().chain(&rows[400..500]).cloned().collect();
        let est = dir.aggregate(&Posteriors::from_rows(&test_rows).unwrap()).unwrap();
        assert!((est[0] - 0.75).abs() < 0.05, "{est:?}");
    }
}
