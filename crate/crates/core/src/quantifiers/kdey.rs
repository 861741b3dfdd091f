//! Quantifiers that model each class's posteriors with a Gaussian KDE.
//!
//! * [`KdeyHd`] matches the mixture to the test KDE under the squared
//!   Hellinger distance, estimated by importance sampling from the
//!   uniform-prevalence mixture. Samples and per-class densities at them are
//!   computed once at fit time, so evaluating a candidate prevalence is a
//!   matrix-vector product.
//! * [`KdeyCs`] matches under the Cauchy-Schwarz divergence, which has a
//!   closed form for Gaussian mixtures.
//! * [`KdeyMl`] maximises the likelihood of the test posteriors under the
//!   mixture.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_classes, split_by_class, Aggregation};
use crate::data::Posteriors;
use crate::density::{Kde, KdeMixture};
use crate::divergence::cauchy_schwarz::cs_objective_raw;
use crate::divergence::{CsPrecomputation, CsTrainStats};
use crate::error::{QuantError, Result};
use crate::optim::{minimize_on_simplex, OptimizerConfig};
use crate::prevalence::Prevalence;

fn class_kdes(posteriors: &Posteriors, labels: &[usize], n: usize, h: f64) -> Result<Vec<Kde>> {
    split_by_class(posteriors, labels, n)?
        .iter()
        .map(|p| Kde::from_posteriors(p, h))
        .collect()
}

/// Per-row log-densities shifted by the row maximum, so that the mixture
/// likelihood can be evaluated without leaving linear space.
#[derive(Debug, Clone)]
pub(crate) struct MlProblem {
    n: usize,
    scaled: Vec<f64>,
    offset: f64,
}

impl MlProblem {
    /// `log_densities[c][x]` is the log-density of class `c` at row `x`.
    #[allow(clippy::needless_range_loop)]
    pub(crate) fn new(log_densities: &[Vec<f64>]) -> Self {
        let n = log_densities.len();
        let rows = log_densities[0].len();
        let mut scaled = Vec::with_capacity(rows * n);
        let mut offset = 0.0;
        for x in 0..rows {
            let max = (0..n).map(|c| log_densities[c][x]).fold(f64::NEG_INFINITY, f64::max);
            offset += max;
            scaled.extend((0..n).map(|c| (log_densities[c][x] - max).exp()));
        }
        Self { n, scaled, offset }
    }

    /// `-sum_x ln sum_i alpha_i p_i(x)`
    pub(crate) fn nll(&self, alpha: &[f64]) -> f64 {
        let mut total = 0.0;
        for row in self.scaled.chunks_exact(self.n) {
            let mix: f64 = row.iter().zip(alpha).map(|(p, a)| p * a).sum();
            total += mix.ln();
        }
        -(total + self.offset)
    }

    pub(crate) fn solve(&self, optimizer: &OptimizerConfig) -> Result<Prevalence> {
        Ok(minimize_on_simplex(|a| self.nll(a), self.n, optimizer)?.0)
    }
}

fn ml_problem(kdes: &[Kde], test: &Posteriors) -> Result<MlProblem> {
    let logs = kdes
        .iter()
        .map(|k| k.log_densities(test.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MlProblem::new(&logs))
}

/// Maximum-likelihood mixture weights of the class KDEs for `test`.
pub fn kdey_ml_quantify(kdes: &[Kde], test: &Posteriors, optimizer: &OptimizerConfig) -> Result<Prevalence> {
    if kdes.is_empty() {
        return Err(QuantError::EmptyReferenceSet);
    }
    if test.view().iter().any(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite("test posteriors".into()));
    }
    ml_problem(kdes, test)?.solve(optimizer)
}

/// Negative log-likelihood of `test` under the `alpha`-mixture of `kdes`.
pub fn ml_negative_log_likelihood(kdes: &[Kde], test: &Posteriors, alpha: &Prevalence) -> Result<f64> {
    if kdes.len() != alpha.len() {
        return Err(QuantError::LengthMismatch {
            left: kdes.len(),
            right: alpha.len(),
        });
    }
    Ok(ml_problem(kdes, test)?.nll(alpha.as_slice()))
}

/// Minimises the closed-form CS objective.
pub fn kdey_cs_quantify(pre: &CsPrecomputation, optimizer: &OptimizerConfig) -> Result<Prevalence> {
    let n = pre.a_bar.len();
    // Surface degenerate statistics instead of letting the optimiser hide them.
    cs_objective_raw(pre, Prevalence::uniform(n).as_slice())?;
    let objective = |a: &[f64]| cs_objective_raw(pre, a).unwrap_or(f64::INFINITY);
    Ok(minimize_on_simplex(objective, n, optimizer)?.0)
}

#[derive(Debug, Clone)]
pub struct KdeyMl {
    bandwidth: f64,
    optimizer: OptimizerConfig,
    kdes: Vec<Kde>,
}

impl KdeyMl {
    pub fn new(bandwidth: f64, optimizer: OptimizerConfig) -> Self {
        Self {
            bandwidth,
            optimizer,
            kdes: Vec::new(),
        }
    }

    pub fn class_kdes(&self) -> &[Kde] {
        &self.kdes
    }

    pub fn negative_log_likelihood(&self, posteriors: &Posteriors, alpha: &Prevalence) -> Result<f64> {
        ml_negative_log_likelihood(&self.kdes, posteriors, alpha)
    }
}

impl Aggregation for KdeyMl {
    fn name(&self) -> String {
        "KDEy-ML".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        self.kdes = class_kdes(posteriors, labels, n_classes, self.bandwidth)?;
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        if self.kdes.is_empty() {
            return Err(QuantError::NotFitted);
        }
        check_classes(posteriors, self.kdes.len())?;
        kdey_ml_quantify(&self.kdes, posteriors, &self.optimizer)
    }
}

#[derive(Debug, Clone)]
pub struct KdeyCs {
    bandwidth: f64,
    optimizer: OptimizerConfig,
    stats: Option<CsTrainStats>,
}

impl KdeyCs {
    pub fn new(bandwidth: f64, optimizer: OptimizerConfig) -> Self {
        Self {
            bandwidth,
            optimizer,
            stats: None,
        }
    }

    pub fn train_stats(&self) -> Option<&CsTrainStats> {
        self.stats.as_ref()
    }
}

impl Aggregation for KdeyCs {
    fn name(&self) -> String {
        "KDEy-CS".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        let classes = split_by_class(posteriors, labels, n_classes)?
            .into_iter()
            .map(Posteriors::into_inner)
            .collect();
        self.stats = Some(CsTrainStats::new(classes, self.bandwidth)?);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let stats = self.stats.as_ref().ok_or(QuantError::NotFitted)?;
        check_classes(posteriors, stats.n_classes())?;
        kdey_cs_quantify(&stats.with_test(posteriors.view())?, &self.optimizer)
    }
}

/// Importance samples drawn from the uniform-prevalence mixture, with the
/// per-class densities at each sample.
#[derive(Debug, Clone)]
pub struct HdPresample {
    samples: Array2<f64>,
    /// `class_densities[[i, j]] = p_j(x_i)`
    class_densities: Array2<f64>,
    reference: Vec<f64>,
}

impl HdPresample {
    pub fn new(kdes: &[Kde], trials: usize, seed: u64) -> Result<Self> {
        if trials == 0 {
            return Err(QuantError::InvalidArgument("need at least one Monte Carlo trial".into()));
        }
        let n = kdes.len();
        let uniform = KdeMixture::new(kdes.to_vec(), Prevalence::uniform(n))?;
        let samples = uniform.sample(trials, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut class_densities = Array2::zeros((trials, n));
        for (j, kde) in kdes.iter().enumerate() {
            let logs = kde.log_densities(samples.view())?;
            for (i, l) in logs.into_iter().enumerate() {
                class_densities[[i, j]] = l.exp();
            }
        }
        let reference = class_densities
            .outer_iter()
            .map(|row| row.sum() / n as f64)
            .collect();
        Ok(Self {
            samples,
            class_densities,
            reference,
        })
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn class_densities(&self) -> ArrayView2<'_, f64> {
        self.class_densities.view()
    }

    pub fn reference_densities(&self) -> &[f64] {
        &self.reference
    }

    /// `p_alpha` at every sample, i.e. `M alpha`.
    pub fn mixture_densities(&self, alpha: &[f64]) -> Vec<f64> {
        self.class_densities
            .outer_iter()
            .map(|row| row.iter().zip(alpha).map(|(p, a)| p * a).sum())
            .collect()
    }

    /// Squared-Hellinger estimate for each candidate `alpha` given the test
    /// density at the samples: `1/t sum (sqrt(p_alpha) - sqrt(q))^2 / r`.
    fn objective(&self, test_densities: &[f64]) -> impl Fn(&[f64]) -> f64 + '_ {
        let sqrt_q: Vec<f64> = test_densities.iter().map(|q| q.sqrt()).collect();
        let inv_r: Vec<f64> = self.reference.iter().map(|r| 1.0 / r.max(f64::MIN_POSITIVE)).collect();
        let t = self.reference.len() as f64;
        move |alpha: &[f64]| {
            let mut total = 0.0;
            for ((row, sq), ir) in self.class_densities.outer_iter().zip(&sqrt_q).zip(&inv_r) {
                let p: f64 = row.iter().zip(alpha).map(|(d, a)| d * a).sum();
                let diff = p.sqrt() - sq;
                total += diff * diff * ir;
            }
            total / t
        }
    }
}

/// One-shot KDEy-HD: presample with `seed`, then match the test KDE.
pub fn kdey_hd_quantify(
    kdes: &[Kde],
    test: &Posteriors,
    trials: usize,
    seed: u64,
    optimizer: &OptimizerConfig,
) -> Result<Prevalence> {
    let presample = HdPresample::new(kdes, trials, seed)?;
    hd_with_presample(&presample, kdes[0].bandwidth(), test, optimizer)
}

fn hd_with_presample(
    presample: &HdPresample,
    bandwidth: f64,
    test: &Posteriors,
    optimizer: &OptimizerConfig,
) -> Result<Prevalence> {
    let n = presample.class_densities.ncols();
    let q = Kde::from_posteriors(test, bandwidth)?;
    let q_at: Vec<f64> = q
        .log_densities(presample.samples.view())?
        .into_iter()
        .map(f64::exp)
        .collect();
    let objective = presample.objective(&q_at);
    Ok(minimize_on_simplex(objective, n, optimizer)?.0)
}

#[derive(Debug, Clone)]
pub struct KdeyHd {
    bandwidth: f64,
    trials: usize,
    seed: u64,
    optimizer: OptimizerConfig,
    presample: Option<HdPresample>,
}

impl KdeyHd {
    pub const DEFAULT_TRIALS: usize = 10_000;

    pub fn new(bandwidth: f64, trials: usize, seed: u64, optimizer: OptimizerConfig) -> Self {
        Self {
            bandwidth,
            trials,
            seed,
            optimizer,
            presample: None,
        }
    }

    pub fn presample(&self) -> Option<&HdPresample> {
        self.presample.as_ref()
    }

    /// The importance-sampling estimate of `HD^2(p_alpha || q)` for a bag.
    pub fn divergence(&self, posteriors: &Posteriors, alpha: &Prevalence) -> Result<f64> {
        let presample = self.presample.as_ref().ok_or(QuantError::NotFitted)?;
        let q = Kde::from_posteriors(posteriors, self.bandwidth)?;
        let q_at: Vec<f64> = q
            .log_densities(presample.samples.view())?
            .into_iter()
            .map(f64::exp)
            .collect();
        Ok(presample.objective(&q_at)(alpha.as_slice()))
    }
}

impl Aggregation for KdeyHd {
    fn name(&self) -> String {
        "KDEy-HD".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        let kdes = class_kdes(posteriors, labels, n_classes, self.bandwidth)?;
        self.presample = Some(HdPresample::new(&kdes, self.trials, self.seed)?);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let presample = self.presample.as_ref().ok_or(QuantError::NotFitted)?;
        check_classes(posteriors, presample.class_densities.ncols())?;
        hd_with_presample(presample, self.bandwidth, posteriors, &self.optimizer)
    }
}
