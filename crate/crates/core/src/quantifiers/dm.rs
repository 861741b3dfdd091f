//! Multiclass distribution matching on class-wise posterior histograms.

use super::{check_classes, split_by_class, Aggregation};
use crate::data::Posteriors;
use crate::density::{histogram_of_bag, HistogramLayout, Histograms};
use crate::divergence::discrete::{check_shapes, dm_loss_unchecked};
use crate::divergence::DiscreteDivergence;
use crate::error::{QuantError, Result};
use crate::optim::{minimize_on_simplex, OptimizerConfig};
use crate::prevalence::Prevalence;

/// Prevalence minimising the histogram distribution-matching loss.
pub fn dm_quantify(
    train: &[Histograms],
    test: &Histograms,
    divergence: DiscreteDivergence,
    optimizer: &OptimizerConfig,
) -> Result<Prevalence> {
    let n = train.len();
    check_shapes(train, test, &Prevalence::uniform(n.max(1)))?;
    let (alpha, _) = minimize_on_simplex(
        |a| dm_loss_unchecked(train, test, a, divergence),
        n,
        optimizer,
    )?;
    Ok(alpha)
}

#[derive(Debug, Clone)]
pub struct DistributionMatching {
    bins: usize,
    divergence: DiscreteDivergence,
    layout: HistogramLayout,
    optimizer: OptimizerConfig,
    train: Vec<Histograms>,
}

impl DistributionMatching {
    pub fn new(
        bins: usize,
        divergence: DiscreteDivergence,
        layout: HistogramLayout,
        optimizer: OptimizerConfig,
    ) -> Self {
        Self {
            bins,
            divergence,
            layout,
            optimizer,
            train: Vec::new(),
        }
    }

    /// Per-class training histograms.
    pub fn train_histograms(&self) -> &[Histograms] {
        &self.train
    }

    /// Loss of `alpha` against a test bag, as minimised by [`Aggregation::aggregate`].
    pub fn loss(&self, posteriors: &Posteriors, alpha: &Prevalence) -> Result<f64> {
        let test = histogram_of_bag(posteriors, self.bins, self.layout)?;
        crate::divergence::dm_loss(&self.train, &test, alpha, self.divergence)
    }
}

impl Aggregation for DistributionMatching {
    fn name(&self) -> String {
        match self.divergence {
            DiscreteDivergence::HellingerSquared => "DM-HD",
            DiscreteDivergence::Topsoe => "DM-T",
            DiscreteDivergence::CauchySchwarz => "DM-CS",
        }
        .into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()> {
        self.train = split_by_class(posteriors, labels, n_classes)?
            .iter()
            .map(|p| histogram_of_bag(p, self.bins, self.layout))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        if self.train.is_empty() {
            return Err(QuantError::NotFitted);
        }
        check_classes(posteriors, self.train.len())?;
        let test = histogram_of_bag(posteriors, self.bins, self.layout)?;
        dm_quantify(&self.train, &test, self.divergence, &self.optimizer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::histogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three classes whose posterior columns concentrate in different bins.
    fn class_histograms(layout: HistogramLayout) -> Vec<Histograms> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..3)
            .map(|c| {
                let cols = (0..3)
                    .map(|j| {
                        let centre = if j == c { 0.8 } else { 0.1 };
                        let vals: Vec<f64> =
                            (0..200).map(|_| (centre + rng.random_range(-0.1..0.1f64)).clamp(0.0, 1.0)).collect();
                        histogram(vals, 10)
                    })
                    .collect();
                Histograms::new(cols, 10, layout).unwrap()
            })
            .collect()
    }

    fn exact_mixture(train: &[Histograms], alpha: &[f64]) -> Histograms {
        let cols = (0..3)
            .map(|j| {
                (0..10)
                    .map(|b| (0..3).map(|i| alpha[i] * train[i].per_class()[j][b]).sum())
                    .collect()
            })
            .collect();
        Histograms::new(cols, 10, train[0].layout()).unwrap()
    }

    #[test]
    fn vertex_recovered() {
        let train = class_histograms(HistogramLayout::Averaged);
        let alpha = dm_quantify(
            &train,
            &train[0],
            DiscreteDivergence::HellingerSquared,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((alpha[0] - 1.0).abs() < 1e-3, "{alpha:?}");
    }

    #[test]
    fn interior_mixture_recovered() {
        for layout in [HistogramLayout::Averaged, HistogramLayout::Concatenated] {
            let train = class_histograms(layout);
            let truth = [0.5, 0.3, 0.2];
            let test = exact_mixture(&train, &truth);
            for div in [
                DiscreteDivergence::HellingerSquared,
                DiscreteDivergence::Topsoe,
                DiscreteDivergence::CauchySchwarz,
            ] {
                let alpha = dm_quantify(&train, &test, div, &OptimizerConfig::default()).unwrap();
                for (a, t) in alpha.as_slice().iter().zip(truth) {
                    assert!((a - t).abs() < 1e-3, "{div:?} {layout:?}: {alpha:?}");
                }
            }
        }
    }

    #[test]
    fn hd_and_topsoe_roughly_agree() {
        let train = class_histograms(HistogramLayout::Averaged);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // A smooth but not exactly representable test histogram.
        let truth = [0.3, 0.45, 0.25];
        let mixed = exact_mixture(&train, &truth);
        let cols = mixed
            .per_class()
            .iter()
            .map(|h| {
                let noisy: Vec<f64> = h.iter().map(|v| v + rng.random_range(0.0..0.01)).collect();
                let s: f64 = noisy.iter().sum();
                noisy.iter().map(|v| v / s).collect()
            })
            .collect();
        let test = Histograms::new(cols, 10, HistogramLayout::Averaged).unwrap();
        let cfg = OptimizerConfig::default();
        let hd = dm_quantify(&train, &test, DiscreteDivergence::HellingerSquared, &cfg).unwrap();
        let t = dm_quantify(&train, &test, DiscreteDivergence::Topsoe, &cfg).unwrap();
        assert!(hd.l1_distance(&t) < 0.05);
    }
}
