use serde::{Deserialize, Serialize};

use crate::density::{HistogramLayout, Histograms};
use crate::error::{QuantError, Result};
use crate::prevalence::{Prevalence, INPUT_TOL};

/// Divergence used to compare histograms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiscreteDivergence {
    /// Squared Hellinger distance, `1 - sum sqrt(p q)`.
    #[serde(rename = "hd")]
    HellingerSquared,
    /// Twice the Jensen-Shannon divergence, in nats.
    #[serde(rename = "topsoe")]
    Topsoe,
    /// `-ln(<p, q> / (|p| |q|))`.
    #[serde(rename = "cs")]
    CauchySchwarz,
}

impl DiscreteDivergence {
    pub(crate) fn eval(self, p: &[f64], q: &[f64]) -> f64 {
        match self {
            Self::HellingerSquared => hd2_raw(p, q),
            Self::Topsoe => topsoe_raw(p, q),
            Self::CauchySchwarz => cs_raw(p, q),
        }
    }
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(QuantError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    for v in [p, q] {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > INPUT_TOL || v.iter().any(|&x| x < 0.0) {
            return Err(QuantError::NotASimplexPoint(format!("distribution sums to {s}")));
        }
    }
    Ok(())
}

fn hd2_raw(p: &[f64], q: &[f64]) -> f64 {
    let bc: f64 = p.iter().zip(q).map(|(a, b)| (a * b).sqrt()).sum();
    (1.0 - bc).max(0.0)
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        x * (x / y).ln()
    } else {
        0.0
    }
}

fn topsoe_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            xlogy_ratio(a, m) + xlogy_ratio(b, m)
        })
        .sum::<f64>()
        .max(0.0)
}

fn cs_raw(p: &[f64], q: &[f64]) -> f64 {
    let pq: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|a| a * a).sum();
    let qq: f64 = q.iter().map(|a| a * a).sum();
    (-(pq.max(1e-300) / (pp * qq).sqrt()).ln()).max(0.0)
}

/// Squared Hellinger distance between two discrete distributions.
pub fn hd2_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(hd2_raw(p, q))
}

/// Topsoe distance (twice Jensen-Shannon, natural log).
pub fn topsoe_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(topsoe_raw(p, q))
}

/// Cauchy-Schwarz divergence between two discrete vectors.
pub fn cs_discrete(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(cs_raw(p, q))
}

/// Distribution-matching loss between the `alpha`-mixture of the per-class
/// training histograms and the test histograms.
///
/// `train[i]` holds the histograms of the posteriors of training class `i`
/// (one histogram per posterior column).
pub fn dm_loss(
    train: &[Histograms],
    test: &Histograms,
    alpha: &Prevalence,
    divergence: DiscreteDivergence,
) -> Result<f64> {
    check_shapes(train, test, alpha)?;
    Ok(dm_loss_unchecked(train, test, alpha.as_slice(), divergence))
}

pub(crate) fn check_shapes(train: &[Histograms], test: &Histograms, alpha: &Prevalence) -> Result<()> {
    let n = test.n_classes();
    if train.len() != alpha.len() {
        return Err(QuantError::ShapeMismatch(format!(
            "{} training classes but prevalence of length {}",
            train.len(),
            alpha.len()
        )));
    }
    for h in train {
        if h.bins() != test.bins() || h.n_classes() != n || h.layout() != test.layout() {
            return Err(QuantError::ShapeMismatch(
                "training and test histograms disagree on bins, columns or layout".into(),
            ));
        }
    }
    Ok(())
}

pub(crate) fn dm_loss_unchecked(
    train: &[Histograms],
    test: &Histograms,
    alpha: &[f64],
    divergence: DiscreteDivergence,
) -> f64 {
    let columns = test.n_classes();
    let bins = test.bins();
    let mixture = |col: usize, bin: usize| -> f64 {
        train
            .iter()
            .zip(alpha)
            .map(|(h, a)| a * h.per_class()[col][bin])
            .sum()
    };
    match test.layout() {
        HistogramLayout::Averaged => {
            let mut mix = vec![0.0; bins];
            let mut total = 0.0;
            for col in 0..columns {
                for (bin, m) in mix.iter_mut().enumerate() {
                    *m = mixture(col, bin);
                }
                total += divergence.eval(&mix, &test.per_class()[col]);
            }
            total / columns as f64
        }
        HistogramLayout::Concatenated => {
            let scale = 1.0 / columns as f64;
            let mut mix = Vec::with_capacity(columns * bins);
            let mut target = Vec::with_capacity(columns * bins);
            for col in 0..columns {
                for bin in 0..bins {
                    mix.push(scale * mixture(col, bin));
                    target.push(scale * test.per_class()[col][bin]);
                }
            }
            divergence.eval(&mix, &target)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::histogram;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hist(rng: &mut ChaCha8Rng, bins: usize) -> Vec<f64> {
        let values: Vec<f64> = (0..40).map(|_| rng.random::<f64>().powi(2)).collect();
        histogram(values, bins)
    }

    fn random_hists(rng: &mut ChaCha8Rng, n: usize, bins: usize, layout: HistogramLayout) -> Histograms {
        Histograms::new((0..n).map(|_| random_hist(rng, bins)).collect(), bins, layout).unwrap()
    }

    #[test]
    fn hd2_examples() {
        assert_eq!(hd2_discrete(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((hd2_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let v = hd2_discrete(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - (1.0 - 0.5f64.sqrt())).abs() < 1e-15);
        assert!((v - 0.292_893_2).abs() < 1e-7);
        assert!(matches!(
            hd2_discrete(&[1.0], &[0.5, 0.5]),
            Err(QuantError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn topsoe_examples() {
        assert_eq!(topsoe_discrete(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        // KL((1,0) || (.5,.5)) + KL((0,1) || (.5,.5)) = ln 2 + ln 2
        let v = topsoe_discrete(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 1.386_294_4).abs() < 1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let p = random_hist(&mut rng, 8);
            let q = random_hist(&mut rng, 8);
            assert_eq!(topsoe_discrete(&p, &q).unwrap(), topsoe_discrete(&q, &p).unwrap());
        }
    }

    #[test]
    fn cs_examples() {
        assert!(cs_discrete(&[0.4, 0.6], &[0.4, 0.6]).unwrap().abs() < 1e-15);
        assert!(cs_discrete(&[0.9, 0.1], &[0.1, 0.9]).unwrap() > 0.0);
    }

    #[test]
    fn loss_zero_at_true_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bins = 6;
        let train: Vec<Histograms> = (0..3)
            .map(|_| random_hists(&mut rng, 3, bins, HistogramLayout::Averaged))
            .collect();
        let alpha = Prevalence::new(vec![0.5, 0.3, 0.2]).unwrap();
        let test_cols: Vec<Vec<f64>> = (0..3)
            .map(|col| {
                (0..bins)
                    .map(|b| (0..3).map(|i| alpha[i] * train[i].per_class()[col][b]).sum())
                    .collect()
            })
            .collect();
        let test = Histograms::new(test_cols, bins, HistogramLayout::Averaged).unwrap();
        let loss = dm_loss(&train, &test, &alpha, DiscreteDivergence::HellingerSquared).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn averaged_loss_is_mean_of_per_column_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bins = 7;
        let train: Vec<Histograms> = (0..3)
            .map(|_| random_hists(&mut rng, 3, bins, HistogramLayout::Averaged))
            .collect();
        let test = random_hists(&mut rng, 3, bins, HistogramLayout::Averaged);
        let alpha = Prevalence::from_weights(vec![0.1, 0.7, 0.4]).unwrap();
        let mut oracle = 0.0;
        for col in 0..3 {
            let mix: Vec<f64> = (0..bins)
                .map(|b| (0..3).map(|i| alpha[i] * train[i].per_class()[col][b]).sum())
                .collect();
            let bc: f64 = mix
                .iter()
                .zip(&test.per_class()[col])
                .map(|(m, t)| (m * t).sqrt())
                .sum();
            oracle += 1.0 - bc;
        }
        oracle /= 3.0;
        let loss = dm_loss(&train, &test, &alpha, DiscreteDivergence::HellingerSquared).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn concatenated_and_averaged_share_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let bins = rng.random_range(2..20);
            let mk = |rng: &mut ChaCha8Rng, layout| -> (Vec<Histograms>, Histograms) {
                let train: Vec<Histograms> = (0..2).map(|_| random_hists(rng, 2, bins, layout)).collect();
                let test = random_hists(rng, 2, bins, layout);
                (train, test)
            };
            let (train_a, test_a) = mk(&mut rng, HistogramLayout::Averaged);
            let relayout = |h: &Histograms| {
                Histograms::new(h.per_class().to_vec(), bins, HistogramLayout::Concatenated).unwrap()
            };
            let train_c: Vec<Histograms> = train_a.iter().map(relayout).collect();
            let test_c = relayout(&test_a);
            let argmin = |train: &[Histograms], test: &Histograms| {
                (0..=100)
                    .map(|k| {
                        let a = k as f64 / 100.0;
                        let alpha = Prevalence::new(vec![1.0 - a, a]).unwrap();
                        (k, dm_loss(train, test, &alpha, DiscreteDivergence::HellingerSquared).unwrap())
                    })
                    .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                    .0
            };
            assert_eq!(argmin(&train_a, &test_a), argmin(&train_c, &test_c));
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train = vec![
            random_hists(&mut rng, 2, 5, HistogramLayout::Averaged),
            random_hists(&mut rng, 2, 5, HistogramLayout::Averaged),
        ];
        let test = random_hists(&mut rng, 2, 6, HistogramLayout::Averaged);
        let alpha = Prevalence::uniform(2);
        assert!(matches!(
            dm_loss(&train, &test, &alpha, DiscreteDivergence::Topsoe),
            Err(QuantError::ShapeMismatch(_))
        ));
    }
}
