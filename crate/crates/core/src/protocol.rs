//! Artificial-prevalence evaluation: uniform simplex sampling, bag drawing,
//! error metrics and quantification-oriented model selection.

use std::fmt;
use std::str::FromStr;

use ndarray::Axis;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{class_split, Bag, Dataset};
use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;
use crate::quantifiers::Quantifier;

/// XOR-ed into the configured seed to derive the test-bag stream, keeping it
/// disjoint from the validation bags.
pub const TEST_STREAM_OFFSET: u64 = 0x5EED;

/// Uniform draw from the probability simplex with `n` vertices.
pub fn kraemer_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Prevalence {
    assert!(n >= 1, "simplex needs at least one vertex");
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.push(1.0);
    let mut prev = 0.0;
    let weights = cuts
        .into_iter()
        .map(|c| {
            let d = c - prev;
            prev = c;
            d
        })
        .collect();
    Prevalence::from_weights(weights).expect("differences of sorted uniforms")
}

pub fn kraemer_sample_seeded(n: usize, seed: u64) -> Prevalence {
    kraemer_sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Splits `z` into integer counts proportional to `target`; leftover units go
/// to the largest fractional parts, lower index first on ties.
pub fn largest_remainder(target: &Prevalence, z: usize) -> Vec<usize> {
    let exact: Vec<f64> = target.as_slice().iter().map(|p| p * z as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(z.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Row indices of a bag of size `z` with composition close to `target`,
/// and the realised prevalence of those rows.
pub fn draw_bag_rows<R: Rng + ?Sized>(
    pool: &Dataset,
    target: &Prevalence,
    z: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Prevalence)> {
    if z == 0 {
        return Err(QuantError::InvalidArgument("bag size must be at least 1".into()));
    }
    if target.len() != pool.n_classes() {
        return Err(QuantError::DimensionMismatch {
            expected: pool.n_classes(),
            found: target.len(),
        });
    }
    let split = class_split(pool.labels(), pool.n_classes());
    if let Some(c) = (0..target.len()).find(|&c| target[c] > 0.0 && split[c].is_empty()) {
        return Err(QuantError::ImpossibleTarget(c));
    }
    let counts = largest_remainder(target, z);
    let mut rows = Vec::with_capacity(z);
    for (members, &k) in split.iter().zip(&counts) {
        if k == 0 {
            continue;
        }
        if members.is_empty() {
            // Only reachable through rounding, which never assigns units to
            // zero-target classes.
            return Err(QuantError::ImpossibleTarget(rows.len()));
        }
        if k <= members.len() {
            rows.extend(sample_indices(rng, members.len(), k).into_iter().map(|i| members[i]));
        } else {
            rows.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    let realized = Prevalence::from_weights(counts.iter().map(|&c| c as f64).collect())?;
    Ok((rows, realized))
}

pub fn draw_bag<R: Rng + ?Sized>(
    pool: &Dataset,
    target: &Prevalence,
    z: usize,
    rng: &mut R,
) -> Result<(Bag, Prevalence)> {
    let (rows, realized) = draw_bag_rows(pool, target, z, rng)?;
    Ok((Bag::new(pool.features().select(Axis(0), &rows))?, realized))
}

fn check_lengths(a: &Prevalence, b: &Prevalence) -> Result<()> {
    if a.len() != b.len() {
        return Err(QuantError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

pub fn absolute_error(truth: &Prevalence, estimate: &Prevalence) -> Result<f64> {
    check_lengths(truth, estimate)?;
    let n = truth.len() as f64;
    Ok(truth
        .as_slice()
        .iter()
        .zip(estimate.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

/// Relative absolute error smoothed with `eps = 0.5 / z`.
pub fn relative_absolute_error(truth: &Prevalence, estimate: &Prevalence, z: usize) -> Result<f64> {
    check_lengths(truth, estimate)?;
    if z == 0 {
        return Err(QuantError::InvalidArgument("bag size must be at least 1".into()));
    }
    let eps = 0.5 / z as f64;
    let n = truth.len() as f64;
    Ok(truth
        .as_slice()
        .iter()
        .zip(estimate.as_slice())
        .map(|(a, b)| (a - b).abs() / (a + eps))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub bag_count: usize,
    pub bag_size: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(bag_count: usize, bag_size: usize, seed: u64) -> Result<Self> {
        let c = Self {
            bag_count,
            bag_size,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bag_count == 0 || self.bag_size == 0 {
            return Err(QuantError::InvalidArgument(
                "bag_count and bag_size must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Same shape, seeded on the test stream.
    pub fn test_stream(&self) -> Self {
        Self {
            seed: self.seed ^ TEST_STREAM_OFFSET,
            ..*self
        }
    }
}

/// Random stream of bag `index`.
pub fn bag_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone)]
pub struct AppBag {
    pub index: usize,
    pub target: Prevalence,
    pub realized: Prevalence,
    pub bag: Bag,
}

/// The bags of a protocol run. They depend on `pool` and `config` only.
pub fn generate_bags(pool: &Dataset, config: &ProtocolConfig) -> Result<Vec<AppBag>> {
    config.validate()?;
    (0..config.bag_count)
        .map(|index| {
            let mut rng = bag_rng(config.seed, index as u64);
            let target = kraemer_sample(pool.n_classes(), &mut rng);
            let (bag, realized) = draw_bag(pool, &target, config.bag_size, &mut rng)?;
            Ok(AppBag {
                index,
                target,
                realized,
                bag,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOutcome {
    pub bag_index: usize,
    pub true_prevalence: Prevalence,
    pub estimated_prevalence: Prevalence,
    pub ae: f64,
    pub rae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method_id: String,
    pub dataset_id: String,
    pub per_bag: Vec<BagOutcome>,
    pub mean_ae: f64,
    pub mean_rae: f64,
}

impl EvaluationReport {
    pub fn with_dataset(mut self, id: impl Into<String>) -> Self {
        self.dataset_id = id.into();
        self
    }

    pub fn per_bag_errors(&self) -> Vec<(f64, f64)> {
        self.per_bag.iter().map(|b| (b.ae, b.rae)).collect()
    }

    pub fn mean(&self, loss: Loss) -> f64 {
        match loss {
            Loss::Mae => self.mean_ae,
            Loss::Mrae => self.mean_rae,
        }
    }
}

/// Scores a fitted quantifier on precomputed bags. Bag order is preserved.
pub fn evaluate_bags(
    quantifier: &dyn Quantifier,
    bags: &[AppBag],
    bag_size: usize,
    parallel: bool,
) -> Result<EvaluationReport> {
    let score = |b: &AppBag| -> Result<BagOutcome> {
        let estimate = quantifier.quantify(&b.bag)?;
        Ok(BagOutcome {
            bag_index: b.index,
            ae: absolute_error(&b.realized, &estimate)?,
            rae: relative_absolute_error(&b.realized, &estimate, bag_size)?,
            true_prevalence: b.realized.clone(),
            estimated_prevalence: estimate,
        })
    };
    let per_bag: Vec<BagOutcome> = if parallel {
        bags.par_iter().map(score).collect::<Result<_>>()?
    } else {
        bags.iter().map(score).collect::<Result<_>>()?
    };
    let m = per_bag.len().max(1) as f64;
    let mean_ae = per_bag.iter().map(|b| b.ae).sum::<f64>() / m;
    let mean_rae = per_bag.iter().map(|b| b.rae).sum::<f64>() / m;
    Ok(EvaluationReport {
        method_id: quantifier.name(),
        dataset_id: String::new(),
        per_bag,
        mean_ae,
        mean_rae,
    })
}

pub fn evaluate_protocol(
    quantifier: &dyn Quantifier,
    pool: &Dataset,
    config: &ProtocolConfig,
    parallel: bool,
) -> Result<EvaluationReport> {
    let bags = generate_bags(pool, config)?;
    evaluate_bags(quantifier, &bags, config.bag_size, parallel)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    #[default]
    Mae,
    Mrae,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::Mae => "mae",
            Loss::Mrae => "mrae",
        })
    }
}

impl FromStr for Loss {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(Loss::Mae),
            "mrae" => Ok(Loss::Mrae),
            other => Err(QuantError::InvalidArgument(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPointOutcome {
    pub index: usize,
    /// Validation loss, or the error that disqualified the point.
    pub result: std::result::Result<f64, QuantError>,
}

pub struct GridSearchResult<H> {
    pub best: H,
    pub best_index: usize,
    pub best_score: f64,
    /// Winner refit on training plus validation data.
    pub quantifier: Box<dyn Quantifier>,
    pub outcomes: Vec<GridPointOutcome>,
}

/// Model selection on validation bags drawn from `val_pool`, shared by every
/// grid point. Ties go to the earliest point; failing points are recorded
/// and skipped.
pub fn grid_search<H, B>(
    builder: B,
    grid: &[H],
    train: &Dataset,
    val_pool: &Dataset,
    config: &ProtocolConfig,
    loss: Loss,
    parallel: bool,
) -> Result<GridSearchResult<H>>
where
    H: Clone,
    B: Fn(&H) -> Result<Box<dyn Quantifier>>,
{
    if grid.is_empty() {
        return Err(QuantError::InvalidArgument("empty hyperparameter grid".into()));
    }
    let bags = generate_bags(val_pool, config)?;
    let mut outcomes = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    for (index, point) in grid.iter().enumerate() {
        let result = builder(point).and_then(|mut q| {
            q.fit(train)?;
            Ok(evaluate_bags(q.as_ref(), &bags, config.bag_size, parallel)?.mean(loss))
        });
        match &result {
            Ok(score) if best.is_none_or(|(_, s)| *score < s) => best = Some((index, *score)),
            Ok(_) => {}
            Err(e) => log::warn!("grid point {index} failed: {e}"),
        }
        outcomes.push(GridPointOutcome { index, result });
    }
    let Some((best_index, best_score)) = best else {
        return Err(outcomes[0].result.clone().expect_err("no grid point succeeded"));
    };
    let mut quantifier = builder(&grid[best_index])?;
    quantifier.fit(&train.concat(val_pool)?)?;
    Ok(GridSearchResult {
        best: grid[best_index].clone(),
        best_index,
        best_score,
        quantifier,
        outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pool(counts: &[usize]) -> Dataset {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &k)| vec![c; k]).collect();
        let x = Array2::from_shape_fn((labels.len(), 1), |(i, _)| i as f64);
        Dataset::new(x, labels, counts.len()).unwrap()
    }

    /// Returns the realised prevalence of each bag, read back from the
    /// feature values (row indices) of a pool built by [`pool`].
    struct Oracle(Vec<usize>, usize);

    impl Quantifier for Oracle {
        fn name(&self) -> String {
            "oracle".into()
        }
        fn fit(&mut self, _: &Dataset) -> Result<()> {
            Ok(())
        }
        fn quantify(&self, bag: &Bag) -> Result<Prevalence> {
            let mut counts = vec![0.0; self.1];
            for v in bag.features().column(0) {
                counts[self.0[*v as usize]] += 1.0;
            }
            Prevalence::from_weights(counts)
        }
    }

    struct Constant(Prevalence);

    impl Quantifier for Constant {
        fn name(&self) -> String {
            "constant".into()
        }
        fn fit(&mut self, _: &Dataset) -> Result<()> {
            Ok(())
        }
        fn quantify(&self, _: &Bag) -> Result<Prevalence> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn kraemer_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(kraemer_sample(1, &mut rng).as_slice(), &[1.0]);
        let mut mean = [0.0; 4];
        let draws = 100_000;
        for _ in 0..draws {
            let p = kraemer_sample(4, &mut rng);
            assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (m, v) in mean.iter_mut().zip(p.as_slice()) {
                *m += v / draws as f64;
            }
        }
        for m in mean {
            assert!((m - 0.25).abs() < 0.005, "{mean:?}");
        }
    }

    #[test]
    fn kraemer_marginal_is_beta() {
        // First coordinate of a uniform simplex point is Beta(1, n - 1).
        let n = 4;
        let m = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut xs: Vec<f64> = (0..m).map(|_| kraemer_sample(n, &mut rng)[0]).collect();
        xs.sort_by(f64::total_cmp);
        let cdf = |x: f64| 1.0 - (1.0 - x).powi(n as i32 - 1);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / m as f64).abs().max(((i + 1) as f64 / m as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (m as f64).sqrt(), "one-sample D = {d}");

        // Two-sample version against inverse-CDF Beta draws.
        let mut other = ChaCha8Rng::seed_from_u64(7);
        let mut ys: Vec<f64> = (0..m)
            .map(|_| 1.0 - (1.0 - other.random::<f64>()).powf(1.0 / (n as f64 - 1.0)))
            .collect();
        ys.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d2) = (0, 0, 0.0f64);
        while i < m && j < m {
            if xs[i] <= ys[j] {
                i += 1;
            } else {
                j += 1;
            }
            d2 = d2.max((i as f64 - j as f64).abs() / m as f64);
        }
        assert!(d2 < 1.628 * (2.0 / m as f64).sqrt(), "two-sample D = {d2}");
    }

    #[test]
    fn rounding_examples() {
        let half = Prevalence::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(largest_remainder(&half, 10), vec![5, 5]);
        let third = Prevalence::uniform(3);
        assert_eq!(largest_remainder(&third, 10), vec![4, 3, 3]);
        let p = Prevalence::new(vec![0.14, 0.56, 0.3]).unwrap();
        assert_eq!(largest_remainder(&p, 7), vec![1, 4, 2]);
    }

    #[test]
    fn draw_with_replacement_when_pool_is_small() {
        let data = pool(&[3, 10]);
        let target = Prevalence::vertex(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (rows, realized) = draw_bag_rows(&data, &target, 5, &mut rng).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(rows.iter().all(|&r| r < 3));
        assert_eq!(realized.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn draw_without_replacement_when_pool_suffices() {
        let data = pool(&[20, 20]);
        let target = Prevalence::new(vec![0.5, 0.5]).unwrap();
        let (mut rows, _) = draw_bag_rows(&data, &target, 40, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        rows.sort_unstable();
        assert_eq!(rows, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn impossible_target() {
        let data = pool(&[5, 0]);
        let target = Prevalence::new(vec![0.5, 0.5]).unwrap();
        let err = draw_bag(&data, &target, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(err, QuantError::ImpossibleTarget(1));
        assert!(draw_bag(&data, &Prevalence::vertex(2, 0), 4, &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn metric_examples() {
        let p = |v: Vec<f64>| Prevalence::new(v).unwrap();
        assert_eq!(absolute_error(&p(vec![0.2, 0.8]), &p(vec![0.2, 0.8])).unwrap(), 0.0);
        assert!((absolute_error(&p(vec![1.0, 0.0]), &p(vec![0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        let ae = absolute_error(&p(vec![0.2, 0.3, 0.5]), &p(vec![0.3, 0.3, 0.4])).unwrap();
        assert!((ae - 0.2 / 3.0).abs() < 1e-9);
        let rae = relative_absolute_error(&p(vec![0.1, 0.9]), &p(vec![0.2, 0.8]), 100).unwrap();
        assert!((rae - (0.1 / 0.105 + 0.1 / 0.905) / 2.0).abs() < 1e-9);
        let rae = relative_absolute_error(&p(vec![0.0, 1.0]), &p(vec![0.1, 0.9]), 10).unwrap();
        assert!((rae - 1.0476190476190477).abs() < 1e-9);
        assert!(absolute_error(&p(vec![1.0]), &p(vec![0.5, 0.5])).is_err());
    }

    #[test]
    fn realized_prevalence_is_scored() {
        // z = 3 cannot realise (0.5, 0.5).
        let data = pool(&[10, 10]);
        let labels = data.labels().to_vec();
        let config = ProtocolConfig::new(50, 3, 9).unwrap();
        let bags = generate_bags(&data, &config).unwrap();
        assert!(bags.iter().any(|b| b.target != b.realized));
        let report = evaluate_bags(&Oracle(labels, 2), &bags, 3, false).unwrap();
        assert_eq!(report.mean_ae, 0.0);
        assert_eq!(report.mean_rae, 0.0);
        for (b, o) in bags.iter().zip(&report.per_bag) {
            assert_eq!(o.true_prevalence, b.realized);
        }
    }

    #[test]
    fn uniform_quantifier_mean_error() {
        let data = pool(&[500, 500]);
        let config = ProtocolConfig::new(4_000, 200, 3).unwrap();
        let report = evaluate_protocol(&Constant(Prevalence::uniform(2)), &data, &config, true).unwrap();
        assert!((report.mean_ae - 0.25).abs() < 0.01, "{}", report.mean_ae);
        let mean: f64 = report.per_bag.iter().map(|b| b.ae).sum::<f64>() / 4_000.0;
        assert!((mean - report.mean_ae).abs() < 1e-12);
    }

    #[test]
    fn bags_do_not_depend_on_the_method() {
        let data = pool(&[30, 40, 50]);
        let config = ProtocolConfig::new(20, 25, 5).unwrap();
        let a = evaluate_protocol(&Constant(Prevalence::uniform(3)), &data, &config, false).unwrap();
        let b = evaluate_protocol(&Oracle(data.labels().to_vec(), 3), &data, &config, true).unwrap();
        let ta: Vec<_> = a.per_bag.iter().map(|o| &o.true_prevalence).collect();
        let tb: Vec<_> = b.per_bag.iter().map(|o| &o.true_prevalence).collect();
        assert_eq!(ta, tb);
        assert_ne!(generate_bags(&data, &config.test_stream()).unwrap()[0].realized, a.per_bag[0].true_prevalence);
    }

    #[test]
    fn grid_search_picks_the_oracle() {
        let data = pool(&[40, 40]);
        let labels = data.labels().to_vec();
        let config = ProtocolConfig::new(30, 20, 1).unwrap();
        let builder = |k: &usize| -> Result<Box<dyn Quantifier>> {
            match k {
                0 => Ok(Box::new(Constant(Prevalence::uniform(2)))),
                1 => Ok(Box::new(Oracle(labels.clone(), 2))),
                _ => Err(QuantError::InvalidArgument("broken point".into())),
            }
        };
        let result = grid_search(builder, &[2, 0, 1, 1], &data, &data, &config, Loss::Mae, false).unwrap();
        assert_eq!(result.best_index, 2);
        assert_eq!(result.best_score, 0.0);
        assert!(result.outcomes[0].result.is_err());
        let single = grid_search(builder, &[0], &data, &data, &config, Loss::Mrae, false).unwrap();
        assert_eq!(single.best, 0);
        assert!(grid_search(builder, &[2], &data, &data, &config, Loss::Mae, false).is_err());
    }
}
