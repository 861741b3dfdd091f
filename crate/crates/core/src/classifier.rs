//! L2-regularised multinomial logistic regression.
//!
//! The fitted model maps covariates to class posteriors through a softmax of
//! affine scores. Training minimises the (optionally class-balanced) mean
//! cross-entropy plus `||W||^2 / (2 C N)` by full-batch gradient descent with
//! a backtracking line search. Biases are not penalised.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, Dataset, Posteriors};
use crate::error::{QuantError, Result};

/// Per-example loss weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    /// Each example weighted by `N / (n * |L_y|)`.
    Balanced,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Inverse regularisation strength.
    pub c: f64,
    pub weighting: ClassWeighting,
    pub max_iter: usize,
    /// Stop once the gradient's infinity norm drops below this value.
    pub grad_tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            weighting: ClassWeighting::None,
            max_iter: 5_000,
            grad_tol: 1e-6,
        }
    }
}

impl LogisticConfig {
    pub fn new(c: f64, weighting: ClassWeighting) -> Self {
        Self {
            c,
            weighting,
            ..Self::default()
        }
    }
}

/// A fitted soft classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    weights: Array2<f64>,
    biases: Array1<f64>,
    c: f64,
}

impl LogisticModel {
    /// Builds a model from explicit parameters (`n x d` weights, `n` biases).
    pub fn from_parameters(weights: Array2<f64>, biases: Array1<f64>, c: f64) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(QuantError::LengthMismatch {
                left: weights.nrows(),
                right: biases.len(),
            });
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(QuantError::NonFinite("model parameters".into()));
        }
        Ok(Self { weights, biases, c })
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_classes(&self) -> usize {
        self.biases.len()
    }

    pub fn predict(&self, bag: &Bag) -> Result<Posteriors> {
        self.predict_features(bag.features())
    }

    pub fn predict_features(&self, x: ArrayView2<'_, f64>) -> Result<Posteriors> {
        if x.ncols() != self.weights.ncols() {
            return Err(QuantError::DimensionMismatch {
                expected: self.weights.ncols(),
                found: x.ncols(),
            });
        }
        let mut scores = x.dot(&self.weights.t()) + &self.biases;
        softmax_rows(&mut scores);
        Ok(Posteriors::from_array_unchecked(scores))
    }
}

/// In-place row softmax with max subtraction.
fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn example_weights(labels: &[usize], n: usize, weighting: ClassWeighting) -> Vec<f64> {
    match weighting {
        ClassWeighting::None => vec![1.0; labels.len()],
        ClassWeighting::Balanced => {
            let mut counts = vec![0usize; n];
            for &l in labels {
                counts[l] += 1;
            }
            let total = labels.len() as f64;
            labels
                .iter()
                .map(|&l| total / (n as f64 * counts[l] as f64))
                .collect()
        }
    }
}

/// Penalised objective over the flattened parameters `[W (row-major), b]`.
pub(crate) struct Objective<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    weights: Vec<f64>,
    n: usize,
    c: f64,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(
        x: ArrayView2<'a, f64>,
        labels: &'a [usize],
        n: usize,
        c: f64,
        weighting: ClassWeighting,
    ) -> Self {
        Self {
            x,
            labels,
            weights: example_weights(labels, n, weighting),
            n,
            c,
        }
    }

    pub(crate) fn n_params(&self) -> usize {
        self.n * (self.x.ncols() + 1)
    }

    fn unpack(&self, theta: &[f64]) -> (Array2<f64>, Array1<f64>) {
        let d = self.x.ncols();
        let w = Array2::from_shape_vec((self.n, d), theta[..self.n * d].to_vec())
            .expect("parameter length");
        let b = Array1::from(theta[self.n * d..].to_vec());
        (w, b)
    }

    /// Loss and gradient at `theta`.
    pub(crate) fn eval(&self, theta: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let (w, b) = self.unpack(theta);
        let rows = self.x.nrows() as f64;
        let mut scores = self.x.dot(&w.t()) + &b;
        let mut loss = 0.0;
        for (i, mut row) in scores.outer_iter_mut().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += self.weights[i] * (lse - row[self.labels[i]]);
            if want_grad {
                row.mapv_inplace(|v| (v - lse).exp());
                row[self.labels[i]] -= 1.0;
                row.mapv_inplace(|v| v * self.weights[i] / rows);
            }
        }
        let penalty = 1.0 / (self.c * rows);
        loss = loss / rows + 0.5 * penalty * w.iter().map(|v| v * v).sum::<f64>();
        if !want_grad {
            return (loss, Vec::new());
        }
        let gw = scores.t().dot(&self.x) + &(w * penalty);
        let gb = scores.sum_axis(Axis(0));
        let mut grad = gw.into_raw_vec_and_offset().0;
        grad.extend(gb.iter());
        (loss, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the classifier on `train`.
///
/// Fails with `EmptyClass` if any class has no rows. With a single class the
/// returned model always predicts `(1.0)`.
pub fn fit_logistic(train: &Dataset, config: &LogisticConfig) -> Result<LogisticModel> {
    let n = train.n_classes();
    let d = train.dim();
    if !(config.c > 0.0) {
        return Err(QuantError::InvalidArgument(format!("C must be positive, got {}", config.c)));
    }
    if let Some(empty) = train.class_counts().iter().position(|&c| c == 0) {
        return Err(QuantError::EmptyClass(empty));
    }
    if n == 1 {
        return LogisticModel::from_parameters(Array2::zeros((1, d)), Array1::zeros(1), config.c);
    }
    let objective = Objective::new(train.features(), train.labels(), n, config.c, config.weighting);
    let mut theta = vec![0.0; objective.n_params()];
    let (mut loss, mut grad) = objective.eval(&theta, true);
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for _ in 0..config.max_iter {
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) < config.grad_tol {
            break;
        }
        // Barzilai-Borwein trial step, then Armijo backtracking.
        if let Some((old_theta, old_grad)) = &prev {
            let s: Vec<f64> = theta.iter().zip(old_theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = grad.iter().zip(old_grad).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 {
                step = (dot(&s, &s) / sy).clamp(1e-10, 1e10);
            }
        }
        let g2 = dot(&grad, &grad);
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let (cand_loss, _) = objective.eval(&candidate, false);
            if cand_loss.is_finite() && cand_loss <= loss - 1e-4 * step * g2 {
                accepted = Some((candidate, cand_loss));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, cand_loss)) = accepted else {
            break;
        };
        let (_, new_grad) = objective.eval(&candidate, true);
        prev = Some((std::mem::replace(&mut theta, candidate), std::mem::replace(&mut grad, new_grad)));
        loss = cand_loss;
        if !loss.is_finite() {
            return Err(QuantError::NonFinite("training loss".into()));
        }
    }
    let (w, b) = objective.unpack(&theta);
    LogisticModel::from_parameters(w, b, config.c)
}

/// Assigns each row to one of `k` folds, stratified by class.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(QuantError::InvalidArgument("at least two folds are required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for (class, mut rows) in crate::data::class_split(labels, n_classes).into_iter().enumerate() {
        if rows.len() < k {
            return Err(QuantError::TooFewExamples(format!(
                "class {class} has {} examples, fewer than {k} folds",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        for (pos, row) in rows.into_iter().enumerate() {
            fold[row] = pos % k;
        }
    }
    Ok(fold)
}

/// Out-of-fold posteriors: row `i` is predicted by a model that never saw it.
pub fn cross_val_posteriors(
    train: &Dataset,
    k: usize,
    config: &LogisticConfig,
    seed: u64,
) -> Result<Posteriors> {
    let n = train.n_classes();
    let folds = stratified_folds(train.labels(), n, k, seed)?;
    let per_fold: Vec<Result<(Vec<usize>, Posteriors)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) =
                (0..train.len()).partition(|&r| folds[r] == f);
            let model = fit_logistic(&train.select(&kept), config)?;
            let held_x = train.features().select(Axis(0), &held);
            Ok((held, model.predict_features(held_x.view())?))
        })
        .collect();
    let mut out = Array2::zeros((train.len(), n));
    for result in per_fold {
        let (rows, post) = result?;
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(r).assign(&post.row(i));
        }
    }
    Ok(Posteriors::from_array_unchecked(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn dataset(xs: &[f64], labels: &[usize], n: usize) -> Dataset {
        let x = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap();
        Dataset::new(x, labels.to_vec(), n).unwrap()
    }

    /// Plain fixed-step gradient descent on a binary 1-D weighted logistic
    /// loss, parameterised directly by the score difference `w x + b`.
    fn boundary_oracle(xs: &[f64], ys: &[usize], weights: &[f64], c: f64) -> f64 {
        // The multinomial problem with two classes and symmetric L2 penalty
        // reduces to a binary problem in (w1 - w0, b1 - b0) with penalty
        // ||w||^2 / 4 per unit of the difference.
        let n = xs.len() as f64;
        let max_wt = weights.iter().fold(0.0f64, |m, &v| m.max(v));
        let mean_sq = xs.iter().map(|x| x * x + 1.0).sum::<f64>() / n;
        let lr = 1.0 / (0.25 * max_wt * mean_sq + 1.0);
        let (mut w, mut b) = (0.0, 0.0);
        for _ in 0..400_000 {
            let (mut gw, mut gb) = (0.0, 0.0);
            for ((&x, &y), &wt) in xs.iter().zip(ys).zip(weights) {
                let p = 1.0 / (1.0 + (-(w * x + b)).exp());
                let r = wt * (p - y as f64) / n;
                gw += r * x;
                gb += r;
            }
            gw += w / (2.0 * c * n);
            w -= lr * gw;
            b -= lr * gb;
        }
        -b / w
    }

    fn boundary(model: &LogisticModel) -> f64 {
        let dw = model.weights()[[1, 0]] - model.weights()[[0, 0]];
        let db = model.biases()[1] - model.biases()[0];
        -db / dw
    }

    #[test]
    fn separated_points_get_confident_posteriors() {
        let train = dataset(&[-5.0, 5.0], &[0, 1], 2);
        let model = fit_logistic(&train, &LogisticConfig::default()).unwrap();
        let post = model.predict(&train.to_bag().unwrap()).unwrap();
        assert!(post.row(0)[0] > 0.95);
        assert!(post.row(1)[1] > 0.95);
        let oracle = boundary_oracle(&[-5.0, 5.0], &[0, 1], &[1.0, 1.0], 1.0);
        assert!((boundary(&model) - oracle).abs() < 1e-4);
    }

    #[test]
    fn single_class_predicts_one() {
        let train = dataset(&[1.0, 2.0, 3.0], &[0, 0, 0], 1);
        let model = fit_logistic(&train, &LogisticConfig::default()).unwrap();
        let post = model.predict(&train.to_bag().unwrap()).unwrap();
        assert!(post.view().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_class_is_an_error() {
        let train = dataset(&[1.0, 2.0], &[0, 0], 2);
        assert_eq!(
            fit_logistic(&train, &LogisticConfig::default()),
            Err(QuantError::EmptyClass(1))
        );
    }

    #[test]
    fn balanced_weighting_moves_boundary_towards_majority() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..100 {
            let y = usize::from(i >= 90);
            let centre = if y == 0 { -1.0 } else { 1.0 };
            xs.push(centre + rng.random_range(-1.5..1.5));
            ys.push(y);
        }
        let train = dataset(&xs, &ys, 2);
        let plain = fit_logistic(&train, &LogisticConfig::new(1.0, ClassWeighting::None)).unwrap();
        let balanced =
            fit_logistic(&train, &LogisticConfig::new(1.0, ClassWeighting::Balanced)).unwrap();
        assert!(boundary(&balanced) < boundary(&plain));

        for (model, weighting) in [(&plain, ClassWeighting::None), (&balanced, ClassWeighting::Balanced)] {
            let w = example_weights(&ys, 2, weighting);
            let oracle = boundary_oracle(&xs, &ys, &w, 1.0);
            assert!(
                (boundary(model) - oracle).abs() < 1e-3,
                "{weighting:?}: {} vs {oracle}",
                boundary(model)
            );
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = LogisticModel::from_parameters(Array2::zeros((3, 2)), Array1::zeros(3), 1.0).unwrap();
        let bag = Bag::new(array![[1.0, -2.0], [10.0, 3.0]]).unwrap();
        let post = model.predict(&bag).unwrap();
        for v in post.view().iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn logit_zero_is_half() {
        let model = LogisticModel::from_parameters(array![[0.0], [1.0]], Array1::zeros(2), 1.0).unwrap();
        let bag = Bag::new(array![[0.0], [0.0]]).unwrap();
        let post = model.predict(&bag).unwrap();
        assert_eq!(post.row(0).to_vec(), vec![0.5, 0.5]);
        assert_eq!(post.row(0), post.row(1));
    }

    #[test]
    fn dimension_mismatch() {
        let model = LogisticModel::from_parameters(Array2::zeros((2, 3)), Array1::zeros(2), 1.0).unwrap();
        let bag = Bag::new(array![[0.0, 1.0]]).unwrap();
        assert!(matches!(model.predict(&bag), Err(QuantError::DimensionMismatch { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((40, 3), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
        for weighting in [ClassWeighting::None, ClassWeighting::Balanced] {
            let obj = Objective::new(x.view(), &labels, 3, 0.7, weighting);
            for _ in 0..10 {
                let theta: Vec<f64> = (0..obj.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (_, grad) = obj.eval(&theta, true);
                for j in 0..theta.len() {
                    let mut up = theta.clone();
                    let mut down = theta.clone();
                    up[j] += 1e-5;
                    down[j] -= 1e-5;
                    let fd = (obj.eval(&up, false).0 - obj.eval(&down, false).0) / 2e-5;
                    let rel = (fd - grad[j]).abs() / grad[j].abs().max(1e-8);
                    assert!(rel < 1e-4 || (fd - grad[j]).abs() < 1e-9, "param {j}: {fd} vs {}", grad[j]);
                }
            }
        }
    }

    #[test]
    fn training_never_increases_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((60, 2), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let train = Dataset::new(x, labels, 3).unwrap();
        let config = LogisticConfig::new(10.0, ClassWeighting::None);
        let model = fit_logistic(&train, &config).unwrap();
        let obj = Objective::new(train.features(), train.labels(), 3, 10.0, ClassWeighting::None);
        let mut theta: Vec<f64> = model.weights().iter().copied().collect();
        theta.extend(model.biases().iter());
        assert!(obj.eval(&theta, false).0 <= obj.eval(&vec![0.0; theta.len()], false).0);
    }

    #[test]
    fn cross_validation_on_separable_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..100)
            .map(|i| if i % 2 == 0 { -4.0 } else { 4.0 } + rng.random_range(-1.0..1.0))
            .collect();
        let ys: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let train = dataset(&xs, &ys, 2);
        let post = cross_val_posteriors(&train, 5, &LogisticConfig::default(), 1).unwrap();
        let mean_true: f64 = (0..100).map(|i| post.row(i)[ys[i]]).sum::<f64>() / 100.0;
        assert!(mean_true > 0.9);
        let again = cross_val_posteriors(&train, 5, &LogisticConfig::default(), 1).unwrap();
        assert_eq!(post, again);
    }

    #[test]
    fn two_fold_bookkeeping() {
        let train = dataset(&[-1.0, -2.0, 1.0, 2.0], &[0, 0, 1, 1], 2);
        let folds = stratified_folds(train.labels(), 2, 2, 0).unwrap();
        let post = cross_val_posteriors(&train, 2, &LogisticConfig::default(), 0).unwrap();
        for f in 0..2 {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..4).partition(|&r| folds[r] == f);
            let model = fit_logistic(&train.select(&kept), &LogisticConfig::default()).unwrap();
            let expect = model
                .predict_features(train.features().select(Axis(0), &held).view())
                .unwrap();
            for (i, &r) in held.iter().enumerate() {
                assert_eq!(post.row(r), expect.row(i));
            }
        }
    }

    #[test]
    fn stratification_needs_enough_examples() {
        let train = dataset(&[0.0, 1.0, 2.0], &[0, 0, 1], 2);
        assert!(matches!(
            cross_val_posteriors(&train, 2, &LogisticConfig::default(), 0),
            Err(QuantError::TooFewExamples(_))
        ));
    }
}
