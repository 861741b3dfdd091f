//! Classify-and-count and its adjusted variants.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::{check_classes, Aggregation};
use crate::data::Posteriors;
use crate::error::{QuantError, Result};
use crate::prevalence::{Prevalence, SIMPLEX_TOL};

/// Fraction of rows whose argmax is each class (ties go to the lowest index).
pub fn cc_quantify(posteriors: &Posteriors) -> Result<Prevalence> {
    if posteriors.n_rows() == 0 {
        return Err(QuantError::TooFewExamples("empty posterior matrix".into()));
    }
    let n = posteriors.n_classes();
    let mut counts = vec![0.0; n];
    for c in posteriors.argmax() {
        counts[c] += 1.0;
    }
    let total = posteriors.n_rows() as f64;
    Prevalence::new(counts.into_iter().map(|c| c / total).collect())
}

/// Column-stochastic matrix, `entry[i][j]` estimating `P(pred = i | true = j)`
/// (or the expected posterior of class `i` given true class `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct Misclassification(Array2<f64>);

impl Misclassification {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(QuantError::ShapeMismatch("misclassification matrix must be square".into()));
        }
        for (j, col) in entries.columns().into_iter().enumerate() {
            if col.iter().any(|&v| v < 0.0) || (col.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(QuantError::NotASimplexPoint(format!("column {j}")));
            }
        }
        Ok(Self(entries))
    }

    /// From argmax predictions of out-of-fold posteriors.
    pub fn from_hard(posteriors: &Posteriors, labels: &[usize]) -> Result<Self> {
        let n = posteriors.n_classes();
        let preds = posteriors.argmax();
        let rows: Vec<Vec<f64>> = preds
            .iter()
            .map(|&p| {
                let mut one_hot = vec![0.0; n];
                one_hot[p] = 1.0;
                one_hot
            })
            .collect();
        Self::from_rows(&rows, labels, n)
    }

    /// From mean out-of-fold posteriors per true class.
    pub fn from_soft(posteriors: &Posteriors, labels: &[usize]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = posteriors.view().outer_iter().map(|r| r.to_vec()).collect();
        Self::from_rows(&rows, labels, posteriors.n_classes())
    }

    fn from_rows(rows: &[Vec<f64>], labels: &[usize], n: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(QuantError::LengthMismatch {
                left: rows.len(),
                right: labels.len(),
            });
        }
        let mut m = Array2::zeros((n, n));
        let mut counts = vec![0usize; n];
        for (row, &y) in rows.iter().zip(labels) {
            counts[y] += 1;
            for (i, v) in row.iter().enumerate() {
                m[[i, y]] += v;
            }
        }
        for (j, &c) in counts.iter().enumerate() {
            if c == 0 {
                return Err(QuantError::EmptyClass(j));
            }
            let mut col = m.column_mut(j);
            col /= c as f64;
            // Re-normalise away summation drift.
            let s = col.sum();
            col /= s;
        }
        Self::new(m)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Solves `confusion * alpha = observed` by least squares, then clips to the
/// simplex. Fails with `SingularSystem` on a rank-deficient matrix.
pub fn acc_quantify(confusion: &Misclassification, observed: &Prevalence) -> Result<Prevalence> {
    let n = confusion.0.nrows();
    if observed.len() != n {
        return Err(QuantError::LengthMismatch {
            left: observed.len(),
            right: n,
        });
    }
    let a = DMatrix::from_fn(n, n, |i, j| confusion.0[[i, j]]);
    let b = DVector::from_column_slice(observed.as_slice());
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-10 * max_sv.max(f64::MIN_POSITIVE) {
        return Err(QuantError::SingularSystem);
    }
    let solution = svd.solve(&b, 0.0).map_err(|_| QuantError::SingularSystem)?;
    Prevalence::from_weights(solution.iter().copied().collect())
}

fn adjust_or_fallback(confusion: &Misclassification, observed: Prevalence) -> Result<Prevalence> {
    match acc_quantify(confusion, &observed) {
        Err(QuantError::SingularSystem) => {
            log::warn!("misclassification matrix is singular; returning unadjusted estimate");
            Ok(observed)
        }
        other => other,
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassifyAndCount {
    n_classes: Option<usize>,
}

impl ClassifyAndCount {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Aggregation for ClassifyAndCount {
    fn name(&self) -> String {
        "CC".into()
    }

    fn fit(&mut self, _posteriors: &Posteriors, _labels: &[usize], n_classes: usize) -> Result<()> {
        self.n_classes = Some(n_classes);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        check_classes(posteriors, self.n_classes.ok_or(QuantError::NotFitted)?)?;
        cc_quantify(posteriors)
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdjustedCount {
    confusion: Option<Misclassification>,
}

impl AdjustedCount {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn confusion(&self) -> Option<&Misclassification> {
        self.confusion.as_ref()
    }
}

impl Aggregation for AdjustedCount {
    fn name(&self) -> String {
        "ACC".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], _n_classes: usize) -> Result<()> {
        self.confusion = Some(Misclassification::from_hard(posteriors, labels)?);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let confusion = self.confusion.as_ref().ok_or(QuantError::NotFitted)?;
        check_classes(posteriors, confusion.0.nrows())?;
        adjust_or_fallback(confusion, cc_quantify(posteriors)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProbabilisticAdjustedCount {
    confusion: Option<Misclassification>,
}

impl ProbabilisticAdjustedCount {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Aggregation for ProbabilisticAdjustedCount {
    fn name(&self) -> String {
        "PACC".into()
    }

    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], _n_classes: usize) -> Result<()> {
        self.confusion = Some(Misclassification::from_soft(posteriors, labels)?);
        Ok(())
    }

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence> {
        let confusion = self.confusion.as_ref().ok_or(QuantError::NotFitted)?;
        check_classes(posteriors, confusion.0.nrows())?;
        let observed = Prevalence::from_weights(posteriors.mean())?;
        adjust_or_fallback(confusion, observed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn post(rows: &[&[f64]]) -> Posteriors {
        Posteriors::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cc_examples() {
        let p = cc_quantify(&post(&[&[0.9, 0.1], &[0.8, 0.2], &[0.1, 0.9]])).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = cc_quantify(&post(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 0.0]);
        let p = cc_quantify(&post(&[&[0.1, 0.2, 0.6, 0.1]])).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn acc_identity() {
        let m = Misclassification::new(Array2::eye(2)).unwrap();
        let p = acc_quantify(&m, &Prevalence::new(vec![0.3, 0.7]).unwrap()).unwrap();
        assert!((p[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn acc_binary_solves() {
        let m = Misclassification::new(array![[0.9, 0.1], [0.1, 0.9]]).unwrap();
        let p = acc_quantify(&m, &Prevalence::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12);
        let p = acc_quantify(&m, &Prevalence::new(vec![0.42, 0.58]).unwrap()).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-9);
        assert!((p[1] - 0.6).abs() < 1e-9);
    }

    #[test]
    fn acc_clips_out_of_range_solutions() {
        let m = Misclassification::new(array![[0.9, 0.1], [0.1, 0.9]]).unwrap();
        let p = acc_quantify(&m, &Prevalence::new(vec![0.05, 0.95]).unwrap()).unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn singular_confusion_reported_and_falls_back() {
        let m = Misclassification::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let obs = Prevalence::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(acc_quantify(&m, &obs), Err(QuantError::SingularSystem));
        assert_eq!(adjust_or_fallback(&m, obs.clone()).unwrap(), obs);
    }

    #[test]
    fn oracle_classifier_is_exact() {
        let train = post(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let labels = [0, 1, 2, 0];
        let test = post(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        let truth = [0.25, 0.5, 0.25];
        let mut methods: Vec<Box<dyn Aggregation>> = vec![
            Box::new(ClassifyAndCount::new()),
            Box::new(AdjustedCount::new()),
            Box::new(ProbabilisticAdjustedCount::new()),
        ];
        for m in methods.iter_mut() {
            m.fit(&train, &labels, 3).unwrap();
            let p = m.aggregate(&test).unwrap();
            for (a, b) in p.as_slice().iter().zip(truth) {
                assert!((a - b).abs() < 1e-12, "{}", m.name());
            }
        }
    }

    #[test]
    fn soft_confusion_uses_mean_posteriors() {
        let train = post(&[&[0.8, 0.2], &[0.6, 0.4], &[0.3, 0.7]]);
        let m = Misclassification::from_soft(&train, &[0, 0, 1]).unwrap();
        assert!((m.entries()[[0, 0]] - 0.7).abs() < 1e-12);
        assert!((m.entries()[[1, 1]] - 0.7).abs() < 1e-12);
    }
}
