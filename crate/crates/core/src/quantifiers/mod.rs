//! Quantification methods.
//!
//! Every method here is aggregative: a soft classifier is trained once, and
//! the method turns its posteriors into a prevalence estimate. During
//! training the method sees out-of-fold posteriors of the training set;
//! at inference time it sees the posteriors the classifier (refit on the
//! whole training set) assigns to the bag.

mod counting;
mod dirichlet;
mod dm;
mod emq;
mod hdy;
mod kdey;
mod registry;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use crate::classifier::{cross_val_posteriors, fit_logistic, LogisticConfig, LogisticModel};
use crate::data::{Bag, Dataset, Posteriors};
use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;

pub use counting::{
    acc_quantify, cc_quantify, AdjustedCount, ClassifyAndCount, Misclassification,
    ProbabilisticAdjustedCount,
};
pub use dirichlet::{dir_fit_class, dirichlet_log_pdf, DirichletFit, DirichletMl, DIR_CLIP};
pub use dm::{dm_quantify, DistributionMatching};
pub use emq::{emq_quantify, Emq, EMQ_MAX_ITER, EMQ_TOL};
pub use hdy::{hdy_binary_quantify, hdy_ova_quantify, Hdy};
pub use kdey::{
    kdey_cs_quantify, kdey_hd_quantify, kdey_ml_quantify, ml_negative_log_likelihood, HdPresample, KdeyCs,
    KdeyHd, KdeyMl,
};
pub use registry::{build_quantifier, Hyperparameters, MethodKind, MethodSettings};

/// Estimates class prevalence of unlabelled bags.
pub trait Quantifier: Send + Sync {
    fn name(&self) -> String;

    fn fit(&mut self, train: &Dataset) -> Result<()>;

    fn quantify(&self, bag: &Bag) -> Result<Prevalence>;
}

/// The part of an aggregative quantifier that works on posteriors.
pub trait Aggregation: Send + Sync {
    fn name(&self) -> String;

    /// `posteriors` are out-of-fold posteriors of the training rows.
    fn fit(&mut self, posteriors: &Posteriors, labels: &[usize], n_classes: usize) -> Result<()>;

    fn aggregate(&self, posteriors: &Posteriors) -> Result<Prevalence>;
}

/// How the embedded classifier is trained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierSpec {
    pub logistic: LogisticConfig,
    pub folds: usize,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self {
            logistic: LogisticConfig::default(),
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    dataset: u64,
    c: u64,
    weighting: crate::classifier::ClassWeighting,
    max_iter: usize,
    grad_tol: u64,
    folds: usize,
    seed: u64,
}

/// Trained classifier together with out-of-fold training posteriors.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub model: LogisticModel,
    pub cv_posteriors: Posteriors,
}

/// Memoises classifier training so that methods sharing a classifier
/// configuration on the same data train it only once.
#[derive(Debug, Default)]
pub struct ClassifierCache {
    entries: Mutex<HashMap<CacheKey, Arc<TrainedClassifier>>>,
}

fn fingerprint(data: &Dataset) -> u64 {
    let mut hasher = DefaultHasher::new();
    data.n_classes().hash(&mut hasher);
    data.features().shape().hash(&mut hasher);
    for v in data.features().iter() {
        v.to_bits().hash(&mut hasher);
    }
    data.labels().hash(&mut hasher);
    hasher.finish()
}

impl ClassifierCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_train(&self, train: &Dataset, spec: &ClassifierSpec) -> Result<Arc<TrainedClassifier>> {
        let key = CacheKey {
            dataset: fingerprint(train),
            c: spec.logistic.c.to_bits(),
            weighting: spec.logistic.weighting,
            max_iter: spec.logistic.max_iter,
            grad_tol: spec.logistic.grad_tol.to_bits(),
            folds: spec.folds,
            seed: spec.seed,
        };
        if let Some(hit) = self.entries.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        let trained = Arc::new(train_classifier(train, spec)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&trained));
        Ok(trained)
    }
}

pub fn train_classifier(train: &Dataset, spec: &ClassifierSpec) -> Result<TrainedClassifier> {
    let model = fit_logistic(train, &spec.logistic)?;
    let cv_posteriors = cross_val_posteriors(train, spec.folds, &spec.logistic, spec.seed)?;
    Ok(TrainedClassifier {
        model,
        cv_posteriors,
    })
}

/// Classifier plus aggregation method.
pub struct Aggregative<A> {
    classifier: ClassifierSpec,
    method: A,
    model: Option<LogisticModel>,
    cache: Option<Arc<ClassifierCache>>,
}

impl<A: Aggregation> Aggregative<A> {
    pub fn new(classifier: ClassifierSpec, method: A) -> Self {
        Self {
            classifier,
            method,
            model: None,
            cache: None,
        }
    }

    pub fn with_cache(mut self, cache: Arc<ClassifierCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn method(&self) -> &A {
        &self.method
    }

    pub fn classifier(&self) -> Option<&LogisticModel> {
        self.model.as_ref()
    }

    /// Fits the aggregation on precomputed classifier outputs.
    pub fn fit_trained(&mut self, train: &Dataset, trained: &TrainedClassifier) -> Result<()> {
        self.method
            .fit(&trained.cv_posteriors, train.labels(), train.n_classes())?;
        self.model = Some(trained.model.clone());
        Ok(())
    }

    /// Posteriors the fitted classifier assigns to `bag`.
    pub fn posteriors(&self, bag: &Bag) -> Result<Posteriors> {
        self.model.as_ref().ok_or(QuantError::NotFitted)?.predict(bag)
    }
}

impl<A: Aggregation> Quantifier for Aggregative<A> {
    fn name(&self) -> String {
        self.method.name()
    }

    fn fit(&mut self, train: &Dataset) -> Result<()> {
        let trained = match &self.cache {
            Some(cache) => cache.get_or_train(train, &self.classifier)?,
            None => Arc::new(train_classifier(train, &self.classifier)?),
        };
        self.fit_trained(train, &trained)
    }

    fn quantify(&self, bag: &Bag) -> Result<Prevalence> {
        let posteriors = self.posteriors(bag)?;
        self.method.aggregate(&posteriors)
    }
}

pub(crate) fn check_classes(posteriors: &Posteriors, n: usize) -> Result<()> {
    if posteriors.n_classes() != n {
        return Err(QuantError::DimensionMismatch {
            expected: n,
            found: posteriors.n_classes(),
        });
    }
    Ok(())
}

/// Rows of `posteriors` belonging to each class; fails on an empty class.
pub(crate) fn split_by_class(posteriors: &Posteriors, labels: &[usize], n: usize) -> Result<Vec<Posteriors>> {
    if labels.len() != posteriors.n_rows() {
        return Err(QuantError::LengthMismatch {
            left: labels.len(),
            right: posteriors.n_rows(),
        });
    }
    crate::data::class_split(labels, n)
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            if rows.is_empty() {
                Err(QuantError::EmptyClass(i))
            } else {
                Ok(posteriors.select(&rows))
            }
        })
        .collect()
}
