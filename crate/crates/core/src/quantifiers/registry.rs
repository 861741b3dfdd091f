//! Name-based construction of every quantifier.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::counting::{AdjustedCount, ClassifyAndCount, ProbabilisticAdjustedCount};
use super::dirichlet::DirichletMl;
use super::dm::DistributionMatching;
use super::emq::Emq;
use super::hdy::Hdy;
use super::kdey::{KdeyCs, KdeyHd, KdeyMl};
use super::{Aggregation, Aggregative, ClassifierCache, ClassifierSpec, Quantifier};
use crate::classifier::{ClassWeighting, LogisticConfig};
use crate::density::HistogramLayout;
use crate::divergence::DiscreteDivergence;
use crate::error::{QuantError, Result};
use crate::optim::OptimizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MethodKind {
    Cc,
    Acc,
    Pacc,
    Emq,
    Hdy,
    HdyOva,
    DmT,
    DmHd,
    DmCs,
    KdeyHd,
    KdeyCs,
    KdeyMl,
    Dir,
}

impl MethodKind {
    pub const ALL: [MethodKind; 13] = [
        MethodKind::Cc,
        MethodKind::Acc,
        MethodKind::Pacc,
        MethodKind::Emq,
        MethodKind::Hdy,
        MethodKind::HdyOva,
        MethodKind::DmT,
        MethodKind::DmHd,
        MethodKind::DmCs,
        MethodKind::KdeyHd,
        MethodKind::KdeyCs,
        MethodKind::KdeyMl,
        MethodKind::Dir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Cc => "CC",
            MethodKind::Acc => "ACC",
            MethodKind::Pacc => "PACC",
            MethodKind::Emq => "EMQ",
            MethodKind::Hdy => "HDy",
            MethodKind::HdyOva => "HDy-OvA",
            MethodKind::DmT => "DM-T",
            MethodKind::DmHd => "DM-HD",
            MethodKind::DmCs => "DM-CS",
            MethodKind::KdeyHd => "KDEy-HD",
            MethodKind::KdeyCs => "KDEy-CS",
            MethodKind::KdeyMl => "KDEy-ML",
            MethodKind::Dir => "DIR",
        }
    }

    pub fn uses_bandwidth(self) -> bool {
        matches!(self, MethodKind::KdeyHd | MethodKind::KdeyCs | MethodKind::KdeyMl)
    }

    pub fn uses_bins(self) -> bool {
        matches!(self, MethodKind::DmT | MethodKind::DmHd | MethodKind::DmCs)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| QuantError::InvalidArgument(format!("unknown method `{s}`")))
    }
}

impl TryFrom<String> for MethodKind {
    type Error = QuantError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodKind> for String {
    fn from(k: MethodKind) -> String {
        k.name().to_string()
    }
}

/// One point of a model-selection grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub c: f64,
    pub class_weight: ClassWeighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

impl Hyperparameters {
    pub const DEFAULT_BANDWIDTH: f64 = 0.1;
    pub const DEFAULT_BINS: usize = 8;
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            c: 1.0,
            class_weight: ClassWeighting::None,
            bandwidth: None,
            bins: None,
        }
    }
}

impl fmt::Display for Hyperparameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = match self.class_weight {
            ClassWeighting::Balanced => "balanced",
            ClassWeighting::None => "none",
        };
        write!(f, "C={} weight={w}", self.c)?;
        if let Some(h) = self.bandwidth {
            write!(f, " h={h}")?;
        }
        if let Some(b) = self.bins {
            write!(f, " b={b}")?;
        }
        Ok(())
    }
}

/// Settings shared by every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub folds: usize,
    pub seed: u64,
    pub mc_trials: usize,
    pub optimizer: OptimizerConfig,
    pub layout: HistogramLayout,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            mc_trials: KdeyHd::DEFAULT_TRIALS,
            optimizer: OptimizerConfig::default(),
            layout: HistogramLayout::Averaged,
        }
    }
}

fn boxed<A: Aggregation + 'static>(
    spec: ClassifierSpec,
    method: A,
    cache: Option<Arc<ClassifierCache>>,
) -> Box<dyn Quantifier> {
    let q = Aggregative::new(spec, method);
    Box::new(match cache {
        Some(c) => q.with_cache(c),
        None => q,
    })
}

/// Builds an unfitted quantifier. Methods sharing `cache` and classifier
/// hyperparameters train the classifier once per dataset.
pub fn build_quantifier(
    kind: MethodKind,
    hp: &Hyperparameters,
    settings: &MethodSettings,
    cache: Option<Arc<ClassifierCache>>,
) -> Result<Box<dyn Quantifier>> {
    if !(hp.c.is_finite() && hp.c > 0.0) {
        return Err(QuantError::InvalidArgument(format!("C must be positive, got {}", hp.c)));
    }
    let spec = ClassifierSpec {
        logistic: LogisticConfig::new(hp.c, hp.class_weight),
        folds: settings.folds,
        seed: settings.seed,
    };
    let h = hp.bandwidth.unwrap_or(Hyperparameters::DEFAULT_BANDWIDTH);
    if kind.uses_bandwidth() && !(h.is_finite() && h > 0.0) {
        return Err(QuantError::NonPositiveBandwidth(h));
    }
    let bins = hp.bins.unwrap_or(Hyperparameters::DEFAULT_BINS);
    if kind.uses_bins() && bins < 2 {
        return Err(QuantError::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let opt = settings.optimizer;
    let dm = |d| DistributionMatching::new(bins, d, settings.layout, opt);
    Ok(match kind {
        MethodKind::Cc => boxed(spec, ClassifyAndCount::new(), cache),
        MethodKind::Acc => boxed(spec, AdjustedCount::new(), cache),
        MethodKind::Pacc => boxed(spec, ProbabilisticAdjustedCount::new(), cache),
        MethodKind::Emq => boxed(spec, Emq::default(), cache),
        MethodKind::Hdy => boxed(spec, Hdy::new(), cache),
        MethodKind::HdyOva => boxed(spec, Hdy::one_vs_all(), cache),
        MethodKind::DmT => boxed(spec, dm(DiscreteDivergence::Topsoe), cache),
        MethodKind::DmHd => boxed(spec, dm(DiscreteDivergence::HellingerSquared), cache),
        MethodKind::DmCs => boxed(spec, dm(DiscreteDivergence::CauchySchwarz), cache),
        MethodKind::KdeyHd => boxed(spec, KdeyHd::new(h, settings.mc_trials, settings.seed, opt), cache),
        MethodKind::KdeyCs => boxed(spec, KdeyCs::new(h, opt), cache),
        MethodKind::KdeyMl => boxed(spec, KdeyMl::new(h, opt), cache),
        MethodKind::Dir => boxed(spec, DirichletMl::new(opt), cache),
    })
}
