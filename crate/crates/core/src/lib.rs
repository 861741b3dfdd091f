//! Class prevalence estimation under label shift.
//!
//! The main entry points are the quantifiers in [`quantifiers`], built by
//! name through [`quantifiers::build_quantifier`], and the evaluation
//! machinery in [`protocol`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;

pub mod classifier;
pub mod data;
pub mod density;
pub mod divergence;
pub mod optim;
pub mod prevalence;
pub mod protocol;
pub mod quantifiers;

pub use classifier::{ClassWeighting, LogisticConfig, LogisticModel};
pub use data::{Bag, Dataset, Posteriors};
pub use error::{QuantError, Result};
pub use optim::{minimize_on_simplex, OptimizerConfig};
pub use prevalence::Prevalence;
pub use protocol::{EvaluationReport, Loss, ProtocolConfig};
pub use quantifiers::{build_quantifier, Hyperparameters, MethodKind, MethodSettings, Quantifier};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
