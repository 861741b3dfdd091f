//! Dissimilarity functions between distributions.
//!
//! * [`discrete`]: divergences between histograms and the distribution
//!   matching loss used by the histogram baselines.
//! * [`montecarlo`]: f-divergences between densities estimated by
//!   importance sampling.
//! * [`cauchy_schwarz`]: the closed-form Cauchy-Schwarz divergence between
//!   Gaussian KDE mixtures, reduced to a handful of Gram sums.

pub mod cauchy_schwarz;
pub mod discrete;
pub mod montecarlo;

pub use cauchy_schwarz::{
    cs_divergence, cs_objective, cs_precompute, pairwise_kernel, test_self_sum, CsPrecomputation,
    CsTrainStats,
};
pub use discrete::{cs_discrete, dm_loss, hd2_discrete, topsoe_discrete, DiscreteDivergence};
pub use montecarlo::{importance_estimate, mc_f_divergence, Generator};
