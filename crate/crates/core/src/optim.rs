//! Derivative-free minimisation over the probability simplex.
//!
//! Points are parameterised as `alpha = softmax(0, z_1, .., z_{n-1})` so every
//! iterate is feasible, and `z` is searched with Nelder-Mead. Several starts
//! are tried (the uniform vector plus seeded random simplex points) and the
//! best result wins.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::prevalence::Prevalence;
use crate::protocol::kraemer_sample;

/// Entries below this are snapped to zero in the returned vector.
const SNAP_BELOW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Nelder-Mead iterations per start.
    pub max_iterations: usize,
    /// Convergence threshold on the spread of the simplex in prevalence space.
    pub x_tolerance: f64,
    /// Convergence threshold on the spread of objective values.
    pub f_tolerance: f64,
    /// Total number of starts, the first always being the uniform vector.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2_000,
            x_tolerance: 1e-8,
            f_tolerance: 1e-10,
            restarts: 5,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(QuantError::InvalidArgument(
                "max_iterations and restarts must be at least 1".into(),
            ));
        }
        if !(self.x_tolerance > 0.0) || !(self.f_tolerance > 0.0) {
            return Err(QuantError::InvalidArgument("tolerances must be positive".into()));
        }
        Ok(())
    }
}

fn softmax_pinned(z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = z.iter().fold(0.0f64, |m, &v| m.max(v));
    out.push((-max).exp());
    out.extend(z.iter().map(|v| (v - max).exp()));
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
}

fn to_logits(alpha: &[f64]) -> Vec<f64> {
    let base = alpha[0].max(1e-6).ln();
    alpha[1..].iter().map(|a| a.max(1e-6).ln() - base).collect()
}

struct Vertex {
    z: Vec<f64>,
    alpha: Vec<f64>,
    value: f64,
}

struct Problem<'a, F> {
    objective: &'a F,
    buffer: Vec<f64>,
}

impl<F: Fn(&[f64]) -> f64> Problem<'_, F> {
    fn vertex(&mut self, z: Vec<f64>) -> Vertex {
        softmax_pinned(&z, &mut self.buffer);
        let value = (self.objective)(&self.buffer);
        Vertex {
            z,
            alpha: self.buffer.clone(),
            // Non-finite values are treated as infinitely bad.
            value: if value.is_finite() { value } else { f64::INFINITY },
        }
    }
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    problem: &mut Problem<'_, F>,
    start: Vec<f64>,
    config: &OptimizerConfig,
) -> Vertex {
    let dim = start.len();
    let mut simplex: Vec<Vertex> = Vec::with_capacity(dim + 1);
    simplex.push(problem.vertex(start.clone()));
    for i in 0..dim {
        let mut z = start.clone();
        z[i] += 1.0;
        simplex.push(problem.vertex(z));
    }

    for _ in 0..config.max_iterations {
        simplex.sort_by(|a, b| a.value.total_cmp(&b.value));
        let best = &simplex[0];
        let worst = &simplex[dim];
        let f_spread = worst.value - best.value;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|v| v.alpha.iter().zip(&best.alpha).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if (f_spread <= config.f_tolerance || f_spread.is_nan()) && x_spread <= config.x_tolerance {
            break;
        }

        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, z) in centroid.iter_mut().zip(&v.z) {
                *c += z / dim as f64;
            }
        }
        let along = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[dim].z)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = problem.vertex(along(1.0));
        if reflected.value < simplex[0].value {
            let expanded = problem.vertex(along(2.0));
            simplex[dim] = if expanded.value < reflected.value {
                expanded
            } else {
                reflected
            };
            continue;
        }
        if reflected.value < simplex[dim - 1].value {
            simplex[dim] = reflected;
            continue;
        }
        let contracted = if reflected.value < simplex[dim].value {
            problem.vertex(along(0.5))
        } else {
            problem.vertex(along(-0.5))
        };
        if contracted.value < simplex[dim].value.min(reflected.value) {
            simplex[dim] = contracted;
            continue;
        }
        // Shrink towards the best vertex.
        let best_z = simplex[0].z.clone();
        for v in simplex.iter_mut().skip(1) {
            let z: Vec<f64> = best_z.iter().zip(&v.z).map(|(b, x)| b + 0.5 * (x - b)).collect();
            *v = problem.vertex(z);
        }
    }
    simplex.sort_by(|a, b| a.value.total_cmp(&b.value));
    simplex.swap_remove(0)
}

fn snap(alpha: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = alpha.iter().map(|&a| if a < SNAP_BELOW { 0.0 } else { a }).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Minimises `objective` over the `n`-class simplex.
///
/// Returns the minimiser and its objective value. Fails only if the objective
/// is not finite at the uniform vector.
pub fn minimize_on_simplex<F>(objective: F, n: usize, config: &OptimizerConfig) -> Result<(Prevalence, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    if n == 0 {
        return Err(QuantError::InvalidArgument("simplex dimension must be at least 1".into()));
    }
    let uniform = Prevalence::uniform(n);
    if n == 1 {
        let value = objective(uniform.as_slice());
        if !value.is_finite() {
            return Err(QuantError::NonFiniteObjective);
        }
        return Ok((uniform, value));
    }
    if !objective(uniform.as_slice()).is_finite() {
        return Err(QuantError::NonFiniteObjective);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![vec![0.0; n - 1]];
    for _ in 1..config.restarts {
        starts.push(to_logits(kraemer_sample(n, &mut rng).as_slice()));
    }

    let mut problem = Problem {
        objective: &objective,
        buffer: Vec::with_capacity(n),
    };
    let mut best: Option<Vertex> = None;
    for start in starts {
        let found = nelder_mead(&mut problem, start, config);
        if best.as_ref().is_none_or(|b| found.value < b.value) {
            best = Some(found);
        }
    }
    let best = best.expect("at least one start");

    let snapped = snap(&best.alpha);
    let snapped_value = objective(&snapped);
    let (alpha, value) = if snapped_value.is_finite() && snapped_value <= best.value {
        (snapped, snapped_value)
    } else {
        (best.alpha, best.value)
    };
    Ok((Prevalence::from_weights(alpha)?, value))
}
