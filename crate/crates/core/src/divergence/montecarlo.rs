use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{QuantError, Result};

/// Log-ratio clamp applied before exponentiating density ratios.
const LOG_RATIO_CLAMP: f64 = 700.0;

/// Convex generator `f` of an f-divergence `D_f(p||q) = E_q[f(p/q)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    /// `f(u) = u ln u`
    ReverseKld,
    /// `f(u) = (sqrt(u) - 1)^2`
    SquaredHellinger,
    /// `f(u) = -(u + 1) ln((u + 1) / 2) + u ln u`
    JensenShannon,
}

impl Generator {
    pub fn evaluate(self, u: f64) -> f64 {
        let xlogx = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
        match self {
            Self::ReverseKld => xlogx(u),
            Self::SquaredHellinger => {
                let s = u.sqrt() - 1.0;
                s * s
            }
            Self::JensenShannon => -(u + 1.0) * ((u + 1.0) / 2.0).ln() + xlogx(u),
        }
    }
}

/// Importance-sampling estimate `1/t sum f(p(x_i)/q(x_i)) q(x_i)/r(x_i)`
/// from log-densities at samples `x_i ~ r`.
pub fn importance_estimate(log_p: &[f64], log_q: &[f64], log_r: &[f64], f: Generator) -> Result<f64> {
    let t = log_p.len();
    if t == 0 {
        return Err(QuantError::TooFewExamples("no Monte Carlo samples".into()));
    }
    if log_q.len() != t || log_r.len() != t {
        return Err(QuantError::LengthMismatch {
            left: t,
            right: if log_q.len() != t { log_q.len() } else { log_r.len() },
        });
    }
    let total: f64 = log_p
        .iter()
        .zip(log_q)
        .zip(log_r)
        .map(|((&lp, &lq), &lr)| {
            let ratio = (lp - lq).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp();
            let weight = (lq - lr).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP).exp();
            f.evaluate(ratio) * weight
        })
        .sum();
    Ok(total / t as f64)
}

/// Monte Carlo estimate of `D_f(p||q)` using samples drawn from a reference
/// distribution `r` whose densities at the samples are `r_densities`.
pub fn mc_f_divergence<P, Q>(
    p: &P,
    q: &Q,
    samples: ArrayView2<'_, f64>,
    r_densities: &[f64],
    f: Generator,
) -> Result<f64>
where
    P: LogDensity + ?Sized,
    Q: LogDensity + ?Sized,
{
    if samples.nrows() != r_densities.len() {
        return Err(QuantError::LengthMismatch {
            left: samples.nrows(),
            right: r_densities.len(),
        });
    }
    if r_densities.iter().any(|&r| !(r > 0.0)) {
        return Err(QuantError::InvalidArgument(
            "reference densities must be strictly positive".into(),
        ));
    }
    let mut log_p = Vec::with_capacity(samples.nrows());
    let mut log_q = Vec::with_capacity(samples.nrows());
    for row in samples.outer_iter() {
        let x = row.to_vec();
        log_p.push(p.log_density(&x)?);
        log_q.push(q.log_density(&x)?);
    }
    let log_r: Vec<f64> = r_densities.iter().map(|r| r.ln()).collect();
    importance_estimate(&log_p, &log_q, &log_r, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{Kde, KdeMixture};
    use crate::prevalence::Prevalence;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [Generator; 3] = [
        Generator::ReverseKld,
        Generator::SquaredHellinger,
        Generator::JensenShannon,
    ];

    #[test]
    fn generators_vanish_at_one() {
        for f in ALL {
            assert_eq!(f.evaluate(1.0), 0.0, "{f:?}");
        }
    }

    #[test]
    fn generators_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for f in ALL {
            for _ in 0..1000 {
                let a: f64 = rng.random_range(1e-6..20.0);
                let b: f64 = rng.random_range(1e-6..20.0);
                let mid = f.evaluate(0.5 * (a + b));
                assert!(mid <= 0.5 * (f.evaluate(a) + f.evaluate(b)) + 1e-12, "{f:?} {a} {b}");
            }
        }
    }

    #[test]
    fn identical_densities_give_zero() {
        let p = Kde::new(array![[0.1], [0.4], [0.9]], 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mix = KdeMixture::new(vec![p.clone()], Prevalence::uniform(1)).unwrap();
        let samples = mix.sample(500, &mut rng);
        let r: Vec<f64> = p.log_densities(samples.view()).unwrap().iter().map(|v| v.exp()).collect();
        let v = mc_f_divergence(&p, &p, samples.view(), &r, Generator::SquaredHellinger).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn self_sampling_reduces_to_plain_average() {
        let p = Kde::new(array![[0.0], [0.3]], 0.2).unwrap();
        let q = Kde::new(array![[0.5], [0.6], [1.0]], 0.2).unwrap();
        let mix = KdeMixture::new(vec![q.clone()], Prevalence::uniform(1)).unwrap();
        let samples = mix.sample(2000, &mut ChaCha8Rng::seed_from_u64(2));
        let lq = q.log_densities(samples.view()).unwrap();
        let lp = p.log_densities(samples.view()).unwrap();
        let r: Vec<f64> = lq.iter().map(|v| v.exp()).collect();
        for f in ALL {
            let is = mc_f_divergence(&p, &q, samples.view(), &r, f).unwrap();
            let plain: f64 =
                lp.iter().zip(&lq).map(|(a, b)| f.evaluate((a - b).exp())).sum::<f64>() / 2000.0;
            assert!((is - plain).abs() < 1e-12, "{f:?}");
        }
    }

    #[test]
    fn length_and_positivity_checks() {
        let p = Kde::new(array![[0.0]], 0.2).unwrap();
        let s = array![[0.0], [1.0]];
        assert!(mc_f_divergence(&p, &p, s.view(), &[1.0], Generator::ReverseKld).is_err());
        assert!(mc_f_divergence(&p, &p, s.view(), &[1.0, 0.0], Generator::ReverseKld).is_err());
    }
}
