//! One-dimensional Gaussian random fields.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Diagonal jitter, relative to the kernel variance, added before factoring a grid covariance.
pub const GRF_JITTER: f64 = 1e-10;

/// Fourier modes kept by the periodic field; mode 64 has amplitude below 1e-9.
pub const PERIODIC_MODES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Covariance {
    /// `k(x, x') = variance · exp(-(x - x')² / (2 length_scale²))`.
    SquaredExponential { length_scale: f64, variance: f64 },
    /// Period-1 field whose `κ`-th Fourier mode has standard deviation
    /// `25 (4π²κ² + 25)⁻²`.
    PeriodicSobolev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub grid: Vec<f64>,
    pub covariance: Covariance,
}

/// Amplitude of Fourier mode `kappa` in the periodic field.
pub fn periodic_amplitude(kappa: usize) -> f64 {
    let w = 4.0 * PI * PI * (kappa * kappa) as f64 + 25.0;
    25.0 / (w * w)
}

/// A periodic field stored by its Fourier coefficients, so it can be evaluated anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    /// Constant mode.
    pub mean: f64,
    /// `(cos, sin)` coefficients for `κ = 1..`.
    pub modes: Vec<(f64, f64)>,
}

impl PeriodicField {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let mean = periodic_amplitude(0) * rng.sample::<f64, _>(StandardNormal);
        let modes = (1..=PERIODIC_MODES)
            .map(|kappa| {
                let a = periodic_amplitude(kappa) * std::f64::consts::SQRT_2;
                (
                    a * rng.sample::<f64, _>(StandardNormal),
                    a * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        PeriodicField { mean, modes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let mut v = self.mean;
        for (i, (c, s)) in self.modes.iter().enumerate() {
            let w = 2.0 * PI * (i + 1) as f64 * x;
            v += c * w.cos() + s * w.sin();
        }
        v
    }

    /// Pointwise variance `Σ a_κ²` (with both quadrature components).
    pub fn variance() -> f64 {
        periodic_amplitude(0).powi(2)
            + (1..=PERIODIC_MODES)
                .map(|k| 2.0 * periodic_amplitude(k).powi(2))
                .sum::<f64>()
    }
}

/// Draws repeated field samples on a fixed grid.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    spec: GrfSpec,
    chol: Option<Cholesky>,
}

impl GrfSampler {
    pub fn new(spec: GrfSpec) -> Result<Self> {
        if spec.grid.is_empty() || spec.grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("GRF grid must be non-empty and finite".into()));
        }
        let chol = match spec.covariance {
            Covariance::SquaredExponential {
                length_scale,
                variance,
            } => {
                if !(length_scale > 0.0) || !(variance > 0.0) {
                    return Err(Error::Config(format!(
                        "GRF length scale and variance must be > 0, got {length_scale}, {variance}"
                    )));
                }
                let n = spec.grid.len();
                let mut k = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        let d = spec.grid[i] - spec.grid[j];
                        k[i * n + j] = variance * (-d * d / (2.0 * length_scale * length_scale)).exp();
                    }
                    k[i * n + i] += GRF_JITTER * variance;
                }
                Some(Cholesky::factor(&k, n).ok_or_else(|| {
                    Error::Conditioning(format!(
                        "GRF covariance on {n} points is not positive definite with jitter {GRF_JITTER:e}"
                    ))
                })?)
            }
            Covariance::PeriodicSobolev => None,
        };
        Ok(GrfSampler { spec, chol })
    }

    pub fn grid(&self) -> &[f64] {
        &self.spec.grid
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        match &self.chol {
            Some(c) => {
                let n = self.spec.grid.len();
                let l = c.lower();
                let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                (0..n)
                    .map(|i| (0..=i).map(|j| l[i * n + j] * z[j]).sum())
                    .collect()
            }
            None => {
                let f = PeriodicField::sample(rng);
                self.spec.grid.iter().map(|&x| f.eval(x)).collect()
            }
        }
    }
}

/// One field sample on `spec.grid`.
pub fn sample_grf(spec: &GrfSpec, seed: u64) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let sampler = GrfSampler::new(spec.clone())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(&mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn empirical_variance(sampler: &GrfSampler, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = sampler.grid().len();
        let mut acc = vec![0.0; g];
        for _ in 0..n {
            for (a, v) in acc.iter_mut().zip(sampler.sample(&mut rng)) {
                *a += v * v;
            }
        }
        acc.iter().map(|a| a / n as f64).collect()
    }

    #[test]
    fn squared_exponential_variance_matches_kernel() {
        let grid: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let s = GrfSampler::new(GrfSpec {
            grid,
            covariance: Covariance::SquaredExponential {
                length_scale: 0.04,
                variance: 1.0,
            },
        })
        .unwrap();
        let var = empirical_variance(&s, 4000);
        let mean = var.iter().sum::<f64>() / var.len() as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean variance {mean}");
    }

    #[test]
    fn periodic_variance_matches_spectrum() {
        let grid: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let s = GrfSampler::new(GrfSpec {
            grid,
            covariance: Covariance::PeriodicSobolev,
        })
        .unwrap();
        let var = empirical_variance(&s, 4000);
        let mean = var.iter().sum::<f64>() / var.len() as f64;
        let expect = PeriodicField::variance();
        assert!((mean / expect - 1.0).abs() < 0.1, "{mean} vs {expect}");
    }

    #[test]
    fn vanishing_variance_gives_vanishing_field() {
        let spec = GrfSpec {
            grid: (0..40).map(|i| i as f64 / 39.0).collect(),
            covariance: Covariance::SquaredExponential {
                length_scale: 0.04,
                variance: 1e-20,
            },
        };
        let f = sample_grf(&spec, 5).unwrap();
        assert!(f.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn periodic_field_is_periodic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = PeriodicField::sample(&mut rng);
        assert!((f.eval(0.0) - f.eval(1.0)).abs() < 1e-12);
    }

    #[test]
    fn bad_covariance_rejected() {
        let spec = GrfSpec {
            grid: vec![0.0, 1.0],
            covariance: Covariance::SquaredExponential {
                length_scale: 0.0,
                variance: 1.0,
            },
        };
        assert!(matches!(sample_grf(&spec, 0), Err(Error::Config(_))));
    }
}
