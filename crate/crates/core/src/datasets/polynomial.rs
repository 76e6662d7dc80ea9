//! Polynomial derivative / anti-derivative benchmarks on `[-10, 10]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

/// Half-width of the polynomial domain.
pub const POLY_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolyTask {
    /// Cubics to their derivatives (quadratics).
    Derivative,
    /// Quadratics to their anti-derivatives with `s(0) = 0` (cubics).
    AntiDerivative,
}

impl PolyTask {
    pub fn input_degree(self) -> usize {
        match self {
            PolyTask::Derivative => 3,
            PolyTask::AntiDerivative => 2,
        }
    }

    pub fn apply(self, f: &Polynomial) -> Polynomial {
        match self {
            PolyTask::Derivative => f.derivative(),
            PolyTask::AntiDerivative => f.antiderivative(),
        }
    }
}

/// Dense polynomial, coefficients in ascending monomial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, c)| j as f64 * c)
            .collect::<Vec<_>>();
        Polynomial {
            coeffs: if coeffs.is_empty() { vec![0.0] } else { coeffs },
        }
    }

    /// Anti-derivative vanishing at zero.
    pub fn antiderivative(&self) -> Polynomial {
        let mut coeffs = vec![0.0];
        coeffs.extend(self.coeffs.iter().enumerate().map(|(j, c)| c / (j + 1) as f64));
        Polynomial { coeffs }
    }

    pub fn scaled(&self, a: f64) -> Polynomial {
        Polynomial {
            coeffs: self.coeffs.iter().map(|c| a * c).collect(),
        }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Polynomial, b: f64) -> Polynomial {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n)
            .map(|i| {
                a * self.coeffs.get(i).copied().unwrap_or(0.0)
                    + b * other.coeffs.get(i).copied().unwrap_or(0.0)
            })
            .collect();
        Polynomial { coeffs }
    }

    /// Draws `u_j ~ U[-scale, scale]` in the rescaled monomials `(x/10)^j`,
    /// so values over the domain stay within a few multiples of `scale`.
    pub fn random(degree: usize, scale: f64, rng: &mut impl Rng) -> Polynomial {
        let coeffs = (0..=degree)
            .map(|j| rng.random_range(-scale..=scale) / POLY_HALF_WIDTH.powi(j as i32))
            .collect();
        Polynomial { coeffs }
    }
}

/// Where input and output samples are placed.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Sampling {
    /// Fresh i.i.d. uniform locations per function.
    #[default]
    Random,
    /// The same locations for every function.
    Fixed { xs: Tensor, ys: Tensor },
}

impl Sampling {
    /// Evenly spaced grids over `[-10, 10]`.
    pub fn uniform_grid(m: usize, p: usize) -> Self {
        Sampling::Fixed {
            xs: linspace_column(-POLY_HALF_WIDTH, POLY_HALF_WIDTH, m),
            ys: linspace_column(-POLY_HALF_WIDTH, POLY_HALF_WIDTH, p),
        }
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

pub(crate) fn linspace_column(lo: f64, hi: f64, n: usize) -> Tensor {
    Tensor::from_parts(vec![n, 1], linspace(lo, hi, n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyConfig {
    pub task: PolyTask,
    pub m: usize,
    pub p: usize,
    pub scale: f64,
    pub sampling: Sampling,
}

impl PolyConfig {
    pub fn new(task: PolyTask, m: usize, p: usize) -> Self {
        PolyConfig {
            task,
            m,
            p,
            scale: 3.0,
            sampling: Sampling::Random,
        }
    }
}

/// Per-function RNG; function `i` of a batch seeded `seed` uses `seed + i`.
pub(crate) fn function_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

/// Draws the polynomial for function `index` of the stream seeded `seed`.
pub fn draw_polynomial(task: PolyTask, scale: f64, seed: u64, index: usize) -> (Polynomial, ChaCha8Rng) {
    let mut rng = function_rng(seed, index);
    let f = Polynomial::random(task.input_degree(), scale, &mut rng);
    (f, rng)
}

/// Samples `f` and `Tf` at the configured locations.
pub fn sample_pair(
    f: &Polynomial,
    tf: &Polynomial,
    config: &PolyConfig,
    rng: &mut impl Rng,
) -> Result<SampleSet> {
    let (xs, ys) = match &config.sampling {
        Sampling::Random => {
            let xs = (0..config.m)
                .map(|_| rng.random_range(-POLY_HALF_WIDTH..=POLY_HALF_WIDTH))
                .collect();
            let ys = (0..config.p)
                .map(|_| rng.random_range(-POLY_HALF_WIDTH..=POLY_HALF_WIDTH))
                .collect();
            (
                Tensor::from_parts(vec![config.m, 1], xs),
                Tensor::from_parts(vec![config.p, 1], ys),
            )
        }
        Sampling::Fixed { xs, ys } => (xs.clone(), ys.clone()),
    };
    let fs = xs.map(|x| f.eval(x));
    let tfs = ys.map(|y| tf.eval(y));
    SampleSet::new(xs, fs, ys, tfs)
}

/// A batch of `(f, Tf)` pairs; function `i` depends only on `seed + i`.
pub fn gen_polynomial_batch(
    task: PolyTask,
    batch: usize,
    m: usize,
    p: usize,
    seed: u64,
    scale: f64,
) -> Result<Vec<SampleSet>> {
    let config = PolyConfig {
        scale,
        ..PolyConfig::new(task, m, p)
    };
    gen_polynomial_batch_with(&config, batch, seed)
}

pub fn gen_polynomial_batch_with(config: &PolyConfig, batch: usize, seed: u64) -> Result<Vec<SampleSet>> {
    if !(config.scale > 0.0) {
        return Err(Error::Config(format!("scale must be > 0, got {}", config.scale)));
    }
    (0..batch)
        .map(|i| {
            let (f, mut rng) = draw_polynomial(config.task, config.scale, seed, i);
            let tf = config.task.apply(&f);
            sample_pair(&f, &tf, config, &mut rng)
        })
        .collect()
}
