//! Benchmark datasets, the solvers behind them, and dataset persistence.
//!
//! Every generator draws function `i` of a split from its own RNG seeded
//! `split_seed + i`, so generation is reproducible and order-independent.
//! Test functions use [`test_seed`], a stream disjoint from the training one.

pub mod burgers;
pub mod darcy;
pub mod grf;
pub mod heat;
pub mod io;
pub mod polynomial;

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

pub use burgers::solve_burgers;
pub use darcy::solve_darcy_1d;
pub use grf::{sample_grf, Covariance, GrfSampler, GrfSpec};
pub use heat::{gen_heat, HeatGrid};
pub use io::{read_dataset, read_manifest, write_dataset, Dataset, Manifest};
pub use polynomial::{gen_polynomial_batch, gen_polynomial_batch_with, PolyConfig, PolyTask, Polynomial, Sampling};

use polynomial::{function_rng, linspace, linspace_column};

/// Offset separating test seeds from training seeds.
pub const TEST_STREAM_OFFSET: u64 = 1 << 40;

pub fn test_seed(seed: u64) -> u64 {
    seed.wrapping_add(TEST_STREAM_OFFSET)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Derivative,
    #[serde(alias = "anti-derivative")]
    AntiDerivative,
    Darcy1d,
    Heat,
    Burgers,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 5] = [
        DatasetKind::Derivative,
        DatasetKind::AntiDerivative,
        DatasetKind::Darcy1d,
        DatasetKind::Heat,
        DatasetKind::Burgers,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Derivative => "derivative",
            DatasetKind::AntiDerivative => "antiderivative",
            DatasetKind::Darcy1d => "darcy1d",
            DatasetKind::Heat => "heat",
            DatasetKind::Burgers => "burgers",
        }
    }

    pub fn poly_task(self) -> Option<PolyTask> {
        match self {
            DatasetKind::Derivative => Some(PolyTask::Derivative),
            DatasetKind::AntiDerivative => Some(PolyTask::AntiDerivative),
            _ => None,
        }
    }

    /// Whether training can draw fresh functions indefinitely.
    pub fn is_generative(self) -> bool {
        self.poly_task().is_some()
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anti-derivative" => Ok(DatasetKind::AntiDerivative),
            _ => DatasetKind::ALL
                .into_iter()
                .find(|k| k.name() == s)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown dataset {s:?}; expected one of derivative, antiderivative, darcy1d, heat, burgers"
                    ))
                }),
        }
    }
}

/// Overrides on top of each dataset's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<usize>,
    /// Heat: `NXxNYxNT`; Burgers: `NXxNT` output grid.
    pub grid: Option<String>,
    /// Polynomial coefficient half-range.
    pub scale: Option<f64>,
    /// Polynomials: evenly spaced shared grids instead of per-function random locations.
    pub fixed_grid: bool,
    /// Burgers viscosity.
    pub nu: Option<f64>,
    /// Burgers solver resolution (power of two).
    pub solver_nx: Option<usize>,
    /// Darcy forcing length scale.
    pub length_scale: Option<f64>,
    /// Darcy forcing variance.
    pub variance: Option<f64>,
}

pub const POLY_DEFAULT_SCALE: f64 = 3.0;
pub const DARCY_LENGTH_SCALE: f64 = 0.04;
pub const BURGERS_NU: f64 = 0.1;
pub const BURGERS_SOLVER_NX: usize = 128;

/// `(n_train, n_test, m, p)` defaults.
pub fn default_sizes(kind: DatasetKind) -> (usize, usize, usize, usize) {
    match kind {
        DatasetKind::Derivative | DatasetKind::AntiDerivative => (7000, 700, 100, 100),
        DatasetKind::Darcy1d => (800, 200, 40, 40),
        DatasetKind::Heat => (250, 30, 1, HeatGrid::default().points()),
        DatasetKind::Burgers => (2000, 500, 101, 101 * 101),
    }
}

fn parse_grid(s: &str, n: usize) -> Result<Vec<usize>> {
    let v: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("grid {s:?} must be {n} sizes joined by 'x'")))?;
    if v.len() != n || v.iter().any(|&k| k < 2) {
        return Err(Error::Config(format!(
            "grid {s:?} must be {n} sizes ≥ 2 joined by 'x'"
        )));
    }
    Ok(v)
}

/// Polynomial configuration implied by the options.
pub fn poly_config(task: PolyTask, opts: &DatasetOptions) -> PolyConfig {
    let kind = match task {
        PolyTask::Derivative => DatasetKind::Derivative,
        PolyTask::AntiDerivative => DatasetKind::AntiDerivative,
    };
    let (_, _, m0, p0) = default_sizes(kind);
    let (m, p) = (opts.m.unwrap_or(m0), opts.p.unwrap_or(p0));
    PolyConfig {
        task,
        m,
        p,
        scale: opts.scale.unwrap_or(POLY_DEFAULT_SCALE),
        sampling: if opts.fixed_grid {
            Sampling::uniform_grid(m, p)
        } else {
            Sampling::Random
        },
    }
}

fn darcy_split(
    sampler: &GrfSampler,
    grid: &Tensor,
    n: usize,
    seed: u64,
) -> Result<Vec<SampleSet>> {
    (0..n)
        .map(|i| {
            let mut rng = function_rng(seed, i);
            let u = sampler.sample(&mut rng);
            let s = solve_darcy_1d(&u, sampler.grid())?;
            let n = u.len();
            SampleSet::new(
                grid.clone(),
                Tensor::from_parts(vec![n, 1], u),
                grid.clone(),
                Tensor::from_parts(vec![n, 1], s),
            )
        })
        .collect()
}

fn heat_split(grid: HeatGrid, n: usize, seed: u64) -> Result<Vec<SampleSet>> {
    (0..n)
        .map(|i| {
            let mut rng = function_rng(seed, i);
            let t0 = rng.random_range(0.0..=1.0);
            // Log-uniform so every decade of diffusivity is represented.
            let alpha = 10f64.powf(rng.random_range(-2.0..=0.0));
            gen_heat(t0, alpha, grid)
        })
        .collect()
}

struct BurgersSetup {
    nu: f64,
    solver_nx: usize,
    xs_in: Tensor,
    x_out: Vec<f64>,
    t_out: Vec<f64>,
}

fn burgers_split(setup: &BurgersSetup, n: usize, seed: u64) -> Result<Vec<SampleSet>> {
    let mut solver = burgers::BurgersSolver::new(setup.solver_nx, setup.nu)?;
    let solver_grid: Vec<f64> = (0..setup.solver_nx)
        .map(|j| j as f64 / setup.solver_nx as f64)
        .collect();
    let (nx, nt) = (setup.x_out.len(), setup.t_out.len());
    let mut ys = Vec::with_capacity(nx * nt * 2);
    for &t in &setup.t_out {
        for &x in &setup.x_out {
            ys.extend([x, t]);
        }
    }
    let ys = Tensor::from_parts(vec![nx * nt, 2], ys);
    (0..n)
        .map(|i| {
            let mut rng = function_rng(seed, i);
            let field = grf::PeriodicField::sample(&mut rng);
            let f0: Vec<f64> = solver_grid.iter().map(|&x| field.eval(x)).collect();
            let hats = solver.evolve(&f0, &setup.t_out)?;
            let mut tfs = Vec::with_capacity(nx * nt);
            for hat in &hats {
                tfs.extend(setup.x_out.iter().map(|&x| burgers::spectral_eval(hat, x)));
            }
            let fs = setup.xs_in.map(|x| field.eval(x));
            SampleSet::new(
                setup.xs_in.clone(),
                fs,
                ys.clone(),
                Tensor::from_parts(vec![nx * nt, 1], tfs),
            )
        })
        .collect()
}

/// Builds a complete dataset (train and test splits) with its manifest.
pub fn generate(kind: DatasetKind, opts: &DatasetOptions, seed: u64) -> Result<Dataset> {
    let (n_train0, n_test0, m0, _) = default_sizes(kind);
    let n_train = opts.n_train.unwrap_or(n_train0);
    let n_test = opts.n_test.unwrap_or(n_test0);
    let params = serde_json::to_value(opts).expect("options serialize");
    let manifest = |m, p, x_dim, y_dim, d_in, params: serde_json::Value| Manifest {
        name: kind.name().to_string(),
        n_train,
        n_test,
        m,
        p,
        x_dim,
        y_dim,
        d_in,
        d_out: 1,
        params,
        seed,
    };
    match kind {
        DatasetKind::Derivative | DatasetKind::AntiDerivative => {
            let cfg = poly_config(kind.poly_task().unwrap(), opts);
            let train = gen_polynomial_batch_with(&cfg, n_train, seed)?;
            let test = gen_polynomial_batch_with(&cfg, n_test, test_seed(seed))?;
            let mut params = params;
            params["scale"] = cfg.scale.into();
            Dataset::new(manifest(cfg.m, cfg.p, 1, 1, 1, params), train, test)
        }
        DatasetKind::Darcy1d => {
            let m = opts.m.unwrap_or(m0);
            if opts.p.is_some_and(|p| p != m) {
                return Err(Error::Config(
                    "Darcy input and output share one grid, so p must equal m".into(),
                ));
            }
            let length_scale = opts.length_scale.unwrap_or(DARCY_LENGTH_SCALE);
            let variance = opts.variance.unwrap_or(1.0);
            let sampler = GrfSampler::new(GrfSpec {
                grid: linspace(0.0, 1.0, m),
                covariance: Covariance::SquaredExponential {
                    length_scale,
                    variance,
                },
            })?;
            let grid = linspace_column(0.0, 1.0, m);
            let train = darcy_split(&sampler, &grid, n_train, seed)?;
            let test = darcy_split(&sampler, &grid, n_test, test_seed(seed))?;
            let mut params = params;
            params["length_scale"] = length_scale.into();
            params["variance"] = variance.into();
            Dataset::new(manifest(m, m, 1, 1, 1, params), train, test)
        }
        DatasetKind::Heat => {
            let grid = match &opts.grid {
                Some(g) => HeatGrid::parse(g)?,
                None => HeatGrid::default(),
            };
            let train = heat_split(grid, n_train, seed)?;
            let test = heat_split(grid, n_test, test_seed(seed))?;
            let mut params = params;
            params["grid"] = format!("{}x{}x{}", grid.nx, grid.ny, grid.nt).into();
            Dataset::new(manifest(1, grid.points(), 1, 3, 2, params), train, test)
        }
        DatasetKind::Burgers => {
            let m = opts.m.unwrap_or(m0);
            let g = match &opts.grid {
                Some(g) => parse_grid(g, 2)?,
                None => vec![101, 101],
            };
            let setup = BurgersSetup {
                nu: opts.nu.unwrap_or(BURGERS_NU),
                solver_nx: opts.solver_nx.unwrap_or(BURGERS_SOLVER_NX),
                xs_in: linspace_column(0.0, 1.0, m),
                x_out: linspace(0.0, 1.0, g[0]),
                t_out: linspace(0.0, 1.0, g[1]),
            };
            let train = burgers_split(&setup, n_train, seed)?;
            let test = burgers_split(&setup, n_test, test_seed(seed))?;
            let mut params = params;
            params["nu"] = setup.nu.into();
            params["solver_nx"] = setup.solver_nx.into();
            params["grid"] = format!("{}x{}", g[0], g[1]).into();
            Dataset::new(manifest(m, g[0] * g[1], 1, 2, 1, params), train, test)
        }
    }
}

/// Supplies training batches.
pub trait SampleSource {
    fn next_batch(&mut self, n: usize) -> Result<Vec<SampleSet>>;
}

/// Fresh polynomial functions on every call.
#[derive(Debug, Clone)]
pub struct PolynomialStream {
    pub config: PolyConfig,
    seed: u64,
    cursor: usize,
}

impl PolynomialStream {
    pub fn new(config: PolyConfig, seed: u64) -> Self {
        PolynomialStream {
            config,
            seed,
            cursor: 0,
        }
    }
}

impl SampleSource for PolynomialStream {
    fn next_batch(&mut self, n: usize) -> Result<Vec<SampleSet>> {
        let out = (self.cursor..self.cursor + n)
            .map(|i| {
                let (f, mut rng) = polynomial::draw_polynomial(self.config.task, self.config.scale, self.seed, i);
                let tf = self.config.task.apply(&f);
                polynomial::sample_pair(&f, &tf, &self.config, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        self.cursor += n;
        Ok(out)
    }
}

/// Batches drawn without replacement from a fixed pool, reshuffled every epoch.
#[derive(Debug, Clone)]
pub struct FiniteSource {
    samples: Vec<SampleSet>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl FiniteSource {
    pub fn new(samples: Vec<SampleSet>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("training pool is empty".into()));
        }
        let order = (0..samples.len()).collect();
        let mut s = FiniteSource {
            samples,
            order,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn samples(&self) -> &[SampleSet] {
        &self.samples
    }
}

impl SampleSource for FiniteSource {
    fn next_batch(&mut self, n: usize) -> Result<Vec<SampleSet>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.samples[self.order[self.cursor]].clone());
            self.cursor += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in DatasetKind::ALL {
            assert_eq!(k.name().parse::<DatasetKind>().unwrap(), k);
        }
        assert!("nope".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn darcy_defaults_match_table() {
        let opts = DatasetOptions {
            n_train: Some(4),
            n_test: Some(2),
            ..Default::default()
        };
        let d = generate(DatasetKind::Darcy1d, &opts, 0).unwrap();
        assert_eq!((d.manifest.m, d.manifest.p), (40, 40));
        assert_eq!(default_sizes(DatasetKind::Darcy1d), (800, 200, 40, 40));
    }

    #[test]
    fn stream_matches_batch_generation() {
        let cfg = PolyConfig::new(PolyTask::AntiDerivative, 5, 6);
        let mut s = PolynomialStream::new(cfg.clone(), 11);
        let mut got = s.next_batch(2).unwrap();
        got.extend(s.next_batch(3).unwrap());
        assert_eq!(got, gen_polynomial_batch_with(&cfg, 5, 11).unwrap());
    }

    #[test]
    fn finite_source_visits_every_sample_each_epoch() {
        let pool = gen_polynomial_batch(PolyTask::Derivative, 6, 3, 3, 0, 3.0).unwrap();
        let mut src = FiniteSource::new(pool.clone(), 1).unwrap();
        let epoch = src.next_batch(6).unwrap();
        for s in &pool {
            assert!(epoch.contains(s));
        }
    }

    #[test]
    fn heat_and_burgers_shapes() {
        let opts = DatasetOptions {
            n_train: Some(2),
            n_test: Some(1),
            grid: Some("4x4x3".into()),
            ..Default::default()
        };
        let d = generate(DatasetKind::Heat, &opts, 0).unwrap();
        assert_eq!(d.manifest.p, 48);
        assert_eq!(d.manifest.params["grid"], "4x4x3");
        let opts = DatasetOptions {
            n_train: Some(1),
            n_test: Some(1),
            m: Some(11),
            grid: Some("9x5".into()),
            solver_nx: Some(32),
            ..Default::default()
        };
        let d = generate(DatasetKind::Burgers, &opts, 0).unwrap();
        assert_eq!((d.manifest.m, d.manifest.p, d.manifest.y_dim), (11, 45, 2));
        // At t = 0 the output equals the input field.
        let s = &d.train[0];
        assert!((s.tfs.get2(0, 0) - s.fs.get2(0, 0)).abs() < 1e-5);
    }
}
