//! Browser bindings: sample a Darcy problem, evolve a Burgers field and differentiate
//! polynomials with a small basis-to-basis operator trained in the page.

use b2b::datasets::{generate, DatasetKind, DatasetOptions, PolyConfig, PolyTask, Polynomial, PolynomialStream};
use b2b::encoder::{train_function_encoder, BasisConfig, BasisSet, Domain, EncoderTrainConfig};
use b2b::operators::{b2b_fit_linear, B2BOperator, InputEncoding};
use b2b::sample::Side;
use b2b::Tensor;
use wasm_bindgen::prelude::*;

fn js(e: b2b::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One permeability draw `u` and its Darcy solution `s` on `m` uniform points of `[0, 1]`.
///
/// Returns `[x; m] ++ [u; m] ++ [s; m]`.
#[wasm_bindgen]
pub fn darcy_sample(seed: u32, m: usize) -> Result<Vec<f64>, JsError> {
    let opts = DatasetOptions {
        n_train: Some(1),
        n_test: Some(1),
        m: Some(m),
        ..DatasetOptions::default()
    };
    let d = generate(DatasetKind::Darcy1d, &opts, seed.into()).map_err(js)?;
    let s = &d.train[0];
    Ok([s.xs.data(), s.fs.data(), s.tfs.data()].concat())
}

/// A Burgers solution on an `nx × nt` grid over `[0, 1) × [0, 1]`, time-major.
#[wasm_bindgen]
pub fn burgers_field(seed: u32, nu: f64, nx: usize, nt: usize) -> Result<Vec<f64>, JsError> {
    let opts = DatasetOptions {
        n_train: Some(1),
        n_test: Some(1),
        grid: Some(format!("{nx}x{nt}")),
        nu: Some(nu),
        ..DatasetOptions::default()
    };
    let d = generate(DatasetKind::Burgers, &opts, seed.into()).map_err(js)?;
    Ok(d.train[0].tfs.data().to_vec())
}

const HALF_WIDTH: f64 = 10.0;
const POINTS: usize = 100;

/// A linear operator learned from random cubic polynomials and their derivatives.
#[wasm_bindgen]
pub struct DerivativeDemo {
    op: B2BOperator,
}

#[wasm_bindgen]
impl DerivativeDemo {
    /// Trains both bases for `steps` steps each, then fits the coefficient matrix.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, steps: usize) -> Result<DerivativeDemo, JsError> {
        let seed = u64::from(seed);
        let basis_cfg = BasisConfig {
            k: 8,
            hidden: vec![32, 32],
            ..BasisConfig::default()
        };
        let train_cfg = EncoderTrainConfig {
            steps: steps.max(1),
            ..EncoderTrainConfig::default()
        };
        let domain = Domain::interval(-HALF_WIDTH, HALF_WIDTH).map_err(js)?;
        let poly = PolyConfig::new(PolyTask::Derivative, POINTS, POINTS);
        let mut input = BasisSet::new(&basis_cfg, 1, Side::Input, domain.clone(), seed).map_err(js)?;
        let mut output = BasisSet::new(&basis_cfg, 1, Side::Output, domain, seed + 1).map_err(js)?;
        train_function_encoder(&mut input, &mut PolynomialStream::new(poly.clone(), seed), &train_cfg).map_err(js)?;
        train_function_encoder(&mut output, &mut PolynomialStream::new(poly.clone(), seed), &train_cfg)
            .map_err(js)?;
        let fit = b2b::datasets::gen_polynomial_batch_with(&poly, 200, seed).map_err(js)?;
        let op = b2b_fit_linear(InputEncoding::Basis(input), output, &fit, b2b::linalg::DEFAULT_RIDGE).map_err(js)?;
        Ok(DerivativeDemo { op })
    }

    /// Predicted and exact derivative of `c0 + c1 x + c2 x² + c3 x³` on a uniform grid of `[-10, 10]`.
    ///
    /// Returns `[x; n] ++ [prediction; n] ++ [exact; n]`.
    pub fn predict(&self, c0: f64, c1: f64, c2: f64, c3: f64) -> Result<Vec<f64>, JsError> {
        let f = Polynomial::new(vec![c0, c1, c2, c3]);
        let df = f.derivative();
        let grid: Vec<f64> = (0..POINTS)
            .map(|i| -HALF_WIDTH + 2.0 * HALF_WIDTH * i as f64 / (POINTS - 1) as f64)
            .collect();
        let xs = Tensor::new(vec![POINTS, 1], grid.clone()).map_err(js)?;
        let fs = xs.map(|x| f.eval(x));
        let pred = self.op.predict(&xs, &fs, &xs).map_err(js)?;
        let exact: Vec<f64> = grid.iter().map(|&x| df.eval(x)).collect();
        Ok([grid.as_slice(), pred.data(), &exact].concat())
    }
}
