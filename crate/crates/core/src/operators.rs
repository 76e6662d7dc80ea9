//! Operators built on function encoders: basis-to-basis maps (linear or
//! learned) and the SVD / eigendecomposition operators.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Mlp, MlpSpec, NodeId, OptimizerConfig, OptimizerState, ParameterStore};
use crate::datasets::SampleSource;
use crate::encoder::{
    accumulate_sq_error, check_finite_loss, coefficient_node, value_column, BasisConfig, BasisSet, Domain,
};
use crate::error::{Error, Result};
use crate::linalg::{fit_linear_map, svd_dense, LinearMap, DEFAULT_RIDGE};
use crate::sample::{SampleSet, Side};
use crate::tensor::Tensor;

/// How an input function becomes a coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub enum InputEncoding {
    /// Least-squares coefficients in a learned basis.
    Basis(BasisSet),
    /// The sampled values themselves, used when the "function" is a parameter vector.
    Raw { dim: usize },
}

impl InputEncoding {
    pub fn width(&self) -> usize {
        match self {
            InputEncoding::Basis(b) => b.k,
            InputEncoding::Raw { dim } => *dim,
        }
    }

    pub fn encode(&self, xs: &Tensor, fs: &Tensor, ridge: f64) -> Result<Vec<f64>> {
        match self {
            InputEncoding::Basis(b) => b.compute_coefficients(xs, fs, ridge),
            InputEncoding::Raw { dim } => {
                if fs.len() != *dim {
                    return Err(Error::Dimension(format!(
                        "raw input encoding expects {dim} values, got {:?}",
                        fs.shape()
                    )));
                }
                Ok(fs.data().to_vec())
            }
        }
    }
}

/// Affine standardization `z = ((v - shift) R) / scale`, where `R` is an optional
/// orthonormal `d×d` rotation (row-major; empty means the identity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    #[serde(default)]
    pub rotation: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
            rotation: Vec::new(),
        }
    }

    /// Column means and standard deviations of `rows`; near-constant columns get the
    /// largest column scale so they are neither amplified nor divided by zero.
    pub fn fit(rows: &Tensor) -> Self {
        let (shift, cov) = moments(rows);
        let d = shift.len();
        let scale: Vec<f64> = (0..d).map(|c| cov[c * d + c].max(0.0).sqrt()).collect();
        let top = scale.iter().cloned().fold(0.0, f64::max);
        let floor = if top > 0.0 { top * 1e-8 } else { 1.0 };
        let scale = scale.iter().map(|&v| if v > floor { v } else { top.max(1.0) }).collect();
        Standardizer {
            shift,
            scale,
            rotation: Vec::new(),
        }
    }

    /// PCA whitening: rotates onto the principal axes of `rows` and divides by the
    /// axis standard deviations, clamped below at `rel_floor` times the largest one.
    pub fn fit_whitening(rows: &Tensor, rel_floor: f64) -> Result<Self> {
        let (shift, cov) = moments(rows);
        let d = shift.len();
        let eig = svd_dense(&Tensor::from_parts(vec![d, d], cov))?;
        let top = eig.s[0].max(0.0).sqrt();
        if top == 0.0 {
            return Ok(Standardizer {
                shift,
                ..Standardizer::identity(d)
            });
        }
        let scale = eig.s.iter().map(|v| v.max(0.0).sqrt().max(top * rel_floor)).collect();
        Ok(Standardizer {
            shift,
            scale,
            rotation: eig.u.into_data(),
        })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    fn rotation_matrix(&self) -> Option<Tensor> {
        let d = self.dim();
        (!self.rotation.is_empty()).then(|| Tensor::from_parts(vec![d, d], self.rotation.clone()))
    }

    fn forward(&self, rows: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        let mut out = rows.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v -= self.shift[i % d];
        }
        if let Some(r) = self.rotation_matrix() {
            out = out.matmul(&r)?;
        }
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v /= self.scale[i % d];
        }
        Ok(out)
    }

    fn inverse(&self, rows: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        let mut out = rows.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= self.scale[i % d];
        }
        if let Some(r) = self.rotation_matrix() {
            out = out.matmul(&r.transpose())?;
        }
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += self.shift[i % d];
        }
        Ok(out)
    }
}

/// Column means and the population covariance (row-major `d×d`) of `rows`.
fn moments(rows: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (rows.rows(), rows.cols());
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(rows.row(r)) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        let row = rows.row(r);
        for i in 0..d {
            let a = row[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += a * (row[j] - mean[j]) / n as f64;
            }
        }
    }
    (mean, cov)
}

/// A network acting on standardized coefficients: `β = unstd(net(std(α)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientNet {
    pub mlp: Mlp,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetNorms {
    input: Standardizer,
    output: Standardizer,
}

impl CoefficientNet {
    pub fn new(mlp: Mlp, input_norm: Standardizer, output_norm: Standardizer) -> Result<Self> {
        if input_norm.dim() != mlp.spec.input_dim() || output_norm.dim() != mlp.spec.output_dim() {
            return Err(Error::Dimension("standardizer widths do not match the network".into()));
        }
        Ok(CoefficientNet {
            mlp,
            input_norm,
            output_norm,
        })
    }

    pub fn predict(&self, alphas: &Tensor) -> Result<Tensor> {
        let z = self.mlp.predict(&self.input_norm.forward(alphas)?)?;
        self.output_norm.inverse(&z)
    }

    /// Records the standardized network on `graph`; `x` holds one coefficient vector per row.
    pub(crate) fn record(&self, graph: &mut Graph, binding: &crate::autodiff::Binding, x: NodeId) -> Result<NodeId> {
        let n = graph.value(x).rows();
        let row = |v: Vec<f64>| Tensor::from_parts(vec![1, v.len()], v);
        let tiled = |v: Vec<f64>| Tensor::from_parts(vec![n, v.len()], v.repeat(n));
        let shift = graph.constant(row(self.input_norm.shift.iter().map(|v| -v).collect()));
        let inv = graph.constant(tiled(self.input_norm.scale.iter().map(|v| 1.0 / v).collect()));
        let mut z = graph.add(x, shift)?;
        if let Some(r) = self.input_norm.rotation_matrix() {
            let r = graph.constant(r);
            z = graph.matmul(z, r)?;
        }
        let z = graph.mul(z, inv)?;
        let z = self.mlp.record(graph, binding, z)?;
        let scale = graph.constant(tiled(self.output_norm.scale.clone()));
        let mut z = graph.mul(z, scale)?;
        if let Some(r) = self.output_norm.rotation_matrix() {
            let rt = graph.constant(r.transpose());
            z = graph.matmul(z, rt)?;
        }
        let shift = graph.constant(row(self.output_norm.shift.clone()));
        graph.add(z, shift)
    }

    pub(crate) fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        self.mlp.params.save(dir, stem)?;
        write_json(
            &dir.join(format!("{stem}.norm.json")),
            &NetNorms {
                input: self.input_norm.clone(),
                output: self.output_norm.clone(),
            },
        )
    }

    pub(crate) fn load(dir: &Path, stem: &str, spec: MlpSpec) -> Result<Self> {
        let mlp = Mlp::from_parts(spec, ParameterStore::load(dir, stem)?)?;
        let norms: NetNorms = read_json(&dir.join(format!("{stem}.norm.json")))?;
        CoefficientNet::new(mlp, norms.input, norms.output)
    }
}

/// Map from input coefficients `α` to output coefficients `β`.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientMap {
    Linear(LinearMap),
    Network(CoefficientNet),
}

impl CoefficientMap {
    pub fn apply(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        match self {
            CoefficientMap::Linear(a) => a.apply(alpha),
            CoefficientMap::Network(net) => {
                let x = Tensor::new(vec![1, alpha.len()], alpha.to_vec())?;
                Ok(net.predict(&x)?.into_data())
            }
        }
    }

    /// Rows are coefficient vectors.
    pub fn apply_rows(&self, alphas: &Tensor) -> Result<Tensor> {
        match self {
            CoefficientMap::Linear(a) => alphas.matmul(&a.matrix().transpose()),
            CoefficientMap::Network(net) => net.predict(alphas),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct B2BOperator {
    pub input: InputEncoding,
    pub output_basis: BasisSet,
    pub map: CoefficientMap,
    pub ridge: f64,
}

impl B2BOperator {
    pub fn new(input: InputEncoding, output_basis: BasisSet, map: CoefficientMap, ridge: f64) -> Result<Self> {
        let (i, o) = match &map {
            CoefficientMap::Linear(a) => (a.in_dim(), a.out_dim()),
            CoefficientMap::Network(n) => (n.mlp.spec.input_dim(), n.mlp.spec.output_dim()),
        };
        if i != input.width() || o != output_basis.k {
            return Err(Error::Dimension(format!(
                "coefficient map is {i}→{o} but the bases need {}→{}",
                input.width(),
                output_basis.k
            )));
        }
        Ok(B2BOperator {
            input,
            output_basis,
            map,
            ridge,
        })
    }

    pub fn input_coefficients(&self, xs: &Tensor, fs: &Tensor) -> Result<Vec<f64>> {
        self.input.encode(xs, fs, self.ridge)
    }

    pub fn output_coefficients(&self, ys: &Tensor, tfs: &Tensor) -> Result<Vec<f64>> {
        self.output_basis.compute_coefficients(ys, tfs, self.ridge)
    }

    /// `T̂f` at `ys`, shape `[p, d_out]`.
    pub fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        let alpha = self.input_coefficients(xs, fs)?;
        let beta = self.map.apply(&alpha)?;
        self.output_basis.reconstruct(&beta, ys)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.map {
            CoefficientMap::Linear(_) => "b2b-linear",
            CoefficientMap::Network(_) => "b2b-nonlinear",
        }
    }
}

/// `(α_n, β_n)` for every sample, as `[N, k]` and `[N, ℓ]`.
pub fn coefficient_pairs(
    input: &InputEncoding,
    output: &BasisSet,
    data: &[SampleSet],
    ridge: f64,
) -> Result<(Tensor, Tensor)> {
    let mut alphas = Vec::with_capacity(data.len() * input.width());
    let mut betas = Vec::with_capacity(data.len() * output.k);
    for s in data {
        alphas.extend(input.encode(&s.xs, &s.fs, ridge)?);
        betas.extend(output.compute_coefficients(&s.ys, &s.tfs, ridge)?);
    }
    Ok((
        Tensor::from_parts(vec![data.len(), input.width()], alphas),
        Tensor::from_parts(vec![data.len(), output.k], betas),
    ))
}

/// Fits `A` with `β ≈ Aα` by ridge least squares over the dataset.
pub fn b2b_fit_linear(
    input: InputEncoding,
    output_basis: BasisSet,
    data: &[SampleSet],
    ridge: f64,
) -> Result<B2BOperator> {
    if data.is_empty() {
        return Err(Error::Config("linear map fit needs at least one function".into()));
    }
    let (alphas, betas) = coefficient_pairs(&input, &output_basis, data, ridge)?;
    let a = fit_linear_map(&alphas, &betas, ridge)?;
    B2BOperator::new(input, output_basis, CoefficientMap::Linear(a), ridge)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MapLoss {
    /// `‖β - β̂‖²` in coefficient space.
    #[default]
    Coefficient,
    /// `(1/p) ‖Tf - Σ β̂_j h_j‖²` at the output samples.
    Function,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
    pub loss: MapLoss,
    pub ridge: f64,
}

impl Default for MapTrainConfig {
    fn default() -> Self {
        MapTrainConfig {
            steps: 10_000,
            batch_size: 10,
            hidden: vec![256, 256],
            activation: Activation::Relu,
            optimizer: OptimizerConfig::default(),
            loss: MapLoss::Coefficient,
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// Called every `interval` steps with `(step, current operator)`.
pub type Monitor<'a, M> = Option<(usize, &'a mut dyn FnMut(usize, &M) -> Result<()>)>;

/// Batches drawn up front to estimate coefficient standardization.
pub const CALIBRATION_BATCHES: usize = 20;

/// Relative floor on input principal-axis scales; caps amplification of directions
/// the calibration draw barely excites.
pub const INPUT_WHITENING_FLOOR: f64 = 1e-3;

/// Relative floor on output principal-axis scales; directions below it stay
/// suppressed in the prediction.
pub const OUTPUT_WHITENING_FLOOR: f64 = 1e-6;

/// Trains a network `α → β` between frozen bases; returns the operator and per-step losses.
pub fn b2b_train_nonlinear(
    input: InputEncoding,
    output_basis: BasisSet,
    source: &mut dyn SampleSource,
    config: &MapTrainConfig,
    seed: u64,
    mut monitor: Monitor<'_, B2BOperator>,
) -> Result<(B2BOperator, Vec<f64>)> {
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::Config("map training needs steps ≥ 1 and batch size ≥ 1".into()));
    }
    let mut sizes = vec![input.width()];
    sizes.extend(&config.hidden);
    sizes.push(output_basis.k);
    let mlp = Mlp::new(MlpSpec::new(sizes, config.activation)?, seed);
    // Standardization statistics come from a calibration draw before training.
    let calibration = source.next_batch(config.batch_size.max(1) * CALIBRATION_BATCHES)?;
    if calibration.is_empty() {
        return Err(Error::Config("sample source is exhausted".into()));
    }
    let (alphas, betas) = coefficient_pairs(&input, &output_basis, &calibration, config.ridge)?;
    let net = CoefficientNet::new(
        mlp,
        Standardizer::fit_whitening(&alphas, INPUT_WHITENING_FLOOR)?,
        Standardizer::fit_whitening(&betas, OUTPUT_WHITENING_FLOOR)?,
    )?;
    let mut op = B2BOperator::new(input, output_basis, CoefficientMap::Network(net), config.ridge)?;
    let mut opt = {
        let CoefficientMap::Network(net) = &op.map else { unreachable!() };
        OptimizerState::new(config.optimizer, &net.mlp.params)
    };
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = source.next_batch(config.batch_size)?;
        if batch.is_empty() {
            return Err(Error::Config("sample source is exhausted".into()));
        }
        let n = batch.len();
        let mut alphas = Vec::with_capacity(n * op.input.width());
        for s in &batch {
            alphas.extend(op.input_coefficients(&s.xs, &s.fs)?);
        }
        let alphas = Tensor::from_parts(vec![n, op.input.width()], alphas);
        let CoefficientMap::Network(net) = &mut op.map else { unreachable!() };
        let mut graph = Graph::new();
        let binding = graph.bind(&net.mlp.params);
        let alphas = graph.constant(alphas);
        let beta_hat = net.record(&mut graph, &binding, alphas)?;
        let loss = match config.loss {
            MapLoss::Coefficient => {
                let mut betas = Vec::with_capacity(n * op.output_basis.k);
                for s in &batch {
                    betas.extend(op.output_basis.compute_coefficients(&s.ys, &s.tfs, config.ridge)?);
                }
                let b = graph.constant(Tensor::from_parts(vec![n, op.output_basis.k], betas));
                accumulate_sq_error(&mut graph, None, beta_hat, b, 1.0 / n as f64)?
            }
            MapLoss::Function => {
                let mut total = None;
                for (i, s) in batch.iter().enumerate() {
                    let h = graph.constant(op.output_basis.design_matrix(&s.ys)?);
                    let row = graph.slice_rows(beta_hat, i, i + 1)?;
                    let col = graph.transpose(row);
                    let pred = graph.matmul(h, col)?;
                    let target = graph.constant(value_column(&s.tfs));
                    total = Some(accumulate_sq_error(
                        &mut graph,
                        total,
                        pred,
                        target,
                        1.0 / (n * s.p()) as f64,
                    )?);
                }
                total.expect("non-empty batch")
            }
        };
        let value = graph.value(loss).data()[0];
        check_finite_loss(value, step)?;
        let grads = graph.backward(loss)?.for_binding(&binding);
        opt.step(&mut net.mlp.params, &grads)?;
        trace.push(value);
        if let Some((every, f)) = monitor.as_mut() {
            if (step + 1) % *every == 0 || step + 1 == config.steps {
                f(step + 1, &op)?;
            }
        }
    }
    Ok((op, trace))
}

/// `‖T̂(a f₁ + b f₂) - a T̂f₁ - b T̂f₂‖² / p` with all three functions sampled at `xs`.
pub fn linearity_check(
    op: &B2BOperator,
    xs: &Tensor,
    fs1: &Tensor,
    fs2: &Tensor,
    a: f64,
    b: f64,
    ys: &Tensor,
) -> Result<f64> {
    let f3 = fs1.scale(a).add(&fs2.scale(b))?;
    let lhs = op.predict(xs, &f3, ys)?;
    let rhs = op
        .predict(xs, fs1, ys)?
        .scale(a)
        .add(&op.predict(xs, fs2, ys)?.scale(b))?;
    let diff = lhs.sub(&rhs)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / ys.rows().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectralKind {
    Svd,
    Ed,
}

/// `T̂f = Σ_i s_i α_i w_i`, where `α` are coefficients of `f` in the right basis `v`
/// and `w` is the left basis `u` (SVD) or `v` itself (ED).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperator {
    pub kind: SpectralKind,
    pub right: BasisSet,
    pub left: Option<BasisSet>,
    pub values: Vec<f64>,
    pub ridge: f64,
}

impl SpectralOperator {
    /// Fresh operator with unit values.
    pub fn new(
        kind: SpectralKind,
        basis: &BasisConfig,
        input: (&Domain, usize),
        output: (&Domain, usize),
        ridge: f64,
        seed: u64,
    ) -> Result<Self> {
        let right = BasisSet::new(basis, input.1, Side::Input, input.0.clone(), seed)?;
        let left = match kind {
            SpectralKind::Svd => Some(BasisSet::new(
                basis,
                output.1,
                Side::Output,
                output.0.clone(),
                seed.wrapping_add(1),
            )?),
            SpectralKind::Ed => {
                if input.0 != output.0 || input.1 != output.1 {
                    return Err(Error::Config(format!(
                        "eigendecomposition needs identical input and output domains, got {:?}×{} and {:?}×{}",
                        input.0, input.1, output.0, output.1
                    )));
                }
                None
            }
        };
        Ok(SpectralOperator {
            kind,
            right,
            left,
            values: vec![1.0; basis.k],
            ridge,
        })
    }

    pub fn output_basis(&self) -> &BasisSet {
        self.left.as_ref().unwrap_or(&self.right)
    }

    pub fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        let alpha = self.right.compute_coefficients(xs, fs, self.ridge)?;
        let scaled: Vec<f64> = alpha.iter().zip(&self.values).map(|(a, s)| a * s).collect();
        self.output_basis().reconstruct(&scaled, ys)
    }

    /// The equivalent basis-to-basis operator with `A = diag(values)`.
    pub fn to_b2b(&self) -> Result<B2BOperator> {
        B2BOperator::new(
            InputEncoding::Basis(self.right.clone()),
            self.output_basis().clone(),
            CoefficientMap::Linear(LinearMap::diagonal(&self.values)),
            self.ridge,
        )
    }
}

pub fn spectral_predict(op: &SpectralOperator, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
    op.predict(xs, fs, ys)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub grad_through_solve: bool,
}

impl Default for SpectralTrainConfig {
    fn default() -> Self {
        SpectralTrainConfig {
            steps: 10_000,
            batch_size: 10,
            optimizer: OptimizerConfig::default(),
            grad_through_solve: false,
        }
    }
}

fn values_store(values: &[f64]) -> ParameterStore {
    let mut s = ParameterStore::new();
    s.insert("values", Tensor::from_parts(vec![values.len(), 1], values.to_vec()))
        .expect("fresh store");
    s
}

/// End-to-end training of bases and values on the output-space error.
pub fn train_spectral(
    op: &mut SpectralOperator,
    source: &mut dyn SampleSource,
    config: &SpectralTrainConfig,
    mut monitor: Monitor<'_, SpectralOperator>,
) -> Result<Vec<f64>> {
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::Config("spectral training needs steps ≥ 1 and batch size ≥ 1".into()));
    }
    let mut values = values_store(&op.values);
    let mut opt_right = OptimizerState::new(config.optimizer, &op.right.mlp.params);
    let mut opt_left = op.left.as_ref().map(|l| OptimizerState::new(config.optimizer, &l.mlp.params));
    let mut opt_values = OptimizerState::new(config.optimizer, &values);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = source.next_batch(config.batch_size)?;
        if batch.is_empty() {
            return Err(Error::Config("sample source is exhausted".into()));
        }
        let n = batch.len() as f64;
        let mut graph = Graph::new();
        let b_right = graph.bind(&op.right.mlp.params);
        let b_left = op.left.as_ref().map(|l| graph.bind(&l.mlp.params));
        let b_values = graph.bind(&values);
        let s = b_values.node(0);
        let xs: Vec<&Tensor> = batch.iter().map(|b| &b.xs).collect();
        let ys: Vec<&Tensor> = batch.iter().map(|b| &b.ys).collect();
        let g = op.right.record_designs(&mut graph, &b_right, &xs)?;
        let h = match (&op.left, &b_left) {
            (Some(l), Some(bl)) => l.record_designs(&mut graph, bl, &ys)?,
            _ => op.right.record_designs(&mut graph, &b_right, &ys)?,
        };
        let mut total = None;
        for (i, sample) in batch.iter().enumerate() {
            let f = graph.constant(value_column(&sample.fs));
            let alpha = coefficient_node(&mut graph, g[i], f, op.ridge, config.grad_through_solve)?;
            let scaled = graph.mul(s, alpha)?;
            let pred = graph.matmul(h[i], scaled)?;
            let target = graph.constant(value_column(&sample.tfs));
            total = Some(accumulate_sq_error(&mut graph, total, pred, target, 1.0 / (n * sample.p() as f64))?);
        }
        let loss = total.expect("non-empty batch");
        let value = graph.value(loss).data()[0];
        check_finite_loss(value, step)?;
        let grads = graph.backward(loss)?;
        opt_right.step(&mut op.right.mlp.params, &grads.for_binding(&b_right))?;
        if let (Some(l), Some(bl), Some(o)) = (op.left.as_mut(), b_left.as_ref(), opt_left.as_mut()) {
            o.step(&mut l.mlp.params, &grads.for_binding(bl))?;
        }
        opt_values.step(&mut values, &grads.for_binding(&b_values))?;
        op.values = values.get("values").expect("present").data().to_vec();
        trace.push(value);
        if let Some((every, f)) = monitor.as_mut() {
            if (step + 1) % *every == 0 || step + 1 == config.steps {
                f(step + 1, op)?;
            }
        }
    }
    Ok(trace)
}

/// Operator checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub kind: String,
    pub k: usize,
    /// Output basis size.
    pub ell: usize,
    pub ridge: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MlpSpec>,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn save_matrix(dir: &Path, stem: &str, m: &Tensor) -> Result<()> {
    let mut s = ParameterStore::new();
    s.insert("matrix", m.clone())?;
    s.save(dir, stem)
}

pub(crate) fn load_matrix(dir: &Path, stem: &str) -> Result<Tensor> {
    let s = ParameterStore::load(dir, stem)?;
    s.get("matrix")
        .cloned()
        .ok_or_else(|| Error::Data(format!("{stem} checkpoint has no matrix")))
}

impl B2BOperator {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let raw_input_dim = match &self.input {
            InputEncoding::Basis(b) => {
                b.save(dir, "input_basis")?;
                None
            }
            InputEncoding::Raw { dim } => Some(*dim),
        };
        self.output_basis.save(dir, "output_basis")?;
        let map = match &self.map {
            CoefficientMap::Linear(a) => {
                save_matrix(dir, "map", a.matrix())?;
                None
            }
            CoefficientMap::Network(net) => {
                net.save(dir, "map")?;
                Some(net.mlp.spec.clone())
            }
        };
        write_json(
            &dir.join("operator.json"),
            &OperatorHeader {
                kind: self.kind_name().into(),
                k: self.input.width(),
                ell: self.output_basis.k,
                ridge: self.ridge,
                raw_input_dim,
                map,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let h: OperatorHeader = read_json(&dir.join("operator.json"))?;
        let input = match h.raw_input_dim {
            Some(dim) => InputEncoding::Raw { dim },
            None => InputEncoding::Basis(BasisSet::load(dir, "input_basis")?),
        };
        let output = BasisSet::load(dir, "output_basis")?;
        let map = match (h.kind.as_str(), h.map) {
            ("b2b-linear", _) => CoefficientMap::Linear(LinearMap::new(load_matrix(dir, "map")?)?),
            ("b2b-nonlinear", Some(spec)) => {
                CoefficientMap::Network(CoefficientNet::load(dir, "map", spec)?)
            }
            (k, _) => return Err(Error::Config(format!("not a basis-to-basis checkpoint: {k}"))),
        };
        B2BOperator::new(input, output, map, h.ridge)
    }
}

impl SpectralOperator {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.right.save(dir, "right_basis")?;
        if let Some(l) = &self.left {
            l.save(dir, "left_basis")?;
        }
        save_matrix(dir, "values", &Tensor::from_parts(vec![self.values.len(), 1], self.values.clone()))?;
        write_json(
            &dir.join("operator.json"),
            &OperatorHeader {
                kind: match self.kind {
                    SpectralKind::Svd => "svd".into(),
                    SpectralKind::Ed => "ed".into(),
                },
                k: self.right.k,
                ell: self.output_basis().k,
                ridge: self.ridge,
                raw_input_dim: None,
                map: None,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let h: OperatorHeader = read_json(&dir.join("operator.json"))?;
        let kind = match h.kind.as_str() {
            "svd" => SpectralKind::Svd,
            "ed" => SpectralKind::Ed,
            k => return Err(Error::Config(format!("not a spectral checkpoint: {k}"))),
        };
        let right = BasisSet::load(dir, "right_basis")?;
        let left = match kind {
            SpectralKind::Svd => Some(BasisSet::load(dir, "left_basis")?),
            SpectralKind::Ed => None,
        };
        let values = load_matrix(dir, "values")?.into_data();
        if values.len() != right.k {
            return Err(Error::Dimension("spectral values do not match basis size".into()));
        }
        Ok(SpectralOperator {
            kind,
            right,
            left,
            values,
            ridge: h.ridge,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_polynomial_batch, FiniteSource, PolyTask};

    fn basis(k: usize, side: Side, seed: u64) -> BasisSet {
        let cfg = BasisConfig {
            k,
            hidden: vec![16],
            activation: Activation::Tanh,
        };
        BasisSet::new(&cfg, 1, side, Domain::interval(-10.0, 10.0).unwrap(), seed).unwrap()
    }

    fn data(n: usize) -> Vec<SampleSet> {
        gen_polynomial_batch(PolyTask::Derivative, n, 30, 25, 0, 3.0).unwrap()
    }

    fn correlated_rows() -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut v = Vec::new();
        for _ in 0..200 {
            let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
            v.extend([100.0 + a, 100.0 + a + 1e-2 * b, 3.0 * a - b + c]);
        }
        Tensor::from_parts(vec![200, 3], v)
    }

    #[test]
    fn whitening_decorrelates_and_inverts() {
        let rows = correlated_rows();
        let w = Standardizer::fit_whitening(&rows, 1e-6).unwrap();
        let z = w.forward(&rows).unwrap();
        let (mean, cov) = moments(&z);
        assert!(mean.iter().all(|m| m.abs() < 1e-6), "{mean:?}");
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i * 3 + j] - want).abs() < 1e-6, "{cov:?}");
            }
        }
        let back = w.inverse(&z).unwrap();
        assert!(back.sub(&rows).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn recorded_network_matches_predict_with_rotations() {
        let rows = correlated_rows();
        let mlp = Mlp::new(MlpSpec::new(vec![3, 8, 3], Activation::Tanh).unwrap(), 2);
        let net = CoefficientNet::new(
            mlp,
            Standardizer::fit_whitening(&rows, 1e-3).unwrap(),
            Standardizer::fit_whitening(&rows, 1e-6).unwrap(),
        )
        .unwrap();
        let direct = net.predict(&rows).unwrap();
        let mut g = Graph::new();
        let binding = g.bind(&net.mlp.params);
        let x = g.constant(rows.clone());
        let node = net.record(&mut g, &binding, x).unwrap();
        assert!(g.value(node).sub(&direct).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn zero_map_predicts_zero() {
        let op = B2BOperator::new(
            InputEncoding::Basis(basis(4, Side::Input, 0)),
            basis(5, Side::Output, 1),
            CoefficientMap::Linear(LinearMap::zeros(5, 4)),
            DEFAULT_RIDGE,
        )
        .unwrap();
        let s = &data(1)[0];
        assert!(op.predict(&s.xs, &s.fs, &s.ys).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_map_is_exactly_linear_on_shared_grids() {
        let d = data(20);
        let op = b2b_fit_linear(
            InputEncoding::Basis(basis(6, Side::Input, 0)),
            basis(6, Side::Output, 1),
            &d,
            DEFAULT_RIDGE,
        )
        .unwrap();
        let (xs, ys) = (&d[0].xs, &d[0].ys);
        let f2 = d[1].xs.map(|x| 0.1 * x * x - 1.0);
        let out_scale = op.predict(xs, &d[0].fs, ys).unwrap().norm().powi(2) / ys.rows() as f64;
        let r = linearity_check(&op, xs, &d[0].fs, &f2, 1.7, -0.3, ys).unwrap();
        assert!(r < 1e-12 * out_scale.max(1.0), "residual {r}");
    }

    #[test]
    fn single_function_fit_is_finite() {
        let op = b2b_fit_linear(
            InputEncoding::Basis(basis(4, Side::Input, 0)),
            basis(4, Side::Output, 1),
            &data(1),
            DEFAULT_RIDGE,
        )
        .unwrap();
        let CoefficientMap::Linear(a) = &op.map else { panic!() };
        assert!(a.matrix().is_finite());
    }

    #[test]
    fn spectral_equals_diagonal_b2b() {
        let mut op = SpectralOperator::new(
            SpectralKind::Svd,
            &BasisConfig {
                k: 5,
                hidden: vec![8],
                activation: Activation::Tanh,
            },
            (&Domain::interval(-10.0, 10.0).unwrap(), 1),
            (&Domain::interval(-10.0, 10.0).unwrap(), 1),
            DEFAULT_RIDGE,
            3,
        )
        .unwrap();
        op.values = vec![0.5, -2.0, 1.0, 3.0, 0.0];
        let s = &data(1)[0];
        let a = spectral_predict(&op, &s.xs, &s.fs, &s.ys).unwrap();
        let b = op.to_b2b().unwrap().predict(&s.xs, &s.fs, &s.ys).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn ed_rejects_mismatched_domains() {
        let r = SpectralOperator::new(
            SpectralKind::Ed,
            &BasisConfig::default(),
            (&Domain::interval(-10.0, 10.0).unwrap(), 1),
            (&Domain::interval(0.0, 1.0).unwrap(), 1),
            DEFAULT_RIDGE,
            0,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn nonlinear_map_learns_constant_target() {
        // Tf ≡ 0.5·h-reconstruction of a fixed β*; every function maps to the same β*.
        let out = basis(3, Side::Output, 1);
        let ys = d_grid();
        let beta_star = [0.5, -1.0, 0.25];
        let target = out.reconstruct(&beta_star, &ys).unwrap();
        let pool: Vec<SampleSet> = data(8)
            .into_iter()
            .map(|s| SampleSet::new(s.xs, s.fs, ys.clone(), target.clone()).unwrap())
            .collect();
        let beta_fit = out.compute_coefficients(&ys, &target, DEFAULT_RIDGE).unwrap();
        let mut src = FiniteSource::new(pool.clone(), 0).unwrap();
        let cfg = MapTrainConfig {
            steps: 1500,
            batch_size: 4,
            hidden: vec![16],
            optimizer: OptimizerConfig {
                lr: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        };
        let (op, _) = b2b_train_nonlinear(
            InputEncoding::Basis(basis(3, Side::Input, 0)),
            out,
            &mut src,
            &cfg,
            0,
            None,
        )
        .unwrap();
        let s = &pool[0];
        let beta = op.map.apply(&op.input_coefficients(&s.xs, &s.fs).unwrap()).unwrap();
        for (a, b) in beta.iter().zip(&beta_fit) {
            assert!((a - b).abs() < 1e-4, "{beta:?} vs {beta_fit:?}");
        }
    }

    fn d_grid() -> Tensor {
        Tensor::column((0..20).map(|i| -10.0 + i as f64).collect()).unwrap()
    }

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let op = b2b_fit_linear(
            InputEncoding::Basis(basis(4, Side::Input, 0)),
            basis(4, Side::Output, 1),
            &data(5),
            DEFAULT_RIDGE,
        )
        .unwrap();
        op.save(dir.path()).unwrap();
        assert_eq!(B2BOperator::load(dir.path()).unwrap(), op);

        let dir = tempfile::tempdir().unwrap();
        let sp = SpectralOperator::new(
            SpectralKind::Ed,
            &BasisConfig {
                k: 3,
                hidden: vec![4],
                activation: Activation::Relu,
            },
            (&Domain::interval(-10.0, 10.0).unwrap(), 1),
            (&Domain::interval(-10.0, 10.0).unwrap(), 1),
            DEFAULT_RIDGE,
            0,
        )
        .unwrap();
        sp.save(dir.path()).unwrap();
        assert_eq!(SpectralOperator::load(dir.path()).unwrap(), sp);
    }
}
