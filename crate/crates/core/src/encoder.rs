//! Function encoders: a learned basis `g_1..g_k` for a function space, with
//! coefficients obtained by ridge least squares.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Mlp, MlpSpec, NodeId, OptimizerConfig, OptimizerState, ParameterStore};
use crate::datasets::SampleSource;
use crate::error::{Error, Result};
use crate::linalg::{least_squares, DEFAULT_RIDGE};
use crate::sample::{SampleSet, Side};
use crate::tensor::Tensor;

/// Axis-aligned box; network inputs are mapped affinely onto `[-1, 1]` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Config(format!(
                "domain bounds must be non-empty and equally long, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Config(format!(
                "domain needs finite lower < upper per axis, got {lower:?} .. {upper:?}"
            )));
        }
        Ok(Domain { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Domain::new(vec![lo], vec![hi])
    }

    pub fn unit(dim: usize) -> Self {
        Domain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    /// Bounding box of the given point sets; flat axes are widened to unit length.
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut lower: Vec<f64> = vec![];
        let mut upper: Vec<f64> = vec![];
        for t in points {
            if lower.is_empty() {
                lower = vec![f64::INFINITY; t.cols()];
                upper = vec![f64::NEG_INFINITY; t.cols()];
            }
            for r in 0..t.rows() {
                for (c, v) in t.row(r).iter().enumerate() {
                    lower[c] = lower[c].min(*v);
                    upper[c] = upper[c].max(*v);
                }
            }
        }
        if lower.is_empty() || lower.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("no points to bound".into()));
        }
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            if *u - *l < 1e-12 {
                *l -= 0.5;
                *u += 0.5;
            }
        }
        Domain::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn normalize(&self, xs: &Tensor) -> Tensor {
        let d = self.dim();
        let mut out = xs.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = i % d;
            let (l, u) = (self.lower[c], self.upper[c]);
            *v = (2.0 * *v - l - u) / (u - l);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisConfig {
    pub k: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            k: 100,
            hidden: vec![256, 256],
            activation: Activation::Relu,
        }
    }
}

/// `k` basis functions `R^input_dim → R^d` sharing one network with `k·d` outputs.
///
/// Network output `c·k + j` is component `c` of basis function `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub mlp: Mlp,
    pub k: usize,
    pub output_dim: usize,
    pub side: Side,
    pub domain: Domain,
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisSidecar {
    k: usize,
    input_dim: usize,
    output_dim: usize,
    domain_tag: Side,
    architecture: MlpSpec,
    domain: Domain,
}

impl BasisSet {
    pub fn new(config: &BasisConfig, output_dim: usize, side: Side, domain: Domain, seed: u64) -> Result<Self> {
        if config.k == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "basis needs k ≥ 1 and output dim ≥ 1, got k={} d={output_dim}",
                config.k
            )));
        }
        let mut sizes = vec![domain.dim()];
        sizes.extend(&config.hidden);
        sizes.push(config.k * output_dim);
        let spec = MlpSpec::new(sizes, config.activation)?;
        Ok(BasisSet {
            mlp: Mlp::new(spec, seed),
            k: config.k,
            output_dim,
            side,
            domain,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.domain.dim()
    }

    fn check_points(&self, xs: &Tensor) -> Result<()> {
        if xs.ndim() != 2 || xs.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "basis expects [m, {}] points, got {:?}",
                self.input_dim(),
                xs.shape()
            )));
        }
        if !xs.is_finite() {
            return Err(Error::Data("non-finite evaluation point".into()));
        }
        Ok(())
    }

    /// Raw network output `[m, d·k]`.
    fn raw(&self, xs: &Tensor) -> Result<Tensor> {
        self.check_points(xs)?;
        if xs.rows() == 0 {
            return Ok(Tensor::zeros(&[0, self.k * self.output_dim]));
        }
        self.mlp.predict(&self.domain.normalize(xs))
    }

    /// `[m, k, d]` with entry `[i, j, c] = g_j(x_i)_c`.
    pub fn eval_basis(&self, xs: &Tensor) -> Result<Tensor> {
        let raw = self.raw(xs)?;
        let (m, k, d) = (xs.rows(), self.k, self.output_dim);
        let mut out = vec![0.0; m * k * d];
        for i in 0..m {
            let row = raw.row(i);
            for j in 0..k {
                for c in 0..d {
                    out[(i * k + j) * d + c] = row[c * k + j];
                }
            }
        }
        Tensor::new(vec![m, k, d], out)
    }

    /// Design matrix `[m·d, k]`, row `i·d + c` holding component `c` of every basis at `x_i`.
    pub fn design_matrix(&self, xs: &Tensor) -> Result<Tensor> {
        let raw = self.raw(xs)?;
        raw.reshape(&[xs.rows() * self.output_dim, self.k])
    }

    fn check_values(&self, xs: &Tensor, fs: &Tensor) -> Result<()> {
        if fs.ndim() != 2 || fs.rows() != xs.rows() || fs.cols() != self.output_dim {
            return Err(Error::Dimension(format!(
                "expected [{}, {}] function values, got {:?}",
                xs.rows(),
                self.output_dim,
                fs.shape()
            )));
        }
        Ok(())
    }

    /// Ridge least-squares coefficients of the function sampled as `(xs, fs)`.
    pub fn compute_coefficients(&self, xs: &Tensor, fs: &Tensor, ridge: f64) -> Result<Vec<f64>> {
        self.check_values(xs, fs)?;
        if xs.rows() == 0 {
            return Err(Error::Data("cannot fit coefficients from zero samples".into()));
        }
        let g = self.design_matrix(xs)?;
        let f = fs.clone().reshape(&[fs.len(), 1])?;
        Ok(least_squares(&g, &f, ridge)?.into_data())
    }

    /// `Σ_j α_j g_j(x)` at each point, `[m, d]`.
    pub fn reconstruct(&self, alpha: &[f64], xs: &Tensor) -> Result<Tensor> {
        if alpha.len() != self.k {
            return Err(Error::Dimension(format!(
                "expected {} coefficients, got {}",
                self.k,
                alpha.len()
            )));
        }
        let g = self.design_matrix(xs)?;
        let a = Tensor::from_parts(vec![self.k, 1], alpha.to_vec());
        g.matmul(&a)?.reshape(&[xs.rows(), self.output_dim])
    }

    /// Coefficients for many functions on one shared grid, `[N, k]`; the design
    /// matrix is built once.
    pub fn coefficients_shared_grid(&self, xs: &Tensor, fs: &[&Tensor], ridge: f64) -> Result<Tensor> {
        let g = self.design_matrix(xs)?;
        let n = fs.len();
        let rows = xs.rows() * self.output_dim;
        let mut f = vec![0.0; rows * n];
        for (col, v) in fs.iter().enumerate() {
            self.check_values(xs, v)?;
            for (r, x) in v.data().iter().enumerate() {
                f[r * n + col] = *x;
            }
        }
        let a = least_squares(&g, &Tensor::from_parts(vec![rows, n], f), ridge)?;
        Ok(a.transpose())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.mlp.params.save(dir, stem)?;
        let side = BasisSidecar {
            k: self.k,
            input_dim: self.input_dim(),
            output_dim: self.output_dim,
            domain_tag: self.side,
            architecture: self.mlp.spec.clone(),
            domain: self.domain.clone(),
        };
        let path = dir.join(format!("{stem}.basis.json"));
        let text = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let path = dir.join(format!("{stem}.basis.json"));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let side: BasisSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let params = ParameterStore::load(dir, stem)?;
        let mlp = Mlp::from_parts(side.architecture, params)?;
        if mlp.spec.input_dim() != side.input_dim || mlp.spec.output_dim() != side.k * side.output_dim {
            return Err(Error::Dimension(format!(
                "basis checkpoint {stem} has inconsistent architecture"
            )));
        }
        Ok(BasisSet {
            mlp,
            k: side.k,
            output_dim: side.output_dim,
            side: side.domain_tag,
            domain: Domain::new(side.domain.lower, side.domain.upper)?,
        })
    }

    /// Records the design matrices of several point sets on `graph`, sharing one forward pass.
    ///
    /// `binding_nodes` are the leaves made by binding `self.mlp.params`.
    pub(crate) fn record_designs(
        &self,
        graph: &mut Graph,
        binding: &crate::autodiff::Binding,
        point_sets: &[&Tensor],
    ) -> Result<Vec<NodeId>> {
        for xs in point_sets {
            self.check_points(xs)?;
            if xs.rows() == 0 {
                return Err(Error::Data("function sampled at zero points".into()));
            }
        }
        let stacked = Tensor::vstack(point_sets)?;
        let x = graph.constant(self.domain.normalize(&stacked));
        let out = self.mlp.record(graph, binding, x)?;
        let mut designs = Vec::with_capacity(point_sets.len());
        let mut off = 0;
        for xs in point_sets {
            let m = xs.rows();
            let block = graph.slice_rows(out, off, off + m)?;
            designs.push(graph.reshape(block, &[m * self.output_dim, self.k])?);
            off += m;
        }
        Ok(designs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub ridge: f64,
    pub optimizer: OptimizerConfig,
    /// Differentiate through the coefficient solve instead of treating coefficients as constants.
    pub grad_through_solve: bool,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            steps: 10_000,
            batch_size: 10,
            ridge: DEFAULT_RIDGE,
            optimizer: OptimizerConfig::default(),
            grad_through_solve: false,
        }
    }
}

/// Coefficients as a `[k, 1]` node: a tape solve, or a constant computed off-tape.
pub(crate) fn coefficient_node(
    graph: &mut Graph,
    design: NodeId,
    target: NodeId,
    ridge: f64,
    through_solve: bool,
) -> Result<NodeId> {
    // Targets are validated data, so a non-finite design means the basis itself diverged.
    if !graph.value(design).is_finite() {
        return Err(Error::Solver(
            "basis outputs became non-finite during training; lower the learning rate".into(),
        ));
    }
    if through_solve {
        graph.least_squares(design, target, ridge)
    } else {
        let a = least_squares(graph.value(design), graph.value(target), ridge)?;
        Ok(graph.constant(a))
    }
}

/// Flattens `[m, d]` values into the `[m·d, 1]` layout matching design-matrix rows.
pub(crate) fn value_column(fs: &Tensor) -> Tensor {
    Tensor::from_parts(vec![fs.len(), 1], fs.data().to_vec())
}

pub(crate) fn check_finite_loss(loss: f64, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Solver(format!(
            "training loss became non-finite at step {step}; lower the learning rate"
        )))
    }
}

/// Adds `scale · Σ (a - b)²` to an optional running total.
pub(crate) fn accumulate_sq_error(
    graph: &mut Graph,
    total: Option<NodeId>,
    a: NodeId,
    b: NodeId,
    scale: f64,
) -> Result<NodeId> {
    let r = graph.sub(a, b)?;
    let sq = graph.square(r);
    let s = graph.sum(sq);
    let s = graph.scale(s, scale);
    match total {
        Some(t) => graph.add(t, s),
        None => Ok(s),
    }
}

pub(crate) fn fetch_side(batch: &[SampleSet], side: Side) -> Vec<(&Tensor, &Tensor)> {
    batch.iter().map(|s| s.side(side)).collect()
}

/// One optimization step of the function-encoder loss
/// `(1/N) Σ_n (1/m_n) Σ_i ‖f_n(x_i) - Σ_j α_nj g_j(x_i)‖²`; returns the loss.
pub fn encoder_step(
    basis: &mut BasisSet,
    opt: &mut OptimizerState,
    batch: &[SampleSet],
    ridge: f64,
    through_solve: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let pairs = fetch_side(batch, basis.side);
    for (xs, fs) in &pairs {
        basis.check_values(xs, fs)?;
    }
    let mut graph = Graph::new();
    let binding = graph.bind(&basis.mlp.params);
    let points: Vec<&Tensor> = pairs.iter().map(|p| p.0).collect();
    let designs = basis.record_designs(&mut graph, &binding, &points)?;
    let n = batch.len() as f64;
    let mut total = None;
    for (g, (xs, fs)) in designs.into_iter().zip(&pairs) {
        let f = graph.constant(value_column(fs));
        let alpha = coefficient_node(&mut graph, g, f, ridge, through_solve)?;
        let pred = graph.matmul(g, alpha)?;
        total = Some(accumulate_sq_error(&mut graph, total, pred, f, 1.0 / (n * xs.rows() as f64))?);
    }
    let loss = total.expect("non-empty batch");
    let value = graph.value(loss).data()[0];
    let grads = graph.backward(loss)?.for_binding(&binding);
    opt.step(&mut basis.mlp.params, &grads)?;
    Ok(value)
}

/// Trains `basis` on its side of the streamed samples; returns the per-step loss trace.
pub fn train_function_encoder(
    basis: &mut BasisSet,
    source: &mut dyn SampleSource,
    config: &EncoderTrainConfig,
) -> Result<Vec<f64>> {
    if config.steps == 0 || config.batch_size == 0 {
        return Err(Error::Config("encoder training needs steps ≥ 1 and batch size ≥ 1".into()));
    }
    let mut opt = OptimizerState::new(config.optimizer, &basis.mlp.params);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = source.next_batch(config.batch_size)?;
        if batch.is_empty() {
            return Err(Error::Config("sample source is exhausted".into()));
        }
        let loss = encoder_step(basis, &mut opt, &batch, config.ridge, config.grad_through_solve)?;
        check_finite_loss(loss, step)?;
        trace.push(loss);
    }
    Ok(trace)
}

/// Mean over functions of the per-point squared reconstruction error on one side.
pub fn reconstruction_mse(basis: &BasisSet, samples: &[SampleSet], ridge: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let (xs, fs) = s.side(basis.side);
        let alpha = basis.compute_coefficients(xs, fs, ridge)?;
        let rec = basis.reconstruct(&alpha, xs)?;
        total += rec.sub(fs)?.data().iter().map(|v| v * v).sum::<f64>() / xs.rows() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::FiniteSource;

    fn small_basis(k: usize, d: usize, seed: u64) -> BasisSet {
        let cfg = BasisConfig {
            k,
            hidden: vec![16, 16],
            activation: Activation::Tanh,
        };
        BasisSet::new(&cfg, d, Side::Input, Domain::interval(-1.0, 1.0).unwrap(), seed).unwrap()
    }

    fn grid(m: usize) -> Tensor {
        Tensor::column((0..m).map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64).collect()).unwrap()
    }

    #[test]
    fn eval_basis_shapes() {
        let b = small_basis(3, 1, 0);
        assert_eq!(b.eval_basis(&grid(7)).unwrap().shape(), &[7, 3, 1]);
        assert_eq!(b.eval_basis(&Tensor::zeros(&[0, 1])).unwrap().shape(), &[0, 3, 1]);
        assert_eq!(b.eval_basis(&grid(7)).unwrap(), b.eval_basis(&grid(7)).unwrap());
    }

    #[test]
    fn coefficients_recover_synthesized_functions() {
        // g_j(x) = tanh(w_j x + c_j) with well-separated (w, c), so the Gram matrix is well conditioned.
        let cfg = BasisConfig {
            k: 3,
            hidden: vec![3],
            activation: Activation::Tanh,
        };
        let mut b = BasisSet::new(&cfg, 1, Side::Input, Domain::interval(-1.0, 1.0).unwrap(), 1).unwrap();
        let p = &mut b.mlp.params;
        p.get_mut("layer0.weight").unwrap().data_mut().copy_from_slice(&[3.0, -2.0, 1.0]);
        p.get_mut("layer0.bias").unwrap().data_mut().copy_from_slice(&[0.5, -1.0, 0.0]);
        p.get_mut("layer1.weight").unwrap().data_mut().copy_from_slice(Tensor::eye(3).data());
        let xs = grid(400);
        let e = b.eval_basis(&xs).unwrap();
        let f: Vec<f64> = (0..400).map(|i| 2.0 * e.data()[i * 3] + 3.0 * e.data()[i * 3 + 1]).collect();
        let fs = Tensor::column(f).unwrap();
        let a = b.compute_coefficients(&xs, &fs, DEFAULT_RIDGE).unwrap();
        for (got, want) in a.iter().zip([2.0, 3.0, 0.0]) {
            assert!((got - want).abs() < 1e-6, "{a:?}");
        }
        let exact = b.compute_coefficients(&xs, &fs, 0.0).unwrap();
        let rec = b.reconstruct(&exact, &xs).unwrap();
        let err = rec.sub(&fs).unwrap().max_abs();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn vector_valued_layout_matches_eval() {
        let b = small_basis(3, 2, 2);
        let xs = grid(5);
        let e = b.eval_basis(&xs).unwrap();
        let alpha = [0.5, -1.0, 2.0];
        let rec = b.reconstruct(&alpha, &xs).unwrap();
        for i in 0..5 {
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| alpha[j] * e.data()[(i * 3 + j) * 2 + c]).sum();
                assert!((rec.get2(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn underdetermined_fit_is_finite() {
        let b = small_basis(100, 1, 3);
        let xs = Tensor::column(vec![0.3]).unwrap();
        let a = b.compute_coefficients(&xs, &Tensor::column(vec![1.0]).unwrap(), DEFAULT_RIDGE).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn shared_grid_matches_per_function() {
        let b = small_basis(3, 1, 4);
        let xs = grid(12);
        let f1 = xs.map(|x| x * x);
        let f2 = xs.map(|x| x.sin());
        let all = b.coefficients_shared_grid(&xs, &[&f1, &f2], 1e-6).unwrap();
        let a1 = b.compute_coefficients(&xs, &f1, 1e-6).unwrap();
        for j in 0..3 {
            assert!((all.get2(0, j) - a1[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_function_is_learned() {
        let xs = grid(20);
        let c = 1.7;
        let s = SampleSet::new(xs.clone(), xs.map(|_| c), Tensor::zeros(&[0, 1]), Tensor::zeros(&[0, 1])).unwrap();
        let mut src = FiniteSource::new(vec![s.clone()], 0).unwrap();
        let mut b = small_basis(2, 1, 5);
        let cfg = EncoderTrainConfig {
            steps: 200,
            batch_size: 1,
            optimizer: OptimizerConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let trace = train_function_encoder(&mut b, &mut src, &cfg).unwrap();
        assert!(trace.iter().all(|l| l.is_finite()));
        assert!(*trace.last().unwrap() < 1e-4 * c * c, "final {}", trace.last().unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = small_basis(3, 2, 6);
        b.save(dir.path(), "input").unwrap();
        assert_eq!(BasisSet::load(dir.path(), "input").unwrap(), b);
    }
}
