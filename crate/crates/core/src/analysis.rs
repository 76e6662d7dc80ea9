//! Evaluation metrics, robustness probes, spectral decay and loss landscapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParameterStore};
use crate::baselines::{DeepONetModel, Trunk};
use crate::datasets::polynomial::{draw_polynomial, PolyTask, POLY_HALF_WIDTH};
use crate::encoder::{accumulate_sq_error, value_column};
use crate::error::{Error, Result};
use crate::linalg::{pca, svd_dense, LinearMap};
use crate::operators::{B2BOperator, CoefficientMap, InputEncoding, SpectralOperator};
use crate::sample::SampleSet;
use crate::tensor::Tensor;

/// Anything that maps sampled input functions to predicted output values.
pub trait OperatorModel {
    fn name(&self) -> String;

    /// Prediction `[q, d_out]` at `ys` for the input sampled as `(xs, fs)`.
    fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor>;

    /// Input locations the model is tied to, if any.
    fn input_grid(&self) -> Option<&Tensor> {
        None
    }

    /// Output locations the model is tied to, if any.
    fn output_grid(&self) -> Option<&Tensor> {
        None
    }
}

impl<T: OperatorModel + ?Sized> OperatorModel for &T {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        (**self).predict(xs, fs, ys)
    }

    fn input_grid(&self) -> Option<&Tensor> {
        (**self).input_grid()
    }

    fn output_grid(&self) -> Option<&Tensor> {
        (**self).output_grid()
    }
}

impl OperatorModel for B2BOperator {
    fn name(&self) -> String {
        self.kind_name().into()
    }

    fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        B2BOperator::predict(self, xs, fs, ys)
    }
}

impl OperatorModel for SpectralOperator {
    fn name(&self) -> String {
        match self.kind {
            crate::operators::SpectralKind::Svd => "svd".into(),
            crate::operators::SpectralKind::Ed => "ed".into(),
        }
    }

    fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        SpectralOperator::predict(self, xs, fs, ys)
    }
}

impl OperatorModel for DeepONetModel {
    fn name(&self) -> String {
        self.variant.name().into()
    }

    fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        if xs != self.sensor_locations() {
            return Err(Error::Contract(
                "DeepONet input must be sampled at the model's sensor locations".into(),
            ));
        }
        DeepONetModel::predict(self, fs, ys)
    }

    fn input_grid(&self) -> Option<&Tensor> {
        Some(self.sensor_locations())
    }

    fn output_grid(&self) -> Option<&Tensor> {
        match &self.trunk {
            Trunk::Pod { grid, .. } => Some(grid),
            Trunk::Network { .. } => None,
        }
    }
}

/// A DeepONet fed values read at arbitrary locations, as if they were its sensors.
pub struct SensorBypass<'a>(pub &'a DeepONetModel);

impl OperatorModel for SensorBypass<'_> {
    fn name(&self) -> String {
        self.0.variant.name().into()
    }

    fn predict(&self, _xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
        self.0.predict(fs, ys)
    }
}

/// Mean over points and components of the squared difference.
pub fn pointwise_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?} does not match target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred.sub(target)?.data().iter().map(|v| v * v).sum::<f64>() / pred.len().max(1) as f64)
}

/// Per-function errors on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_function: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub worst_index: usize,
}

pub fn evaluate(model: &dyn OperatorModel, test: &[SampleSet]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    let per_function = test
        .iter()
        .map(|s| pointwise_mse(&model.predict(&s.xs, &s.fs, &s.ys)?, &s.tfs))
        .collect::<Result<Vec<_>>>()?;
    let n = per_function.len() as f64;
    let mean = per_function.iter().sum::<f64>() / n;
    let std = (per_function.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (worst_index, max) = per_function
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    Ok(Evaluation {
        per_function,
        mean,
        std,
        max,
        worst_index,
    })
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub model: String,
    pub dataset: String,
    pub seed: u64,
    pub step: usize,
    pub mse: f64,
    pub worst_mse: f64,
}

impl MetricsRecord {
    pub const HEADER: &'static str = "model,dataset,seed,step,mse,worst_mse";

    pub fn new(model: &str, dataset: &str, seed: u64, step: usize, eval: &Evaluation) -> Self {
        MetricsRecord {
            model: model.into(),
            dataset: dataset.into(),
            seed,
            step,
            mse: eval.mean,
            worst_mse: eval.max,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e}",
            self.model, self.dataset, self.seed, self.step, self.mse, self.worst_mse
        )
    }
}

/// Per-point comparison for one function: CSV with columns
/// `point,y0..,component,target,prediction,error`.
pub fn worst_case_csv(model: &dyn OperatorModel, s: &SampleSet) -> Result<String> {
    let pred = model.predict(&s.xs, &s.fs, &s.ys)?;
    if pred.shape() != s.tfs.shape() {
        return Err(Error::Dimension("prediction does not match target shape".into()));
    }
    let y_cols: Vec<String> = (0..s.ys.cols()).map(|c| format!("y{c}")).collect();
    let mut out = format!("point,{},component,target,prediction,error\n", y_cols.join(","));
    for i in 0..s.ys.rows() {
        let y: Vec<String> = s.ys.row(i).iter().map(|v| format!("{v:e}")).collect();
        for c in 0..s.tfs.cols() {
            let (t, p) = (s.tfs.get2(i, c), pred.get2(i, c));
            out.push_str(&format!("{i},{},{c},{t:e},{p:e},{:e}\n", y.join(","), p - t));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessConfig {
    pub n_functions: usize,
    pub m: usize,
    pub p: usize,
    /// Coefficient range of the in-distribution functions.
    pub scale: f64,
    /// Multiplier on `scale` for the out-of-distribution functions.
    pub ood_factor: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            n_functions: 100,
            m: 100,
            p: 100,
            scale: 3.0,
            ood_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub ood_mse: f64,
    pub linearity_mse: f64,
    pub homogeneity_mse: f64,
    /// `linearity_mse` divided by the mean squared size of `a·Tf + b·Tg`.
    pub linearity_rel: f64,
    pub homogeneity_rel: f64,
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_parts(
        vec![n, 1],
        (0..n).map(|_| rng.random_range(-POLY_HALF_WIDTH..=POLY_HALF_WIDTH)).collect(),
    )
}

fn eval_column(f: &crate::datasets::Polynomial, xs: &Tensor) -> Tensor {
    xs.map(|x| f.eval(x))
}

/// Out-of-distribution, additivity and homogeneity probes on a polynomial task.
///
/// Within each comparison all functions share one input grid and one output grid.
pub fn robustness_suite(
    model: &dyn OperatorModel,
    task: PolyTask,
    seed: u64,
    cfg: &RobustnessConfig,
) -> Result<RobustnessReport> {
    if cfg.n_functions == 0 || cfg.m == 0 || cfg.p == 0 || !(cfg.scale > 0.0) || !(cfg.ood_factor > 0.0) {
        return Err(Error::Config("robustness probes need positive counts and scales".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = |rng: &mut ChaCha8Rng| {
        let xs = model.input_grid().cloned().unwrap_or_else(|| random_points(cfg.m, rng));
        let ys = model.output_grid().cloned().unwrap_or_else(|| random_points(cfg.p, rng));
        (xs, ys)
    };
    let n = cfg.n_functions;
    let (mut ood, mut lin, mut hom, mut lin_ref, mut hom_ref) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (xs, ys) = grids(&mut rng);
        let (big, _) = draw_polynomial(task, cfg.scale * cfg.ood_factor, seed, 3 * i);
        let truth = eval_column(&task.apply(&big), &ys);
        ood += pointwise_mse(&model.predict(&xs, &eval_column(&big, &xs), &ys)?, &truth)?;

        let (f, _) = draw_polynomial(task, cfg.scale, seed, 3 * i + 1);
        let (g, _) = draw_polynomial(task, cfg.scale, seed, 3 * i + 2);
        let a = rng.random_range(-2.0..=2.0);
        let b = rng.random_range(-2.0..=2.0);
        let tf = model.predict(&xs, &eval_column(&f, &xs), &ys)?;
        let tg = model.predict(&xs, &eval_column(&g, &xs), &ys)?;
        let combo = model.predict(&xs, &eval_column(&f.combine(a, &g, b), &xs), &ys)?;
        let expected = tf.scale(a).add(&tg.scale(b))?;
        lin += pointwise_mse(&combo, &expected)?;
        lin_ref += pointwise_mse(&expected, &Tensor::zeros(expected.shape()))?;
        let scaled = model.predict(&xs, &eval_column(&f.scaled(a), &xs), &ys)?;
        let expected = tf.scale(a);
        hom += pointwise_mse(&scaled, &expected)?;
        hom_ref += pointwise_mse(&expected, &Tensor::zeros(expected.shape()))?;
    }
    let n = n as f64;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    Ok(RobustnessReport {
        ood_mse: ood / n,
        linearity_mse: lin / n,
        homogeneity_mse: hom / n,
        linearity_rel: ratio(lin, lin_ref),
        homogeneity_rel: ratio(hom, hom_ref),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecaySourceKind {
    MatrixSVD,
    LearnedSigma,
    LearnedLambda,
}

pub enum DecaySource<'a> {
    Matrix(&'a LinearMap),
    LearnedSigma(&'a [f64]),
    LearnedLambda(&'a [f64]),
}

impl<'a> DecaySource<'a> {
    /// Learned values of a spectral operator.
    pub fn from_spectral(op: &'a SpectralOperator) -> Self {
        match op.kind {
            crate::operators::SpectralKind::Svd => DecaySource::LearnedSigma(&op.values),
            crate::operators::SpectralKind::Ed => DecaySource::LearnedLambda(&op.values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Non-negative, non-increasing.
    pub magnitudes: Vec<f64>,
    /// Slope of the least-squares line through `(i, ln magnitude_i)` over positive magnitudes.
    pub rate: f64,
    pub source: DecaySourceKind,
}

impl DecayReport {
    pub const HEADER: &'static str = "index,magnitude,source";

    /// `magnitude_i / magnitude_0`; zero when the leading magnitude is zero.
    pub fn ratio(&self, i: usize) -> f64 {
        match (self.magnitudes.first(), self.magnitudes.get(i)) {
            (Some(&top), Some(&v)) if top > 0.0 => v / top,
            _ => 0.0,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (i, m) in self.magnitudes.iter().enumerate() {
            out.push_str(&format!("{i},{m:e},{:?}\n", self.source));
        }
        out
    }
}

pub fn decay_report(source: DecaySource<'_>) -> Result<DecayReport> {
    let (mut magnitudes, kind) = match source {
        DecaySource::Matrix(a) => (svd_dense(a.matrix())?.s, DecaySourceKind::MatrixSVD),
        DecaySource::LearnedSigma(v) => (v.iter().map(|x| x.abs()).collect(), DecaySourceKind::LearnedSigma),
        DecaySource::LearnedLambda(v) => (v.iter().map(|x| x.abs()).collect(), DecaySourceKind::LearnedLambda),
    };
    if magnitudes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite spectral magnitude".into()));
    }
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    let pts: Vec<(f64, f64)> = magnitudes
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 0.0)
        .map(|(i, v)| (i as f64, v.ln()))
        .collect();
    let rate = if pts.len() < 2 {
        0.0
    } else {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    };
    Ok(DecayReport {
        magnitudes,
        rate,
        source: kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeConfig {
    pub n_probe: usize,
    pub range: f64,
    pub grid: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            n_probe: 100,
            range: 0.01,
            grid: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Landscape {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[i * betas.len() + j]` is the loss at `(alphas[i], betas[j])`.
    pub losses: Vec<f64>,
    pub directions: [ParameterStore; 2],
}

impl Landscape {
    pub const HEADER: &'static str = "alpha,beta,loss";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                out.push_str(&format!("{a:e},{b:e},{:e}\n", self.losses[i * self.betas.len() + j]));
            }
        }
        out
    }
}

/// Symmetric grid on `[-range, range]` whose middle entry is exactly zero for odd `n`.
fn symmetric_axis(range: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| range * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
        .collect()
}

/// Scans `loss` on the plane `θ* + α p₁ + β p₂`.
///
/// `p₁, p₂` are the two leading principal directions of the per-probe gradients
/// `probe_gradient(0..n_probe)`, each rescaled tensor-by-tensor to the norm of
/// the matching block of `θ*` (blocks of `θ*` with zero norm get zero direction).
pub fn loss_landscape<G, L>(
    theta: &ParameterStore,
    probe_gradient: G,
    loss: L,
    cfg: &LandscapeConfig,
) -> Result<Landscape>
where
    G: Fn(usize) -> Result<ParameterStore>,
    L: Fn(&ParameterStore) -> Result<f64> + Sync,
{
    if cfg.n_probe < 2 {
        return Err(Error::Config(format!("loss landscape needs ≥ 2 probes, got {}", cfg.n_probe)));
    }
    if cfg.grid == 0 || !(cfg.range > 0.0) {
        return Err(Error::Config("loss landscape needs a positive range and grid size".into()));
    }
    let width = theta.num_scalars();
    if width < 2 {
        return Err(Error::Config("loss landscape needs at least two parameters".into()));
    }
    let mut rows = Vec::with_capacity(cfg.n_probe * width);
    for i in 0..cfg.n_probe {
        let g = probe_gradient(i)?;
        if g.num_scalars() != width {
            return Err(Error::Dimension("probe gradient does not match parameters".into()));
        }
        rows.extend(g.flatten());
    }
    let comps = pca(&Tensor::from_parts(vec![cfg.n_probe, width], rows), 2)?.components;
    let directions = [0, 1].map(|c| {
        let mut d = theta.zeros_like();
        d.assign_flat(comps.row(c)).expect("width matches");
        for (block, t) in d.tensors_mut().iter_mut().zip(theta.tensors()) {
            let (dn, tn) = (block.norm(), t.norm());
            let s = if dn > 0.0 { tn / dn } else { 0.0 };
            block.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        d
    });
    let alphas = symmetric_axis(cfg.range, cfg.grid);
    let betas = alphas.clone();
    let base = theta.flatten();
    let (d1, d2) = (directions[0].flatten(), directions[1].flatten());
    let points: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect();
    let evaluate_point = |&(a, b): &(f64, f64)| -> Result<f64> {
        let mut p = theta.clone();
        let flat: Vec<f64> = (0..width).map(|i| base[i] + a * d1[i] + b * d2[i]).collect();
        p.assign_flat(&flat)?;
        loss(&p)
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(points.len());
    let chunk = points.len().div_ceil(threads);
    let losses: Vec<f64> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(evaluate_point).collect::<Result<Vec<f64>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("landscape worker panicked"))
            .collect::<Result<Vec<Vec<f64>>>>()
    })?
    .into_iter()
    .flatten()
    .collect();
    Ok(Landscape {
        alphas,
        betas,
        losses,
        directions,
    })
}

/// Models whose parameters can be perturbed and differentiated for landscape scans.
pub trait Differentiable: OperatorModel + Clone + Sync {
    /// All trainable parameters as one store with component-prefixed names.
    fn parameters(&self) -> ParameterStore;

    fn set_parameters(&mut self, theta: &ParameterStore) -> Result<()>;

    /// Gradient of `(1/p)‖T̂f - Tf‖²` for one sample, keyed like [`parameters`](Self::parameters).
    fn sample_gradient(&self, s: &SampleSet) -> Result<ParameterStore>;
}

fn merge(parts: &[(&str, &ParameterStore)]) -> ParameterStore {
    let mut out = ParameterStore::new();
    for (prefix, store) in parts {
        for (name, t) in store.iter() {
            out.insert(format!("{prefix}.{name}"), t.clone()).expect("prefixes are distinct");
        }
    }
    out
}

fn extract(theta: &ParameterStore, prefix: &str, into: &mut ParameterStore) -> Result<()> {
    let names: Vec<String> = into.names().to_vec();
    for name in names {
        let src = theta
            .get(&format!("{prefix}.{name}"))
            .ok_or_else(|| Error::Dimension(format!("parameters lack {prefix}.{name}")))?;
        let dst = into.get_mut(&name).expect("name from store");
        if src.shape() != dst.shape() {
            return Err(Error::Dimension(format!("{prefix}.{name} has the wrong shape")));
        }
        *dst = src.clone();
    }
    Ok(())
}

fn matrix_store(m: &Tensor) -> ParameterStore {
    let mut s = ParameterStore::new();
    s.insert("matrix", m.clone()).expect("fresh store");
    s
}

impl Differentiable for B2BOperator {
    fn parameters(&self) -> ParameterStore {
        let mut parts: Vec<(&str, &ParameterStore)> = Vec::new();
        if let InputEncoding::Basis(b) = &self.input {
            parts.push(("input", &b.mlp.params));
        }
        let map_store;
        match &self.map {
            CoefficientMap::Linear(a) => {
                map_store = matrix_store(a.matrix());
                parts.push(("map", &map_store));
            }
            CoefficientMap::Network(n) => parts.push(("map", &n.mlp.params)),
        }
        parts.push(("output", &self.output_basis.mlp.params));
        merge(&parts)
    }

    fn set_parameters(&mut self, theta: &ParameterStore) -> Result<()> {
        if let InputEncoding::Basis(b) = &mut self.input {
            extract(theta, "input", &mut b.mlp.params)?;
        }
        match &mut self.map {
            CoefficientMap::Linear(a) => {
                let mut s = matrix_store(a.matrix());
                extract(theta, "map", &mut s)?;
                *a = LinearMap::new(s.get("matrix").expect("present").clone())?;
            }
            CoefficientMap::Network(n) => extract(theta, "map", &mut n.mlp.params)?,
        }
        extract(theta, "output", &mut self.output_basis.mlp.params)
    }

    fn sample_gradient(&self, s: &SampleSet) -> Result<ParameterStore> {
        let mut graph = Graph::new();
        let (alpha, b_in) = match &self.input {
            InputEncoding::Basis(basis) => {
                let b = graph.bind(&basis.mlp.params);
                let g = basis.record_designs(&mut graph, &b, &[&s.xs])?[0];
                let f = graph.constant(value_column(&s.fs));
                (graph.least_squares(g, f, self.ridge)?, Some(b))
            }
            InputEncoding::Raw { .. } => {
                let a = self.input.encode(&s.xs, &s.fs, self.ridge)?;
                (graph.constant(Tensor::from_parts(vec![a.len(), 1], a)), None)
            }
        };
        let map_store = match &self.map {
            CoefficientMap::Linear(a) => matrix_store(a.matrix()),
            CoefficientMap::Network(n) => n.mlp.params.clone(),
        };
        let b_map = graph.bind(&map_store);
        let beta: NodeId = match &self.map {
            CoefficientMap::Linear(_) => graph.matmul(b_map.node(0), alpha)?,
            CoefficientMap::Network(n) => {
                let row = graph.transpose(alpha);
                let out = n.record(&mut graph, &b_map, row)?;
                graph.transpose(out)
            }
        };
        let b_out = graph.bind(&self.output_basis.mlp.params);
        let h = self.output_basis.record_designs(&mut graph, &b_out, &[&s.ys])?[0];
        let pred = graph.matmul(h, beta)?;
        let target = graph.constant(value_column(&s.tfs));
        let loss = accumulate_sq_error(&mut graph, None, pred, target, 1.0 / s.tfs.len() as f64)?;
        let grads = graph.backward(loss)?;
        let g_in = b_in.as_ref().map(|b| grads.for_binding(b));
        let g_map = grads.for_binding(&b_map);
        let g_out = grads.for_binding(&b_out);
        let mut parts: Vec<(&str, &ParameterStore)> = Vec::new();
        if let Some(g) = &g_in {
            parts.push(("input", g));
        }
        parts.push(("map", &g_map));
        parts.push(("output", &g_out));
        Ok(merge(&parts))
    }
}

impl Differentiable for DeepONetModel {
    fn parameters(&self) -> ParameterStore {
        match &self.trunk {
            Trunk::Network { basis, .. } => {
                merge(&[("branch", &self.branch.mlp.params), ("trunk", &basis.mlp.params)])
            }
            Trunk::Pod { .. } => merge(&[("branch", &self.branch.mlp.params)]),
        }
    }

    fn set_parameters(&mut self, theta: &ParameterStore) -> Result<()> {
        extract(theta, "branch", &mut self.branch.mlp.params)?;
        if let Trunk::Network { basis, .. } = &mut self.trunk {
            extract(theta, "trunk", &mut basis.mlp.params)?;
        }
        Ok(())
    }

    fn sample_gradient(&self, s: &SampleSet) -> Result<ParameterStore> {
        if &s.xs != self.sensor_locations() {
            return Err(Error::Contract(
                "DeepONet input must be sampled at the model's sensor locations".into(),
            ));
        }
        let mut graph = Graph::new();
        let b_branch = graph.bind(&self.branch.mlp.params);
        let row = graph.constant(Tensor::from_parts(vec![1, s.fs.len()], s.fs.data().to_vec()));
        let b = self.branch.record(&mut graph, &b_branch, row)?;
        let b = graph.transpose(b);
        let (pred, b_trunk) = match &self.trunk {
            Trunk::Network { basis, transform } => {
                let bt = graph.bind(&basis.mlp.params);
                let mut g = basis.record_designs(&mut graph, &bt, &[&s.ys])?[0];
                if let Some(t) = transform {
                    let t = graph.constant(t.clone());
                    g = graph.matmul(g, t)?;
                }
                (graph.matmul(g, b)?, Some(bt))
            }
            Trunk::Pod { mean, .. } => {
                let modes = graph.constant(self.trunk.design(&s.ys)?);
                let p = graph.matmul(modes, b)?;
                let mean = graph.constant(mean.clone());
                (graph.add(p, mean)?, None)
            }
        };
        let target = graph.constant(value_column(&s.tfs));
        let loss = accumulate_sq_error(&mut graph, None, pred, target, 1.0 / s.tfs.len() as f64)?;
        let grads = graph.backward(loss)?;
        let g_branch = grads.for_binding(&b_branch);
        Ok(match &b_trunk {
            Some(bt) => merge(&[("branch", &g_branch), ("trunk", &grads.for_binding(bt))]),
            None => merge(&[("branch", &g_branch)]),
        })
    }
}

/// Landscape of the mean probe MSE of `model` around its current parameters.
pub fn model_landscape<M: Differentiable>(model: &M, probes: &[SampleSet], cfg: &LandscapeConfig) -> Result<Landscape> {
    if probes.len() < cfg.n_probe {
        return Err(Error::Config(format!(
            "landscape needs {} probe functions, got {}",
            cfg.n_probe,
            probes.len()
        )));
    }
    let probes = &probes[..cfg.n_probe];
    let theta = model.parameters();
    let loss = |p: &ParameterStore| -> Result<f64> {
        let mut m = model.clone();
        m.set_parameters(p)?;
        Ok(evaluate(&m, probes)?.mean)
    };
    loss_landscape(&theta, |i| model.sample_gradient(&probes[i]), loss, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::datasets::{gen_polynomial_batch, PolyConfig, PolynomialStream, SampleSource, Sampling};
    use crate::encoder::{BasisConfig, BasisSet, Domain};
    use crate::operators::b2b_fit_linear;
    use crate::sample::Side;

    /// Returns stored targets for known samples.
    struct Lookup<'a>(&'a [SampleSet]);

    impl OperatorModel for Lookup<'_> {
        fn name(&self) -> String {
            "lookup".into()
        }
        fn predict(&self, xs: &Tensor, fs: &Tensor, _ys: &Tensor) -> Result<Tensor> {
            let s = self.0.iter().find(|s| &s.xs == xs && &s.fs == fs).expect("known sample");
            Ok(s.tfs.clone())
        }
    }

    struct Zero;

    impl OperatorModel for Zero {
        fn name(&self) -> String {
            "zero".into()
        }
        fn predict(&self, _xs: &Tensor, _fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
            Ok(Tensor::zeros(&[ys.rows(), 1]))
        }
    }

    /// Exact derivative, computed by fitting the cubic through the samples.
    struct ExactDerivative;

    impl OperatorModel for ExactDerivative {
        fn name(&self) -> String {
            "exact".into()
        }
        fn predict(&self, xs: &Tensor, fs: &Tensor, ys: &Tensor) -> Result<Tensor> {
            let design = Tensor::from_rows(&xs.data().iter().map(|&x| (0..4).map(|j| x.powi(j)).collect()).collect::<Vec<_>>())?;
            let c = crate::linalg::least_squares(&design, fs, 0.0)?.into_data();
            Ok(ys.map(|y| c[1] + 2.0 * c[2] * y + 3.0 * c[3] * y * y))
        }
    }

    #[test]
    fn truth_scores_zero_and_zero_model_scores_energy() {
        let test = gen_polynomial_batch(PolyTask::Derivative, 20, 30, 40, 9, 3.0).unwrap();
        let e = evaluate(&Lookup(&test), &test).unwrap();
        assert_eq!(e.mean, 0.0);
        let z = evaluate(&Zero, &test).unwrap();
        let energy: f64 = test.iter().map(|s| s.tfs.data().iter().map(|v| v * v).sum::<f64>() / 40.0).sum::<f64>() / 20.0;
        assert!((z.mean - energy).abs() < 1e-12 * energy);
        assert_eq!(z.max, z.per_function[z.worst_index]);
        assert!(z.max >= z.mean);
        assert_eq!(evaluate(&Zero, &test).unwrap(), z);
        assert!(evaluate(&Zero, &[]).is_err());
    }

    #[test]
    fn exact_model_is_linear_and_ood_exact() {
        let cfg = RobustnessConfig {
            n_functions: 10,
            m: 20,
            p: 20,
            ..RobustnessConfig::default()
        };
        let r = robustness_suite(&ExactDerivative, PolyTask::Derivative, 1, &cfg).unwrap();
        assert!(r.ood_mse < 1e-10, "{r:?}");
        assert!(r.linearity_rel < 1e-16 && r.homogeneity_rel < 1e-16, "{r:?}");
        let z = robustness_suite(&Zero, PolyTask::Derivative, 1, &cfg).unwrap();
        assert_eq!(z.linearity_mse, 0.0);
        assert!(z.ood_mse > 0.0);
    }

    #[test]
    fn b2b_linear_passes_linearity_probe() {
        let dom = Domain::interval(-10.0, 10.0).unwrap();
        let bc = BasisConfig {
            k: 6,
            hidden: vec![16],
            activation: Activation::Tanh,
        };
        let input = BasisSet::new(&bc, 1, Side::Input, dom.clone(), 0).unwrap();
        let output = BasisSet::new(&bc, 1, Side::Output, dom, 1).unwrap();
        let data = gen_polynomial_batch(PolyTask::AntiDerivative, 50, 40, 40, 0, 3.0).unwrap();
        let op = b2b_fit_linear(InputEncoding::Basis(input), output, &data, 1e-6).unwrap();
        let cfg = RobustnessConfig {
            n_functions: 20,
            ..RobustnessConfig::default()
        };
        let r = robustness_suite(&op, PolyTask::AntiDerivative, 0, &cfg).unwrap();
        assert!(r.linearity_rel < 1e-8 && r.homogeneity_rel < 1e-8, "{r:?}");
    }

    #[test]
    fn decay_of_identity_and_geometric_diagonal() {
        let id = decay_report(DecaySource::Matrix(&LinearMap::new(Tensor::eye(5)).unwrap())).unwrap();
        assert!(id.magnitudes.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(id.rate.abs() < 1e-12);
        let diag: Vec<f64> = (0..8).map(|i| 0.5f64.powi(i)).collect();
        let g = decay_report(DecaySource::Matrix(&LinearMap::diagonal(&diag))).unwrap();
        assert!((g.rate + 2f64.ln()).abs() < 1e-10, "{}", g.rate);
        assert!((g.ratio(3) - 0.125).abs() < 1e-12);
        let mut shuffled = diag.clone();
        shuffled.reverse();
        shuffled.swap(1, 5);
        let a = decay_report(DecaySource::LearnedSigma(&diag)).unwrap();
        let b = decay_report(DecaySource::LearnedSigma(&shuffled)).unwrap();
        assert_eq!(a, b);
        assert!(a.to_csv().starts_with("index,magnitude,source\n0,1e0,LearnedSigma\n"));
    }

    #[test]
    fn quadratic_landscape_is_an_exact_paraboloid() {
        let mut theta = ParameterStore::new();
        theta.insert("w", Tensor::new(vec![2, 3], vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.7]).unwrap()).unwrap();
        theta.insert("b", Tensor::new(vec![1, 2], vec![1.5, -0.2]).unwrap()).unwrap();
        let base = theta.clone();
        let probe = |i: usize| -> Result<ParameterStore> {
            let mut g = base.clone();
            let flat: Vec<f64> = base.flatten().iter().enumerate().map(|(j, v)| 2.0 * v * (1.0 + ((i * 8 + j) as f64).sin())).collect();
            g.assign_flat(&flat)?;
            Ok(g)
        };
        let loss = |p: &ParameterStore| -> Result<f64> { Ok(p.flatten().iter().map(|v| v * v).sum()) };
        let cfg = LandscapeConfig {
            n_probe: 10,
            range: 0.5,
            grid: 5,
        };
        let l = loss_landscape(&theta, probe, loss, &cfg).unwrap();
        let (t, d1, d2) = (theta.flatten(), l.directions[0].flatten(), l.directions[1].flatten());
        for (i, a) in l.alphas.iter().enumerate() {
            for (j, b) in l.betas.iter().enumerate() {
                let exact: f64 = (0..t.len()).map(|k| (t[k] + a * d1[k] + b * d2[k]).powi(2)).sum();
                assert!((l.losses[i * 5 + j] - exact).abs() < 1e-10);
            }
        }
        assert_eq!(l.losses[2 * 5 + 2], loss(&theta).unwrap());
        // Each direction block has the norm of the matching parameter block.
        for (d, t) in l.directions[0].tensors().iter().zip(theta.tensors()) {
            assert!((d.norm() - t.norm()).abs() < 1e-12);
        }
        let one = LandscapeConfig {
            n_probe: 1,
            ..cfg.clone()
        };
        assert!(loss_landscape(&theta, probe, loss, &one).is_err());
        assert_eq!(l.to_csv().lines().count(), 26);
    }

    fn finite_difference_check<M: Differentiable>(model: &M, s: &SampleSet) {
        let theta = model.parameters();
        let grad = model.sample_gradient(s).unwrap().flatten();
        let flat = theta.flatten();
        let loss_at = |v: &[f64]| {
            let mut p = theta.clone();
            p.assign_flat(v).unwrap();
            let mut m = model.clone();
            m.set_parameters(&p).unwrap();
            pointwise_mse(&OperatorModel::predict(&m, &s.xs, &s.fs, &s.ys).unwrap(), &s.tfs).unwrap()
        };
        for i in (0..flat.len()).step_by((flat.len() / 25).max(1)) {
            let h = 1e-6 * flat[i].abs().max(1.0);
            let (mut up, mut dn) = (flat.clone(), flat.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (loss_at(&up) - loss_at(&dn)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(grad[i].abs()).max(1e-3), "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn b2b_and_deeponet_gradients_match_finite_differences() {
        let dom = Domain::interval(-10.0, 10.0).unwrap();
        let bc = BasisConfig {
            k: 4,
            hidden: vec![8],
            activation: Activation::Tanh,
        };
        let input = BasisSet::new(&bc, 1, Side::Input, dom.clone(), 2).unwrap();
        let output = BasisSet::new(&bc, 1, Side::Output, dom.clone(), 3).unwrap();
        let data = gen_polynomial_batch(PolyTask::Derivative, 20, 30, 30, 0, 3.0).unwrap();
        let op = b2b_fit_linear(InputEncoding::Basis(input), output, &data, 1e-6).unwrap();
        finite_difference_check(&op, &data[0]);

        let mut pc = PolyConfig::new(PolyTask::Derivative, 10, 12);
        pc.sampling = Sampling::uniform_grid(10, 12);
        let mut src = PolynomialStream::new(pc, 0);
        let cfg = crate::baselines::DeepONetConfig {
            steps: 3,
            batch_size: 4,
            branch_hidden: vec![8],
            trunk_hidden: vec![8],
            latent: 5,
            activation: Activation::Tanh,
            ..Default::default()
        };
        let (don, _) = crate::baselines::train_deeponet(&mut src, &dom, &cfg, 0, None).unwrap();
        let s = &src.next_batch(1).unwrap()[0];
        finite_difference_check(&don, s);
        let l = model_landscape(
            &don,
            &src.next_batch(4).unwrap(),
            &LandscapeConfig {
                n_probe: 4,
                range: 0.01,
                grid: 3,
            },
        )
        .unwrap();
        assert_eq!(l.losses.len(), 9);
    }
}
