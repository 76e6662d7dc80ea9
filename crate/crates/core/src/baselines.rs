//! DeepONet baselines: vanilla (unstacked), POD-DeepONet and two-stage DeepONet.
//!
//! All three evaluate `T(f)(y) = Σ_i b_i(f) · t_i(y)`, where the branch `b`
//! reads `f` at a fixed list of sensor locations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Mlp, MlpSpec, OptimizerConfig, OptimizerState, ParameterStore};
use crate::datasets::SampleSource;
use crate::encoder::{
    accumulate_sq_error, check_finite_loss, train_function_encoder, value_column, BasisConfig, BasisSet, Domain,
    EncoderTrainConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{least_squares, pca, DEFAULT_RIDGE};
use crate::operators::{read_json, write_json, CoefficientNet, Monitor, Standardizer, CALIBRATION_BATCHES};
use crate::sample::{SampleSet, Side};
use crate::tensor::Tensor;

/// Points in the quadrature grid used to orthonormalize a two-stage trunk.
pub const QUADRATURE_POINTS: usize = 1000;
/// Columns whose residual norm after projection falls below this fraction of
/// their original norm are dropped during Gram–Schmidt.
pub const GRAM_SCHMIDT_DROP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeepONetVariant {
    Vanilla,
    Pod,
    TwoStage,
}

impl DeepONetVariant {
    pub fn name(self) -> &'static str {
        match self {
            DeepONetVariant::Vanilla => "deeponet",
            DeepONetVariant::Pod => "deeponet-pod",
            DeepONetVariant::TwoStage => "deeponet-2stage",
        }
    }
}

/// The trunk: a network (optionally followed by a fixed linear recombination)
/// or a fixed POD table on one output grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Trunk {
    Network {
        basis: BasisSet,
        /// `[k, latent]` map applied to the network's outputs.
        transform: Option<Tensor>,
    },
    Pod {
        grid: Tensor,
        /// `[p·d, 1]`.
        mean: Tensor,
        /// `[p·d, latent]`, orthonormal columns.
        modes: Tensor,
    },
}

impl Trunk {
    pub fn latent(&self) -> usize {
        match self {
            Trunk::Network { basis, transform } => transform.as_ref().map_or(basis.k, |t| t.cols()),
            Trunk::Pod { modes, .. } => modes.cols(),
        }
    }

    /// Trunk outputs at `ys` as a `[q·d, latent]` matrix.
    pub fn design(&self, ys: &Tensor) -> Result<Tensor> {
        match self {
            Trunk::Network { basis, transform } => {
                let g = basis.design_matrix(ys)?;
                match transform {
                    Some(t) => g.matmul(t),
                    None => Ok(g),
                }
            }
            Trunk::Pod { grid, modes, .. } => {
                if ys != grid {
                    return Err(Error::Contract(
                        "a POD trunk is a fixed table and can only be evaluated on its training grid".into(),
                    ));
                }
                Ok(modes.clone())
            }
        }
    }

    fn offset(&self) -> Option<&Tensor> {
        match self {
            Trunk::Pod { mean, .. } => Some(mean),
            Trunk::Network { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepONetModel {
    pub variant: DeepONetVariant,
    pub branch: CoefficientNet,
    pub trunk: Trunk,
    sensor_locations: Tensor,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl DeepONetModel {
    pub fn new(
        variant: DeepONetVariant,
        branch: CoefficientNet,
        trunk: Trunk,
        sensor_locations: Tensor,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if branch.mlp.spec.input_dim() != sensor_locations.rows() * input_dim {
            return Err(Error::Dimension(format!(
                "branch reads {} values but {} sensors × {} components are declared",
                branch.mlp.spec.input_dim(),
                sensor_locations.rows(),
                input_dim
            )));
        }
        if branch.mlp.spec.output_dim() != trunk.latent() {
            return Err(Error::Dimension(format!(
                "branch width {} differs from trunk width {}",
                branch.mlp.spec.output_dim(),
                trunk.latent()
            )));
        }
        Ok(DeepONetModel {
            variant,
            branch,
            trunk,
            sensor_locations,
            input_dim,
            output_dim,
        })
    }

    pub fn sensor_locations(&self) -> &Tensor {
        &self.sensor_locations
    }

    pub fn latent(&self) -> usize {
        self.trunk.latent()
    }

    /// Branch outputs for several functions, `[N, latent]`.
    pub fn branch_outputs(&self, sensor_values: &[&Tensor]) -> Result<Tensor> {
        let rows = branch_rows(sensor_values, self.sensor_locations.rows(), self.input_dim)?;
        self.branch.predict(&rows)
    }

    /// Prediction at `ys` given sensor readings `[m, d_in]`; shape `[q, d_out]`.
    pub fn predict(&self, sensor_values: &Tensor, ys: &Tensor) -> Result<Tensor> {
        let b = self.branch_outputs(&[sensor_values])?;
        let design = self.trunk.design(ys)?;
        if design.rows() != ys.rows() * self.output_dim {
            return Err(Error::Dimension(format!(
                "trunk produced {} rows for {} query points",
                design.rows(),
                ys.rows()
            )));
        }
        let mut out = design.matmul(&b.transpose())?;
        if let Some(mean) = self.trunk.offset() {
            out = out.add(mean)?;
        }
        out.reshape(&[ys.rows(), self.output_dim])
    }

    /// Prediction for a sample, after checking that it was read at this model's sensors.
    pub fn predict_sample(&self, s: &SampleSet) -> Result<Tensor> {
        check_sensors(&self.sensor_locations, &s.xs)?;
        self.predict(&s.fs, &s.ys)
    }
}

pub fn deeponet_predict(model: &DeepONetModel, sensor_values: &Tensor, ys: &Tensor) -> Result<Tensor> {
    model.predict(sensor_values, ys)
}

fn branch_rows(sensor_values: &[&Tensor], m: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(sensor_values.len() * m * d);
    for v in sensor_values {
        if v.shape() != [m, d] {
            return Err(Error::Dimension(format!(
                "branch expects sensor values of shape [{m}, {d}], got {:?}",
                v.shape()
            )));
        }
        data.extend_from_slice(v.data());
    }
    Ok(Tensor::from_parts(vec![sensor_values.len(), m * d], data))
}

fn check_sensors(sensors: &Tensor, xs: &Tensor) -> Result<()> {
    if xs != sensors {
        return Err(Error::Contract(
            "DeepONet needs every input function sampled at the same sensor locations".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepONetConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Width `P` of the shared latent layer (POD: number of modes).
    pub latent: usize,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
    /// Reject batches whose sensor locations differ from the first batch's.
    pub check_sensors: bool,
    pub ridge: f64,
}

impl Default for DeepONetConfig {
    fn default() -> Self {
        DeepONetConfig {
            steps: 10_000,
            batch_size: 10,
            branch_hidden: vec![256, 256],
            trunk_hidden: vec![256, 256],
            latent: 100,
            activation: Activation::Relu,
            optimizer: OptimizerConfig::default(),
            check_sensors: true,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl DeepONetConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.latent == 0 {
            return Err(Error::Config(
                "DeepONet training needs steps, batch size and latent width ≥ 1".into(),
            ));
        }
        Ok(())
    }

    fn branch_mlp(&self, inputs: usize, outputs: usize, seed: u64) -> Result<Mlp> {
        let mut sizes = vec![inputs];
        sizes.extend(&self.branch_hidden);
        sizes.push(outputs);
        Ok(Mlp::new(MlpSpec::new(sizes, self.activation)?, seed))
    }

    fn trunk_basis(&self, domain: &Domain, output_dim: usize, seed: u64) -> Result<BasisSet> {
        let cfg = BasisConfig {
            k: self.latent,
            hidden: self.trunk_hidden.clone(),
            activation: self.activation,
        };
        BasisSet::new(&cfg, output_dim, Side::Output, domain.clone(), seed)
    }
}

/// Shapes and sensor layout read off a calibration batch.
struct Layout {
    sensors: Tensor,
    input_dim: usize,
    output_dim: usize,
}

fn draw_calibration(source: &mut dyn SampleSource, cfg: &DeepONetConfig) -> Result<(Vec<SampleSet>, Layout)> {
    let batch = source.next_batch(cfg.batch_size * CALIBRATION_BATCHES)?;
    let first = batch
        .first()
        .ok_or_else(|| Error::Config("sample source is exhausted".into()))?;
    let layout = Layout {
        sensors: first.xs.clone(),
        input_dim: first.fs.cols(),
        output_dim: first.tfs.cols(),
    };
    if cfg.check_sensors {
        for s in &batch {
            check_sensors(&layout.sensors, &s.xs)?;
        }
    }
    Ok((batch, layout))
}

fn input_standardizer(samples: &[SampleSet], layout: &Layout) -> Result<Standardizer> {
    let fs: Vec<&Tensor> = samples.iter().map(|s| &s.fs).collect();
    Ok(Standardizer::fit(&branch_rows(&fs, layout.sensors.rows(), layout.input_dim)?))
}

/// Joint branch/trunk (or branch-only) training on the output MSE.
fn train_output_mse(
    model: &mut DeepONetModel,
    train_trunk: bool,
    source: &mut dyn SampleSource,
    cfg: &DeepONetConfig,
    mut monitor: Monitor<'_, DeepONetModel>,
) -> Result<Vec<f64>> {
    let mut opt_branch = OptimizerState::new(cfg.optimizer, &model.branch.mlp.params);
    let mut opt_trunk = match (&model.trunk, train_trunk) {
        (Trunk::Network { basis, .. }, true) => Some(OptimizerState::new(cfg.optimizer, &basis.mlp.params)),
        _ => None,
    };
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = source.next_batch(cfg.batch_size)?;
        if batch.is_empty() {
            return Err(Error::Config("sample source is exhausted".into()));
        }
        if cfg.check_sensors {
            for s in &batch {
                check_sensors(&model.sensor_locations, &s.xs)?;
            }
        }
        let n = batch.len();
        let fs: Vec<&Tensor> = batch.iter().map(|s| &s.fs).collect();
        let rows = branch_rows(&fs, model.sensor_locations.rows(), model.input_dim)?;
        let mut graph = Graph::new();
        let b_branch = graph.bind(&model.branch.mlp.params);
        let rows = graph.constant(rows);
        let branch = model.branch.record(&mut graph, &b_branch, rows)?;
        let (designs, b_trunk) = match (&model.trunk, train_trunk) {
            (Trunk::Network { basis, transform: None }, true) => {
                let bt = graph.bind(&basis.mlp.params);
                let ys: Vec<&Tensor> = batch.iter().map(|s| &s.ys).collect();
                (basis.record_designs(&mut graph, &bt, &ys)?, Some(bt))
            }
            (Trunk::Network { transform: Some(_), .. }, true) => {
                return Err(Error::Config("a recombined trunk cannot be trained jointly".into()));
            }
            (trunk, _) => {
                let mut d = Vec::with_capacity(n);
                for s in &batch {
                    d.push(graph.constant(trunk.design(&s.ys)?));
                }
                (d, None)
            }
        };
        let mean = model.trunk.offset().map(|m| graph.constant(m.clone()));
        let mut total = None;
        for (i, s) in batch.iter().enumerate() {
            let row = graph.slice_rows(branch, i, i + 1)?;
            let col = graph.transpose(row);
            let mut pred = graph.matmul(designs[i], col)?;
            if let Some(mean) = mean {
                pred = graph.add(pred, mean)?;
            }
            let target = graph.constant(value_column(&s.tfs));
            total = Some(accumulate_sq_error(&mut graph, total, pred, target, 1.0 / (n * s.p()) as f64)?);
        }
        let loss = total.expect("non-empty batch");
        let value = graph.value(loss).data()[0];
        check_finite_loss(value, step)?;
        let grads = graph.backward(loss)?;
        opt_branch.step(&mut model.branch.mlp.params, &grads.for_binding(&b_branch))?;
        if let (Some(o), Some(bt), Trunk::Network { basis, .. }) = (opt_trunk.as_mut(), &b_trunk, &mut model.trunk) {
            o.step(&mut basis.mlp.params, &grads.for_binding(bt))?;
        }
        trace.push(value);
        if let Some((every, f)) = monitor.as_mut() {
            if (step + 1) % *every == 0 || step + 1 == cfg.steps {
                f(step + 1, model)?;
            }
        }
    }
    Ok(trace)
}

/// Vanilla unstacked DeepONet: branch and trunk trained jointly with Adam on the output MSE.
///
/// With `check_sensors` off, batches read at other locations are fed to the
/// branch as if they came from the first batch's sensors.
pub fn train_deeponet(
    source: &mut dyn SampleSource,
    output_domain: &Domain,
    cfg: &DeepONetConfig,
    seed: u64,
    monitor: Monitor<'_, DeepONetModel>,
) -> Result<(DeepONetModel, Vec<f64>)> {
    cfg.validate()?;
    let (calibration, layout) = draw_calibration(source, cfg)?;
    let m = layout.sensors.rows();
    let mlp = cfg.branch_mlp(m * layout.input_dim, cfg.latent, seed)?;
    let branch = CoefficientNet::new(
        mlp,
        input_standardizer(&calibration, &layout)?,
        Standardizer::identity(cfg.latent),
    )?;
    let trunk = Trunk::Network {
        basis: cfg.trunk_basis(output_domain, layout.output_dim, seed.wrapping_add(1))?,
        transform: None,
    };
    let mut model = DeepONetModel::new(
        DeepONetVariant::Vanilla,
        branch,
        trunk,
        layout.sensors,
        layout.input_dim,
        layout.output_dim,
    )?;
    let trace = train_output_mse(&mut model, true, source, cfg, monitor)?;
    Ok((model, trace))
}

/// Mean and leading POD modes of output snapshots sharing one grid.
///
/// Returns the mean as `[p·d, 1]` and the modes as `[p·d, n_modes]` with orthonormal columns.
pub fn build_pod_trunk(outputs: &[&Tensor], n_modes: usize) -> Result<(Tensor, Tensor)> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Data("POD needs at least one snapshot".into()))?;
    let width = first.len();
    for o in outputs {
        if o.shape() != first.shape() {
            return Err(Error::Contract("POD snapshots must share one output grid".into()));
        }
    }
    let mut data = Vec::with_capacity(outputs.len() * width);
    for o in outputs {
        data.extend_from_slice(o.data());
    }
    let snapshots = Tensor::from_parts(vec![outputs.len(), width], data);
    let n_modes = n_modes.min(width);
    let p = if outputs.len() >= n_modes {
        pca(&snapshots, n_modes)?
    } else {
        // Fewer snapshots than requested modes: pad the snapshot matrix with
        // copies of the mean so the decomposition has enough rows.
        let mut rows: Vec<Vec<f64>> = (0..outputs.len()).map(|i| snapshots.row(i).to_vec()).collect();
        let mean: Vec<f64> = (0..width)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect();
        rows.resize(n_modes, mean);
        pca(&Tensor::from_rows(&rows)?, n_modes)?
    };
    let mean = Tensor::from_parts(vec![width, 1], p.mean);
    Ok((mean, p.components.transpose()))
}

/// POD-DeepONet: trunk fixed to the POD modes of `snapshots`, branch trained on the output MSE.
pub fn train_pod_deeponet(
    source: &mut dyn SampleSource,
    snapshots: &[SampleSet],
    cfg: &DeepONetConfig,
    seed: u64,
    monitor: Monitor<'_, DeepONetModel>,
) -> Result<(DeepONetModel, Vec<f64>)> {
    cfg.validate()?;
    let first = snapshots
        .first()
        .ok_or_else(|| Error::Data("POD needs at least one snapshot".into()))?;
    for s in snapshots {
        if s.ys != first.ys {
            return Err(Error::Contract(
                "POD-DeepONet needs every output function sampled on the same grid".into(),
            ));
        }
    }
    let outputs: Vec<&Tensor> = snapshots.iter().map(|s| &s.tfs).collect();
    let (mean, modes) = build_pod_trunk(&outputs, cfg.latent)?;
    let (calibration, layout) = draw_calibration(source, cfg)?;
    let latent = modes.cols();
    let mlp = cfg.branch_mlp(layout.sensors.rows() * layout.input_dim, latent, seed)?;
    let branch = CoefficientNet::new(
        mlp,
        input_standardizer(&calibration, &layout)?,
        Standardizer::identity(latent),
    )?;
    let trunk = Trunk::Pod {
        grid: first.ys.clone(),
        mean,
        modes,
    };
    let mut model = DeepONetModel::new(
        DeepONetVariant::Pod,
        branch,
        trunk,
        layout.sensors,
        layout.input_dim,
        layout.output_dim,
    )?;
    let trace = train_output_mse(&mut model, false, source, cfg, monitor)?;
    Ok((model, trace))
}

/// Uniform tensor grid with about `QUADRATURE_POINTS` points over `domain`, and the cell volume.
pub fn quadrature_grid(domain: &Domain) -> (Tensor, f64) {
    let dim = domain.dim();
    let per_axis = ((QUADRATURE_POINTS as f64).powf(1.0 / dim as f64).round() as usize).max(2);
    let total = per_axis.pow(dim as u32);
    let mut data = Vec::with_capacity(total * dim);
    for idx in 0..total {
        let mut rest = idx;
        for c in 0..dim {
            let i = rest % per_axis;
            rest /= per_axis;
            let (lo, hi) = (domain.lower[c], domain.upper[c]);
            data.push(lo + (hi - lo) * (i as f64 + 0.5) / per_axis as f64);
        }
    }
    let volume: f64 = domain.lower.iter().zip(&domain.upper).map(|(l, u)| u - l).product();
    (Tensor::from_parts(vec![total, dim], data), volume / total as f64)
}

/// Modified Gram–Schmidt (two passes) on the columns of `g` under the weighted
/// inner product `w · Σ_q a(q) b(q)`.
///
/// Returns `R` (`[k, r]`) with `g·R` orthonormal; near-dependent columns are dropped.
pub fn gram_schmidt(g: &Tensor, weight: f64) -> Result<Tensor> {
    let (q, k) = (g.rows(), g.cols());
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let dot = |a: &[f64], b: &[f64]| weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for j in 0..k {
        let mut v: Vec<f64> = (0..q).map(|i| g.get2(i, j)).collect();
        let mut r = vec![0.0; k];
        r[j] = 1.0;
        let original = dot(&v, &v).sqrt();
        if !original.is_finite() {
            return Err(Error::Conditioning("trunk output is not finite on the quadrature grid".into()));
        }
        for _ in 0..2 {
            for (u, c) in ortho.iter().zip(&coeffs) {
                let proj = dot(&v, u);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= proj * ci;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if original > 0.0 && norm > GRAM_SCHMIDT_DROP * original {
            ortho.push(v.iter().map(|x| x / norm).collect());
            coeffs.push(r.iter().map(|x| x / norm).collect());
        }
    }
    if coeffs.is_empty() {
        return Err(Error::Conditioning("trunk functions are all zero on the quadrature grid".into()));
    }
    let r = coeffs.len();
    let mut data = vec![0.0; k * r];
    for (c, col) in coeffs.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * r + c] = *v;
        }
    }
    Ok(Tensor::from_parts(vec![k, r], data))
}

/// Loss traces of both two-stage phases.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageTrace {
    pub trunk: Vec<f64>,
    pub branch: Vec<f64>,
}

/// Two-stage DeepONet: the trunk is first trained as an output-space function
/// encoder, then orthonormalized, then the branch regresses each function's
/// trunk coefficients.
pub fn train_two_stage(
    source: &mut dyn SampleSource,
    output_domain: &Domain,
    cfg: &DeepONetConfig,
    seed: u64,
    mut monitor: Monitor<'_, DeepONetModel>,
) -> Result<(DeepONetModel, TwoStageTrace)> {
    cfg.validate()?;
    let (calibration, layout) = draw_calibration(source, cfg)?;
    if layout.output_dim != 1 {
        return Err(Error::Config(format!(
            "two-stage DeepONet orthonormalizes scalar outputs only, got {} components",
            layout.output_dim
        )));
    }
    let mut basis = cfg.trunk_basis(output_domain, 1, seed.wrapping_add(1))?;
    let enc = EncoderTrainConfig {
        steps: cfg.steps,
        batch_size: cfg.batch_size,
        ridge: cfg.ridge,
        optimizer: cfg.optimizer,
        grad_through_solve: false,
    };
    let trunk_trace = train_function_encoder(&mut basis, source, &enc)?;
    let (quad, weight) = quadrature_grid(output_domain);
    let transform = gram_schmidt(&basis.design_matrix(&quad)?, weight)?;
    let trunk = Trunk::Network {
        basis,
        transform: Some(transform),
    };
    let latent = trunk.latent();
    let coefficients = |trunk: &Trunk, batch: &[SampleSet]| -> Result<Tensor> {
        let mut data = Vec::with_capacity(batch.len() * latent);
        for s in batch {
            data.extend(least_squares(&trunk.design(&s.ys)?, &value_column(&s.tfs), cfg.ridge)?.into_data());
        }
        Ok(Tensor::from_parts(vec![batch.len(), latent], data))
    };
    let mlp = cfg.branch_mlp(layout.sensors.rows() * layout.input_dim, latent, seed)?;
    let branch = CoefficientNet::new(
        mlp,
        input_standardizer(&calibration, &layout)?,
        Standardizer::fit(&coefficients(&trunk, &calibration)?),
    )?;
    let mut model = DeepONetModel::new(
        DeepONetVariant::TwoStage,
        branch,
        trunk,
        layout.sensors,
        layout.input_dim,
        layout.output_dim,
    )?;
    let mut opt = OptimizerState::new(cfg.optimizer, &model.branch.mlp.params);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = source.next_batch(cfg.batch_size)?;
        if batch.is_empty() {
            return Err(Error::Config("sample source is exhausted".into()));
        }
        if cfg.check_sensors {
            for s in &batch {
                check_sensors(&model.sensor_locations, &s.xs)?;
            }
        }
        let fs: Vec<&Tensor> = batch.iter().map(|s| &s.fs).collect();
        let rows = branch_rows(&fs, model.sensor_locations.rows(), model.input_dim)?;
        let targets = coefficients(&model.trunk, &batch)?;
        let mut graph = Graph::new();
        let binding = graph.bind(&model.branch.mlp.params);
        let rows = graph.constant(rows);
        let pred = model.branch.record(&mut graph, &binding, rows)?;
        let target = graph.constant(targets);
        let loss = accumulate_sq_error(&mut graph, None, pred, target, 1.0 / batch.len() as f64)?;
        let value = graph.value(loss).data()[0];
        check_finite_loss(value, step)?;
        let grads = graph.backward(loss)?.for_binding(&binding);
        opt.step(&mut model.branch.mlp.params, &grads)?;
        trace.push(value);
        if let Some((every, f)) = monitor.as_mut() {
            if (step + 1) % *every == 0 || step + 1 == cfg.steps {
                f(step + 1, &model)?;
            }
        }
    }
    Ok((
        model,
        TwoStageTrace {
            trunk: trunk_trace,
            branch: trace,
        },
    ))
}

#[derive(Debug, Serialize, Deserialize)]
struct DeepONetHeader {
    variant: DeepONetVariant,
    input_dim: usize,
    output_dim: usize,
    branch: MlpSpec,
    has_transform: bool,
}

impl DeepONetModel {
    /// Writes `deeponet.json` plus the branch, trunk and sensor tensors into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut fixed = ParameterStore::new();
        fixed.insert("sensors", self.sensor_locations.clone())?;
        let has_transform = match &self.trunk {
            Trunk::Network { basis, transform } => {
                basis.save(dir, "trunk")?;
                if let Some(t) = transform {
                    fixed.insert("transform", t.clone())?;
                }
                transform.is_some()
            }
            Trunk::Pod { grid, mean, modes } => {
                fixed.insert("grid", grid.clone())?;
                fixed.insert("mean", mean.clone())?;
                fixed.insert("modes", modes.clone())?;
                false
            }
        };
        fixed.save(dir, "fixed")?;
        self.branch.save(dir, "branch")?;
        write_json(
            &dir.join("deeponet.json"),
            &DeepONetHeader {
                variant: self.variant,
                input_dim: self.input_dim,
                output_dim: self.output_dim,
                branch: self.branch.mlp.spec.clone(),
                has_transform,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: DeepONetHeader = read_json(&dir.join("deeponet.json"))?;
        let fixed = ParameterStore::load(dir, "fixed")?;
        let take = |name: &str| {
            fixed
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Data(format!("DeepONet checkpoint lacks {name}")))
        };
        let trunk = match header.variant {
            DeepONetVariant::Pod => Trunk::Pod {
                grid: take("grid")?,
                mean: take("mean")?,
                modes: take("modes")?,
            },
            _ => Trunk::Network {
                basis: BasisSet::load(dir, "trunk")?,
                transform: if header.has_transform { Some(take("transform")?) } else { None },
            },
        };
        let branch = CoefficientNet::load(dir, "branch", header.branch)?;
        DeepONetModel::new(
            header.variant,
            branch,
            trunk,
            take("sensors")?,
            header.input_dim,
            header.output_dim,
        )
    }
}
