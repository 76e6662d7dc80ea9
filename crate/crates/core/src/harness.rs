//! Config-driven experiment runner: dataset generation, training with periodic
//! held-out evaluation, ablation sweeps and post-hoc analysis.
//!
//! Every artifact is a pure function of the configuration and seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    decay_report, evaluate, model_landscape, robustness_suite, worst_case_csv, DecaySource, Evaluation,
    LandscapeConfig, MetricsRecord, OperatorModel, RobustnessConfig, SensorBypass,
};
use crate::autodiff::{Activation, OptimizerConfig, OptimizerState};
use crate::baselines::{train_deeponet, train_pod_deeponet, train_two_stage, DeepONetConfig, DeepONetModel};
use crate::datasets::{
    generate, poly_config, read_dataset, test_seed, write_dataset, DatasetKind, DatasetOptions, FiniteSource,
    PolyConfig, PolynomialStream, SampleSource,
};
use crate::datasets::polynomial::{gen_polynomial_batch_with, POLY_HALF_WIDTH};
use crate::encoder::{check_finite_loss, encoder_step, BasisConfig, BasisSet, Domain};
use crate::error::{Error, Result};
use crate::linalg::DEFAULT_RIDGE;
use crate::operators::{
    b2b_fit_linear, b2b_train_nonlinear, read_json, train_spectral, write_json, B2BOperator, CoefficientMap,
    InputEncoding, MapLoss, MapTrainConfig, OperatorHeader, SpectralKind, SpectralOperator, SpectralTrainConfig,
};
use crate::sample::{SampleSet, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "b2b-linear")]
    B2bLinear,
    #[serde(rename = "b2b-nonlinear")]
    B2bNonlinear,
    #[serde(rename = "svd")]
    Svd,
    #[serde(rename = "ed")]
    Ed,
    #[serde(rename = "deeponet")]
    DeepONet,
    #[serde(rename = "deeponet-pod")]
    DeepONetPod,
    #[serde(rename = "deeponet-2stage")]
    DeepONetTwoStage,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::B2bLinear,
        ModelKind::B2bNonlinear,
        ModelKind::Svd,
        ModelKind::Ed,
        ModelKind::DeepONet,
        ModelKind::DeepONetPod,
        ModelKind::DeepONetTwoStage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::B2bLinear => "b2b-linear",
            ModelKind::B2bNonlinear => "b2b-nonlinear",
            ModelKind::Svd => "svd",
            ModelKind::Ed => "ed",
            ModelKind::DeepONet => "deeponet",
            ModelKind::DeepONetPod => "deeponet-pod",
            ModelKind::DeepONetTwoStage => "deeponet-2stage",
        }
    }

    fn is_deeponet(self) -> bool {
        matches!(self, ModelKind::DeepONet | ModelKind::DeepONetPod | ModelKind::DeepONetTwoStage)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown model {s:?}; expected one of {}",
                    ModelKind::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Random,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Existing dataset directory; when set, its splits are used instead of generating.
    pub path: Option<PathBuf>,
    pub options: DatasetOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: "derivative".into(),
            path: None,
            options: DatasetOptions::default(),
        }
    }
}

/// One experiment: dataset, model, architecture, budget and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelKind,
    /// Input basis size (DeepONet: latent width).
    pub k: usize,
    /// Output basis size.
    pub ell: usize,
    /// Hidden widths of basis, branch and trunk networks.
    pub hidden: Vec<usize>,
    /// Hidden widths of the nonlinear coefficient map.
    pub map_hidden: Vec<usize>,
    pub activation: Activation,
    pub ridge: f64,
    pub optimizer: OptimizerConfig,
    /// Gradient steps per training stage.
    pub steps: usize,
    pub batch_size: usize,
    pub eval_interval: usize,
    /// Evaluate on the first this-many test functions only.
    pub eval_functions: Option<usize>,
    /// Functions used to fit a linear coefficient map (streamed datasets).
    pub fit_functions: usize,
    pub seeds: Vec<u64>,
    pub sampling: SamplingMode,
    pub map_loss: MapLoss,
    pub grad_through_solve: bool,
    /// DeepONet: reject inputs that are not read at the training sensors.
    pub check_sensors: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            model: ModelKind::B2bLinear,
            k: 100,
            ell: 100,
            hidden: vec![256, 256],
            map_hidden: vec![256, 256],
            activation: Activation::Relu,
            ridge: DEFAULT_RIDGE,
            optimizer: OptimizerConfig::default(),
            steps: 10_000,
            batch_size: 10,
            eval_interval: 1000,
            eval_functions: None,
            fit_functions: 1000,
            seeds: vec![0, 1, 2],
            sampling: SamplingMode::Random,
            map_loss: MapLoss::Coefficient,
            grad_through_solve: false,
            check_sensors: true,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_interval == 0 {
            return Err(Error::Config("steps, batch_size and eval_interval must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.k == 0 || self.ell == 0 || self.fit_functions == 0 {
            return Err(Error::Config("k, ell and fit_functions must be ≥ 1".into()));
        }
        if self.eval_functions == Some(0) {
            return Err(Error::Config("eval_functions must be ≥ 1 when set".into()));
        }
        if !(self.ridge >= 0.0) || !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("ridge must be ≥ 0 and the learning rate > 0".into()));
        }
        if self.dataset.path.is_none() {
            self.dataset_kind()?;
        }
        Ok(())
    }

    fn dataset_kind(&self) -> Result<DatasetKind> {
        self.dataset.name.parse()
    }

    fn resolved_options(&self) -> DatasetOptions {
        let mut o = self.dataset.options.clone();
        o.fixed_grid |= self.sampling == SamplingMode::Fixed;
        o
    }

    fn basis_config(&self, k: usize) -> BasisConfig {
        BasisConfig {
            k,
            hidden: self.hidden.clone(),
            activation: self.activation,
        }
    }

    fn deeponet_config(&self) -> DeepONetConfig {
        DeepONetConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            branch_hidden: self.hidden.clone(),
            trunk_hidden: self.hidden.clone(),
            latent: self.k,
            activation: self.activation,
            optimizer: self.optimizer,
            check_sensors: self.check_sensors,
            ridge: self.ridge,
        }
    }
}

enum TrainData {
    Stream(PolyConfig),
    Pool(Vec<SampleSet>),
}

/// Training source, held-out split and geometry for one seed.
pub struct ExperimentData {
    pub name: String,
    train: TrainData,
    seed: u64,
    pub test: Vec<SampleSet>,
    pub input_domain: Domain,
    pub output_domain: Domain,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Inputs are parameter vectors rather than sampled functions.
    pub raw_input: bool,
}

impl ExperimentData {
    pub fn load(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        if let Some(path) = &cfg.dataset.path {
            let d = read_dataset(path)?;
            return Self::from_pool(d.manifest.name.clone(), d.train, d.test, seed);
        }
        let kind = cfg.dataset_kind()?;
        let opts = cfg.resolved_options();
        match kind.poly_task() {
            Some(task) => {
                let pc = poly_config(task, &opts);
                let n_test = opts.n_test.unwrap_or(crate::datasets::default_sizes(kind).1);
                let test = gen_polynomial_batch_with(&pc, n_test, test_seed(seed))?;
                let domain = Domain::interval(-POLY_HALF_WIDTH, POLY_HALF_WIDTH)?;
                Ok(ExperimentData {
                    name: kind.name().into(),
                    train: TrainData::Stream(pc),
                    seed,
                    test,
                    input_domain: domain.clone(),
                    output_domain: domain,
                    input_dim: 1,
                    output_dim: 1,
                    raw_input: false,
                })
            }
            None => {
                let d = generate(kind, &opts, seed)?;
                Self::from_pool(kind.name().into(), d.train, d.test, seed)
            }
        }
    }

    fn from_pool(name: String, train: Vec<SampleSet>, test: Vec<SampleSet>, seed: u64) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::Data("training split is empty".into()))?;
        if test.is_empty() {
            return Err(Error::Data("test split is empty".into()));
        }
        let all = || train.iter().chain(&test);
        let input_domain = Domain::bounding(all().map(|s| &s.xs))?;
        let output_domain = Domain::bounding(all().map(|s| &s.ys))?;
        Ok(ExperimentData {
            name,
            raw_input: first.m() == 1,
            input_dim: first.fs.cols(),
            output_dim: first.tfs.cols(),
            train: TrainData::Pool(train),
            seed,
            test,
            input_domain,
            output_domain,
        })
    }

    /// A fresh, deterministic training source.
    pub fn source(&self) -> Result<Box<dyn SampleSource>> {
        Ok(match &self.train {
            TrainData::Stream(pc) => Box::new(PolynomialStream::new(pc.clone(), self.seed)),
            TrainData::Pool(p) => Box::new(FiniteSource::new(p.clone(), self.seed)?),
        })
    }

    /// Functions for one-shot fits (linear maps, POD snapshots).
    fn fit_set(&self, n: usize) -> Result<Vec<SampleSet>> {
        match &self.train {
            TrainData::Stream(pc) => gen_polynomial_batch_with(pc, n, self.seed),
            TrainData::Pool(p) => Ok(p.clone()),
        }
    }

    fn eval_set(&self, cfg: &ExperimentConfig) -> &[SampleSet] {
        let n = cfg.eval_functions.unwrap_or(self.test.len()).min(self.test.len());
        &self.test[..n]
    }
}

/// Any trained model the harness can produce.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    B2B(B2BOperator),
    Spectral(SpectralOperator),
    DeepONet(DeepONetModel),
}

impl TrainedModel {
    /// The model as an evaluator; with `bypass`, a DeepONet reads any input locations as its sensors.
    pub fn view(&self, bypass: bool) -> Box<dyn OperatorModel + '_> {
        match self {
            TrainedModel::B2B(m) => Box::new(m),
            TrainedModel::Spectral(m) => Box::new(m),
            TrainedModel::DeepONet(m) if bypass => Box::new(SensorBypass(m)),
            TrainedModel::DeepONet(m) => Box::new(m),
        }
    }

    pub fn name(&self) -> String {
        self.view(false).name()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        match self {
            TrainedModel::B2B(m) => m.save(dir),
            TrainedModel::Spectral(m) => m.save(dir),
            TrainedModel::DeepONet(m) => m.save(dir),
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if dir.join("deeponet.json").exists() {
            return Ok(TrainedModel::DeepONet(DeepONetModel::load(dir)?));
        }
        let header: OperatorHeader = read_json(&dir.join("operator.json"))?;
        match header.kind.as_str() {
            "svd" | "ed" => Ok(TrainedModel::Spectral(SpectralOperator::load(dir)?)),
            _ => Ok(TrainedModel::B2B(B2BOperator::load(dir)?)),
        }
    }
}

/// One row of a loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub stage: &'static str,
    pub step: usize,
    pub loss: f64,
}

/// Outcome of training one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub trace: Vec<TraceRow>,
    pub model: TrainedModel,
    pub best: TrainedModel,
    pub final_eval: Evaluation,
}

impl RunResult {
    pub fn final_mse(&self) -> f64 {
        self.final_eval.mean
    }
}

/// Periodic held-out evaluation with best-model tracking.
struct Tracker<'a> {
    test: &'a [SampleSet],
    model_name: &'static str,
    dataset: &'a str,
    seed: u64,
    bypass: bool,
    offset: usize,
    records: Vec<MetricsRecord>,
    best: Option<(f64, TrainedModel)>,
    last: Option<Evaluation>,
}

impl Tracker<'_> {
    fn observe(&mut self, step: usize, model: TrainedModel) -> Result<()> {
        let eval = evaluate(model.view(self.bypass).as_ref(), self.test)?;
        if !eval.mean.is_finite() {
            return Err(Error::Solver(format!("held-out error became non-finite at step {step}")));
        }
        self.records.push(MetricsRecord::new(
            self.model_name,
            self.dataset,
            self.seed,
            self.offset + step,
            &eval,
        ));
        if self.best.as_ref().is_none_or(|(b, _)| eval.mean < *b) {
            self.best = Some((eval.mean, model));
        }
        self.last = Some(eval);
        Ok(())
    }
}

fn due(step: usize, every: usize, total: usize) -> bool {
    step % every == 0 || step == total
}

/// Trains a basis on its side of the data, calling `on_step(step, basis)` when due.
fn train_basis_stage(
    basis: &mut BasisSet,
    source: &mut dyn SampleSource,
    cfg: &ExperimentConfig,
    stage: &'static str,
    trace: &mut Vec<TraceRow>,
    mut on_step: Option<&mut dyn FnMut(usize, &BasisSet) -> Result<()>>,
) -> Result<()> {
    let mut opt = OptimizerState::new(cfg.optimizer, &basis.mlp.params);
    for step in 1..=cfg.steps {
        let batch = source.next_batch(cfg.batch_size)?;
        let loss = encoder_step(basis, &mut opt, &batch, cfg.ridge, cfg.grad_through_solve)?;
        check_finite_loss(loss, step)?;
        trace.push(TraceRow { stage, step, loss });
        if let Some(f) = on_step.as_mut() {
            if due(step, cfg.eval_interval, cfg.steps) {
                f(step, basis)?;
            }
        }
    }
    Ok(())
}

fn push_trace(trace: &mut Vec<TraceRow>, stage: &'static str, losses: &[f64]) {
    trace.extend(losses.iter().enumerate().map(|(i, &loss)| TraceRow {
        stage,
        step: i + 1,
        loss,
    }));
}

fn input_encoding(cfg: &ExperimentConfig, data: &ExperimentData, basis: Option<BasisSet>) -> InputEncoding {
    match basis {
        Some(b) => InputEncoding::Basis(b),
        None => InputEncoding::Raw {
            dim: data.input_dim * if data.raw_input { 1 } else { cfg.k },
        },
    }
}

/// Checks that need no training: configuration and model/dataset compatibility.
fn preflight(cfg: &ExperimentConfig, data: &ExperimentData) -> Result<()> {
    if data.raw_input && matches!(cfg.model, ModelKind::Svd | ModelKind::Ed) {
        return Err(Error::Config(format!(
            "{} needs sampled input functions, but {} inputs are parameter vectors",
            cfg.model.name(),
            data.name
        )));
    }
    if cfg.model == ModelKind::Ed
        && (data.input_domain != data.output_domain || data.input_dim != data.output_dim)
    {
        return Err(Error::Config(format!(
            "ed needs identical input and output domains, got {:?} and {:?}",
            data.input_domain, data.output_domain
        )));
    }
    if cfg.model == ModelKind::DeepONetTwoStage && data.output_dim != 1 {
        return Err(Error::Config("deeponet-2stage supports scalar outputs only".into()));
    }
    Ok(())
}

/// Trains one model for one seed, evaluating on the held-out split every `eval_interval` steps.
pub fn train_one(cfg: &ExperimentConfig, data: &ExperimentData, seed: u64) -> Result<RunResult> {
    cfg.validate()?;
    preflight(cfg, data)?;
    let mut trace = Vec::new();
    let mut tracker = Tracker {
        test: data.eval_set(cfg),
        model_name: cfg.model.name(),
        dataset: &data.name,
        seed,
        bypass: cfg.model.is_deeponet() && !cfg.check_sensors,
        offset: 0,
        records: Vec::new(),
        best: None,
        last: None,
    };
    let model = match cfg.model {
        ModelKind::B2bLinear | ModelKind::B2bNonlinear => {
            let input = if data.raw_input {
                None
            } else {
                let mut b = BasisSet::new(
                    &cfg.basis_config(cfg.k),
                    data.input_dim,
                    Side::Input,
                    data.input_domain.clone(),
                    seed,
                )?;
                train_basis_stage(&mut b, data.source()?.as_mut(), cfg, "input_basis", &mut trace, None)?;
                tracker.offset += cfg.steps;
                Some(b)
            };
            let mut output = BasisSet::new(
                &cfg.basis_config(cfg.ell),
                data.output_dim,
                Side::Output,
                data.output_domain.clone(),
                seed.wrapping_add(1),
            )?;
            if cfg.model == ModelKind::B2bLinear {
                let fit = data.fit_set(cfg.fit_functions)?;
                let input = input_encoding(cfg, data, input);
                let mut observe = |step: usize, basis: &BasisSet| -> Result<()> {
                    let op = b2b_fit_linear(input.clone(), basis.clone(), &fit, cfg.ridge)?;
                    tracker.observe(step, TrainedModel::B2B(op))
                };
                train_basis_stage(
                    &mut output,
                    data.source()?.as_mut(),
                    cfg,
                    "output_basis",
                    &mut trace,
                    Some(&mut observe),
                )?;
                TrainedModel::B2B(b2b_fit_linear(input, output, &fit, cfg.ridge)?)
            } else {
                train_basis_stage(&mut output, data.source()?.as_mut(), cfg, "output_basis", &mut trace, None)?;
                tracker.offset += cfg.steps;
                let map_cfg = MapTrainConfig {
                    steps: cfg.steps,
                    batch_size: cfg.batch_size,
                    hidden: cfg.map_hidden.clone(),
                    activation: cfg.activation,
                    optimizer: cfg.optimizer,
                    loss: cfg.map_loss,
                    ridge: cfg.ridge,
                };
                let mut observe =
                    |step: usize, op: &B2BOperator| tracker.observe(step, TrainedModel::B2B(op.clone()));
                let (op, losses) = b2b_train_nonlinear(
                    input_encoding(cfg, data, input),
                    output,
                    data.source()?.as_mut(),
                    &map_cfg,
                    seed.wrapping_add(2),
                    Some((cfg.eval_interval, &mut observe)),
                )?;
                push_trace(&mut trace, "map", &losses);
                TrainedModel::B2B(op)
            }
        }
        ModelKind::Svd | ModelKind::Ed => {
            let kind = if cfg.model == ModelKind::Svd { SpectralKind::Svd } else { SpectralKind::Ed };
            let mut op = SpectralOperator::new(
                kind,
                &cfg.basis_config(cfg.k),
                (&data.input_domain, data.input_dim),
                (&data.output_domain, data.output_dim),
                cfg.ridge,
                seed,
            )?;
            let sc = SpectralTrainConfig {
                steps: cfg.steps,
                batch_size: cfg.batch_size,
                optimizer: cfg.optimizer,
                grad_through_solve: cfg.grad_through_solve,
            };
            let mut observe =
                |step: usize, op: &SpectralOperator| tracker.observe(step, TrainedModel::Spectral(op.clone()));
            let losses = train_spectral(&mut op, data.source()?.as_mut(), &sc, Some((cfg.eval_interval, &mut observe)))?;
            push_trace(&mut trace, "spectral", &losses);
            TrainedModel::Spectral(op)
        }
        ModelKind::DeepONet | ModelKind::DeepONetPod | ModelKind::DeepONetTwoStage => {
            let dc = cfg.deeponet_config();
            let mut observe =
                |step: usize, m: &DeepONetModel| tracker.observe(step, TrainedModel::DeepONet(m.clone()));
            let monitor = Some((cfg.eval_interval, &mut observe as &mut dyn FnMut(usize, &DeepONetModel) -> Result<()>));
            let mut source = data.source()?;
            let model = match cfg.model {
                ModelKind::DeepONet => {
                    let (m, losses) = train_deeponet(source.as_mut(), &data.output_domain, &dc, seed, monitor)?;
                    push_trace(&mut trace, "deeponet", &losses);
                    m
                }
                ModelKind::DeepONetPod => {
                    let snapshots = data.fit_set(cfg.fit_functions)?;
                    let (m, losses) = train_pod_deeponet(source.as_mut(), &snapshots, &dc, seed, monitor)?;
                    push_trace(&mut trace, "deeponet", &losses);
                    m
                }
                _ => {
                    let (m, t) = train_two_stage(source.as_mut(), &data.output_domain, &dc, seed, monitor)?;
                    push_trace(&mut trace, "trunk", &t.trunk);
                    push_trace(&mut trace, "branch", &t.branch);
                    m
                }
            };
            TrainedModel::DeepONet(model)
        }
    };
    if cfg.model == ModelKind::DeepONetTwoStage {
        for r in &mut tracker.records {
            r.step += cfg.steps;
        }
    }
    let final_eval = tracker
        .last
        .clone()
        .ok_or_else(|| Error::Config("training finished without an evaluation".into()))?;
    let best = tracker.best.take().map(|(_, m)| m).expect("an evaluation happened");
    Ok(RunResult {
        seed,
        records: tracker.records,
        trace,
        model,
        best,
        final_eval,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("stage,step,loss\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{:e}", r.stage, r.step, r.loss);
    }
    out
}

fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = format!("{}\n", MetricsRecord::HEADER);
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Summary of a `train` invocation.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub runs: Vec<RunResult>,
    pub metrics_path: PathBuf,
}

impl TrainSummary {
    pub fn final_mses(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_mse()).collect()
    }
}

/// Writes a dataset for the configured name and first seed into `cfg.out`.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let kind = cfg.dataset_kind()?;
    let seed = *cfg
        .seeds
        .first()
        .ok_or_else(|| Error::Config("at least one seed is required".into()))?;
    let dataset = generate(kind, &cfg.resolved_options(), seed)?;
    write_dataset(&dataset, &cfg.out)?;
    Ok(cfg.out.clone())
}

/// Trains every seed; writes `metrics.csv`, `config.json` and per-seed traces and checkpoints under `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let data: Vec<ExperimentData> = cfg
        .seeds
        .iter()
        .map(|&s| ExperimentData::load(cfg, s))
        .collect::<Result<_>>()?;
    for d in &data {
        preflight(cfg, d)?;
    }
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    let mut records = Vec::new();
    for (d, &seed) in data.iter().zip(&cfg.seeds) {
        let run = train_one(cfg, d, seed)?;
        let dir = cfg.out.join(format!("seed{seed}"));
        write_text(&dir.join("loss.csv"), &trace_csv(&run.trace))?;
        run.model.save(&dir.join("checkpoint_end"))?;
        run.best.save(&dir.join("checkpoint_best"))?;
        records.extend(run.records.iter().cloned());
        runs.push(run);
    }
    let metrics_path = cfg.out.join("metrics.csv");
    write_text(&metrics_path, &metrics_csv(&records))?;
    Ok(TrainSummary { runs, metrics_path })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    BasisCount,
    SensorCount,
    VariableLocations,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basis-count" => Ok(AblationAxis::BasisCount),
            "sensor-count" => Ok(AblationAxis::SensorCount),
            "variable-locations" => Ok(AblationAxis::VariableLocations),
            _ => Err(Error::Config(format!(
                "unknown ablation axis {s:?}; expected basis-count, sensor-count or variable-locations"
            ))),
        }
    }
}

/// One ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub axis_value: String,
    pub seed: u64,
    pub final_mse: f64,
}

/// The configuration for one ablation value.
pub fn ablation_config(base: &ExperimentConfig, axis: AblationAxis, value: &str) -> Result<ExperimentConfig> {
    let mut cfg = base.clone();
    let count = || {
        value
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::Config(format!("ablation value {value:?} must be a positive integer")))
    };
    match axis {
        AblationAxis::BasisCount => {
            cfg.k = count()?;
            cfg.ell = cfg.k;
        }
        AblationAxis::SensorCount => cfg.dataset.options.m = Some(count()?),
        AblationAxis::VariableLocations => {
            cfg.sampling = match value {
                "fixed" => SamplingMode::Fixed,
                "random" => SamplingMode::Random,
                _ => {
                    return Err(Error::Config(format!(
                        "variable-locations values are fixed or random, got {value:?}"
                    )))
                }
            };
            cfg.dataset.options.fixed_grid = cfg.sampling == SamplingMode::Fixed;
            // Reproduces the sensor-mismatch failure instead of refusing to train.
            if cfg.sampling == SamplingMode::Random && cfg.model.is_deeponet() {
                cfg.check_sensors = false;
            }
        }
    }
    cfg.out = base.out.join(format!("{}", value));
    Ok(cfg)
}

/// One training run per (value, seed); writes `ablation.csv` under `base.out`.
pub fn cmd_ablate(base: &ExperimentConfig, axis: AblationAxis, values: &[String]) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let cfgs: Vec<ExperimentConfig> = values
        .iter()
        .map(|v| ablation_config(base, axis, v))
        .collect::<Result<_>>()?;
    for c in &cfgs {
        c.validate()?;
    }
    let mut rows = Vec::new();
    for (value, cfg) in values.iter().zip(&cfgs) {
        let summary = cmd_train(cfg)?;
        rows.extend(summary.runs.iter().map(|r| AblationRow {
            axis_value: value.clone(),
            seed: r.seed,
            final_mse: r.final_mse(),
        }));
    }
    let mut csv = String::from("axis_value,seed,final_mse\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{:e}", r.axis_value, r.seed, r.final_mse);
    }
    write_text(&base.out.join("ablation.csv"), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalysisKind {
    Decay,
    Landscape,
    Robustness,
    WorstCase,
}

impl FromStr for AnalysisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decay" => Ok(AnalysisKind::Decay),
            "landscape" => Ok(AnalysisKind::Landscape),
            "robustness" => Ok(AnalysisKind::Robustness),
            "worst-case" => Ok(AnalysisKind::WorstCase),
            _ => Err(Error::Config(format!(
                "unknown analysis {s:?}; expected decay, landscape, robustness or worst-case"
            ))),
        }
    }
}

/// Runs one analysis on a checkpoint and writes its CSV under `cfg.out`; returns the file path.
pub fn cmd_analyze(cfg: &ExperimentConfig, checkpoint: &Path, what: AnalysisKind) -> Result<PathBuf> {
    let model = TrainedModel::load(checkpoint)?;
    let seed = *cfg
        .seeds
        .first()
        .ok_or_else(|| Error::Config("at least one seed is required".into()))?;
    let bypass = matches!(model, TrainedModel::DeepONet(_)) && !cfg.check_sensors;
    let (file, text) = match what {
        AnalysisKind::Decay => {
            let report = match &model {
                TrainedModel::B2B(B2BOperator {
                    map: CoefficientMap::Linear(a),
                    ..
                }) => decay_report(DecaySource::Matrix(a))?,
                TrainedModel::Spectral(op) => decay_report(DecaySource::from_spectral(op))?,
                _ => {
                    return Err(Error::Config(
                        "decay analysis needs a linear B2B or a spectral checkpoint".into(),
                    ))
                }
            };
            ("decay.csv", report.to_csv())
        }
        AnalysisKind::Landscape => {
            let data = ExperimentData::load(cfg, seed)?;
            let lc = LandscapeConfig {
                n_probe: LandscapeConfig::default().n_probe.min(data.test.len()),
                ..LandscapeConfig::default()
            };
            let l = match &model {
                TrainedModel::B2B(op) => model_landscape(op, &data.test, &lc)?,
                TrainedModel::DeepONet(op) => model_landscape(op, &data.test, &lc)?,
                TrainedModel::Spectral(_) => {
                    return Err(Error::Config("landscape analysis supports B2B and DeepONet checkpoints".into()))
                }
            };
            ("landscape.csv", l.to_csv())
        }
        AnalysisKind::Robustness => {
            let task = cfg
                .dataset_kind()?
                .poly_task()
                .ok_or_else(|| Error::Config("robustness probes need the derivative or antiderivative dataset".into()))?;
            let r = robustness_suite(model.view(bypass).as_ref(), task, test_seed(seed), &RobustnessConfig::default())?;
            (
                "robustness.csv",
                format!(
                    "ood_mse,linearity_mse,homogeneity_mse,linearity_rel,homogeneity_rel\n{:e},{:e},{:e},{:e},{:e}\n",
                    r.ood_mse, r.linearity_mse, r.homogeneity_mse, r.linearity_rel, r.homogeneity_rel
                ),
            )
        }
        AnalysisKind::WorstCase => {
            let data = ExperimentData::load(cfg, seed)?;
            let view = model.view(bypass);
            let eval = evaluate(view.as_ref(), &data.test)?;
            ("worst_case.csv", worst_case_csv(view.as_ref(), &data.test[eval.worst_index])?)
        }
    };
    let path = cfg.out.join(file);
    write_text(&path, &text)?;
    Ok(path)
}
