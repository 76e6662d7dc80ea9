use std::fs;
use std::path::Path;

use b2b::analysis::{evaluate, MetricsRecord};
use b2b::datasets::DatasetOptions;
use b2b::harness::{
    cmd_ablate, cmd_analyze, cmd_gen, cmd_train, AblationAxis, AnalysisKind, DatasetConfig, ExperimentConfig,
    ExperimentData, ModelKind, SamplingMode, TrainedModel,
};
use b2b::Error;

fn tiny(model: ModelKind, dataset: &str, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetConfig {
            name: dataset.into(),
            path: None,
            options: DatasetOptions {
                n_train: Some(30),
                n_test: Some(12),
                ..DatasetOptions::default()
            },
        },
        model,
        k: 6,
        ell: 6,
        hidden: vec![16, 16],
        map_hidden: vec![16],
        steps: 40,
        eval_interval: 20,
        seeds: vec![0],
        fit_functions: 50,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn config_json_round_trip_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::Svd, "antiderivative", dir.path());
    let path = dir.path().join("c.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::from_file(&path).unwrap(), cfg);

    fs::write(&path, r#"{"model": "svd", "stpes": 3}"#).unwrap();
    assert!(ExperimentConfig::from_file(&path).is_err());

    fs::write(&path, r#"{"model": "ed", "steps": 7}"#).unwrap();
    let partial = ExperimentConfig::from_file(&path).unwrap();
    assert_eq!(partial.model, ModelKind::Ed);
    assert_eq!(partial.steps, 7);
    assert_eq!(partial.seeds, vec![0, 1, 2]);
}

#[test]
fn validation_rejects_degenerate_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny(ModelKind::B2bLinear, "derivative", dir.path());
    for bad in [
        ExperimentConfig { steps: 0, ..base.clone() },
        ExperimentConfig { seeds: vec![], ..base.clone() },
        ExperimentConfig { batch_size: 0, ..base.clone() },
        ExperimentConfig {
            dataset: DatasetConfig { name: "navier-stokes".into(), ..base.dataset.clone() },
            ..base.clone()
        },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    assert!(base.validate().is_ok());
}

#[test]
fn ed_on_mismatched_domains_fails_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::Ed, "darcy1d", dir.path());
    // Darcy shares one grid, so ED is allowed there.
    assert!(cmd_train(&cfg).is_ok());

    let mut cfg = tiny(ModelKind::Ed, "burgers", &dir.path().join("burgers"));
    cfg.dataset.options = DatasetOptions {
        n_train: Some(1),
        n_test: Some(1),
        grid: Some("8x4".into()),
        ..DatasetOptions::default()
    };
    assert!(matches!(cmd_train(&cfg), Err(Error::Config(_))));
    assert!(!cfg.out.join("metrics.csv").exists());
}

#[test]
fn spectral_needs_sampled_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::Svd, "heat", dir.path());
    cfg.dataset.options.grid = Some("4x4x2".into());
    assert!(matches!(cmd_train(&cfg), Err(Error::Config(_))));
}

#[test]
fn train_writes_artifacts_and_checkpoints_reload() {
    let dir = tempfile::tempdir().unwrap();
    for model in ModelKind::ALL {
        let mut cfg = tiny(model, "derivative", &dir.path().join(model.name()));
        if matches!(model, ModelKind::DeepONet | ModelKind::DeepONetPod | ModelKind::DeepONetTwoStage) {
            cfg.sampling = SamplingMode::Fixed;
        }
        let summary = cmd_train(&cfg).unwrap_or_else(|e| panic!("{}: {e}", model.name()));
        let metrics = read(&summary.metrics_path);
        let mut lines = metrics.lines();
        assert_eq!(lines.next(), Some(MetricsRecord::HEADER));
        assert!(lines.count() >= 2, "{}: {metrics}", model.name());
        assert!(read(&cfg.out.join("seed0/loss.csv")).starts_with("stage,step,loss\n"));
        let saved: ExperimentConfig = serde_json::from_str(&read(&cfg.out.join("config.json"))).unwrap();
        assert_eq!(saved, cfg);

        let run = &summary.runs[0];
        let data = ExperimentData::load(&cfg, 0).unwrap();
        let reloaded = TrainedModel::load(&cfg.out.join("seed0/checkpoint_end")).unwrap();
        assert_eq!(reloaded, run.model, "{}", model.name());
        let eval = evaluate(reloaded.view(false).as_ref(), &data.test).unwrap();
        assert_eq!(eval.mean, run.final_mse(), "{}", model.name());

        let best = TrainedModel::load(&cfg.out.join("seed0/checkpoint_best")).unwrap();
        let best_mse = evaluate(best.view(false).as_ref(), &data.test).unwrap().mean;
        let logged_min = run.records.iter().map(|r| r.mse).fold(f64::INFINITY, f64::min);
        assert_eq!(best_mse, logged_min, "{}", model.name());
    }
}

#[test]
fn deeponet_refuses_random_sensors_unless_bypassed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::DeepONet, "derivative", dir.path());
    assert!(matches!(cmd_train(&cfg), Err(Error::Contract(_))));
    cfg.check_sensors = false;
    let s = cmd_train(&cfg).unwrap();
    assert!(s.runs[0].final_mse().is_finite());
}

#[test]
fn nonlinear_b2b_trains_on_darcy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::B2bNonlinear, "darcy1d", dir.path());
    let s = cmd_train(&cfg).unwrap();
    let steps: Vec<usize> = s.runs[0].records.iter().map(|r| r.step).collect();
    // Two basis stages precede the map stage.
    assert_eq!(steps, vec![100, 120]);
}

#[test]
fn heat_uses_parameter_vectors_as_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::B2bLinear, "heat", dir.path());
    cfg.dataset.options.grid = Some("4x4x3".into());
    let data = ExperimentData::load(&cfg, 0).unwrap();
    assert!(data.raw_input);
    assert_eq!((data.input_dim, data.output_dim), (2, 1));
    let s = cmd_train(&cfg).unwrap();
    assert!(s.runs[0].final_mse().is_finite());
}

#[test]
fn metrics_are_byte_identical_across_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(ModelKind::B2bNonlinear, "antiderivative", &dir.path().join("a"));
    let b = ExperimentConfig { out: dir.path().join("b"), ..a.clone() };
    cmd_train(&a).unwrap();
    cmd_train(&b).unwrap();
    assert_eq!(read(&a.out.join("metrics.csv")), read(&b.out.join("metrics.csv")));
    assert_eq!(read(&a.out.join("seed0/loss.csv")), read(&b.out.join("seed0/loss.csv")));
}

#[test]
fn seeds_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::B2bLinear, "derivative", dir.path());
    cfg.seeds = vec![0, 1];
    let s = cmd_train(&cfg).unwrap();
    let m = s.final_mses();
    assert_ne!(m[0], m[1]);
    assert!(dir.path().join("seed1/checkpoint_end/operator.json").exists());
}

#[test]
fn ablation_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::B2bLinear, "derivative", dir.path());
    cfg.seeds = vec![0, 1];
    let rows = cmd_ablate(&cfg, AblationAxis::BasisCount, &["3".into(), "5".into()]).unwrap();
    assert_eq!(rows.len(), 4);
    let csv = read(&dir.path().join("ablation.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,seed,final_mse");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("3,0,") && lines[4].starts_with("5,1,"));

    assert!(cmd_ablate(&cfg, AblationAxis::SensorCount, &["0".into()]).is_err());
    assert!(cmd_ablate(&cfg, AblationAxis::VariableLocations, &["sometimes".into()]).is_err());
}

#[test]
fn variable_location_ablation_runs_deeponet_through_the_bypass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::DeepONet, "derivative", dir.path());
    let rows = cmd_ablate(&cfg, AblationAxis::VariableLocations, &["fixed".into(), "random".into()]).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.final_mse.is_finite()));
}

#[test]
fn analyses_emit_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(ModelKind::B2bLinear, "antiderivative", dir.path());
    cfg.dataset.options.n_test = Some(30);
    cmd_train(&cfg).unwrap();
    let ckpt = dir.path().join("seed0/checkpoint_end");
    let expect = [
        (AnalysisKind::Decay, "index,magnitude,source"),
        (AnalysisKind::Landscape, "alpha,beta,loss"),
        (
            AnalysisKind::Robustness,
            "ood_mse,linearity_mse,homogeneity_mse,linearity_rel,homogeneity_rel",
        ),
        (AnalysisKind::WorstCase, "point,y0,component,target,prediction,error"),
    ];
    for (what, header) in expect {
        let path = cmd_analyze(&cfg, &ckpt, what).unwrap();
        let text = read(&path);
        assert_eq!(text.lines().next(), Some(header), "{what:?}");
        assert!(text.lines().count() > 1);
    }
    let rob = read(&dir.path().join("robustness.csv"));
    let vals: Vec<f64> = rob.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!(vals[3] < 1e-8 && vals[4] < 1e-8, "{rob}");
}

#[test]
fn decay_rejects_nonlinear_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ModelKind::B2bNonlinear, "derivative", dir.path());
    cmd_train(&cfg).unwrap();
    let r = cmd_analyze(&cfg, &dir.path().join("seed0/checkpoint_end"), AnalysisKind::Decay);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn generated_dataset_feeds_training_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let gen_cfg = tiny(ModelKind::B2bLinear, "darcy1d", &data_dir);
    cmd_gen(&gen_cfg).unwrap();
    let mut cfg = tiny(ModelKind::B2bLinear, "ignored", &dir.path().join("run"));
    cfg.dataset.path = Some(data_dir);
    let from_file = cmd_train(&cfg).unwrap();
    let generated = cmd_train(&ExperimentConfig { out: dir.path().join("run2"), ..gen_cfg }).unwrap();
    assert_eq!(from_file.final_mses(), generated.final_mses());
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 5);
}
