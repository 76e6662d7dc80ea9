use std::path::PathBuf;
use std::process::ExitCode;

use b2b::harness::{cmd_ablate, cmd_analyze, cmd_gen, cmd_train, AblationAxis, AnalysisKind, ExperimentConfig};
use b2b::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Train and analyze neural operators built from function encoders.
#[derive(Parser, Debug)]
#[command(name = "b2b", version)]
struct Cli {
    /// Experiment configuration (JSON). Defaults apply to absent fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the number of gradient steps per stage.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Dataset overrides shared by the data-consuming subcommands.
#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset name (derivative, antiderivative, darcy1d, heat, burgers).
    #[arg(long)]
    dataset: Option<String>,
    /// Read this dataset directory instead of generating.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training functions.
    #[arg(long)]
    n: Option<usize>,
    /// Test functions.
    #[arg(long)]
    n_test: Option<usize>,
    /// Input samples per function.
    #[arg(long)]
    m: Option<usize>,
    /// Output samples per function.
    #[arg(long)]
    p: Option<usize>,
    /// Output grid, `NXxNYxNT` for heat or `NXxNT` for Burgers.
    #[arg(long)]
    grid: Option<String>,
}

impl DataArgs {
    fn apply(self, cfg: &mut ExperimentConfig) {
        let o = &mut cfg.dataset.options;
        if let Some(d) = self.dataset {
            cfg.dataset.name = d;
        }
        if self.data.is_some() {
            cfg.dataset.path = self.data;
        }
        o.n_train = self.n.or(o.n_train);
        o.n_test = self.n_test.or(o.n_test);
        o.m = self.m.or(o.m);
        o.p = self.p.or(o.p);
        o.grid = self.grid.or(o.grid.take());
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset and write it to the output directory.
    Gen {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the configured model for each seed.
    Train {
        /// Model name, overriding the configuration.
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Sweep one axis and record the final test error of every run.
    Ablate {
        /// Model name, overriding the configuration.
        #[arg(long)]
        model: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        /// basis-count, sensor-count or variable-locations.
        #[arg(long)]
        axis: AblationAxis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Analyze a saved checkpoint.
    Analyze {
        /// decay, landscape, robustness or worst-case.
        #[arg(long)]
        what: AnalysisKind,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(n) = cli.steps {
        cfg.steps = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { data } => {
            data.apply(&mut cfg);
            let dir = cmd_gen(&cfg)?;
            println!("wrote dataset to {}", dir.display());
        }
        Command::Train { model, data } => {
            data.apply(&mut cfg);
            if let Some(m) = model {
                cfg.model = m.parse()?;
            }
            let summary = cmd_train(&cfg)?;
            for r in &summary.runs {
                println!("seed {}: test mse {:e}", r.seed, r.final_mse());
            }
            println!("metrics: {}", summary.metrics_path.display());
        }
        Command::Ablate { model, data, axis, values } => {
            data.apply(&mut cfg);
            if let Some(m) = model {
                cfg.model = m.parse()?;
            }
            for r in cmd_ablate(&cfg, axis, &values)? {
                println!("{} seed {}: {:e}", r.axis_value, r.seed, r.final_mse);
            }
        }
        Command::Analyze { what, checkpoint } => {
            let path = cmd_analyze(&cfg, &checkpoint, what)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
