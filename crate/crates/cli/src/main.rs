mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dhnn_core::models::ModelKind;
use dhnn_core::systems::Task;
use dhnn_core::ErrorKind;

use commands::{DecomposeArgs, RolloutArgs};
use config::{FileConfig, FlagValues, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] dhnn_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }
}

#[derive(Parser)]
#[command(name = "dhnn", version, about = "Train and analyse dissipative Hamiltonian neural networks")]
struct Cli {
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// spring, pendulum, ocean or custom.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    seed: Option<u64>,
    /// Friction coefficient for generated or reference systems.
    #[arg(long)]
    rho: Option<f64>,
    /// Solver tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// baseline, hnn or dhnn.
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Learning rate used for the hnn model on the spring task.
    #[arg(long)]
    hnn_spring_lr: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Number of spring samples.
        #[arg(long)]
        samples: Option<usize>,
        /// Ocean grid size.
        #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
        grid: Option<Vec<usize>>,
    },
    /// Train one model and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Loss log path; defaults to `<out>.log`.
        #[arg(long)]
        log: Option<String>,
    },
    /// Report test, trajectory and energy errors of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Integrate a checkpoint's vector field from one initial state.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: String,
        #[arg(long, allow_hyphen_values = true)]
        q0: f64,
        #[arg(long, allow_hyphen_values = true)]
        p0: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
        t1: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        /// Multiplier on the dissipative part of the field.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Split a field into irrotational and rotational parts on a grid.
    Decompose {
        #[command(flatten)]
        common: Common,
        /// Evaluate a trained model on the grid.
        #[arg(long)]
        checkpoint: Option<String>,
        /// Gridded frames in the ocean format.
        #[arg(long)]
        input: Option<String>,
        /// Scattered samples, rasterized onto the grid.
        #[arg(long)]
        samples: Option<String>,
        #[arg(long, num_args = 2, value_names = ["NX", "NY"])]
        grid: Option<Vec<usize>>,
        #[arg(long, num_args = 4, value_names = ["XMIN", "XMAX", "YMIN", "YMAX"], allow_hyphen_values = true)]
        region: Option<Vec<f64>>,
        /// Time fed to time-dependent models.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        time: f64,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, default_value_t = dhnn_core::helmgrid::DEFAULT_ITERATIONS)]
        iterations: usize,
    },
    /// Train baseline, hnn and dhnn on the same data and compare them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        /// Directory for the three checkpoints and logs.
        #[arg(long)]
        out_dir: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

fn flags(common: &Common, train: &TrainFlags, scale: Option<f64>) -> FlagValues {
    FlagValues {
        task: common.task,
        model: train.model,
        seed: common.seed,
        lr: train.lr,
        steps: train.steps,
        batch_size: train.batch_size,
        weight_decay: train.weight_decay,
        hnn_spring_lr: train.hnn_spring_lr,
        scale,
        tol: common.tol,
        rho: common.rho,
        data: train.data.clone(),
        out: common.out.clone(),
    }
}

fn pair(v: Option<Vec<usize>>) -> Option<[usize; 2]> {
    v.map(|v| [v[0], v[1]])
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let none = TrainFlags::default();
    let resolve = |f: FlagValues| RunConfig::resolve(&file, &f);
    match cli.command {
        Command::Generate { common, samples, grid } => {
            let cfg = resolve(flags(&common, &none, None))?;
            eprint!("{}", commands::generate(&cfg, samples, pair(grid))?);
        }
        Command::Train { common, train, log } => {
            let cfg = resolve(flags(&common, &train, None))?;
            print!("{}", commands::cmd_train(&cfg, log.as_deref())?);
        }
        Command::Eval {
            common,
            checkpoint,
            data,
            json,
        } => {
            let t = TrainFlags { data, ..TrainFlags::default() };
            let cfg = resolve(flags(&common, &t, None))?;
            let text = commands::cmd_eval(&cfg, &checkpoint, json)?;
            commands::write_output(cfg.out.as_deref(), &text)?;
        }
        Command::Rollout {
            common,
            checkpoint,
            q0,
            p0,
            t0,
            t1,
            points,
            scale,
        } => {
            let cfg = resolve(flags(&common, &none, scale))?;
            let text = commands::cmd_rollout(&cfg, &checkpoint, &RolloutArgs { q0, p0, t0, t1, points })?;
            commands::write_output(cfg.out.as_deref(), &text)?;
        }
        Command::Decompose {
            common,
            checkpoint,
            input,
            samples,
            grid,
            region,
            time,
            frame,
            scale,
            iterations,
        } => {
            let cfg = resolve(flags(&common, &none, scale))?;
            let args = DecomposeArgs {
                checkpoint,
                input,
                samples,
                grid: pair(grid),
                region: region.map(|r| [r[0], r[1], r[2], r[3]]),
                time,
                frame,
                iterations,
            };
            let text = commands::cmd_decompose(&cfg, &args)?;
            commands::write_output(cfg.out.as_deref(), &text)?;
        }
        Command::Compare {
            common,
            train,
            out_dir,
            json,
        } => {
            let cfg = resolve(flags(&common, &train, None))?;
            let text = commands::cmd_compare(&cfg, out_dir.as_deref(), json)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
