use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dhnn_core::datasets::{
    self, generate_spring, ingest_ocean, ingest_pendulum, read_samples, split, synthetic_ocean, synthetic_pendulum,
    write_samples, Normalization, PendulumData, PhaseSample, SplitDataset, SpringConfig,
};
use dhnn_core::dynamics::{vector_field, PhasePoint};
use dhnn_core::helmgrid::{self, bounding_box, decompose, model_decomposition, rasterize, GridField, VectorSample};
use dhnn_core::integrators::{energy_along, integrate, Trajectory, TrajectorySpec};
use dhnn_core::metrics::{energy_mse, test_mse, trajectory_mse, EvalReport};
use dhnn_core::models::{Model, ModelKind};
use dhnn_core::systems::{Pendulum, Spring, Task};
use dhnn_core::training::{train, TrainReport};

use crate::config::RunConfig;
use crate::CliError;

/// Friction of the simulated pendulum written by `generate --task pendulum`.
pub const SYNTHETIC_PENDULUM_RHO: f64 = 0.2;

pub struct Loaded {
    pub samples: Vec<PhaseSample>,
    pub input_dim: usize,
    pub normalization: Normalization,
    pub pendulum: Option<PendulumData>,
}

/// Reads a task's data file: sample files for spring and custom data, raw
/// recordings for the pendulum, gridded frames for the ocean.
pub fn load_data(task: Task, path: &Path) -> Result<Loaded, CliError> {
    Ok(match task {
        Task::Spring | Task::Custom => {
            let samples = read_samples(path)?;
            let timed = task == Task::Custom && samples.iter().any(|s| s.t != 0.0);
            Loaded {
                samples,
                input_dim: if timed { 3 } else { 2 },
                normalization: Normalization::default(),
                pendulum: None,
            }
        }
        Task::Pendulum => {
            let data = ingest_pendulum(path)?;
            Loaded {
                samples: data.samples.clone(),
                input_dim: 2,
                normalization: Normalization::default(),
                pendulum: Some(data),
            }
        }
        Task::Ocean => {
            let data = ingest_ocean(path)?;
            Loaded {
                samples: data.samples,
                input_dim: 3,
                normalization: data.frames.header.normalization(),
                pendulum: None,
            }
        }
    })
}

fn split_loaded(loaded: &Loaded, seed: u64) -> Result<SplitDataset, CliError> {
    Ok(split(&loaded.samples, seed)?.with_normalization(loaded.normalization))
}

fn require<'a>(value: &'a Option<String>, what: &str) -> Result<&'a str, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

pub fn write_output(out: Option<&str>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => Ok(datasets::write_text(Path::new(path), text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn read_checkpoint(path: &str) -> Result<Model, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
    Model::deserialize(&bytes).map_err(|e| CliError::Data(format!("{path}: {e}")))
}

pub fn generate(cfg: &RunConfig, samples: Option<usize>, grid: Option<[usize; 2]>) -> Result<String, CliError> {
    let out = require(&cfg.out, "--out")?;
    let seed = cfg.train.seed;
    match cfg.task {
        Task::Spring => {
            let mut spring_cfg = SpringConfig::default();
            if let Some(rho) = cfg.rho {
                spring_cfg.spring = Spring::with_rho(rho);
            }
            if let Some(n) = samples {
                spring_cfg.n_samples = n;
            }
            let data = generate_spring(&spring_cfg, seed)?;
            write_samples(Path::new(out), &data)?;
            Ok(format!("wrote {} spring samples to {out}\n", data.len()))
        }
        Task::Pendulum => {
            let pendulum = Pendulum {
                rho: cfg.rho.unwrap_or(SYNTHETIC_PENDULUM_RHO),
                ..Pendulum::default()
            };
            let initial = [[1.0, 0.0], [-1.5, 0.5], [0.5, -2.0], [2.0, 1.0]];
            let text = synthetic_pendulum(&pendulum, &initial, 20.0, 0.05)?;
            datasets::write_text(Path::new(out), &text)?;
            Ok(format!("wrote {} simulated pendulum trajectories to {out}\n", initial.len()))
        }
        Task::Ocean => {
            let [nx, ny] = grid.unwrap_or([20, 20]);
            if nx != ny {
                return Err(CliError::Usage("synthetic ocean grids are square".into()));
            }
            let frames = synthetic_ocean(69, nx)?;
            datasets::write_text(Path::new(out), &frames.format())?;
            Ok(format!("wrote {} synthetic ocean frames to {out}\n", frames.header.frames))
        }
        Task::Custom => Err(CliError::Usage("custom data cannot be generated".into())),
    }
}

pub struct Trained {
    pub model: Model,
    pub report: TrainReport,
}

fn train_one(cfg: &RunConfig, kind: ModelKind, loaded: &Loaded) -> Result<Trained, CliError> {
    let data = split_loaded(loaded, cfg.train.seed)?;
    let model = Model::init(kind, loaded.input_dim, cfg.train.seed)?;
    let (model, report) = train(model, &data, &cfg.train)?;
    Ok(Trained { model, report })
}

pub fn cmd_train(cfg: &RunConfig, log: Option<&str>) -> Result<String, CliError> {
    let data_path = require(&cfg.data, "--data")?;
    let out = require(&cfg.out, "--out")?;
    let loaded = load_data(cfg.task, Path::new(data_path))?;
    let t = train_one(cfg, cfg.model, &loaded)?;
    std::fs::write(out, t.model.serialize()).map_err(|e| CliError::Data(format!("{out}: {e}")))?;
    let log_path = log.map(PathBuf::from).unwrap_or_else(|| PathBuf::from(format!("{out}.log")));
    datasets::write_text(&log_path, &t.report.log_text())?;
    Ok(format!(
        "train_mse {:e}\ntest_mse {:e}\n",
        t.report.final_train_loss, t.report.final_test_loss
    ))
}

/// Rollout horizon and reference trajectory used by `eval` for a task.
fn reference_trajectories(cfg: &RunConfig, loaded: &Loaded, model: &Model) -> Result<Option<(Trajectory, Trajectory)>, CliError> {
    match cfg.task {
        Task::Spring => {
            let spring = Spring::with_rho(cfg.rho.unwrap_or(2.0));
            let spec = TrajectorySpec::uniform(PhasePoint::new(0.9, 0.0), 0.0, 20.0, 401).with_tol(cfg.integrator_tol());
            let truth = Trajectory {
                times: spec.eval_times.clone(),
                states: spec
                    .eval_times
                    .iter()
                    .map(|&t| {
                        let (q, p) = spring.solution(0.9, 0.0, t);
                        [q, p]
                    })
                    .collect(),
                accepted: 0,
                rejected: 0,
            };
            let predicted = integrate(vector_field(model, cfg.scale), &spec)?;
            Ok(Some((predicted, truth)))
        }
        Task::Pendulum => {
            let Some(rec) = loaded.pendulum.as_ref().and_then(|p| p.trajectories.first()) else {
                return Ok(None);
            };
            let [q0, p0] = rec.states[0];
            let spec = TrajectorySpec {
                initial: PhasePoint::new(q0, p0),
                t_span: [rec.times[0], *rec.times.last().expect("at least three rows")],
                rel_tol: cfg.integrator_tol(),
                abs_tol: cfg.integrator_tol(),
                eval_times: rec.times.clone(),
            };
            let predicted = integrate(vector_field(model, cfg.scale), &spec)?;
            let truth = Trajectory {
                times: rec.times.clone(),
                states: rec.states.clone(),
                accepted: 0,
                rejected: 0,
            };
            Ok(Some((predicted, truth)))
        }
        Task::Ocean | Task::Custom => Ok(None),
    }
}

fn task_energy(task: Task, rho: Option<f64>) -> Option<Box<dyn Fn(f64, f64) -> f64>> {
    match task {
        Task::Spring => {
            let s = Spring::with_rho(rho.unwrap_or(2.0));
            Some(Box::new(move |q, p| s.energy(q, p)))
        }
        Task::Pendulum => {
            let p = Pendulum::default();
            Some(Box::new(move |q, m| p.energy(q, m)))
        }
        Task::Ocean | Task::Custom => None,
    }
}

fn evaluate(cfg: &RunConfig, loaded: &Loaded, model: &Model) -> Result<EvalReport, CliError> {
    let data = split_loaded(loaded, cfg.train.seed)?;
    let mut report = EvalReport::new(model.kind().label(), test_mse(model, &data.test)?);
    if let Some((predicted, truth)) = reference_trajectories(cfg, loaded, model)? {
        report.trajectory_mse = Some(trajectory_mse(&predicted, &truth)?);
        if let Some(h) = task_energy(cfg.task, cfg.rho) {
            report.energy_mse = Some(energy_mse(&predicted, &truth, h)?);
        }
    }
    Ok(report)
}

fn render(reports: &[EvalReport], json: bool) -> String {
    if json {
        let body = if reports.len() == 1 {
            serde_json::to_string_pretty(&reports[0])
        } else {
            serde_json::to_string_pretty(reports)
        };
        return body.expect("reports serialize") + "\n";
    }
    reports.iter().map(EvalReport::to_text).collect::<Vec<_>>().join("\n")
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &str, json: bool) -> Result<String, CliError> {
    let model = read_checkpoint(checkpoint)?;
    let loaded = load_data(cfg.task, Path::new(require(&cfg.data, "--data")?))?;
    if model.input_dim() != loaded.input_dim {
        return Err(CliError::Core(dhnn_core::Error::DimensionMismatch {
            expected: model.input_dim(),
            got: loaded.input_dim,
        }));
    }
    Ok(render(&[evaluate(cfg, &loaded, &model)?], json))
}

pub struct RolloutArgs {
    pub q0: f64,
    pub p0: f64,
    pub t0: f64,
    pub t1: f64,
    pub points: usize,
}

pub fn cmd_rollout(cfg: &RunConfig, checkpoint: &str, args: &RolloutArgs) -> Result<String, CliError> {
    let model = read_checkpoint(checkpoint)?;
    if args.points < 2 {
        return Err(CliError::Usage("--points must be at least 2".into()));
    }
    let spec = TrajectorySpec::uniform(PhasePoint::at_time(args.q0, args.p0, args.t0), args.t0, args.t1, args.points)
        .with_tol(cfg.integrator_tol());
    let traj = integrate(vector_field(&model, cfg.scale), &spec)?;
    let energy = task_energy(cfg.task, cfg.rho).map(|h| energy_along(&traj, h));
    Ok(traj.format(energy.as_deref()))
}

pub struct DecomposeArgs {
    pub checkpoint: Option<String>,
    pub input: Option<String>,
    pub samples: Option<String>,
    pub grid: Option<[usize; 2]>,
    pub region: Option<[f64; 4]>,
    pub time: f64,
    pub frame: usize,
    pub iterations: usize,
}

pub fn cmd_decompose(cfg: &RunConfig, args: &DecomposeArgs) -> Result<String, CliError> {
    let sources = [&args.checkpoint, &args.input, &args.samples].iter().filter(|s| s.is_some()).count();
    if sources != 1 {
        return Err(CliError::Usage(
            "give exactly one of --checkpoint, --input or --samples".into(),
        ));
    }
    let [nx, ny] = args.grid.unwrap_or([50, 50]);
    if let Some(path) = &args.checkpoint {
        let model = read_checkpoint(path)?;
        let region = args.region.unwrap_or(match cfg.task {
            Task::Ocean => [-1.0, 1.0, -1.0, 1.0],
            _ => [-2.0, 2.0, -2.0, 2.0],
        });
        return Ok(model_decomposition(&model, nx, ny, region, args.time, cfg.scale)?.format());
    }
    let tol = cfg.tol.unwrap_or(helmgrid::DEFAULT_TOLERANCE);
    let field = if let Some(path) = &args.input {
        let data = ingest_ocean(Path::new(path))?;
        grid_from_frame(&data.frames, args.frame)?
    } else {
        let path = args.samples.as_deref().expect("one source given");
        let samples: Vec<VectorSample> = read_samples(Path::new(path))?
            .iter()
            .map(|s| [s.q, s.p, s.dq_dt, s.dp_dt])
            .collect();
        let bounds = args.region.unwrap_or_else(|| bounding_box(&samples));
        rasterize(&samples, nx, ny, bounds)?
    };
    let dec = decompose(&field, args.iterations, tol)?;
    let mut text = String::new();
    if !dec.converged {
        let _ = writeln!(
            text,
            "# not converged after {} sweeps, residual {:e}",
            dec.iterations, dec.residual_norm
        );
    }
    text.push_str(&dec.format(&field));
    Ok(text)
}

fn grid_from_frame(frames: &datasets::OceanFrameSet, frame: usize) -> Result<GridField, CliError> {
    let h = frames.header;
    if frame >= h.frames {
        return Err(CliError::Usage(format!("frame {frame} out of range (file has {})", h.frames)));
    }
    let bounds = [h.lon(0), h.lon(h.cols - 1), h.lat(0), h.lat(h.rows - 1)];
    let mut g = GridField::zeros(h.cols, h.rows, bounds)?;
    for r in 0..h.rows {
        for c in 0..h.cols {
            let i = frames.index(frame, r, c);
            if !(frames.u[i].is_finite() && frames.v[i].is_finite()) {
                return Err(CliError::Data(format!("masked cell at row {r}, column {c}")));
            }
            let k = g.idx(c, r);
            g.u[k] = frames.u[i];
            g.v[k] = frames.v[i];
        }
    }
    Ok(g)
}

/// Trains all three model kinds on the same split in parallel and reports
/// each one's metrics.
pub fn cmd_compare(cfg: &RunConfig, out_dir: Option<&str>, json: bool) -> Result<String, CliError> {
    let loaded = load_data(cfg.task, Path::new(require(&cfg.data, "--data")?))?;
    let results: Vec<Result<(Trained, EvalReport), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = ModelKind::ALL
            .into_iter()
            .map(|kind| {
                let loaded = &loaded;
                s.spawn(move || {
                    let t = train_one(cfg, kind, loaded)?;
                    let report = evaluate(cfg, loaded, &t.model)?;
                    Ok((t, report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let mut reports = Vec::new();
    for r in results {
        let (t, report) = r?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{dir}: {e}")))?;
            let path = Path::new(dir).join(format!("{}.ckpt", report.label));
            std::fs::write(&path, t.model.serialize())
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            datasets::write_text(&path.with_extension("log"), &t.report.log_text())?;
        }
        reports.push(report);
    }
    Ok(render(&reports, json))
}
