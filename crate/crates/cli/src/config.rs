//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::Path;

use dhnn_core::models::ModelKind;
use dhnn_core::systems::Task;
use dhnn_core::training::TrainConfig;
use serde::Deserialize;

use crate::CliError;

/// Keys accepted in a config file. Every field is optional; unknown keys are
/// rejected.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<Task>,
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub hnn_spring_lr: Option<f64>,
    pub scale: Option<f64>,
    pub tol: Option<f64>,
    pub rho: Option<f64>,
    pub data: Option<String>,
    pub out: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub task: Option<Task>,
    pub model: Option<ModelKind>,
    pub seed: Option<u64>,
    pub lr: Option<f64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub weight_decay: Option<f64>,
    pub hnn_spring_lr: Option<f64>,
    pub scale: Option<f64>,
    pub tol: Option<f64>,
    pub rho: Option<f64>,
    pub data: Option<String>,
    pub out: Option<String>,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub scale: f64,
    /// Solver tolerance if one was given; each command picks its own default.
    pub tol: Option<f64>,
    pub rho: Option<f64>,
    pub data: Option<String>,
    pub out: Option<String>,
}

/// Default relative and absolute tolerance for trajectory integration.
pub const INTEGRATOR_TOL: f64 = 1e-12;

impl RunConfig {
    pub fn integrator_tol(&self) -> f64 {
        self.tol.unwrap_or(INTEGRATOR_TOL)
    }

    pub fn resolve(file: &FileConfig, flags: &FlagValues) -> Result<Self, CliError> {
        let task = flags.task.or(file.task).unwrap_or(Task::Spring);
        let defaults = TrainConfig::for_task(task);
        let train = TrainConfig {
            learning_rate: flags.lr.or(file.lr).unwrap_or(defaults.learning_rate),
            steps: flags.steps.or(file.steps).unwrap_or(defaults.steps),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
            weight_decay: flags.weight_decay.or(file.weight_decay).unwrap_or(defaults.weight_decay),
            seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
            hnn_spring_lr_override: flags.hnn_spring_lr.or(file.hnn_spring_lr).or(defaults.hnn_spring_lr_override),
            task,
            log_every: defaults.log_every,
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let tol = flags.tol.or(file.tol);
        if let Some(t) = tol.filter(|t| !(*t > 0.0)) {
            return Err(CliError::Usage(format!("tolerance must be positive, got {t}")));
        }
        Ok(Self {
            task,
            model: flags.model.or(file.model).unwrap_or(ModelKind::Dissipative),
            train,
            scale: flags.scale.or(file.scale).unwrap_or(1.0),
            tol,
            rho: flags.rho.or(file.rho),
            data: flags.data.clone().or_else(|| file.data.clone()),
            out: flags.out.clone().or_else(|| file.out.clone()),
        })
    }
}
