//! Adam and the mini-batch training loop.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datasets::SplitDataset;
use crate::dynamics;
use crate::models::{Model, ModelKind};
use crate::systems::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Rate used instead of `learning_rate` for the Hamiltonian-only model on
    /// the spring task, where the default rate is unstable.
    pub hnn_spring_lr_override: Option<f64>,
    pub task: Task,
    pub log_every: usize,
}

pub const OCEAN_STEPS: usize = 24_000;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            steps: 5000,
            batch_size: 128,
            weight_decay: 0.0,
            seed: 42,
            hnn_spring_lr_override: Some(5e-3),
            task: Task::Spring,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Defaults with the task-specific step count.
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            steps: if task == Task::Ocean { OCEAN_STEPS } else { 5000 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if let Some(lr) = self.hnn_spring_lr_override {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("learning rate override must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log interval must be at least 1".into()));
        }
        Ok(())
    }

    /// The rate actually used for `kind`.
    pub fn effective_lr(&self, kind: ModelKind) -> f64 {
        match (kind, self.task, self.hnn_spring_lr_override) {
            (ModelKind::Hamiltonian, Task::Spring, Some(lr)) => lr,
            _ => self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update in place. Parameters are left untouched
/// when any gradient component is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            got: if grads.len() != params.len() { grads.len() } else { state.m.len() },
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            what: format!("gradient component {i}"),
            step: state.step_count as usize,
        });
    }
    state.step_count += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step_count as i32);
    let c2 = 1.0 - b2.powi(state.step_count as i32);
    for (((x, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *x -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub model: ModelKind,
    pub learning_rate: f64,
    /// Mini-batch loss of every step.
    pub step_losses: Vec<f64>,
    pub initial_train_loss: f64,
    pub initial_test_loss: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub log_every: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// `step train_loss` every `log_every` steps, then a summary line.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        for (i, loss) in self.step_losses.iter().enumerate() {
            if i % self.log_every == 0 {
                let _ = writeln!(out, "{i} {loss:e}");
            }
        }
        let _ = writeln!(
            out,
            "# final model={} steps={} train_loss={:e} test_loss={:e} wall_time_secs={:.3}",
            self.model,
            self.step_losses.len(),
            self.final_train_loss,
            self.final_test_loss,
            self.wall_time_secs
        );
        out
    }
}

/// Trains `model` with mini-batch Adam on the training split and reports
/// full-set train and test losses before and after.
pub fn train(mut model: Model, dataset: &SplitDataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if dataset.train.is_empty() || dataset.test.is_empty() {
        return Err(Error::InvalidArgument("training and test sets must be non-empty".into()));
    }
    let started = Instant::now();
    let lr = cfg.effective_lr(model.kind());
    let initial_train_loss = dynamics::loss(&model, &dataset.train)?;
    let initial_test_loss = dynamics::loss(&model, &dataset.test)?;

    let mut params = model.params();
    let mut state = AdamState::new(params.len());
    let mut batches = dataset.batches(cfg.batch_size, cfg.seed)?;
    let mut step_losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = dynamics::loss_and_gradient(&model, batches.next_batch())?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                what: "training loss".into(),
                step,
            });
        }
        step_losses.push(loss);
        let mut g = grad.params();
        if cfg.weight_decay > 0.0 {
            for (gi, &p) in g.iter_mut().zip(&params) {
                *gi += cfg.weight_decay * p;
            }
        }
        adam_step(&mut params, &g, &mut state, lr).map_err(|e| match e {
            Error::Diverged { what, .. } => Error::Diverged { what, step },
            other => other,
        })?;
        model.set_params(&params)?;
    }

    let final_train_loss = dynamics::loss(&model, &dataset.train)?;
    let final_test_loss = dynamics::loss(&model, &dataset.test)?;
    if !final_train_loss.is_finite() || !final_test_loss.is_finite() {
        return Err(Error::Diverged {
            what: "final loss".into(),
            step: cfg.steps,
        });
    }
    let report = TrainReport {
        model: model.kind(),
        learning_rate: lr,
        step_losses,
        initial_train_loss,
        initial_test_loss,
        final_train_loss,
        final_test_loss,
        log_every: cfg.log_every,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
