//! Evaluation quantities: derivative test MSE, trajectory MSE and energy MSE.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datasets::PhaseSample;
use crate::dynamics;
use crate::integrators::Trajectory;
use crate::models::Model;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub test_mse: f64,
    pub trajectory_mse: Option<f64>,
    pub energy_mse: Option<f64>,
}

impl EvalReport {
    pub fn new(label: impl Into<String>, test_mse: f64) -> Self {
        Self {
            label: label.into(),
            test_mse,
            trajectory_mse: None,
            energy_mse: None,
        }
    }

    /// `key value` lines; absent metrics are written as `-`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
        let mut out = String::new();
        let _ = writeln!(out, "label {}", self.label);
        let _ = writeln!(out, "test_mse {:e}", self.test_mse);
        let _ = writeln!(out, "trajectory_mse {}", opt(self.trajectory_mse));
        let _ = writeln!(out, "energy_mse {}", opt(self.energy_mse));
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mean over samples of the squared derivative error summed over both
/// components; the same reduction as the training loss.
pub fn test_mse(model: &Model, test_set: &[PhaseSample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    dynamics::loss(model, test_set)
}

fn check_times(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.times.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if a.times != b.times || a.states.len() != b.states.len() || a.states.len() != a.times.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory time grids differ ({} vs {} points)",
            a.times.len(),
            b.times.len()
        )));
    }
    Ok(())
}

/// Mean over time points and both coordinates of the squared difference.
pub fn trajectory_mse(model_traj: &Trajectory, truth_traj: &Trajectory) -> Result<f64> {
    check_times(model_traj, truth_traj)?;
    let total: f64 = model_traj
        .states
        .iter()
        .zip(&truth_traj.states)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    Ok(total / (2 * model_traj.states.len()) as f64)
}

/// Mean over time of `(H(predicted) - H(true))²`.
pub fn energy_mse(
    model_traj: &Trajectory,
    truth_traj: &Trajectory,
    hamiltonian: impl Fn(f64, f64) -> f64,
) -> Result<f64> {
    check_times(model_traj, truth_traj)?;
    let total: f64 = model_traj
        .states
        .iter()
        .zip(&truth_traj.states)
        .map(|(a, b)| (hamiltonian(a[0], a[1]) - hamiltonian(b[0], b[1])).powi(2))
        .sum();
    Ok(total / model_traj.states.len() as f64)
}
