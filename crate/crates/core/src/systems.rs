//! Analytic reference systems: the damped spring and the damped pendulum.
//!
//! Both use the Rayleigh friction `F = -ρ q̇`, which enters the momentum
//! equation as `dp/dt = -∂H/∂q - ρ q̇`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Spring,
    Pendulum,
    Ocean,
    Custom,
}

impl Task {
    pub fn label(self) -> &'static str {
        match self {
            Task::Spring => "spring",
            Task::Pendulum => "pendulum",
            Task::Ocean => "ocean",
            Task::Custom => "custom",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spring" => Ok(Task::Spring),
            "pendulum" => Ok(Task::Pendulum),
            "ocean" => Ok(Task::Ocean),
            "custom" => Ok(Task::Custom),
            other => Err(Error::InvalidArgument(format!("unknown task `{other}`"))),
        }
    }
}

/// Mass-spring oscillator `H = ½ k q² + p²/(2m)` with linear friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub k: f64,
    pub m: f64,
    pub rho: f64,
}

impl Default for Spring {
    fn default() -> Self {
        Self {
            k: 1.0,
            m: 1.0,
            rho: 2.0,
        }
    }
}

impl Spring {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.m > 0.0 && self.rho >= 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "spring needs k > 0, m > 0, rho >= 0 (got k={}, m={}, rho={})",
                self.k, self.m, self.rho
            )));
        }
        Ok(())
    }

    pub fn energy(&self, q: f64, p: f64) -> f64 {
        0.5 * self.k * q * q + p * p / (2.0 * self.m)
    }

    pub fn conservative(&self, q: f64, p: f64) -> (f64, f64) {
        (p / self.m, -self.k * q)
    }

    pub fn dissipative(&self, _q: f64, p: f64) -> (f64, f64) {
        (0.0, -self.rho * p / self.m)
    }

    pub fn field(&self, q: f64, p: f64) -> (f64, f64) {
        let (cq, cp) = self.conservative(q, p);
        let (dq, dp) = self.dissipative(q, p);
        (cq + dq, cp + dp)
    }

    /// Closed-form state at time `t` from `(q0, p0)` at `t = 0`, covering the
    /// under-, critically and over-damped regimes.
    pub fn solution(&self, q0: f64, p0: f64, t: f64) -> (f64, f64) {
        let w0_sq = self.k / self.m;
        let gamma = self.rho / (2.0 * self.m);
        let v0 = p0 / self.m;
        let disc = gamma * gamma - w0_sq;
        let (q, v) = if disc.abs() <= 1e-12 * w0_sq {
            let c1 = q0;
            let c2 = v0 + gamma * q0;
            let e = (-gamma * t).exp();
            (e * (c1 + c2 * t), e * (c2 - gamma * (c1 + c2 * t)))
        } else if disc < 0.0 {
            let w = (-disc).sqrt();
            let c1 = q0;
            let c2 = (v0 + gamma * q0) / w;
            let e = (-gamma * t).exp();
            let (s, c) = (w * t).sin_cos();
            (
                e * (c1 * c + c2 * s),
                e * ((-gamma * c1 + w * c2) * c + (-gamma * c2 - w * c1) * s),
            )
        } else {
            let root = disc.sqrt();
            let (r1, r2) = (-gamma + root, -gamma - root);
            let a = (v0 - r2 * q0) / (r1 - r2);
            let b = q0 - a;
            let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
            (a * e1 + b * e2, a * r1 * e1 + b * r2 * e2)
        };
        (q, v * self.m)
    }
}

/// Pendulum `H = 2 m g l (1 - cos q) + l² p² / (2m)` with linear friction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub rho: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            m: 1.0,
            l: 1.0,
            g: 3.0,
            rho: 0.0,
        }
    }
}

impl Pendulum {
    pub fn energy(&self, q: f64, p: f64) -> f64 {
        2.0 * self.m * self.g * self.l * (1.0 - q.cos()) + self.l * self.l * p * p / (2.0 * self.m)
    }

    pub fn field(&self, q: f64, p: f64) -> (f64, f64) {
        let qdot = self.l * self.l * p / self.m;
        let dhdq = 2.0 * self.m * self.g * self.l * q.sin();
        (qdot, -dhdq - self.rho * qdot)
    }
}
