//! Dormand–Prince 5(4) with PI step-size control and 4th-order dense output.

use std::fmt::Write as _;

use crate::dynamics::PhasePoint;
use crate::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// 5th minus embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense output.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;
const BETA: f64 = 0.04;

pub type State = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub initial: PhasePoint,
    pub t_span: [f64; 2],
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub eval_times: Vec<f64>,
}

impl TrajectorySpec {
    /// Span `[t0, t1]` sampled at `n` evenly spaced times (both ends included),
    /// default tolerance 1e-12.
    pub fn uniform(initial: PhasePoint, t0: f64, t1: f64, n: usize) -> Self {
        let n = n.max(2);
        let eval_times = (0..n)
            .map(|i| {
                if i == n - 1 {
                    t1
                } else {
                    t0 + (t1 - t0) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        Self {
            initial,
            t_span: [t0, t1],
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            eval_times,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.rel_tol = tol;
        self.abs_tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        let [t0, t1] = self.t_span;
        if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::InvalidArgument(format!("need t0 < t1, got [{t0}, {t1}]")));
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be positive".into()));
        }
        if !(self.initial.q.is_finite() && self.initial.p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite initial state".into()));
        }
        for w in self.eval_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidArgument("eval_times must be strictly increasing".into()));
            }
        }
        if let (Some(&a), Some(&b)) = (self.eval_times.first(), self.eval_times.last()) {
            if a < t0 || b > t1 {
                return Err(Error::InvalidArgument("eval_times outside t_span".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<State> {
        self.states.last().copied()
    }

    /// `t q p [energy]` lines.
    pub fn format(&self, energy: Option<&[f64]>) -> String {
        let mut out = String::with_capacity(self.times.len() * 64);
        for (i, (t, [q, p])) in self.times.iter().zip(&self.states).enumerate() {
            match energy {
                Some(e) => {
                    let _ = writeln!(out, "{t} {q} {p} {}", e[i]);
                }
                None => {
                    let _ = writeln!(out, "{t} {q} {p}");
                }
            }
        }
        out
    }
}

fn axpy(y: State, terms: &[(f64, &State)], h: f64) -> State {
    let mut out = y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

fn finite(v: &State) -> bool {
    v[0].is_finite() && v[1].is_finite()
}

struct Stages {
    k: [State; 7],
    y_new: State,
}

/// One Dormand–Prince step from `(t, y)` with `k1 = f(t, y)` supplied.
fn step<F: FnMut(f64, State) -> State>(f: &mut F, t: f64, y: State, k1: State, h: f64) -> Stages {
    let k2 = f(t + C2 * h, axpy(y, &[(A21, &k1)], h));
    let k3 = f(t + C3 * h, axpy(y, &[(A31, &k1), (A32, &k2)], h));
    let k4 = f(t + C4 * h, axpy(y, &[(A41, &k1), (A42, &k2), (A43, &k3)], h));
    let k5 = f(
        t + C5 * h,
        axpy(y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
    );
    let k6 = f(
        t + h,
        axpy(y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
    );
    let y_new = axpy(y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], h);
    let k7 = f(t + h, y_new);
    Stages {
        k: [k1, k2, k3, k4, k5, k6, k7],
        y_new,
    }
}

fn error_norm(s: &Stages, y: &State, h: f64, rtol: f64, atol: f64) -> f64 {
    let k = &s.k;
    let mut acc = 0.0;
    for i in 0..2 {
        let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let sk = atol + rtol * y[i].abs().max(s.y_new[i].abs());
        acc += (e / sk).powi(2);
    }
    (acc / 2.0).sqrt()
}

/// Quartic interpolant over one accepted step.
struct Dense {
    t: f64,
    h: f64,
    r: [State; 5],
}

impl Dense {
    fn new(t: f64, h: f64, y: &State, s: &Stages) -> Self {
        let k = &s.k;
        let mut r = [[0.0; 2]; 5];
        for i in 0..2 {
            let ydiff = s.y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            r[0][i] = y[i];
            r[1][i] = ydiff;
            r[2][i] = bspl;
            r[3][i] = ydiff - h * k[6][i] - bspl;
            r[4][i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
        }
        Self { t, h, r }
    }

    fn eval(&self, t: f64) -> State {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let r = &self.r;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            *o = r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }
}

fn initial_step<F: FnMut(f64, State) -> State>(
    f: &mut F,
    t0: f64,
    y0: &State,
    f0: &State,
    span: f64,
    rtol: f64,
    atol: f64,
) -> f64 {
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..2 {
        let sk = atol + rtol * y0[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y0[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(span);
    let y1 = axpy(*y0, &[(1.0, f0)], h);
    let f1 = f(t0 + h, y1);
    let mut der2: f64 = 0.0;
    for i in 0..2 {
        let sk = atol + rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.abs().max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(span)
}

/// Adaptive integration of `field` over `spec.t_span`, reporting the state at
/// every requested time.
pub fn integrate<F>(mut field: F, spec: &TrajectorySpec) -> Result<Trajectory>
where
    F: FnMut(f64, State) -> State,
{
    spec.validate()?;
    let [t0, t1] = spec.t_span;
    let (rtol, atol) = (spec.rel_tol, spec.abs_tol);
    let mut t = t0;
    let mut y = [spec.initial.q, spec.initial.p];
    let mut k1 = field(t, y);
    if !finite(&k1) {
        return Err(Error::NonFiniteField { t });
    }
    let mut h = initial_step(&mut field, t, &y, &k1, t1 - t0, rtol, atol);

    let mut out = Trajectory {
        times: Vec::with_capacity(spec.eval_times.len()),
        states: Vec::with_capacity(spec.eval_times.len()),
        accepted: 0,
        rejected: 0,
    };
    let mut next_out = 0;
    while next_out < spec.eval_times.len() && spec.eval_times[next_out] <= t0 {
        out.times.push(spec.eval_times[next_out]);
        out.states.push(y);
        next_out += 1;
    }

    let expo1 = 0.2 - BETA * 0.75;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    while t < t1 {
        if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { t });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let stages = step(&mut field, t, y, k1, h);
        if stages.k[1..].iter().any(|k| !finite(k)) || !finite(&stages.y_new) {
            return Err(Error::NonFiniteField { t });
        }
        let err = error_norm(&stages, &y, h, rtol, atol);
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFETY).clamp(1.0 / MAX_SCALE, 1.0 / MIN_SCALE);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            let t_new = if last { t1 } else { t + h };
            let dense = Dense::new(t, h, &y, &stages);
            while next_out < spec.eval_times.len() && spec.eval_times[next_out] <= t_new {
                let te = spec.eval_times[next_out];
                out.times.push(te);
                out.states.push(if te == t_new { stages.y_new } else { dense.eval(te) });
                next_out += 1;
            }
            t = t_new;
            y = stages.y_new;
            k1 = stages.k[6];
            out.accepted += 1;
            last_rejected = false;
            h = h_new;
        } else {
            h /= (fac11 / SAFETY).min(1.0 / MIN_SCALE);
            out.rejected += 1;
            last_rejected = true;
        }
    }
    Ok(out)
}

/// Fixed-step fifth-order integration, returning the final state.
pub fn integrate_fixed<F>(mut field: F, initial: State, t_span: [f64; 2], n_steps: usize) -> Result<State>
where
    F: FnMut(f64, State) -> State,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    let h = (t_span[1] - t_span[0]) / n_steps as f64;
    let mut y = initial;
    for i in 0..n_steps {
        let t = t_span[0] + i as f64 * h;
        let k1 = field(t, y);
        y = step(&mut field, t, y, k1, h).y_new;
        if !finite(&y) {
            return Err(Error::NonFiniteField { t });
        }
    }
    Ok(y)
}

/// `H(q, p)` at every state of the trajectory.
pub fn energy_along(trajectory: &Trajectory, hamiltonian: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    trajectory.states.iter().map(|&[q, p]| hamiltonian(q, p)).collect()
}
