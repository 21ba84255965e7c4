//! Grid-based Helmholtz decomposition: nearest-neighbour rasterization of
//! scattered samples followed by a Gauss–Seidel solve of `∇²φ = ∇·V`.
//!
//! The grid is node-centred: node `(i, j)` sits at `(x0 + i·hx, y0 + j·hy)`
//! and is stored at index `j·nx + i`. The Poisson problem uses the 5-point
//! Laplacian with Neumann boundaries whose normal derivative equals the mean
//! normal flux of `V` through that side of the box. That choice satisfies the
//! compatibility condition `∮∂φ/∂n = ∫∇·V` for any input, while homogeneous
//! Neumann data would force every uniform source to vanish.

use std::fmt::Write as _;

use crate::datasets::OceanHeader;
use crate::dynamics::{eval_field, PhasePoint};
use crate::models::Model;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    pub x0: f64,
    pub y0: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl GridField {
    /// Node grid spanning `[xmin, xmax] × [ymin, ymax]`.
    pub fn zeros(nx: usize, ny: usize, bounds: [f64; 4]) -> Result<Self> {
        let [xmin, xmax, ymin, ymax] = bounds;
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidArgument(format!("grid must be at least 3x3, got {nx}x{ny}")));
        }
        if !(xmax > xmin && ymax > ymin) {
            return Err(Error::InvalidArgument(format!("empty grid bounds {bounds:?}")));
        }
        Ok(Self {
            nx,
            ny,
            hx: (xmax - xmin) / (nx - 1) as f64,
            hy: (ymax - ymin) / (ny - 1) as f64,
            x0: xmin,
            y0: ymin,
            u: vec![0.0; nx * ny],
            v: vec![0.0; nx * ny],
        })
    }

    /// Samples `f(x, y)` at every node.
    pub fn from_fn(nx: usize, ny: usize, bounds: [f64; 4], f: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self> {
        let mut g = Self::zeros(nx, ny, bounds)?;
        for j in 0..ny {
            for i in 0..nx {
                let (a, b) = f(g.x(i), g.y(j));
                let k = g.idx(i, j);
                g.u[k] = a;
                g.v[k] = b;
            }
        }
        Ok(g)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    fn same_grid(&self, other: &GridField) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.hx - other.hx).abs() <= 1e-12 * self.hx
            && (self.hy - other.hy).abs() <= 1e-12 * self.hy
            && (self.x0 - other.x0).abs() <= 1e-12 * self.hx
            && (self.y0 - other.y0).abs() <= 1e-12 * self.hy
    }

    fn interior(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.ny - 1).flat_map(move |j| (1..self.nx - 1).map(move |i| self.idx(i, j)))
    }

    /// Header compatible with the ocean grid format (one frame; rows are `y`).
    pub fn header(&self) -> OceanHeader {
        OceanHeader {
            frames: 1,
            rows: self.ny,
            cols: self.nx,
            lon0: self.x0,
            lon_step: self.hx,
            lat0: self.y0,
            lat_step: self.hy,
            t_step_days: 0.0,
        }
    }

    /// Central differences inside, one-sided on the boundary.
    pub fn divergence(&self) -> Vec<f64> {
        let mut div = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                div[self.idx(i, j)] = d_dx(&self.u, self, i, j) + d_dy(&self.v, self, i, j);
            }
        }
        div
    }

    /// `∂v/∂x - ∂u/∂y` with the same stencils as [`GridField::divergence`].
    pub fn curl(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.nx * self.ny];
        for j in 0..self.ny {
            for i in 0..self.nx {
                c[self.idx(i, j)] = d_dx(&self.v, self, i, j) - d_dy(&self.u, self, i, j);
            }
        }
        c
    }
}

fn d_dx(f: &[f64], g: &GridField, i: usize, j: usize) -> f64 {
    let at = |ii: usize| f[g.idx(ii, j)];
    if i == 0 {
        (at(1) - at(0)) / g.hx
    } else if i == g.nx - 1 {
        (at(i) - at(i - 1)) / g.hx
    } else {
        (at(i + 1) - at(i - 1)) / (2.0 * g.hx)
    }
}

fn d_dy(f: &[f64], g: &GridField, i: usize, j: usize) -> f64 {
    let at = |jj: usize| f[g.idx(i, jj)];
    if j == 0 {
        (at(1) - at(0)) / g.hy
    } else if j == g.ny - 1 {
        (at(j) - at(j - 1)) / g.hy
    } else {
        (at(j + 1) - at(j - 1)) / (2.0 * g.hy)
    }
}

/// Scattered vector sample `(x, y, u, v)`.
pub type VectorSample = [f64; 4];

/// Each node takes the vector of its nearest sample (Euclidean distance,
/// ties to the lowest sample index).
pub fn rasterize(samples: &[VectorSample], nx: usize, ny: usize, bounds: [f64; 4]) -> Result<GridField> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples to rasterize".into()));
    }
    let mut g = GridField::zeros(nx, ny, bounds)?;
    for j in 0..ny {
        let y = g.y(j);
        for i in 0..nx {
            let x = g.x(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, s) in samples.iter().enumerate() {
                let d = (s[0] - x).powi(2) + (s[1] - y).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            let k = g.idx(i, j);
            g.u[k] = samples[best][2];
            g.v[k] = samples[best][3];
        }
    }
    Ok(g)
}

/// Bounding box `[xmin, xmax, ymin, ymax]` of the samples.
pub fn bounding_box(samples: &[VectorSample]) -> [f64; 4] {
    samples.iter().fold(
        [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY],
        |b, s| [b[0].min(s[0]), b[1].max(s[0]), b[2].min(s[1]), b[3].max(s[1])],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Curl-free part `∇φ`.
    pub irrotational: GridField,
    /// Remainder `V - ∇φ`.
    pub rotational: GridField,
    /// Zero-mean potential.
    pub potential: Vec<f64>,
    /// Max-norm Poisson residual after the last sweep.
    pub residual_norm: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit above the tolerance.
    pub converged: bool,
    /// Max-norm residual after every sweep.
    pub residual_history: Vec<f64>,
}

pub const DEFAULT_ITERATIONS: usize = 500;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Poisson problem `A φ = b` where `A` is the Neumann 5-point Laplacian with
/// mirrored ghost nodes and `b` folds in the boundary flux terms.
struct Poisson<'a> {
    g: &'a GridField,
    b: Vec<f64>,
    cx: f64,
    cy: f64,
}

impl<'a> Poisson<'a> {
    fn new(field: &'a GridField) -> Self {
        let g = field;
        let (nx, ny) = (g.nx, g.ny);
        let cx = 1.0 / (g.hx * g.hx);
        let cy = 1.0 / (g.hy * g.hy);
        let mean = |vals: &mut dyn Iterator<Item = f64>| {
            let (s, n) = vals.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
            s / n as f64
        };
        // ∂φ/∂x on the left/right sides and ∂φ/∂y on the bottom/top sides.
        let gl = mean(&mut (0..ny).map(|j| g.u[g.idx(0, j)]));
        let gr = mean(&mut (0..ny).map(|j| g.u[g.idx(nx - 1, j)]));
        let gb = mean(&mut (0..nx).map(|i| g.v[g.idx(i, 0)]));
        let gt = mean(&mut (0..nx).map(|i| g.v[g.idx(i, ny - 1)]));

        let mut b = g.divergence();
        for j in 0..ny {
            b[g.idx(0, j)] += 2.0 * gl / g.hx;
            b[g.idx(nx - 1, j)] -= 2.0 * gr / g.hx;
        }
        for i in 0..nx {
            b[g.idx(i, 0)] += 2.0 * gb / g.hy;
            b[g.idx(i, ny - 1)] -= 2.0 * gt / g.hy;
        }
        // Project onto the range of A (trapezoid-weighted mean zero) so the
        // singular system stays consistent under discretization error.
        let w = |i: usize, j: usize| {
            let wi = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
            let wj = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
            wi * wj
        };
        let (mut sw, mut swb) = (0.0, 0.0);
        for j in 0..ny {
            for i in 0..nx {
                sw += w(i, j);
                swb += w(i, j) * b[g.idx(i, j)];
            }
        }
        let shift = swb / sw;
        b.iter_mut().for_each(|v| *v -= shift);
        Self { g, b, cx, cy }
    }

    /// Sum of the neighbour terms at node (i, j), with mirrored ghosts.
    fn neighbours(&self, phi: &[f64], i: usize, j: usize) -> f64 {
        let g = self.g;
        let left = if i == 0 { 1 } else { i - 1 };
        let right = if i == g.nx - 1 { g.nx - 2 } else { i + 1 };
        let down = if j == 0 { 1 } else { j - 1 };
        let up = if j == g.ny - 1 { g.ny - 2 } else { j + 1 };
        self.cx * (phi[g.idx(left, j)] + phi[g.idx(right, j)]) + self.cy * (phi[g.idx(i, down)] + phi[g.idx(i, up)])
    }

    fn diag(&self) -> f64 {
        2.0 * (self.cx + self.cy)
    }

    fn sweep(&self, phi: &mut [f64]) {
        let d = self.diag();
        for j in 0..self.g.ny {
            for i in 0..self.g.nx {
                let k = self.g.idx(i, j);
                phi[k] = (self.neighbours(phi, i, j) - self.b[k]) / d;
            }
        }
    }

    fn residual(&self, phi: &[f64]) -> f64 {
        let d = self.diag();
        let mut worst: f64 = 0.0;
        for j in 0..self.g.ny {
            for i in 0..self.g.nx {
                let k = self.g.idx(i, j);
                let lap = self.neighbours(phi, i, j) - d * phi[k];
                worst = worst.max((self.b[k] - lap).abs());
            }
        }
        worst
    }
}

fn remove_mean(phi: &mut [f64]) {
    let mean = phi.iter().sum::<f64>() / phi.len() as f64;
    phi.iter_mut().for_each(|v| *v -= mean);
}

/// Helmholtz decomposition by Gauss–Seidel. Hitting the iteration cap above
/// `tolerance` is not an error: the result is returned with
/// `converged == false` and its residual.
pub fn decompose(field: &GridField, iterations: usize, tolerance: f64) -> Result<Decomposition> {
    if iterations < 1 {
        return Err(Error::InvalidArgument("need at least one Gauss-Seidel iteration".into()));
    }
    if field.u.iter().chain(&field.v).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("field contains non-finite values".into()));
    }
    let problem = Poisson::new(field);
    let mut phi = vec![0.0; field.nx * field.ny];
    let mut history = Vec::new();
    let mut residual = problem.residual(&phi);
    let mut done = 0;
    while done < iterations && residual > tolerance {
        problem.sweep(&mut phi);
        // The null space of A is the constants; keep the iterate centred.
        remove_mean(&mut phi);
        residual = problem.residual(&phi);
        history.push(residual);
        done += 1;
    }
    Ok(finish(field, phi, residual, done, residual <= tolerance, history))
}

fn finish(
    field: &GridField,
    potential: Vec<f64>,
    residual_norm: f64,
    iterations: usize,
    converged: bool,
    residual_history: Vec<f64>,
) -> Decomposition {
    let mut irr = field.clone();
    let mut rot = field.clone();
    for j in 0..field.ny {
        for i in 0..field.nx {
            let k = field.idx(i, j);
            irr.u[k] = d_dx(&potential, field, i, j);
            irr.v[k] = d_dy(&potential, field, i, j);
            rot.u[k] = field.u[k] - irr.u[k];
            rot.v[k] = field.v[k] - irr.v[k];
        }
    }
    Decomposition {
        irrotational: irr,
        rotational: rot,
        potential,
        residual_norm,
        iterations,
        converged,
        residual_history,
    }
}

impl Decomposition {
    /// Recomputes the parts after re-centring `φ`; adding a constant to the
    /// potential leaves the decomposition unchanged.
    pub fn regauged(&self, field: &GridField, offset: f64) -> Decomposition {
        let mut phi: Vec<f64> = self.potential.iter().map(|v| v + offset).collect();
        remove_mean(&mut phi);
        finish(
            field,
            phi,
            self.residual_norm,
            self.iterations,
            self.converged,
            self.residual_history.clone(),
        )
    }

    /// Export lines `u v u_irr v_irr u_rot v_rot phi` after an ocean-style
    /// header, rows of constant `y`.
    pub fn format(&self, field: &GridField) -> String {
        format_export(field, self, None)
    }
}

pub(crate) fn format_export(field: &GridField, dec: &Decomposition, extra: Option<&[f64]>) -> String {
    let h = field.header();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {} {} {} {} {} {}",
        h.frames, h.rows, h.cols, h.lon0, h.lon_step, h.lat0, h.lat_step, h.t_step_days
    );
    for k in 0..field.nx * field.ny {
        let _ = write!(
            out,
            "{} {} {} {} {} {} {}",
            field.u[k],
            field.v[k],
            dec.irrotational.u[k],
            dec.irrotational.v[k],
            dec.rotational.u[k],
            dec.rotational.v[k],
            dec.potential[k]
        );
        if let Some(e) = extra {
            let _ = write!(out, " {}", e[k]);
        }
        out.push('\n');
    }
    out
}

/// Learned counterpart of [`decompose`]: the model's total, dissipative and
/// conservative fields on a node grid at time `t`, with `D` in place of `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrid {
    pub total: GridField,
    pub decomposition: Decomposition,
    /// Learned Hamiltonian (stream function) at each node.
    pub hamiltonian: Vec<f64>,
}

pub fn model_decomposition(
    model: &Model,
    nx: usize,
    ny: usize,
    bounds: [f64; 4],
    t: f64,
    dissipation_scale: f64,
) -> Result<ModelGrid> {
    let (ham, dis) = match model {
        Model::Baseline(_) => {
            return Err(Error::Unsupported("decomposition of a baseline model".into()));
        }
        Model::Hamiltonian(h) => (h, None),
        Model::Dissipative {
            hamiltonian,
            dissipation,
        } => (hamiltonian, Some(dissipation)),
    };
    let mut total = GridField::zeros(nx, ny, bounds)?;
    let mut irr = total.clone();
    let mut rot = total.clone();
    let mut phi = vec![0.0; nx * ny];
    let mut psi = vec![0.0; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let k = total.idx(i, j);
            let x = PhasePoint::at_time(total.x(i), total.y(j), t);
            let parts = eval_field(model, &x, dissipation_scale)?.parts()?;
            let input = x.features(model.input_dim());
            psi[k] = ham.value(&input)?;
            if let Some(d) = dis {
                phi[k] = dissipation_scale * d.value(&input)?;
            }
            (rot.u[k], rot.v[k]) = parts.conservative;
            (irr.u[k], irr.v[k]) = parts.dissipative;
            total.u[k] = rot.u[k] + irr.u[k];
            total.v[k] = rot.v[k] + irr.v[k];
        }
    }
    Ok(ModelGrid {
        total,
        decomposition: Decomposition {
            irrotational: irr,
            rotational: rot,
            potential: phi,
            residual_norm: 0.0,
            iterations: 0,
            converged: true,
            residual_history: Vec::new(),
        },
        hamiltonian: psi,
    })
}

impl ModelGrid {
    /// The decomposition export with a trailing `psi` column holding `H`.
    pub fn format(&self) -> String {
        format_export(&self.total, &self.decomposition, Some(&self.hamiltonian))
    }
}

/// Mean squared error of both components against the truth, over interior
/// nodes and all four scalar entries.
pub fn decomposition_error(dec: &Decomposition, truth_irr: &GridField, truth_rot: &GridField) -> Result<f64> {
    let g = &dec.irrotational;
    if !g.same_grid(truth_irr) || !g.same_grid(truth_rot) {
        return Err(Error::GridMismatch(format!(
            "decomposition is {}x{}, truth is {}x{} / {}x{}",
            g.nx, g.ny, truth_irr.nx, truth_irr.ny, truth_rot.nx, truth_rot.ny
        )));
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for k in g.interior() {
        acc += (dec.irrotational.u[k] - truth_irr.u[k]).powi(2)
            + (dec.irrotational.v[k] - truth_irr.v[k]).powi(2)
            + (dec.rotational.u[k] - truth_rot.u[k]).powi(2)
            + (dec.rotational.v[k] - truth_rot.v[k]).powi(2);
        n += 4;
    }
    Ok(acc / n as f64)
}

/// Max-norm of a field over interior nodes.
pub fn interior_max_norm(g: &GridField) -> f64 {
    g.interior()
        .map(|k| g.u[k].abs().max(g.v[k].abs()))
        .fold(0.0, f64::max)
}
