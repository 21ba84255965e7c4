//! Dataset generation, ingestion, normalization and splitting.
//!
//! Text formats:
//!
//! * sample file: one `t q p dq_dt dp_dt` record per line, `#` comments;
//! * pendulum raw file: blocks of `time q p` lines separated by blank lines;
//! * ocean grid file: header `frames rows cols lon0 lon_step lat0 lat_step
//!   t_step_days`, then `frames·rows·cols` lines of `u v` (frame-major, then
//!   row-major); `nan nan` marks a masked point.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::PhasePoint;
use crate::integrators::{integrate, TrajectorySpec};
use crate::systems::{Pendulum, Spring};
use crate::{Error, Result};

/// One supervised record: state, (normalized) time and target derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub q: f64,
    pub p: f64,
    pub t: f64,
    pub dq_dt: f64,
    pub dp_dt: f64,
}

impl PhaseSample {
    pub fn point(&self) -> PhasePoint {
        PhasePoint::at_time(self.q, self.p, self.t)
    }

    fn is_finite(&self) -> bool {
        [self.q, self.p, self.t, self.dq_dt, self.dp_dt]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringConfig {
    pub spring: Spring,
    pub n_samples: usize,
    /// `[q_min, q_max, p_min, p_max]`.
    pub region: [f64; 4],
}

impl Default for SpringConfig {
    fn default() -> Self {
        Self {
            spring: Spring::default(),
            n_samples: 2000,
            region: [-2.0, 2.0, -2.0, 2.0],
        }
    }
}

/// Uniform samples over the configured box with analytic targets.
pub fn generate_spring(cfg: &SpringConfig, seed: u64) -> Result<Vec<PhaseSample>> {
    cfg.spring.validate()?;
    let [q0, q1, p0, p1] = cfg.region;
    if !(q1 > q0 && p1 > p0) || cfg.region.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("empty sample region {:?}", cfg.region)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..cfg.n_samples)
        .map(|_| {
            let q = rng.gen_range(q0..q1);
            let p = rng.gen_range(p0..p1);
            let (dq_dt, dp_dt) = cfg.spring.field(q, p);
            PhaseSample {
                q,
                p,
                t: 0.0,
                dq_dt,
                dp_dt,
            }
        })
        .collect())
}

/// Spring samples placed exactly on a `n × n` grid over the region.
pub fn spring_grid(cfg: &SpringConfig, n: usize) -> Vec<PhaseSample> {
    let [q0, q1, p0, p1] = cfg.region;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let p = p0 + (p1 - p0) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let q = q0 + (q1 - q0) * j as f64 / (n - 1) as f64;
            let (dq_dt, dp_dt) = cfg.spring.field(q, p);
            out.push(PhaseSample {
                q,
                p,
                t: 0.0,
                dq_dt,
                dp_dt,
            });
        }
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_fields<const N: usize>(line: &str, lineno: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    let mut it = line.split_whitespace();
    for (i, slot) in out.iter_mut().enumerate() {
        let tok = it
            .next()
            .ok_or_else(|| Error::parse(lineno, format!("expected {N} fields, found {i}")))?;
        *slot = tok
            .parse()
            .map_err(|_| Error::parse(lineno, format!("not a number: `{tok}`")))?;
    }
    if it.next().is_some() {
        return Err(Error::parse(lineno, format!("expected {N} fields, found more")));
    }
    Ok(out)
}

pub fn format_samples(samples: &[PhaseSample]) -> String {
    let mut out = String::with_capacity(samples.len() * 64);
    for s in samples {
        let _ = writeln!(out, "{} {} {} {} {}", s.t, s.q, s.p, s.dq_dt, s.dp_dt);
    }
    out
}

pub fn parse_samples(text: &str) -> Result<Vec<PhaseSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let [t, q, p, dq_dt, dp_dt] = parse_fields::<5>(line, i + 1)?;
        let s = PhaseSample {
            q,
            p,
            t,
            dq_dt,
            dp_dt,
        };
        if !s.is_finite() {
            return Err(Error::parse(i + 1, "non-finite value"));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn write_samples(path: &Path, samples: &[PhaseSample]) -> Result<()> {
    write_text(path, &format_samples(samples))
}

pub fn read_samples(path: &Path) -> Result<Vec<PhaseSample>> {
    parse_samples(&read_text(path)?)
}

/// One recorded `(time, q, p)` trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumData {
    pub trajectories: Vec<RecordedTrajectory>,
    pub samples: Vec<PhaseSample>,
}

/// Derivative estimates along one trajectory: central differences inside,
/// one-sided at the two ends.
fn finite_difference_targets(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

/// Parses the pendulum raw format and estimates target derivatives.
pub fn parse_pendulum(text: &str) -> Result<PendulumData> {
    let mut blocks: Vec<Vec<(usize, [f64; 3])>> = vec![Vec::new()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            if !blocks.last().unwrap().is_empty() {
                blocks.push(Vec::new());
            }
            continue;
        }
        let row = parse_fields::<3>(line, i + 1)?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(i + 1, "non-finite value"));
        }
        blocks.last_mut().unwrap().push((i + 1, row));
    }
    blocks.retain(|b| !b.is_empty());
    if blocks.is_empty() {
        return Err(Error::parse(0, "no pendulum records"));
    }
    let mut trajectories = Vec::new();
    let mut samples = Vec::new();
    for block in blocks {
        let first_line = block[0].0;
        if block.len() < 3 {
            return Err(Error::parse(
                first_line,
                format!("trajectory has {} rows, need at least 3", block.len()),
            ));
        }
        for w in block.windows(2) {
            if w[1].1[0] <= w[0].1[0] {
                return Err(Error::parse(w[1].0, "time is not strictly increasing"));
            }
        }
        let times: Vec<f64> = block.iter().map(|r| r.1[0]).collect();
        let qs: Vec<f64> = block.iter().map(|r| r.1[1]).collect();
        let ps: Vec<f64> = block.iter().map(|r| r.1[2]).collect();
        let dq = finite_difference_targets(&times, &qs);
        let dp = finite_difference_targets(&times, &ps);
        for i in 0..times.len() {
            samples.push(PhaseSample {
                q: qs[i],
                p: ps[i],
                t: 0.0,
                dq_dt: dq[i],
                dp_dt: dp[i],
            });
        }
        trajectories.push(RecordedTrajectory {
            times,
            states: qs.into_iter().zip(ps).map(|(q, p)| [q, p]).collect(),
        });
    }
    Ok(PendulumData { trajectories, samples })
}

pub fn ingest_pendulum(path: &Path) -> Result<PendulumData> {
    parse_pendulum(&read_text(path)?)
}

/// Simulated damped-pendulum recordings in the pendulum raw format, one block
/// per initial state, sampled every `dt` over `[0, duration]`.
pub fn synthetic_pendulum(pendulum: &Pendulum, initial: &[[f64; 2]], duration: f64, dt: f64) -> Result<String> {
    if !(dt > 0.0 && duration > dt) {
        return Err(Error::InvalidArgument("need 0 < dt < duration".into()));
    }
    let n = (duration / dt).round() as usize;
    let times: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let mut out = String::new();
    for (k, &[q0, p0]) in initial.iter().enumerate() {
        let spec = TrajectorySpec {
            initial: PhasePoint::new(q0, p0),
            t_span: [0.0, times[n]],
            rel_tol: 1e-10,
            abs_tol: 1e-10,
            eval_times: times.clone(),
        };
        let traj = integrate(
            |_t, [q, p]| {
                let (a, b) = pendulum.field(q, p);
                [a, b]
            },
            &spec,
        )?;
        if k > 0 {
            out.push('\n');
        }
        for (t, [q, p]) in traj.times.iter().zip(&traj.states) {
            let _ = writeln!(out, "{t} {q} {p}");
        }
    }
    Ok(out)
}

/// Affine map of one input coordinate onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub offset: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: 1.0,
        offset: 0.0,
    };

    /// Maps `min → -1` and `max → +1`; a degenerate range maps to 0.
    pub fn from_range(min: f64, max: f64) -> Self {
        if max > min {
            let scale = 2.0 / (max - min);
            Affine {
                scale,
                offset: -1.0 - min * scale,
            }
        } else {
            Affine {
                scale: 0.0,
                offset: 0.0,
            }
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// Per-input normalization `(q, p, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub q: Affine,
    pub p: Affine,
    pub t: Affine,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            q: Affine::IDENTITY,
            p: Affine::IDENTITY,
            t: Affine::IDENTITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OceanHeader {
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
    pub lon0: f64,
    pub lon_step: f64,
    pub lat0: f64,
    pub lat_step: f64,
    pub t_step_days: f64,
}

impl OceanHeader {
    pub fn len(&self) -> usize {
        self.frames * self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lon(&self, col: usize) -> f64 {
        self.lon0 + col as f64 * self.lon_step
    }

    pub fn lat(&self, row: usize) -> f64 {
        self.lat0 + row as f64 * self.lat_step
    }

    pub fn day(&self, frame: usize) -> f64 {
        frame as f64 * self.t_step_days
    }

    /// Normalization sending the grid's extent and frame range onto `[-1, 1]`.
    pub fn normalization(&self) -> Normalization {
        let lons = (self.lon(0), self.lon(self.cols.saturating_sub(1)));
        let lats = (self.lat(0), self.lat(self.rows.saturating_sub(1)));
        Normalization {
            q: Affine::from_range(lons.0.min(lons.1), lons.0.max(lons.1)),
            p: Affine::from_range(lats.0.min(lats.1), lats.0.max(lats.1)),
            t: Affine::from_range(0.0, self.day(self.frames.saturating_sub(1))),
        }
    }
}

/// Gridded velocity frames; masked points hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct OceanFrameSet {
    pub header: OceanHeader,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl OceanFrameSet {
    pub fn index(&self, frame: usize, row: usize, col: usize) -> usize {
        (frame * self.header.rows + row) * self.header.cols + col
    }

    pub fn format(&self) -> String {
        let h = &self.header;
        let mut out = String::with_capacity(h.len() * 40 + 80);
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            h.frames, h.rows, h.cols, h.lon0, h.lon_step, h.lat0, h.lat_step, h.t_step_days
        );
        for (u, v) in self.u.iter().zip(&self.v) {
            if u.is_finite() && v.is_finite() {
                let _ = writeln!(out, "{u} {v}");
            } else {
                out.push_str("nan nan\n");
            }
        }
        out
    }

    /// One sample per unmasked point with normalized `(x, y, t)` inputs and
    /// raw `(u, v)` targets.
    pub fn samples(&self) -> Vec<PhaseSample> {
        let h = &self.header;
        let norm = h.normalization();
        let mut out = Vec::with_capacity(h.len());
        for f in 0..h.frames {
            let t = norm.t.normalize(h.day(f));
            for r in 0..h.rows {
                let y = norm.p.normalize(h.lat(r));
                for c in 0..h.cols {
                    let i = self.index(f, r, c);
                    if !(self.u[i].is_finite() && self.v[i].is_finite()) {
                        continue;
                    }
                    out.push(PhaseSample {
                        q: norm.q.normalize(h.lon(c)),
                        p: y,
                        t,
                        dq_dt: self.u[i],
                        dp_dt: self.v[i],
                    });
                }
            }
        }
        out
    }

    pub fn masked_count(&self) -> usize {
        self.u
            .iter()
            .zip(&self.v)
            .filter(|(u, v)| !(u.is_finite() && v.is_finite()))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OceanData {
    pub frames: OceanFrameSet,
    pub samples: Vec<PhaseSample>,
    /// Masked (sentinel) points that produced no sample.
    pub dropped: usize,
}

pub fn parse_ocean(text: &str) -> Result<OceanData> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header_line) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let toks: Vec<&str> = header_line.split_whitespace().collect();
    if toks.len() != 8 {
        return Err(Error::parse(hl, format!("header needs 8 fields, found {}", toks.len())));
    }
    let count = |i: usize| -> Result<usize> {
        toks[i]
            .parse::<usize>()
            .map_err(|_| Error::parse(hl, format!("bad count `{}`", toks[i])))
    };
    let real = |i: usize| -> Result<f64> {
        toks[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(hl, format!("bad number `{}`", toks[i])))
    };
    let header = OceanHeader {
        frames: count(0)?,
        rows: count(1)?,
        cols: count(2)?,
        lon0: real(3)?,
        lon_step: real(4)?,
        lat0: real(5)?,
        lat_step: real(6)?,
        t_step_days: real(7)?,
    };
    let n = header.len();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (lineno, line) in lines {
        if u.len() == n {
            return Err(Error::parse(lineno, format!("more than the {n} rows declared in the header")));
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::parse(lineno, "expected `u v`"));
        };
        let parse = |tok: &str| -> Result<f64> {
            if tok.eq_ignore_ascii_case("nan") {
                return Ok(f64::NAN);
            }
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad velocity `{tok}`")))
        };
        let (uv, vv) = (parse(a)?, parse(b)?);
        if uv.is_nan() != vv.is_nan() {
            return Err(Error::parse(lineno, "partially masked point"));
        }
        u.push(uv);
        v.push(vv);
    }
    if u.len() != n {
        return Err(Error::parse(
            0,
            format!("header declares {n} points, file has {}", u.len()),
        ));
    }
    let frames = OceanFrameSet { header, u, v };
    let samples = frames.samples();
    let dropped = frames.masked_count();
    Ok(OceanData {
        frames,
        samples,
        dropped,
    })
}

pub fn ingest_ocean(path: &Path) -> Result<OceanData> {
    parse_ocean(&read_text(path)?)
}

/// Known time-varying current on normalized coordinates: a drifting eddy
/// given by a stream function plus a moving upwelling cell given by a
/// velocity potential. Returns `(conservative, dissipative)` velocities.
pub fn synthetic_current(x: f64, y: f64, t: f64) -> ((f64, f64), (f64, f64)) {
    let bump = |amp: f64, cx: f64, cy: f64, s: f64| {
        let g = amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / s).exp();
        (-2.0 * (x - cx) / s * g, -2.0 * (y - cy) / s * g)
    };
    let (psi_x, psi_y) = bump(0.5, 0.3 * t, 0.2, 0.3);
    let phi = bump(0.3, -0.4, -0.3 + 0.2 * t, 0.25);
    ((psi_y, -psi_x), phi)
}

/// Frames of [`synthetic_current`] on an `n`×`n` grid spanning `[-1, 1]²`,
/// five days apart.
pub fn synthetic_ocean(frames: usize, n: usize) -> Result<OceanFrameSet> {
    if frames < 2 || n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 frames of 3x3, got {frames} of {n}x{n}"
        )));
    }
    let step = 2.0 / (n - 1) as f64;
    let header = OceanHeader {
        frames,
        rows: n,
        cols: n,
        lon0: -1.0,
        lon_step: step,
        lat0: -1.0,
        lat_step: step,
        t_step_days: 5.0,
    };
    let norm = header.normalization();
    let mut u = Vec::with_capacity(header.len());
    let mut v = Vec::with_capacity(header.len());
    for f in 0..frames {
        let t = norm.t.normalize(header.day(f));
        for r in 0..n {
            for c in 0..n {
                let ((cu, cv), (du, dv)) = synthetic_current(header.lon(c), header.lat(r), t);
                u.push(cu + du);
                v.push(cv + dv);
            }
        }
    }
    Ok(OceanFrameSet { header, u, v })
}

/// Shuffled 80/20 split of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<PhaseSample>,
    pub test: Vec<PhaseSample>,
    pub normalization: Normalization,
}

pub const TRAIN_FRACTION_PERCENT: usize = 80;

/// Shuffles with `seed` and keeps the first 80% for training.
pub fn split(samples: &[PhaseSample], seed: u64) -> Result<SplitDataset> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (samples.len() * TRAIN_FRACTION_PERCENT / 100).clamp(1, samples.len() - 1);
    let test = shuffled.split_off(n_train);
    Ok(SplitDataset {
        train: shuffled,
        test,
        normalization: Normalization::default(),
    })
}

impl SplitDataset {
    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Endless batch stream over the training set; each epoch visits the
    /// samples once in a fresh seeded order and ends with any short batch.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Result<Batches<'_>> {
        if batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.train.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        let mut b = Batches {
            data: &self.train,
            order: (0..self.train.len()).collect(),
            pos: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buf: Vec::with_capacity(batch_size),
        };
        b.order.shuffle(&mut b.rng);
        Ok(b)
    }
}

/// Shuffle-then-split convenience returning the split and its batch stream seed.
pub fn split_and_batch(samples: &[PhaseSample], seed: u64, batch_size: usize) -> Result<SplitDataset> {
    let ds = split(samples, seed)?;
    ds.batches(batch_size, seed)?;
    Ok(ds)
}

pub struct Batches<'a> {
    data: &'a [PhaseSample],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
    buf: Vec<PhaseSample>,
}

impl Batches<'_> {
    /// Next batch; the returned slice is valid until the following call.
    pub fn next_batch(&mut self) -> &[PhaseSample] {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        self.buf.clear();
        self.buf
            .extend(self.order[self.pos..end].iter().map(|&i| self.data[i]));
        self.pos = end;
        &self.buf
    }
}
