//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero when any criterion fails.
//!
//! Set `DHNN_PENDULUM_FILE` to a recorded pendulum file (blocks of `t q p`)
//! to run the pendulum criterion on real data instead of a simulation.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use dhnn_core::autodiff::{finite_difference_check, relative_error, Tape, Var};
use dhnn_core::datasets::{
    generate_spring, ingest_pendulum, parse_pendulum, split, synthetic_current, synthetic_ocean, synthetic_pendulum,
    PendulumData, SplitDataset, SpringConfig,
};
use dhnn_core::dynamics::{self, eval_field, field_on_tape, vector_field, PhasePoint};
use dhnn_core::helmgrid::{self, bounding_box, decompose, decomposition_error, rasterize, GridField, VectorSample};
use dhnn_core::integrators::{integrate, Trajectory, TrajectorySpec};
use dhnn_core::metrics::{energy_mse, test_mse, trajectory_mse};
use dhnn_core::models::{Model, ModelKind};
use dhnn_core::systems::{Pendulum, Spring, Task};
use dhnn_core::training::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- criterion 1

/// Random expression over three inputs; division and the domain of every op
/// are kept well conditioned.
#[derive(Debug, Clone)]
enum Expr {
    Input(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    DivSoft(Box<Expr>, Box<Expr>),
    Tanh(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Square(Box<Expr>),
    Scale(f64, Box<Expr>),
    Shift(f64, Box<Expr>),
}

fn random_expr(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.15) {
        return if rng.gen_bool(0.8) {
            Expr::Input(rng.gen_range(0..3))
        } else {
            Expr::Const(rng.gen_range(-2.0..2.0))
        };
    }
    fn sub(rng: &mut ChaCha8Rng, depth: usize) -> Box<Expr> {
        Box::new(random_expr(rng, depth - 1))
    }
    match rng.gen_range(0..11) {
        0 => Expr::Add(sub(rng, depth), sub(rng, depth)),
        1 => Expr::Sub(sub(rng, depth), sub(rng, depth)),
        2 => Expr::Mul(sub(rng, depth), sub(rng, depth)),
        3 => Expr::DivSoft(sub(rng, depth), sub(rng, depth)),
        4 => Expr::Tanh(sub(rng, depth)),
        5 => Expr::Sin(sub(rng, depth)),
        6 => Expr::Cos(sub(rng, depth)),
        7 => Expr::Square(sub(rng, depth)),
        8 => Expr::Scale(rng.gen_range(-1.5..1.5), sub(rng, depth)),
        9 => Expr::Shift(rng.gen_range(-1.0..1.0), sub(rng, depth)),
        _ => Expr::Tanh(Box::new(Expr::Mul(sub(rng, depth), sub(rng, depth)))),
    }
}

impl Expr {
    fn build<'t>(&self, tape: &'t Tape, x: &[Var<'t>]) -> Var<'t> {
        match self {
            Expr::Input(i) => x[*i],
            Expr::Const(c) => tape.constant(*c),
            Expr::Add(a, b) => a.build(tape, x) + b.build(tape, x),
            Expr::Sub(a, b) => a.build(tape, x) - b.build(tape, x),
            Expr::Mul(a, b) => a.build(tape, x) * b.build(tape, x),
            // a / (1 + b²) keeps the denominator away from zero.
            Expr::DivSoft(a, b) => a.build(tape, x) / (b.build(tape, x).square() + 1.0),
            Expr::Tanh(a) => a.build(tape, x).tanh(),
            Expr::Sin(a) => a.build(tape, x).sin(),
            Expr::Cos(a) => a.build(tape, x).cos(),
            // Squares of deep subtrees can explode; damp them through tanh.
            Expr::Square(a) => a.build(tape, x).tanh().square(),
            Expr::Scale(c, a) => a.build(tape, x).scale(*c),
            Expr::Shift(c, a) => a.build(tape, x).shift(*c),
        }
    }
}

fn criterion_gradients() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_first: f64 = 0.0;
    let mut worst_second: f64 = 0.0;
    for _ in 0..1000 {
        let e = random_expr(&mut rng, 5);
        let point: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst_first = worst_first.max(finite_difference_check(|t, x| e.build(t, x), &point, 1e-5));
        // Directional second derivative: gradient of w·∇f built from adjoint nodes.
        worst_second = worst_second.max(finite_difference_check(
            |t, x| {
                let f = e.build(t, x);
                let g = t.gradient_as_nodes(f, x).expect("same tape");
                let terms: Vec<_> = g.iter().zip(&w).map(|(gi, wi)| gi.scale(*wi)).collect();
                t.sum(&terms)
            },
            &point,
            1e-5,
        ));
    }

    // Parameter gradients of the training loss on 8-neuron networks.
    let mut worst_loss: f64 = 0.0;
    for (kind, dim) in [(ModelKind::Dissipative, 2), (ModelKind::Hamiltonian, 3), (ModelKind::Baseline, 2)] {
        let model = Model::init_with_width(kind, dim, 8, 11).unwrap();
        let batch: Vec<_> = (0..4)
            .map(|_| dhnn_core::datasets::PhaseSample {
                q: rng.gen_range(-2.0..2.0),
                p: rng.gen_range(-2.0..2.0),
                t: rng.gen_range(-1.0..1.0),
                dq_dt: rng.gen_range(-1.0..1.0),
                dp_dt: rng.gen_range(-1.0..1.0),
            })
            .collect();
        let tape = Tape::new();
        let taped = model.on_tape(&tape, true);
        let loss = dynamics::loss_on_tape(&tape, &taped, dim, &batch).unwrap();
        let engine = tape.gradient(loss, &taped.params()).unwrap();
        let (_, batched) = dynamics::loss_and_gradient(&model, &batch).unwrap();
        let params = model.params();
        let mut probe = model.clone();
        for (i, (&g, &gb)) in engine.iter().zip(&batched.params()).enumerate() {
            let mut shifted = params.clone();
            shifted[i] += 1e-5;
            probe.set_params(&shifted).unwrap();
            let hi = dynamics::loss(&probe, &batch).unwrap();
            shifted[i] -= 2e-5;
            probe.set_params(&shifted).unwrap();
            let lo = dynamics::loss(&probe, &batch).unwrap();
            let fd = (hi - lo) / 2e-5;
            worst_loss = worst_loss.max(relative_error(g, fd)).max(relative_error(gb, fd));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst_first <= 1e-4 && worst_second <= 1e-4 && worst_loss <= 1e-4 && secs < 10.0,
        format!(
            "max rel err first {worst_first:.1e}, second {worst_second:.1e}, loss params {worst_loss:.1e} (<= 1e-4); {secs:.1}s (< 10s)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn criterion_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_div: f64 = 0.0;
    let mut worst_curl: f64 = 0.0;
    for seed in 0..4 {
        let model = Model::init(ModelKind::Dissipative, 2, seed).unwrap();
        for _ in 0..25 {
            let tape = Tape::new();
            let taped = model.on_tape(&tape, false);
            let x = tape.inputs(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let f = field_on_tape(&tape, &taped, &x, 1.0).unwrap();
            let [cq, cp] = f.conservative.unwrap();
            let [dq, dp] = f.dissipative.unwrap();
            let div = tape.gradient(cq, &x).unwrap()[0] + tape.gradient(cp, &x).unwrap()[1];
            let curl = tape.gradient(dq, &x).unwrap()[1] - tape.gradient(dp, &x).unwrap()[0];
            worst_div = worst_div.max(div.abs());
            worst_curl = worst_curl.max(curl.abs());
        }
    }
    outcome(
        worst_div <= 1e-9 && worst_curl <= 1e-9,
        format!("100 points: max |div conservative| {worst_div:.1e}, max |curl dissipative| {worst_curl:.1e} (<= 1e-9)"),
    )
}

// ------------------------------------------------------------ spring training

struct SpringRuns {
    data: SplitDataset,
    models: Vec<(ModelKind, Model, f64)>,
    secs: f64,
}

fn spring_data() -> SplitDataset {
    let cfg = TrainConfig::default();
    let samples = generate_spring(&SpringConfig::default(), cfg.seed).unwrap();
    split(&samples, cfg.seed).unwrap()
}

fn train_spring() -> SpringRuns {
    let started = Instant::now();
    let data = spring_data();
    let cfg = TrainConfig::default();
    let models = ModelKind::ALL
        .into_iter()
        .map(|kind| {
            let model = Model::init(kind, 2, cfg.seed).unwrap();
            let (model, report) = train(model, &data, &cfg).unwrap();
            (kind, model, report.final_test_loss)
        })
        .collect();
    SpringRuns {
        data,
        models,
        secs: started.elapsed().as_secs_f64(),
    }
}

impl SpringRuns {
    fn get(&self, kind: ModelKind) -> (&Model, f64) {
        let (_, m, l) = self.models.iter().find(|(k, _, _)| *k == kind).unwrap();
        (m, *l)
    }
}

fn criterion_spring(runs: &SpringRuns) -> Outcome {
    let (_, dhnn) = runs.get(ModelKind::Dissipative);
    let (_, base) = runs.get(ModelKind::Baseline);
    let (hnn_model, hnn) = runs.get(ModelKind::Hamiltonian);
    // The reported loss and the metric share one definition.
    let same = test_mse(hnn_model, &runs.data.test).unwrap() == hnn;
    outcome(
        dhnn <= 5e-4 && base <= 5e-4 && hnn >= 1e-1 && runs.secs <= 900.0 && same,
        format!(
            "test MSE dhnn {dhnn:.2e} (<= 5e-4), baseline {base:.2e} (<= 5e-4), hnn {hnn:.2e} (>= 1e-1); {:.0}s (<= 900s)",
            runs.secs
        ),
    )
}

fn rollout(model: &Model, scale: f64, spec: &TrajectorySpec) -> Trajectory {
    let field = vector_field(model, scale);
    integrate(&field, spec).unwrap()
}

fn closed_form(spring: &Spring, spec: &TrajectorySpec) -> Trajectory {
    let (q0, p0) = (spec.initial.q, spec.initial.p);
    Trajectory {
        times: spec.eval_times.clone(),
        states: spec
            .eval_times
            .iter()
            .map(|&t| {
                let (q, p) = spring.solution(q0, p0, t);
                [q, p]
            })
            .collect(),
        accepted: 0,
        rejected: 0,
    }
}

fn criterion_energy(runs: &SpringRuns) -> Outcome {
    let spring = Spring::default();
    let spec = TrajectorySpec::uniform(PhasePoint::new(0.9, 0.0), 0.0, 20.0, 401);
    let truth = closed_form(&spring, &spec);
    let energy = |kind| {
        let traj = rollout(runs.get(kind).0, 1.0, &spec);
        energy_mse(&traj, &truth, |q, p| spring.energy(q, p)).unwrap()
    };
    let dhnn = energy(ModelKind::Dissipative);
    let hnn = energy(ModelKind::Hamiltonian);
    let ratio = hnn / dhnn;
    outcome(
        dhnn <= 1e-4 && ratio >= 100.0,
        format!("energy MSE dhnn {dhnn:.2e} (<= 1e-4), hnn {hnn:.2e}, ratio {ratio:.0} (>= 100)"),
    )
}

fn criterion_counterfactual(runs: &SpringRuns) -> Outcome {
    let (dhnn, _) = runs.get(ModelKind::Dissipative);
    let spec = TrajectorySpec::uniform(PhasePoint::new(0.9, 0.0), 0.0, 10.0, 201);
    let mut pass = true;
    let mut parts = Vec::new();
    for (scale, rho) in [(0.5, 1.0), (2.0, 4.0)] {
        let spring = Spring::with_rho(rho);
        let truth = closed_form(&spring, &spec);
        // Cross-check the closed form against the integrated analytic field.
        let integrated = integrate(
            |_t, [q, p]| {
                let (a, b) = spring.field(q, p);
                [a, b]
            },
            &spec,
        )
        .unwrap();
        let oracle_gap = trajectory_mse(&integrated, &truth).unwrap();
        let mse = trajectory_mse(&rollout(dhnn, scale, &spec), &truth).unwrap();
        pass &= mse <= 1e-2 && oracle_gap <= 1e-16;
        parts.push(format!("scale {scale} vs rho {rho}: {mse:.2e} (oracle gap {oracle_gap:.0e})"));
    }
    outcome(pass, format!("trajectory MSE {} (<= 1e-2)", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 6

fn criterion_grid() -> Outcome {
    let bounds = [-2.0, 2.0, -2.0, 2.0];
    let truth = |b: [f64; 4], n: usize| {
        (
            GridField::from_fn(n, n, b, |_q, p| (0.0, -2.0 * p)).unwrap(),
            GridField::from_fn(n, n, b, |q, p| (p, -q)).unwrap(),
        )
    };
    // The module's default sweep policy for both halves.
    let iterations = helmgrid::DEFAULT_ITERATIONS;
    let nodes = GridField::from_fn(50, 50, bounds, |q, p| (p, -q - 2.0 * p)).unwrap();
    let dec = decompose(&nodes, iterations, helmgrid::DEFAULT_TOLERANCE).unwrap();
    let (irr, rot) = truth(bounds, 50);
    let node_mse = decomposition_error(&dec, &irr, &rot).unwrap();

    let samples: Vec<VectorSample> = generate_spring(&SpringConfig::default(), 42)
        .unwrap()
        .iter()
        .map(|s| [s.q, s.p, s.dq_dt, s.dp_dt])
        .collect();
    let b = bounding_box(&samples);
    let raster = rasterize(&samples, 50, 50, b).unwrap();
    let scattered = decompose(&raster, iterations, helmgrid::DEFAULT_TOLERANCE).unwrap();
    let (irr, rot) = truth(b, 50);
    let scattered_mse = decomposition_error(&scattered, &irr, &rot).unwrap();
    outcome(
        node_mse <= 1e-3 && (2e-3..=2e-2).contains(&scattered_mse),
        format!(
            "grid-node MSE {node_mse:.2e} (<= 1e-3), scattered MSE {scattered_mse:.2e} (in [2e-3, 2e-2]); {} sweeps, residual {:.1e}",
            dec.iterations, scattered.residual_norm
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn criterion_integrator() -> Outcome {
    let spec = TrajectorySpec::uniform(PhasePoint::new(1.0, 0.0), 0.0, 2.0 * std::f64::consts::PI, 2);
    let traj = integrate(|_t, [q, p]| [p, -q], &spec).unwrap();
    let [q, p] = traj.final_state().unwrap();
    let harmonic = (q - 1.0).abs().max(p.abs());
    let spring = Spring::default();
    let spec = TrajectorySpec::uniform(PhasePoint::new(0.9, 0.0), 0.0, 1.0, 2);
    let traj = integrate(
        |_t, [q, p]| {
            let (a, b) = spring.field(q, p);
            [a, b]
        },
        &spec,
    )
    .unwrap();
    let damped = (traj.final_state().unwrap()[0] - 0.9 * 2.0 * (-1.0f64).exp()).abs();
    outcome(
        harmonic <= 1e-8 && damped <= 1e-8,
        format!("harmonic error {harmonic:.1e}, critically damped q(1) error {damped:.1e} (<= 1e-8)"),
    )
}

// ---------------------------------------------------------------- criterion 8

const SYNTHETIC_PENDULUM_RHO: f64 = 0.2;

fn pendulum_data() -> (PendulumData, &'static str) {
    if let Ok(path) = std::env::var("DHNN_PENDULUM_FILE") {
        return (ingest_pendulum(Path::new(&path)).unwrap(), "recorded");
    }
    let pendulum = Pendulum {
        rho: SYNTHETIC_PENDULUM_RHO,
        ..Pendulum::default()
    };
    let initial = [[1.0, 0.0], [-1.5, 0.5], [0.5, -2.0], [2.0, 1.0]];
    let text = synthetic_pendulum(&pendulum, &initial, 20.0, 0.05).unwrap();
    (parse_pendulum(&text).unwrap(), "synthetic")
}

fn criterion_pendulum() -> Outcome {
    let (data, source) = pendulum_data();
    let cfg = TrainConfig::for_task(Task::Pendulum);
    let split_data = split(&data.samples, cfg.seed).unwrap();
    let reference = &data.trajectories[0];
    let [q0, p0] = reference.states[0];
    let t0 = reference.times[0];
    let spec = TrajectorySpec {
        initial: PhasePoint::new(q0, p0),
        t_span: [t0, *reference.times.last().unwrap()],
        rel_tol: 1e-10,
        abs_tol: 1e-10,
        eval_times: reference.times.clone(),
    };
    let truth = Trajectory {
        times: reference.times.clone(),
        states: reference.states.clone(),
        accepted: 0,
        rejected: 0,
    };
    let pendulum = Pendulum::default();
    let mut energies = Vec::new();
    let mut dhnn_test = f64::NAN;
    for kind in [ModelKind::Dissipative, ModelKind::Baseline, ModelKind::Hamiltonian] {
        let model = Model::init(kind, 2, cfg.seed).unwrap();
        let (model, report) = train(model, &split_data, &cfg).unwrap();
        if kind == ModelKind::Dissipative {
            dhnn_test = report.final_test_loss;
        }
        let traj = rollout(&model, 1.0, &spec);
        energies.push(energy_mse(&traj, &truth, |q, p| pendulum.energy(q, p)).unwrap());
    }
    let ordered = energies[0] <= energies[1] && energies[1] <= energies[2];
    let mse_ok = source == "synthetic" || dhnn_test <= 3e-3;
    outcome(
        ordered && mse_ok,
        format!(
            "{source} data: dhnn test MSE {dhnn_test:.2e}{}; energy MSE dhnn {:.2e} <= baseline {:.2e} <= hnn {:.2e}",
            if source == "synthetic" { "" } else { " (<= 3e-3)" },
            energies[0],
            energies[1],
            energies[2]
        ),
    )
}

// ---------------------------------------------------------------- criterion 9

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn criterion_ocean() -> Outcome {
    let frames = synthetic_ocean(69, 20).unwrap();
    let h = frames.header;
    let cfg = TrainConfig::for_task(Task::Ocean);
    let data = split(&frames.samples(), cfg.seed).unwrap().with_normalization(h.normalization());
    let norm = h.normalization();

    let (dhnn, dhnn_report) = train(Model::init(ModelKind::Dissipative, 3, cfg.seed).unwrap(), &data, &cfg).unwrap();
    let (_, hnn_report) = train(Model::init(ModelKind::Hamiltonian, 3, cfg.seed).unwrap(), &data, &cfg).unwrap();

    let mut cons_r = Vec::new();
    let mut diss_r = Vec::new();
    for f in 0..h.frames {
        let t = norm.t.normalize(h.day(f));
        let (mut pc, mut tc, mut pd, mut td) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for r in 1..h.rows - 1 {
            for c in 1..h.cols - 1 {
                let (x, y) = (norm.q.normalize(h.lon(c)), norm.p.normalize(h.lat(r)));
                let parts = eval_field(&dhnn, &PhasePoint::at_time(x, y, t), 1.0).unwrap().parts().unwrap();
                let (truth_c, truth_d) = synthetic_current(x, y, t);
                pc.extend([parts.conservative.0, parts.conservative.1]);
                tc.extend([truth_c.0, truth_c.1]);
                pd.extend([parts.dissipative.0, parts.dissipative.1]);
                td.extend([truth_d.0, truth_d.1]);
            }
        }
        cons_r.push(pearson(&pc, &tc));
        diss_r.push(pearson(&pd, &td));
    }
    let (rc, rd) = (median(cons_r), median(diss_r));
    let (md, mh) = (dhnn_report.final_test_loss, hnn_report.final_test_loss);
    outcome(
        rc >= 0.9 && rd >= 0.9 && md <= mh,
        format!(
            "median Pearson conservative {rc:.3}, dissipative {rd:.3} (>= 0.9); test MSE dhnn {md:.2e} <= hnn {mh:.2e}"
        ),
    )
}

// --------------------------------------------------------------- criterion 10

fn criterion_determinism(runs: &SpringRuns) -> Outcome {
    let (_, first) = runs.get(ModelKind::Dissipative);
    let cfg = TrainConfig::default();
    let data = spring_data();
    let model = Model::init(ModelKind::Dissipative, 2, cfg.seed).unwrap();
    let (_, report) = train(model, &data, &cfg).unwrap();
    let second = report.final_test_loss;
    outcome(
        first.to_bits() == second.to_bits() && data == runs.data,
        format!("dhnn final test MSE {first:e} vs rerun {second:e} (bit-identical)"),
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // (any other argument) restricts the run to matching criterion numbers.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: usize| filters.is_empty() || filters.iter().any(|f| f == &n.to_string());

    let mut failures = 0;
    let mut report = |n: usize, name: &str, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failures += 1;
        }
        let line = format!("acceptance {n:>2} {status} {name}: {}\n", o.detail);
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(line.as_bytes());
        let _ = out.flush();
    };

    if wanted(1) {
        report(1, "gradient correctness", criterion_gradients());
    }
    if wanted(2) {
        report(2, "structural field properties", criterion_structure());
    }
    let spring_needed = [3, 4, 5, 10].into_iter().any(wanted);
    let runs = spring_needed.then(train_spring);
    if let Some(runs) = &runs {
        if wanted(3) {
            report(3, "spring benchmark", criterion_spring(runs));
        }
        if wanted(4) {
            report(4, "spring energy ordering", criterion_energy(runs));
        }
        if wanted(5) {
            report(5, "counterfactual dissipation", criterion_counterfactual(runs));
        }
    }
    if wanted(6) {
        report(6, "grid Helmholtz baseline", criterion_grid());
    }
    if wanted(7) {
        report(7, "integrator accuracy", criterion_integrator());
    }
    if wanted(8) {
        report(8, "pendulum ordering", criterion_pendulum());
    }
    if wanted(9) {
        report(9, "ocean-scale decomposition", criterion_ocean());
    }
    if let (Some(runs), true) = (&runs, wanted(10)) {
        report(10, "determinism", criterion_determinism(runs));
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
