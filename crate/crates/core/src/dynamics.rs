//! Vector fields assembled from the learned potentials, and the training loss.
//!
//! With canonical coordinates `(q, p)` the predicted field is
//!
//! ```text
//! dq/dt = ∂H/∂p + s·∂D/∂q
//! dp/dt = -∂H/∂q + s·∂D/∂p
//! ```
//!
//! where `s` is the dissipation scale (1 during training). Note that the
//! learned `D` enters with a plus sign, so for the damped spring it converges
//! towards `-½ρp²`, the negative of the classical Rayleigh function.

use crate::autodiff::{Tape, Var};
use crate::datasets::PhaseSample;
use crate::models::{Model, TapedModel};
use crate::{Error, Result};

/// A point of the (possibly time-augmented) phase space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
    /// Normalized time; 0 for autonomous systems.
    pub t: f64,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p, t: 0.0 }
    }

    pub fn at_time(q: f64, p: f64, t: f64) -> Self {
        Self { q, p, t }
    }

    /// Network input: `(q, p)` or `(q, p, t)`.
    pub fn features(&self, input_dim: usize) -> Vec<f64> {
        match input_dim {
            2 => vec![self.q, self.p],
            _ => vec![self.q, self.p, self.t],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldParts {
    pub conservative: (f64, f64),
    pub dissipative: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub dq_dt: f64,
    pub dp_dt: f64,
    parts: Option<FieldParts>,
}

impl FieldValue {
    pub fn total(&self) -> (f64, f64) {
        (self.dq_dt, self.dp_dt)
    }

    /// Conservative/dissipative split; undefined for the baseline model.
    pub fn parts(&self) -> Result<FieldParts> {
        self.parts
            .ok_or_else(|| Error::Unsupported("decomposition of a baseline (direct-map) model".into()))
    }

    pub fn conservative(&self) -> Result<(f64, f64)> {
        self.parts().map(|p| p.conservative)
    }

    pub fn dissipative(&self) -> Result<(f64, f64)> {
        self.parts().map(|p| p.dissipative)
    }
}

fn decomposed(conservative: (f64, f64), dissipative: (f64, f64)) -> FieldValue {
    FieldValue {
        dq_dt: conservative.0 + dissipative.0,
        dp_dt: conservative.1 + dissipative.1,
        parts: Some(FieldParts {
            conservative,
            dissipative,
        }),
    }
}

/// Evaluates the model's vector field at `x`, scaling the dissipative part by
/// `dissipation_scale`.
pub fn eval_field(model: &Model, x: &PhasePoint, dissipation_scale: f64) -> Result<FieldValue> {
    let input = x.features(model.input_dim());
    match model {
        Model::Baseline(net) => {
            let [dq, dp] = net.forward(&input)?;
            Ok(FieldValue {
                dq_dt: dq,
                dp_dt: dp,
                parts: None,
            })
        }
        Model::Hamiltonian(h) => {
            let (_, gh) = h.value_and_input_grad(&input)?;
            Ok(decomposed((gh[1], -gh[0]), (0.0, 0.0)))
        }
        Model::Dissipative {
            hamiltonian,
            dissipation,
        } => {
            let (_, gh) = hamiltonian.value_and_input_grad(&input)?;
            let (_, gd) = dissipation.value_and_input_grad(&input)?;
            Ok(decomposed(
                (gh[1], -gh[0]),
                (dissipation_scale * gd[0], dissipation_scale * gd[1]),
            ))
        }
    }
}

/// Field of a dissipative model with its dissipative part rescaled, for
/// predicting dynamics under a different friction coefficient.
pub fn counterfactual_field(model: &Model, scale: f64) -> Result<impl Fn(f64, [f64; 2]) -> [f64; 2] + '_> {
    if !matches!(model, Model::Dissipative { .. }) {
        return Err(Error::Unsupported(format!(
            "counterfactual scaling of a {} model",
            model.kind()
        )));
    }
    Ok(vector_field(model, scale))
}

/// The model's field as an ODE right-hand side `f(t, [q, p])`. Time is fed to
/// the network only when it takes a time input.
pub fn vector_field(model: &Model, scale: f64) -> impl Fn(f64, [f64; 2]) -> [f64; 2] + '_ {
    let timed = model.input_dim() == 3;
    move |t, [q, p]| {
        let x = PhasePoint::at_time(q, p, if timed { t } else { 0.0 });
        match eval_field(model, &x, scale) {
            Ok(f) => [f.dq_dt, f.dp_dt],
            Err(_) => [f64::NAN, f64::NAN],
        }
    }
}

/// Field built on a tape, so its pieces can be differentiated further.
pub struct TapedField<'t> {
    pub total: [Var<'t>; 2],
    pub conservative: Option<[Var<'t>; 2]>,
    pub dissipative: Option<[Var<'t>; 2]>,
}

/// Tape counterpart of [`eval_field`]. `x` must be tape inputs (`q`, `p`
/// and optionally `t`); the time input is never differentiated against.
pub fn field_on_tape<'t>(
    tape: &'t Tape,
    model: &TapedModel<'t>,
    x: &[Var<'t>],
    dissipation_scale: f64,
) -> Result<TapedField<'t>> {
    let qp = &x[..2];
    match model {
        TapedModel::Baseline(net) => Ok(TapedField {
            total: net.value(tape, x)?,
            conservative: None,
            dissipative: None,
        }),
        TapedModel::Hamiltonian(h) => {
            let hv = h.value(tape, x)?;
            let gh = tape.gradient_as_nodes(hv, qp)?;
            let cons = [gh[1], -gh[0]];
            let zero = tape.constant(0.0);
            Ok(TapedField {
                total: cons,
                conservative: Some(cons),
                dissipative: Some([zero, zero]),
            })
        }
        TapedModel::Dissipative {
            hamiltonian,
            dissipation,
        } => {
            let hv = hamiltonian.value(tape, x)?;
            let dv = dissipation.value(tape, x)?;
            let gh = tape.gradient_as_nodes(hv, qp)?;
            let gd = tape.gradient_as_nodes(dv, qp)?;
            let cons = [gh[1], -gh[0]];
            let diss = [gd[0].scale(dissipation_scale), gd[1].scale(dissipation_scale)];
            Ok(TapedField {
                total: [cons[0] + diss[0], cons[1] + diss[1]],
                conservative: Some(cons),
                dissipative: Some(diss),
            })
        }
    }
}

fn check_batch(batch: &[PhaseSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Ok(())
}

/// Mean over the batch of `(pred_dq - dq)² + (pred_dp - dp)²`, recorded on
/// `tape` so it can be differentiated with respect to the model parameters.
pub fn loss_on_tape<'t>(tape: &'t Tape, model: &TapedModel<'t>, input_dim: usize, batch: &[PhaseSample]) -> Result<Var<'t>> {
    check_batch(batch)?;
    let mut terms = Vec::with_capacity(batch.len());
    for s in batch {
        let x = tape.inputs(&s.point().features(input_dim));
        let f = field_on_tape(tape, model, &x, 1.0)?;
        let rq = f.total[0] - s.dq_dt;
        let rp = f.total[1] - s.dp_dt;
        terms.push(rq.square() + rp.square());
    }
    Ok(tape.sum(&terms).scale(1.0 / batch.len() as f64))
}

/// Row-major `batch × input_dim` feature matrix.
fn feature_matrix(batch: &[PhaseSample], input_dim: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(batch.len() * input_dim);
    for s in batch {
        x.push(s.q);
        x.push(s.p);
        if input_dim == 3 {
            x.push(s.t);
        }
    }
    x
}

/// Training loss of `model` on `batch` (no gradient).
pub fn loss(model: &Model, batch: &[PhaseSample]) -> Result<f64> {
    check_batch(batch)?;
    let d = model.input_dim();
    let b = batch.len();
    let x = feature_matrix(batch, d);
    let preds = predict_batch(model, &x, b);
    Ok(mean_residual(&preds, batch).0)
}

/// Batched predictions `(dq/dt, dp/dt)` for a feature matrix.
fn predict_batch(model: &Model, x: &[f64], b: usize) -> Vec<[f64; 2]> {
    let d = model.input_dim();
    match model {
        Model::Baseline(net) => {
            let (y, _) = net.batch_forward(x, b);
            y.chunks_exact(2).map(|r| [r[0], r[1]]).collect()
        }
        Model::Hamiltonian(h) => {
            let (gh, _) = h.batch_input_grad(x, b);
            gh.chunks_exact(d).map(|g| [g[1], -g[0]]).collect()
        }
        Model::Dissipative {
            hamiltonian,
            dissipation,
        } => {
            let (gh, _) = hamiltonian.batch_input_grad(x, b);
            let (gd, _) = dissipation.batch_input_grad(x, b);
            gh.chunks_exact(d)
                .zip(gd.chunks_exact(d))
                .map(|(h, g)| [h[1] + g[0], -h[0] + g[1]])
                .collect()
        }
    }
}

/// Returns the mean loss and per-sample residuals `pred - target`.
fn mean_residual(preds: &[[f64; 2]], batch: &[PhaseSample]) -> (f64, Vec<[f64; 2]>) {
    let mut total = 0.0;
    let res: Vec<[f64; 2]> = preds
        .iter()
        .zip(batch)
        .map(|(p, s)| {
            let r = [p[0] - s.dq_dt, p[1] - s.dp_dt];
            total += r[0] * r[0] + r[1] * r[1];
            r
        })
        .collect();
    (total / batch.len() as f64, res)
}

/// Loss and its gradient with respect to every parameter, returned as a
/// model-shaped buffer (see [`Model::params`] for the flat order).
pub fn loss_and_gradient(model: &Model, batch: &[PhaseSample]) -> Result<(f64, Model)> {
    check_batch(batch)?;
    let d = model.input_dim();
    let b = batch.len();
    let x = feature_matrix(batch, d);
    let mut grad = model.zeros_like();
    let coef = 2.0 / b as f64;
    let value = match (model, &mut grad) {
        (Model::Baseline(net), Model::Baseline(g)) => {
            let (y, cache) = net.batch_forward(&x, b);
            let preds: Vec<[f64; 2]> = y.chunks_exact(2).map(|r| [r[0], r[1]]).collect();
            let (value, res) = mean_residual(&preds, batch);
            let y_bar: Vec<f64> = res.iter().flat_map(|r| [coef * r[0], coef * r[1]]).collect();
            net.batch_backward(&x, &cache, &y_bar, g);
            value
        }
        (Model::Hamiltonian(h), Model::Hamiltonian(g)) => {
            let (gh, cache) = h.batch_input_grad(&x, b);
            let preds: Vec<[f64; 2]> = gh.chunks_exact(d).map(|g| [g[1], -g[0]]).collect();
            let (value, res) = mean_residual(&preds, batch);
            // pred_q = ∂H/∂p, pred_p = -∂H/∂q
            let mut c = vec![0.0; b * d];
            for (row, r) in c.chunks_exact_mut(d).zip(&res) {
                row[0] = -coef * r[1];
                row[1] = coef * r[0];
            }
            h.batch_input_grad_backward(&x, &cache, &c, g);
            value
        }
        (
            Model::Dissipative {
                hamiltonian,
                dissipation,
            },
            Model::Dissipative {
                hamiltonian: grad_h,
                dissipation: grad_d,
            },
        ) => {
            let (gh, cache_h) = hamiltonian.batch_input_grad(&x, b);
            let (gd, cache_d) = dissipation.batch_input_grad(&x, b);
            let preds: Vec<[f64; 2]> = gh
                .chunks_exact(d)
                .zip(gd.chunks_exact(d))
                .map(|(h, g)| [h[1] + g[0], -h[0] + g[1]])
                .collect();
            let (value, res) = mean_residual(&preds, batch);
            let mut c_h = vec![0.0; b * d];
            let mut c_d = vec![0.0; b * d];
            for ((ch, cd), r) in c_h.chunks_exact_mut(d).zip(c_d.chunks_exact_mut(d)).zip(&res) {
                ch[0] = -coef * r[1];
                ch[1] = coef * r[0];
                cd[0] = coef * r[0];
                cd[1] = coef * r[1];
            }
            hamiltonian.batch_input_grad_backward(&x, &cache_h, &c_h, grad_h);
            dissipation.batch_input_grad_backward(&x, &cache_d, &c_d, grad_d);
            value
        }
        _ => unreachable!("gradient buffer shaped like the model"),
    };
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::relative_error;
    use crate::models::{ModelKind, PotentialNet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(q: f64, p: f64, t: f64, dq: f64, dp: f64) -> PhaseSample {
        PhaseSample {
            q,
            p,
            t,
            dq_dt: dq,
            dp_dt: dp,
        }
    }

    fn random_batch(n: usize, seed: u64) -> Vec<PhaseSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                sample(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    /// Field generated by explicit analytic potentials.
    fn analytic_field<'t>(
        tape: &'t Tape,
        h: impl Fn(Var<'t>, Var<'t>) -> Var<'t>,
        d: impl Fn(Var<'t>, Var<'t>) -> Var<'t>,
        q: f64,
        p: f64,
        scale: f64,
    ) -> (f64, f64) {
        let x = tape.inputs(&[q, p]);
        let gh = tape.gradient(h(x[0], x[1]), &x).unwrap();
        let gd = tape.gradient(d(x[0], x[1]), &x).unwrap();
        (gh[1] + scale * gd[0], -gh[0] + scale * gd[1])
    }

    #[test]
    fn analytic_oracle_fields() {
        fn quad<'t>(q: Var<'t>, p: Var<'t>) -> Var<'t> {
            (q.square() + p.square()).scale(0.5)
        }
        fn zero<'t>(q: Var<'t>, _p: Var<'t>) -> Var<'t> {
            q.scale(0.0)
        }
        fn rayleigh<'t>(_q: Var<'t>, p: Var<'t>) -> Var<'t> {
            p.square().scale(-0.5 * 2.0)
        }
        let tape = Tape::new();
        assert_eq!(analytic_field(&tape, quad, zero, 0.9, 0.0, 1.0), (0.0, -0.9));
        assert_eq!(analytic_field(&tape, zero, rayleigh, 0.0, 1.0, 1.0), (0.0, -2.0));
        assert_eq!(analytic_field(&tape, zero, rayleigh, 0.0, 1.0, 2.0), (0.0, -4.0));
    }

    #[test]
    fn scale_zero_removes_dissipation() {
        let m = Model::init_with_width(ModelKind::Dissipative, 2, 16, 3).unwrap();
        let x = PhasePoint::new(0.4, -0.3);
        let f = eval_field(&m, &x, 0.0).unwrap();
        assert_eq!(f.dissipative().unwrap(), (0.0, 0.0));
        assert_eq!(f.total(), f.conservative().unwrap());
    }

    #[test]
    fn scaling_is_exactly_linear() {
        let m = Model::init_with_width(ModelKind::Dissipative, 2, 16, 4).unwrap();
        let x = PhasePoint::new(-1.1, 0.7);
        let one = eval_field(&m, &x, 1.0).unwrap().dissipative().unwrap();
        for s in [0.5, 2.0, -3.0] {
            let scaled = eval_field(&m, &x, s).unwrap().dissipative().unwrap();
            assert_eq!(scaled, (s * one.0, s * one.1));
        }
        let cf = counterfactual_field(&m, 1.0).unwrap();
        let f = eval_field(&m, &x, 1.0).unwrap();
        assert_eq!(cf(0.0, [x.q, x.p]), [f.dq_dt, f.dp_dt]);
    }

    #[test]
    fn baseline_has_no_decomposition() {
        let m = Model::init_with_width(ModelKind::Baseline, 2, 8, 1).unwrap();
        let f = eval_field(&m, &PhasePoint::new(0.1, 0.2), 1.0).unwrap();
        assert!(f.parts().is_err());
        assert!(counterfactual_field(&m, 0.5).is_err());
        let h = Model::init_with_width(ModelKind::Hamiltonian, 2, 8, 1).unwrap();
        assert!(counterfactual_field(&h, 0.5).is_err());
        let f = eval_field(&h, &PhasePoint::new(0.1, 0.2), 1.0).unwrap();
        assert_eq!(f.dissipative().unwrap(), (0.0, 0.0));
    }

    #[test]
    fn loss_examples() {
        let batch = [sample(0.0, 0.0, 0.0, 1.0, 1.0)];
        // Zero-output baseline: prediction (0, 0) against target (1, 1).
        let mut m = Model::init_with_width(ModelKind::Baseline, 2, 4, 0).unwrap();
        m.set_params(&vec![0.0; m.param_count()]).unwrap();
        assert_eq!(loss(&m, &batch).unwrap(), 2.0);
        let f = eval_field(&m, &PhasePoint::new(0.0, 0.0), 1.0).unwrap();
        let exact = [sample(0.0, 0.0, 0.0, f.dq_dt, f.dp_dt)];
        assert_eq!(loss(&m, &exact).unwrap(), 0.0);
        assert!(loss(&m, &[]).is_err());
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let m = Model::init_with_width(ModelKind::Dissipative, 3, 16, 5).unwrap();
        let batch = random_batch(7, 1);
        let per: f64 = batch.iter().map(|s| loss(&m, std::slice::from_ref(s)).unwrap()).sum::<f64>() / 7.0;
        assert!((loss(&m, &batch).unwrap() - per).abs() < 1e-12);
    }

    #[test]
    fn plain_and_batched_fields_agree() {
        for kind in ModelKind::ALL {
            let m = Model::init_with_width(kind, 3, 12, 8).unwrap();
            let batch = random_batch(5, 2);
            let x = feature_matrix(&batch, 3);
            let preds = predict_batch(&m, &x, 5);
            for (s, pr) in batch.iter().zip(&preds) {
                let f = eval_field(&m, &s.point(), 1.0).unwrap();
                assert!((f.dq_dt - pr[0]).abs() < 1e-12);
                assert!((f.dp_dt - pr[1]).abs() < 1e-12);
            }
        }
    }

    /// Tape gradient of the loss against central differences, and the batched
    /// closed-form gradient against the tape gradient.
    #[test]
    fn loss_gradient_three_ways() {
        for kind in ModelKind::ALL {
            for dim in [2, 3] {
                let model = Model::init_with_width(kind, dim, 8, 21).unwrap();
                let batch = random_batch(4, 9);

                let tape = Tape::new();
                let taped = model.on_tape(&tape, true);
                let params = taped.params();
                let l = loss_on_tape(&tape, &taped, dim, &batch).unwrap();
                let tape_grad = tape.gradient(l, &params).unwrap();

                let (value, grad_model) = loss_and_gradient(&model, &batch).unwrap();
                assert!((value - l.value()).abs() < 1e-12);
                for (a, b) in grad_model.params().iter().zip(&tape_grad) {
                    assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{kind}: {a} vs {b}");
                }

                let base = model.params();
                let h = 1e-5;
                let mut probe = model.clone();
                for (i, &g) in tape_grad.iter().enumerate() {
                    let mut p = base.clone();
                    p[i] = base[i] + h;
                    probe.set_params(&p).unwrap();
                    let hi = loss(&probe, &batch).unwrap();
                    p[i] = base[i] - h;
                    probe.set_params(&p).unwrap();
                    let lo = loss(&probe, &batch).unwrap();
                    let fd = (hi - lo) / (2.0 * h);
                    assert!(relative_error(g, fd) <= 1e-4, "{kind} param {i}: {g} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn time_input_never_feeds_the_field_split() {
        // Changing only the adjoint on the t column must not matter: the loss
        // gradient is identical whether t is a tape input or a constant.
        let model = Model::init_with_width(ModelKind::Dissipative, 3, 8, 2).unwrap();
        let batch = random_batch(3, 4);
        let tape = Tape::new();
        let taped = model.on_tape(&tape, true);
        let params = taped.params();
        let mut terms = Vec::new();
        for s in &batch {
            let q = tape.input(s.q);
            let p = tape.input(s.p);
            let t = tape.constant(s.t);
            let f = field_on_tape(&tape, &taped, &[q, p, t], 1.0).unwrap();
            terms.push((f.total[0] - s.dq_dt).square() + (f.total[1] - s.dp_dt).square());
        }
        let l = tape.sum(&terms).scale(1.0 / 3.0);
        let g_const_t = tape.gradient(l, &params).unwrap();
        let (_, g) = loss_and_gradient(&model, &batch).unwrap();
        for (a, b) in g.params().iter().zip(&g_const_t) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn conservative_part_is_divergence_free_and_dissipative_curl_free() {
        let model = Model::init_with_width(ModelKind::Dissipative, 2, 32, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let tape = Tape::new();
            let taped = model.on_tape(&tape, false);
            let x = tape.inputs(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let f = field_on_tape(&tape, &taped, &x, 1.0).unwrap();
            let [cq, cp] = f.conservative.unwrap();
            let [dq, dp] = f.dissipative.unwrap();
            let div = tape.gradient(cq, &x).unwrap()[0] + tape.gradient(cp, &x).unwrap()[1];
            let curl = tape.gradient(dq, &x).unwrap()[1] - tape.gradient(dp, &x).unwrap()[0];
            assert!(div.abs() <= 1e-9, "div {div}");
            assert!(curl.abs() <= 1e-9, "curl {curl}");
        }
    }

    #[test]
    fn potential_kernels_match_single_point_gradients() {
        let Model::Hamiltonian(net) = Model::init_with_width(ModelKind::Hamiltonian, 3, 10, 6).unwrap() else {
            unreachable!()
        };
        let net: PotentialNet = net;
        let batch = random_batch(4, 7);
        let x = feature_matrix(&batch, 3);
        let (gx, _) = net.batch_input_grad(&x, 4);
        for (row, s) in gx.chunks_exact(3).zip(&batch) {
            let (_, g) = net.value_and_input_grad(&s.point().features(3)).unwrap();
            for (a, b) in row.iter().zip(&g) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }
}
