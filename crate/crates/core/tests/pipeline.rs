use dhnn_core::datasets::{format_samples, generate_spring, parse_samples, split, SpringConfig};
use dhnn_core::dynamics::{vector_field, PhasePoint};
use dhnn_core::helmgrid::{decompose, GridField};
use dhnn_core::integrators::{integrate, TrajectorySpec};
use dhnn_core::metrics::test_mse;
use dhnn_core::models::{Model, ModelKind};
use dhnn_core::training::{train, TrainConfig};
use proptest::prelude::*;

fn small_run(kind: ModelKind) -> (Model, f64, f64) {
    let data = generate_spring(&SpringConfig::default(), 11).unwrap();
    let data = split(&data, 11).unwrap();
    let model = Model::init_with_width(kind, 2, 32, 11).unwrap();
    let before = test_mse(&model, &data.test).unwrap();
    let cfg = TrainConfig {
        steps: 300,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &data, &cfg).unwrap();
    assert_eq!(report.final_test_loss, test_mse(&model, &data.test).unwrap());
    (model, before, report.final_test_loss)
}

#[test]
fn training_reduces_test_error_for_every_kind() {
    for kind in ModelKind::ALL {
        let (_, before, after) = small_run(kind);
        assert!(after < before, "{kind}: {before} -> {after}");
    }
}

#[test]
fn checkpoint_round_trip_preserves_rollouts() {
    let (model, _, _) = small_run(ModelKind::Dissipative);
    let back = Model::deserialize(&model.serialize()).unwrap();
    assert_eq!(back, model);
    let spec = TrajectorySpec::uniform(PhasePoint::new(0.9, 0.0), 0.0, 5.0, 11);
    let a = integrate(vector_field(&model, 1.0), &spec).unwrap();
    let b = integrate(vector_field(&back, 1.0), &spec).unwrap();
    assert_eq!(a.states, b.states);
}

#[test]
fn sample_files_round_trip() {
    let data = generate_spring(&SpringConfig::default(), 2).unwrap();
    assert_eq!(parse_samples(&format_samples(&data)).unwrap(), data);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decomposition_parts_sum_to_the_field(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let field = GridField::from_fn(9, 9, [-1.0, 1.0, -1.0, 1.0], |x, y| {
            (a * x + c * y * y, b * y - c * x)
        })
        .unwrap();
        let dec = decompose(&field, 200, 1e-8).unwrap();
        for k in 0..field.u.len() {
            prop_assert!((dec.irrotational.u[k] + dec.rotational.u[k] - field.u[k]).abs() < 1e-12);
            prop_assert!((dec.irrotational.v[k] + dec.rotational.v[k] - field.v[k]).abs() < 1e-12);
        }
    }
}
