use d2dra::channel::generate_dataset;
use d2dra::gradcheck::{layer_checks, model_check, model_checks, rel_error};
use d2dra::models::{Architecture, Model, ModelKind};
use d2dra::rng::stream;
use d2dra::stats::{compute_stats, preprocess_batch};
use d2dra::training::Phase;
use d2dra::{Objective, SystemConfig};
use ndarray::Axis;

#[test]
fn layers_match_finite_differences() {
    for seed in [1, 2, 3] {
        for c in layer_checks(seed).unwrap() {
            assert!(c.rel_error < 1e-4, "seed {seed}: {} {:e}", c.name, c.rel_error);
        }
    }
}

#[test]
fn models_through_losses_match_finite_differences() {
    let checks = model_checks(7).unwrap();
    assert_eq!(checks.len(), 6);
    for c in checks {
        assert!(c.rel_error < 1e-3, "{} {:e}", c.name, c.rel_error);
    }
}

#[test]
fn check_names_are_descriptive() {
    let c = model_check(ModelKind::Distributed, Phase::Ft, Objective::SumEe, 3).unwrap();
    assert_eq!(c.name, "distributed-ft-sum-ee");
}

#[test]
fn relative_error_floor() {
    assert_eq!(rel_error(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
    assert!((rel_error(&[2.0], &[1.0]) - 0.5).abs() < 1e-15);
    // tiny gradients are compared in absolute terms
    assert!(rel_error(&[0.0], &[1e-9]) < 1e-4);
}

#[test]
fn inference_rows_are_independent() {
    let config = SystemConfig::default().with_dims(3, 2, 3);
    let samples = generate_dataset(&config, 6);
    let x = preprocess_batch(&samples, &compute_stats(&samples).unwrap()).unwrap();
    for kind in [ModelKind::Centralized, ModelKind::Distributed] {
        let model = Model::init(kind, Architecture { n_units: 2, hidden_width: 6, dropout_rate: 0.0 }, &config, &mut stream(40, 4, 0)).unwrap();
        let full = model.decide(x.view()).unwrap();
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            assert_eq!(model.decide(row.insert_axis(Axis(0))).unwrap()[0], full[i]);
        }
    }
}
