use std::sync::Arc;

use covbvm::data::{estimate_delta_hat, estimate_delta_tilde, DatasetSpec, Family};
use covbvm::functionals::{FunctionalKind, FunctionalSpec};
use covbvm::SpectralModel;

#[test]
fn projected_radius_is_controlled_by_full_radius() {
    let model = Arc::new(SpectralModel::from_groups(&[4.0, 2.0, 1.0], &[1, 2, 2], None).unwrap());
    let kappa = model.condition();
    for family in [Family::Gaussian, Family::SubGaussianRademacher, Family::BoundedSphere] {
        let spec = DatasetSpec::new(model.clone(), family, 2000, 5).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::Trace, &model).unwrap();
        let hat = estimate_delta_hat(&spec, 40).unwrap().radius;
        let tilde = estimate_delta_tilde(&spec, &f, 40).unwrap().radius;
        assert!(tilde <= 1.5 * kappa * hat, "{family:?}: {tilde} vs {hat}");
    }
}

#[test]
fn radius_shrinks_with_sample_size() {
    let model = Arc::new(SpectralModel::from_groups(&[2.0, 1.0], &[1, 2], None).unwrap());
    let small = DatasetSpec::new(model.clone(), Family::Gaussian, 500, 9).unwrap();
    let large = small.with_n(8000);
    let a = estimate_delta_hat(&small, 40).unwrap().radius;
    let b = estimate_delta_hat(&large, 40).unwrap().radius;
    assert!(b < 0.5 * a, "{a} -> {b}");
}

#[test]
fn too_few_replications_rejected() {
    let model = Arc::new(SpectralModel::from_groups(&[1.0], &[2], None).unwrap());
    let spec = DatasetSpec::new(model, Family::Gaussian, 100, 1).unwrap();
    assert!(estimate_delta_hat(&spec, 5).is_err());
}
