use std::sync::Arc;

use covbvm::data::{sample_dataset, Dataset, DatasetSpec, Family};
use covbvm::io::random_orthogonal;
use covbvm::posterior::{sample_posterior, PosteriorSampler, PriorSpec, SamplerMethod};
use covbvm::projectors::{posterior_projector_statistic, ChiSquareMixture};
use covbvm::{EigenspaceSelection, SpdMatrix, SpectralModel};
use proptest::prelude::*;

#[test]
fn statistic_is_invariant_under_joint_conjugation() {
    let q = random_orthogonal(4, 10);
    let r = random_orthogonal(4, 11);
    let sel = EigenspaceSelection::single(1);
    let model = Arc::new(SpectralModel::from_groups(&[5.0, 2.0, 1.0], &[1, 2, 1], Some(&q)).unwrap());
    let spec = DatasetSpec::new(model.clone(), Family::Gaussian, 800, 3).unwrap();
    let data = Arc::new(sample_dataset(&spec).unwrap());
    let sampler =
        PosteriorSampler::new(PriorSpec::default_inverse_wishart(4), data.clone(), SamplerMethod::ExactConjugate, 4)
            .unwrap();
    let draws = sample_posterior(&sampler, 200).unwrap().draws;
    let base = posterior_projector_statistic(&model, &sel, &draws, &data).unwrap();

    let rq = &r * &q;
    let moved = Arc::new(SpectralModel::from_groups(&[5.0, 2.0, 1.0], &[1, 2, 1], Some(&rq)).unwrap());
    let moved_spec = DatasetSpec::new(moved.clone(), Family::Gaussian, 800, 3).unwrap();
    let moved_data = Dataset::from_samples(moved_spec, &data.samples * r.transpose()).unwrap();
    let moved_draws: Vec<SpdMatrix> = draws
        .iter()
        .map(|d| SpdMatrix::new(&r * d.matrix() * r.transpose()).unwrap())
        .collect();
    let rotated = posterior_projector_statistic(&moved, &sel, &moved_draws, &moved_data).unwrap();
    for (x, y) in base.values.values().iter().zip(rotated.values.values()) {
        assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

proptest! {
    #[test]
    fn mixture_weights_do_not_depend_on_rotation(seed in 0u64..500) {
        let q = random_orthogonal(5, seed);
        let sel = EigenspaceSelection::single(0);
        let rotated = SpectralModel::from_groups(&[3.0, 1.0], &[2, 3], Some(&q)).unwrap();
        let plain = SpectralModel::from_groups(&[3.0, 1.0], &[2, 3], None).unwrap();
        let a = ChiSquareMixture::for_selection(&rotated, &sel).unwrap();
        let b = ChiSquareMixture::for_selection(&plain, &sel).unwrap();
        prop_assert_eq!(a.weights.len(), b.weights.len());
        for (x, y) in a.weights.iter().zip(&b.weights) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
