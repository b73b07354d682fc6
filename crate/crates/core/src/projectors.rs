//! Spectral projectors, the squared-Frobenius projector statistic and its
//! chi-square-mixture reference law.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::{estimate_delta_hat, sample_dataset, Dataset, DatasetSpec};
use crate::diagnostics::{
    budget_projector, kolmogorov_distance, ErrorBudget, EmpiricalLaw, ProjectorBudgetInputs,
};
use crate::error::{Error, Result};
use crate::linalg;
use crate::posterior::{sample_posterior, PosteriorSampler, PriorSpec, SamplerMethod, SamplerWarning};
use crate::seed;
use crate::spectral::{build_gamma, selection_gap, EigenspaceSelection, SpdMatrix, SpectralModel};

/// Relative eigengap below which a draw is flagged as near-degenerate.
pub const NEAR_DEGENERATE_GAP: f64 = 1e-6;

/// Projector onto the eigenvectors of `sigma` at positions `indices`
/// (eigenvalues in descending order).
pub fn projector_from(sigma: &DMatrix<f64>, indices: Range<usize>) -> DMatrix<f64> {
    let (_, vectors) = linalg::sym_eigen_desc(sigma);
    linalg::column_projector(&vectors, indices)
}

/// `P̂_J = Σ_{k ∈ I_J} û_k û_kᵀ` from the sample covariance.
pub fn empirical_projector(data: &Dataset, model: &SpectralModel, sel: &EigenspaceSelection) -> Result<DMatrix<f64>> {
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: data.dim(),
        });
    }
    Ok(projector_from(data.sample_cov.matrix(), model.selection_indices(sel)?))
}

#[derive(Debug, Clone)]
pub struct ProjectorStatistic {
    pub selection: EigenspaceSelection,
    /// Law of `n ‖P_J − P̂_J‖²_2` over posterior draws.
    pub values: EmpiricalLaw,
    pub empirical_projector: DMatrix<f64>,
    /// Draws whose eigenvalues at the boundary of `I_J` nearly coincide.
    pub near_degenerate_draws: usize,
}

fn boundary_gap(values: &nalgebra::DVector<f64>, indices: &Range<usize>) -> f64 {
    let p = values.len();
    let mut gap = f64::INFINITY;
    if indices.start > 0 {
        gap = gap.min(values[indices.start - 1] - values[indices.start]);
    }
    if indices.end < p {
        gap = gap.min(values[indices.end - 1] - values[indices.end]);
    }
    gap
}

pub fn posterior_projector_statistic(
    model: &SpectralModel,
    sel: &EigenspaceSelection,
    draws: &[SpdMatrix],
    data: &Dataset,
) -> Result<ProjectorStatistic> {
    selection_gap(model, sel)?;
    let indices = model.selection_indices(sel)?;
    let p_hat = empirical_projector(data, model, sel)?;
    let n = data.n() as f64;
    let evaluated: Vec<(f64, bool)> = draws
        .par_iter()
        .map(|s| {
            let (values, vectors) = linalg::sym_eigen_desc(s.matrix());
            let p_j = linalg::column_projector(&vectors, indices.clone());
            let degenerate = boundary_gap(&values, &indices) < NEAR_DEGENERATE_GAP * values[0];
            (n * (p_j - &p_hat).norm_squared(), degenerate)
        })
        .collect();
    let near_degenerate_draws = evaluated.iter().filter(|(_, d)| *d).count();
    if near_degenerate_draws > 0 {
        log::warn!("{near_degenerate_draws} posterior draws have a near-degenerate eigengap at the selection boundary");
    }
    Ok(ProjectorStatistic {
        selection: *sel,
        values: EmpiricalLaw::new(
            evaluated.into_iter().map(|(v, _)| v).collect(),
            format!("projector statistic groups {}..={}", sel.s_minus + 1, sel.s_plus + 1),
        )?,
        empirical_projector: p_hat,
        near_degenerate_draws,
    })
}

pub const MIN_MIXTURE_DRAWS: usize = 10_000;

/// Law of `Σ w_i Z_i²` with independent standard normal `Z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareMixture {
    pub weights: Vec<f64>,
}

impl ChiSquareMixture {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("mixture needs at least one weight"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be positive and finite"));
        }
        Ok(Self { weights })
    }

    /// Reference law of the projector statistic for selection `J`.
    pub fn for_selection(model: &SpectralModel, sel: &EigenspaceSelection) -> Result<Self> {
        Self::new(build_gamma(model, sel)?.diag_weights)
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn common_weight(&self) -> Option<f64> {
        let w = self.weights[0];
        self.weights.iter().all(|&v| v == w).then_some(w)
    }

    /// Independent draws of `Σ w_i Z_i²`; draw `k` uses its own derived stream.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        (0..count)
            .into_par_iter()
            .map(|k| {
                let mut rng = seed::child_rng(seed, k as u64);
                self.weights
                    .iter()
                    .map(|w| {
                        let z: f64 = rng.sample(StandardNormal);
                        w * z * z
                    })
                    .sum()
            })
            .collect()
    }

    pub fn reference_law(&self, count: usize, seed: u64) -> Result<EmpiricalLaw> {
        EmpiricalLaw::new(self.sample(count, seed), format!("chi-square mixture seed {seed}"))
    }

    /// `P(Σ w_i Z_i² ≤ x)`; exact `χ²_k` when all weights agree, Monte Carlo
    /// with `mc_draws` draws otherwise.
    pub fn cdf(&self, x: f64, mc_draws: usize, seed: u64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x == f64::INFINITY {
            return Ok(1.0);
        }
        if let Some(w) = self.common_weight() {
            return Ok(exact_chi_square_cdf(self.weights.len(), x / w));
        }
        if mc_draws < MIN_MIXTURE_DRAWS {
            return Err(Error::invalid(format!(
                "need at least {MIN_MIXTURE_DRAWS} Monte Carlo draws, got {mc_draws}"
            )));
        }
        let below = self.sample(mc_draws, seed).into_iter().filter(|&v| v <= x).count();
        Ok(below as f64 / mc_draws as f64)
    }

    /// Monte Carlo CDF ignoring the exact branch.
    pub fn monte_carlo_cdf(&self, x: f64, mc_draws: usize, seed: u64) -> f64 {
        let below = self.sample(mc_draws, seed).into_iter().filter(|&v| v <= x).count();
        below as f64 / mc_draws as f64
    }
}

fn exact_chi_square_cdf(k: usize, x: f64) -> f64 {
    ChiSquared::new(k as f64)
        .expect("positive degrees of freedom")
        .cdf(x)
}

pub fn mixture_cdf(mixture: &ChiSquareMixture, x: f64, mc_draws: usize, seed: u64) -> Result<f64> {
    mixture.cdf(x, mc_draws, seed)
}

/// Inputs of [`projector_bvm_check`].
#[derive(Debug, Clone)]
pub struct ProjectorCheckConfig {
    pub prior: PriorSpec,
    pub method: SamplerMethod,
    pub data_spec: DatasetSpec,
    pub selection: EigenspaceSelection,
    pub posterior_draws: usize,
    pub reference_draws: usize,
    /// Replications for the `δ̂` estimate entering precondition and budget.
    pub delta_hat_replications: usize,
    pub l_star: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum ProjectorWarning {
    /// `δ̂ > g*_J / (4‖Σ*‖_∞) ∧ r̃(Σ*)/p`.
    Precondition { delta_hat: f64, bound: f64 },
    NearDegenerateDraws { count: usize },
    Sampler(SamplerWarning),
}

#[derive(Debug, Clone)]
pub struct ProjectorCheck {
    pub ks: f64,
    pub budget: ErrorBudget,
    pub precondition_ok: bool,
    pub delta_hat: f64,
    pub statistic: ProjectorStatistic,
    pub reference: EmpiricalLaw,
    pub warnings: Vec<ProjectorWarning>,
}

/// `g*_J / (4‖Σ*‖_∞) ∧ r̃(Σ*)/p`.
pub fn precondition_bound(model: &SpectralModel, sel: &EigenspaceSelection) -> Result<f64> {
    let gap = selection_gap(model, sel)?;
    Ok((gap / (4.0 * model.spectral_norm())).min(model.effective_rank() / model.dim() as f64))
}

/// Samples data, the posterior, the projector statistic and its reference
/// law, and reports their KS distance with the projector budget.
pub fn projector_bvm_check(cfg: &ProjectorCheckConfig) -> Result<ProjectorCheck> {
    let model = cfg.data_spec.model.clone();
    let sel = &cfg.selection;
    let mixture = ChiSquareMixture::for_selection(&model, sel)?;
    let delta_hat_spec = cfg.data_spec.with_seed(seed::derive_named(cfg.seed, "delta-hat"));
    let delta_hat = estimate_delta_hat(&delta_hat_spec, cfg.delta_hat_replications)?.radius;
    let bound = precondition_bound(&model, sel)?;
    let precondition_ok = delta_hat <= bound;
    let mut warnings = Vec::new();
    if !precondition_ok {
        log::warn!("sample covariance concentration {delta_hat} exceeds the projector precondition {bound}");
        warnings.push(ProjectorWarning::Precondition { delta_hat, bound });
    }

    let data = Arc::new(sample_dataset(&cfg.data_spec)?);
    let sampler = PosteriorSampler::new(
        cfg.prior.clone(),
        data.clone(),
        cfg.method,
        seed::derive_named(cfg.seed, "posterior"),
    )?;
    let draws = sample_posterior(&sampler, cfg.posterior_draws)?;
    warnings.extend(draws.warnings.iter().copied().map(ProjectorWarning::Sampler));
    let statistic = posterior_projector_statistic(&model, sel, &draws.draws, &data)?;
    if statistic.near_degenerate_draws > 0 {
        warnings.push(ProjectorWarning::NearDegenerateDraws {
            count: statistic.near_degenerate_draws,
        });
    }
    let reference = mixture.reference_law(cfg.reference_draws, seed::derive_named(cfg.seed, "reference"))?;
    let budget = budget_projector(
        &model,
        sel,
        &ProjectorBudgetInputs {
            n: data.n(),
            delta_hat,
            g_norm: cfg.prior.g_norm(),
            l_star: cfg.l_star,
        },
    )?;
    Ok(ProjectorCheck {
        ks: kolmogorov_distance(&statistic.values, &reference),
        budget,
        precondition_ok,
        delta_hat,
        statistic,
        reference,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Family, DatasetSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn assert_projector(p: &DMatrix<f64>, rank: usize, tol: f64) {
        assert!((p - p.transpose()).abs().max() < tol);
        assert!((p * p - p).abs().max() < tol);
        assert!((p.trace() - rank as f64).abs() < tol);
    }

    fn dataset_with_cov(model: SpectralModel, n: usize, seed: u64) -> Dataset {
        let spec = DatasetSpec::new(Arc::new(model), Family::Gaussian, n, seed).unwrap();
        sample_dataset(&spec).unwrap()
    }

    #[test]
    fn diagonal_projector() {
        let p = projector_from(&DMatrix::from_diagonal(&nalgebra::dvector![2.0, 1.0]), 0..1);
        assert_relative_eq!(p, DMatrix::from_diagonal(&nalgebra::dvector![1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn unperturbed_projector_matches_truth() {
        let q = DMatrix::<f64>::from_fn(3, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin()).qr().q();
        let model = SpectralModel::from_groups(&[4.0, 1.0], &[1, 2], Some(&q)).unwrap();
        let sel = EigenspaceSelection::single(0);
        let p = projector_from(model.sigma_star().matrix(), model.selection_indices(&sel).unwrap());
        assert!((p - model.selection_projector(&sel).unwrap()).abs().max() < 1e-10);
    }

    #[test]
    fn statistic_vanishes_at_sample_covariance() {
        let model = SpectralModel::from_groups(&[4.0, 1.0], &[1, 2], None).unwrap();
        let data = dataset_with_cov(model.clone(), 300, 4);
        let draws = vec![data.sample_cov.clone(); 120];
        let stat = posterior_projector_statistic(&model, &EigenspaceSelection::single(0), &draws, &data).unwrap();
        assert!(stat.values.values().iter().all(|&v| v.abs() < 1e-18));
        assert_projector(&stat.empirical_projector, 1, 1e-10);
    }

    #[test]
    fn equal_weight_cdf_is_exact() {
        let m = ChiSquareMixture::new(vec![1.0, 1.0]).unwrap();
        let v = m.cdf(2.0 * std::f64::consts::LN_2, 0, 0).unwrap();
        assert!((v - 0.5).abs() < 1e-14);
        assert_eq!(m.cdf(0.0, 0, 0).unwrap(), 0.0);
        assert_eq!(m.cdf(f64::INFINITY, 0, 0).unwrap(), 1.0);
    }

    #[test]
    fn unequal_weight_cdf_against_larger_oracle() {
        let m = ChiSquareMixture::new(vec![0.625, 4.0]).unwrap();
        let x = m.mean();
        let v = m.cdf(x, 100_000, 3).unwrap();
        assert!((0.55..=0.75).contains(&v), "{v}");
        // Oracle: P(0.625 A + 4 B ≤ x) = E[F_{χ²₁}((x − 4B)/0.625)] with B ~ χ²₁,
        // integrated on a fine grid over B.
        let chi1 = ChiSquared::new(1.0).unwrap();
        let steps = 400_000;
        let upper = x / 4.0;
        let h = upper / steps as f64;
        let mut acc = 0.0;
        for k in 0..steps {
            let (b0, b1) = (k as f64 * h, (k + 1) as f64 * h);
            let mid = 0.5 * (b0 + b1);
            acc += (chi1.cdf(b1) - chi1.cdf(b0)) * chi1.cdf((x - 4.0 * mid) / 0.625);
        }
        assert!((v - acc).abs() < 0.01, "{v} vs {acc}");
    }

    #[test]
    fn equal_weight_monte_carlo_branch_agrees() {
        let m = ChiSquareMixture::new(vec![2.0; 4]).unwrap();
        for x in [2.0, 8.0, 20.0] {
            let exact = m.cdf(x, 0, 0).unwrap();
            let mc = m.monte_carlo_cdf(x, 100_000, 9);
            assert!((exact - mc).abs() < 0.01);
        }
    }

    #[test]
    fn reference_mean_matches_weights() {
        let m = ChiSquareMixture::new(vec![0.5, 2.0, 3.0]).unwrap();
        let count = 100_000;
        let law = m.reference_law(count, 5).unwrap();
        let band = 3.0 * (m.variance() / count as f64).sqrt();
        assert!((law.mean() - m.mean()).abs() < band);
    }

    #[test]
    fn too_few_draws_rejected() {
        let m = ChiSquareMixture::new(vec![1.0, 2.0]).unwrap();
        assert!(m.cdf(1.0, 10, 0).is_err());
        assert!(ChiSquareMixture::new(vec![]).is_err());
        assert!(ChiSquareMixture::new(vec![0.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn empirical_projector_is_a_projector(seed in 0u64..1000, n in 20usize..200) {
            let model = SpectralModel::from_groups(&[5.0, 2.0, 1.0], &[1, 2, 2], None).unwrap();
            let data = dataset_with_cov(model.clone(), n, seed);
            for (sel, rank) in [(EigenspaceSelection::single(0), 1), (EigenspaceSelection::new(0, 1), 3)] {
                let p = empirical_projector(&data, &model, &sel).unwrap();
                assert_projector(&p, rank, 1e-10);
            }
        }

        #[test]
        fn statistic_is_bounded(seed in 0u64..1000) {
            let model = SpectralModel::from_groups(&[4.0, 1.0], &[2, 2], None).unwrap();
            let data = dataset_with_cov(model.clone(), 50, seed);
            let others: Vec<SpdMatrix> = (0..100)
                .map(|k| dataset_with_cov(model.clone(), 8, seed * 1000 + k).sample_cov)
                .collect();
            let stat = posterior_projector_statistic(&model, &EigenspaceSelection::single(0), &others, &data).unwrap();
            let bound = 2.0 * 50.0 * 2.0;
            prop_assert!(stat.values.values().iter().all(|&v| (0.0..=bound + 1e-9).contains(&v)));
        }
    }
}
