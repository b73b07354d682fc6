//! Approximately linear functionals `φ(Σ) − φ(Σ*) = Tr[Φ(Σ − Σ*)] + ε`, their
//! standardized posterior statistics and the rank-adjusted prior pipeline.

use std::f64::consts::E;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{Dataset, DatasetSpec};
use crate::diagnostics::EmpiricalLaw;
use crate::error::{Error, Result};
use crate::linalg;
use crate::posterior::{sample_posterior, PosteriorSampler, PriorSpec, SamplerMethod, SamplerWarning};
use crate::spectral::{spectral_decompose, Grouping, SpdMatrix, SpectralModel};

/// Relative threshold below which eigenvalues of `Φ` are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Zero-based indices throughout.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalKind {
    /// `Tr[ΦΣ]` for a symmetric `Φ`.
    Linear(DMatrix<f64>),
    /// Mean of the eigenvalues of `Σ` at the positions of group `s`.
    EigenvalueCluster(usize),
    /// `Σ_ij`.
    Entry(usize, usize),
    Trace,
    LogDet,
}

impl FunctionalKind {
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            FunctionalKind::Linear(_) | FunctionalKind::Entry(..) | FunctionalKind::Trace
        )
    }

    pub fn label(&self) -> String {
        match self {
            FunctionalKind::Linear(_) => "linear".into(),
            FunctionalKind::EigenvalueCluster(s) => format!("eigenvalue_cluster_{}", s + 1),
            FunctionalKind::Entry(i, j) => format!("entry_{}_{}", i + 1, j + 1),
            FunctionalKind::Trace => "trace".into(),
            FunctionalKind::LogDet => "log_det".into(),
        }
    }
}

/// A functional together with its linearization `Φ = UΨUᵀ` and the limit
/// factors `Σ*^{1/2} Φ Σ*^{1/2} = V D Vᵀ`.
#[derive(Debug, Clone)]
pub struct FunctionalSpec {
    kind: FunctionalKind,
    phi: DMatrix<f64>,
    c_phi: Option<f64>,
    u: DMatrix<f64>,
    psi: DVector<f64>,
    v: DMatrix<f64>,
    d: DVector<f64>,
    cluster_block: Option<Range<usize>>,
    scale: f64,
    offset: f64,
    value_at_truth: f64,
}

/// Eigenpairs of a symmetric matrix whose eigenvalue exceeds the rank
/// threshold in magnitude, ordered by decreasing magnitude.
fn rank_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (values, vectors) = linalg::sym_eigen_desc(m);
    let largest = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let mut keep: Vec<usize> = (0..values.len())
        .filter(|&k| values[k].abs() > RANK_TOLERANCE * largest)
        .collect();
    keep.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));
    let basis = DMatrix::from_fn(m.nrows(), keep.len(), |i, c| vectors[(i, keep[c])]);
    let diag = DVector::from_iterator(keep.len(), keep.iter().map(|&k| values[k]));
    (basis, diag)
}

impl FunctionalSpec {
    pub fn new(kind: FunctionalKind, model: &SpectralModel) -> Result<Self> {
        let p = model.dim();
        let mut cluster_block = None;
        let (phi, c_phi) = match &kind {
            FunctionalKind::Linear(phi) => {
                if phi.nrows() != p || phi.ncols() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: phi.nrows(),
                    });
                }
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite);
                }
                (linalg::symmetrize(phi), Some(0.0))
            }
            FunctionalKind::Entry(i, j) => {
                if *i >= p || *j >= p {
                    return Err(Error::invalid(format!("entry ({i}, {j}) outside a {p}x{p} matrix")));
                }
                let mut phi = DMatrix::zeros(p, p);
                phi[(*i, *j)] += 0.5;
                phi[(*j, *i)] += 0.5;
                (phi, Some(0.0))
            }
            FunctionalKind::Trace => (DMatrix::identity(p, p), Some(0.0)),
            FunctionalKind::EigenvalueCluster(s) => {
                let Some(block) = model.group_blocks().get(*s) else {
                    return Err(Error::BadSelection {
                        s_minus: *s,
                        s_plus: *s,
                        groups: model.num_groups(),
                    });
                };
                cluster_block = Some(block.clone());
                let m = model.group_mults()[*s] as f64;
                let gap = model.gaps()[*s];
                let c = if gap.is_finite() { 2.0 * E * E / gap } else { 0.0 };
                (&model.group_projectors()[*s] / m, Some(c))
            }
            FunctionalKind::LogDet => (model.sigma_star().inverse()?, None),
        };

        let (u, psi) = rank_factor(&phi);
        if psi.is_empty() {
            return Err(Error::DegenerateFunctional);
        }
        let sandwiched = linalg::symmetrize(&(model.sigma_sqrt() * &phi * model.sigma_sqrt()));
        let (v, d) = rank_factor(&sandwiched);
        if d.is_empty() {
            return Err(Error::DegenerateFunctional);
        }

        let mut spec = Self {
            kind,
            phi,
            c_phi,
            u,
            psi,
            v,
            d,
            cluster_block,
            scale: 1.0,
            offset: 0.0,
            value_at_truth: 0.0,
        };
        spec.value_at_truth = spec.evaluate(model.sigma_star());
        Ok(spec)
    }

    /// `c·φ`; the linearization scales with it.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c != 0.0 && c.is_finite()) {
            return Err(Error::invalid("functional scale must be finite and nonzero"));
        }
        Ok(Self {
            phi: &self.phi * c,
            c_phi: self.c_phi.map(|k| k * c.abs()),
            psi: &self.psi * c,
            d: &self.d * c,
            scale: self.scale * c,
            offset: self.offset * c,
            value_at_truth: self.value_at_truth * c,
            ..self.clone()
        })
    }

    /// `φ + a`.
    pub fn shifted(&self, a: f64) -> Self {
        Self {
            offset: self.offset + a,
            value_at_truth: self.value_at_truth + a,
            ..self.clone()
        }
    }

    pub fn kind(&self) -> &FunctionalKind {
        &self.kind
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Rank `r` of `Φ`.
    pub fn rank(&self) -> usize {
        self.psi.len()
    }

    /// Linearization constant `C_φ(Σ*)`; `None` when no constant is known.
    pub fn c_phi(&self) -> Option<f64> {
        self.c_phi
    }

    /// `U` (p × r, orthonormal columns).
    pub fn factor_basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Diagonal of `Ψ`.
    pub fn factor_weights(&self) -> &DVector<f64> {
        &self.psi
    }

    /// `V` (p × r, orthonormal columns).
    pub fn limit_basis(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Diagonal of `D`.
    pub fn limit_weights(&self) -> &DVector<f64> {
        &self.d
    }

    /// `‖Σ*^{1/2} Φ Σ*^{1/2}‖_2 = ‖D‖_2` (Frobenius).
    pub fn limit_frobenius(&self) -> f64 {
        self.d.norm()
    }

    /// `√2 ‖D‖_2`.
    pub fn normalizer(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.limit_frobenius()
    }

    /// `φ(Σ*)`.
    pub fn value_at_truth(&self) -> f64 {
        self.value_at_truth
    }

    pub fn evaluate(&self, sigma: &SpdMatrix) -> f64 {
        match &self.kind {
            k if k.is_linear() => linalg::trace_product(&self.phi, sigma.matrix()) + self.offset,
            FunctionalKind::EigenvalueCluster(_) => {
                let block = self.cluster_block.clone().expect("cluster block set");
                let values = sigma.eigenvalues();
                let mean = values[block.clone()].iter().sum::<f64>() / block.len() as f64;
                self.scale * mean + self.offset
            }
            FunctionalKind::LogDet => {
                self.scale * sigma.log_det().unwrap_or(f64::NEG_INFINITY) + self.offset
            }
            _ => unreachable!(),
        }
    }

    /// `ε = φ(Σ̃) − φ(Σ*) − Tr[Φ(Σ̃ − Σ*)]`.
    pub fn linearization_residual(&self, sigma_tilde: &SpdMatrix, model: &SpectralModel) -> f64 {
        let diff = sigma_tilde.matrix() - model.sigma_star().matrix();
        self.evaluate(sigma_tilde) - self.value_at_truth - linalg::trace_product(&self.phi, &diff)
    }
}

/// Free-function form of [`FunctionalSpec::evaluate`].
pub fn evaluate(functional: &FunctionalSpec, sigma: &SpdMatrix) -> f64 {
    functional.evaluate(sigma)
}

pub fn linearization_residual(functional: &FunctionalSpec, sigma_tilde: &SpdMatrix, model: &SpectralModel) -> f64 {
    functional.linearization_residual(sigma_tilde, model)
}

/// Which covariance enters the normalizer of the standardized statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `√2 ‖Σ*^{1/2} Φ Σ*^{1/2}‖_2`.
    #[default]
    Truth,
    /// Plug-in `√2 ‖Σ̂^{1/2} Φ Σ̂^{1/2}‖_2`.
    PlugIn,
}

/// Law of `√n (φ(Σ) − φ(Σ̂)) / normalizer` over posterior draws.
#[derive(Debug, Clone)]
pub struct StandardizedStatistic {
    pub values: EmpiricalLaw,
    pub normalizer: f64,
}

pub fn standardized_statistic(
    functional: &FunctionalSpec,
    draws: &[SpdMatrix],
    data: &Dataset,
    normalization: Normalization,
) -> Result<StandardizedStatistic> {
    if draws.is_empty() {
        return Err(Error::TooFewValues { needed: 1, got: 0 });
    }
    let normalizer = match normalization {
        Normalization::Truth => functional.normalizer(),
        Normalization::PlugIn => {
            let root = data.sample_cov.sqrt();
            let m = linalg::symmetrize(&(&root * functional.phi() * &root));
            std::f64::consts::SQRT_2 * m.norm()
        }
    };
    if !(normalizer > 0.0) {
        return Err(Error::DegenerateFunctional);
    }
    let center = functional.evaluate(&data.sample_cov);
    let root_n = (data.n() as f64).sqrt();
    let values: Vec<f64> = draws
        .par_iter()
        .map(|s| root_n * (functional.evaluate(s) - center) / normalizer)
        .collect();
    Ok(StandardizedStatistic {
        values: EmpiricalLaw::new(values, format!("standardized {}", functional.kind().label()))?,
        normalizer,
    })
}

/// `W⁻¹_r(UᵀGU, r + b − 1)`, the pushforward of an inverse Wishart prior.
pub fn rank_adjusted_inverse_wishart(g: &SpdMatrix, b: f64, basis: &DMatrix<f64>) -> Result<PriorSpec> {
    if basis.nrows() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: basis.nrows(),
        });
    }
    PriorSpec::inverse_wishart(SpdMatrix::new(basis.transpose() * g.matrix() * basis)?, b)
}

/// Projected data `Y_j = UᵀX_j` with `Ξ* = UᵀΣ*U` and `Ξ̂ = UᵀΣ̂U`.
pub fn project_dataset(functional: &FunctionalSpec, data: &Dataset) -> Result<Dataset> {
    let u = functional.factor_basis();
    if u.nrows() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: u.nrows(),
        });
    }
    let xi_star = SpdMatrix::new(u.transpose() * data.model().sigma_star().matrix() * u)?;
    let xi_model = spectral_decompose(&xi_star, &Grouping::default())?;
    let spec = DatasetSpec::new(Arc::new(xi_model), data.spec.family, data.n(), data.spec.seed)?;
    Dataset::from_samples(spec, &data.samples * u)
}

#[derive(Debug, Clone)]
pub struct RankAdjustedOutcome {
    pub statistic: StandardizedStatistic,
    pub projected: Arc<Dataset>,
    pub warnings: Vec<SamplerWarning>,
}

/// Samples `Ξ` from the `r`-dimensional posterior given `Y` and standardizes
/// `√n (Tr[ΨΞ] − Tr[ΨΞ̂]) / (√2 ‖Ξ*^{1/2} Ψ Ξ*^{1/2}‖_2)`.
pub fn rank_adjusted_pipeline(
    functional: &FunctionalSpec,
    data: &Dataset,
    low_dim_prior: PriorSpec,
    method: SamplerMethod,
    seed: u64,
    count: usize,
) -> Result<RankAdjustedOutcome> {
    if !functional.kind().is_linear() {
        return Err(Error::Unsupported(
            "rank-adjusted priors apply to linear functionals".into(),
        ));
    }
    let r = functional.rank();
    if r >= data.dim() {
        return Err(Error::BadDimension(format!(
            "rank {r} of the functional must be below the dimension {}",
            data.dim()
        )));
    }
    if low_dim_prior.dim() != r {
        return Err(Error::BadDimension(format!(
            "low-dimensional prior has dimension {}, functional rank is {r}",
            low_dim_prior.dim()
        )));
    }
    let projected = Arc::new(project_dataset(functional, data)?);
    let psi = DMatrix::from_diagonal(functional.factor_weights());
    let xi_star = projected.model().sigma_star();
    let root = xi_star.sqrt();
    let normalizer = std::f64::consts::SQRT_2 * linalg::symmetrize(&(&root * &psi * &root)).norm();
    if !(normalizer > 0.0) {
        return Err(Error::DegenerateFunctional);
    }

    let sampler = PosteriorSampler::new(low_dim_prior, projected.clone(), method, seed)?;
    let draws = sample_posterior(&sampler, count)?;
    let center = linalg::trace_product(&psi, projected.sample_cov.matrix());
    let root_n = (data.n() as f64).sqrt();
    let values: Vec<f64> = draws
        .draws
        .par_iter()
        .map(|xi| root_n * (linalg::trace_product(&psi, xi.matrix()) - center) / normalizer)
        .collect();
    Ok(RankAdjustedOutcome {
        statistic: StandardizedStatistic {
            values: EmpiricalLaw::new(values, format!("rank-adjusted seed {seed}"))?,
            normalizer,
        },
        projected,
        warnings: draws.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(seed);
        let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
        a.qr().q()
    }

    fn model(values: &[f64], mults: &[usize], seed: u64) -> SpectralModel {
        let q = random_orthogonal(mults.iter().sum(), seed);
        SpectralModel::from_groups(values, mults, Some(&q)).unwrap()
    }

    #[test]
    fn trace_of_diagonal() {
        let m = SpectralModel::from_groups(&[3.0, 2.0, 1.0], &[1, 1, 1], None).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::Trace, &m).unwrap();
        assert_relative_eq!(f.evaluate(m.sigma_star()), 6.0, epsilon = 1e-14);
        assert_eq!(f.rank(), 3);
        assert_eq!(f.c_phi(), Some(0.0));
    }

    #[test]
    fn cluster_value_and_constant() {
        let m = SpectralModel::from_groups(&[5.0, 1.0], &[2, 1], None).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::EigenvalueCluster(0), &m).unwrap();
        assert_relative_eq!(f.evaluate(m.sigma_star()), 5.0, epsilon = 1e-12);
        assert_relative_eq!(f.c_phi().unwrap(), 2.0 * E * E / 4.0, epsilon = 1e-14);
        assert_eq!(f.rank(), 2);
        assert_relative_eq!(f.linearization_residual(m.sigma_star(), &m), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn entry_matches_trace_form() {
        let m = model(&[4.0, 2.0, 1.0], &[1, 1, 1], 3);
        let f = FunctionalSpec::new(FunctionalKind::Entry(0, 1), &m).unwrap();
        let s = m.sigma_star();
        assert_relative_eq!(f.evaluate(s), s.matrix()[(0, 1)], epsilon = 1e-14);
        assert_eq!(f.rank(), 2);
    }

    #[test]
    fn linear_residual_is_zero() {
        let m = model(&[4.0, 2.0, 1.0], &[1, 1, 1], 3);
        let phi = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let f = FunctionalSpec::new(FunctionalKind::Linear(phi), &m).unwrap();
        let other = SpdMatrix::from_diagonal(&[1.0, 7.0, 2.0]).unwrap();
        assert!(f.linearization_residual(&other, &m).abs() < 1e-12);
    }

    #[test]
    fn factorizations_reconstruct() {
        let m = model(&[6.0, 3.0, 1.0], &[2, 1, 2], 9);
        for kind in [
            FunctionalKind::Trace,
            FunctionalKind::EigenvalueCluster(1),
            FunctionalKind::Entry(1, 3),
            FunctionalKind::LogDet,
        ] {
            let f = FunctionalSpec::new(kind, &m).unwrap();
            let u = f.factor_basis();
            let r = f.rank();
            assert!((u.transpose() * u - DMatrix::identity(r, r)).abs().max() < 1e-10);
            let rebuilt = u * DMatrix::from_diagonal(f.factor_weights()) * u.transpose();
            assert!((rebuilt - f.phi()).abs().max() < 1e-10);
            let v = f.limit_basis();
            assert!((v.transpose() * v - DMatrix::identity(r, r)).abs().max() < 1e-10);
            let sandwich = m.sigma_sqrt() * f.phi() * m.sigma_sqrt();
            assert_relative_eq!(f.limit_frobenius(), sandwich.norm(), epsilon = 1e-10);
            let d = f.limit_weights();
            assert!(d.abs().sum() / d.norm() <= (r as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn zero_functional_is_degenerate() {
        let m = model(&[2.0, 1.0], &[1, 1], 1);
        assert!(matches!(
            FunctionalSpec::new(FunctionalKind::Linear(DMatrix::zeros(2, 2)), &m),
            Err(Error::DegenerateFunctional)
        ));
    }

    #[test]
    fn log_det_has_no_constant() {
        let m = model(&[2.0, 1.0], &[1, 1], 1);
        let f = FunctionalSpec::new(FunctionalKind::LogDet, &m).unwrap();
        assert_eq!(f.c_phi(), None);
        assert_relative_eq!(f.value_at_truth(), 2.0_f64.ln(), epsilon = 1e-12);
    }
}
