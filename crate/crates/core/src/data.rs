//! Synthetic data generation and sample-covariance concentration radii.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::FunctionalSpec;
use crate::linalg;
use crate::seed;
use crate::spectral::{SpdMatrix, SpectralModel};

/// Minimum number of replications accepted by the radius estimators.
pub const MIN_REPLICATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `X = Σ*^{1/2} Z`, `Z` standard normal.
    Gaussian,
    /// `X = Σ*^{1/2} ε`, `ε` with i.i.d. ±1 coordinates.
    SubGaussianRademacher,
    /// `X = Σ*^{1/2} √p u`, `u` uniform on the unit sphere.
    BoundedSphere,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub model: Arc<SpectralModel>,
    pub family: Family,
    pub n: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(model: Arc<SpectralModel>, family: Family, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("sample size must be at least 2, got {n}")));
        }
        Ok(Self {
            model,
            family,
            n,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Same spec with the seed replaced.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    /// Spec of replication `k`, seeded from `(seed, k)`.
    pub fn replication(&self, k: usize) -> Self {
        self.with_seed(seed::derive_seed(self.seed, k as u64))
    }
}

/// Observed sample with its covariance `Σ̂ = (1/n) Σ X_j X_jᵀ`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    /// `n × p`, one observation per row.
    pub samples: DMatrix<f64>,
    pub sample_cov: SpdMatrix,
}

impl Dataset {
    /// Wraps existing observations; `samples` must be `n × p` with `n = spec.n`.
    pub fn from_samples(spec: DatasetSpec, samples: DMatrix<f64>) -> Result<Self> {
        if samples.ncols() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                found: samples.ncols(),
            });
        }
        if samples.nrows() != spec.n {
            return Err(Error::DimensionMismatch {
                expected: spec.n,
                found: samples.nrows(),
            });
        }
        let cov = linalg::symmetrize(&(samples.transpose() * &samples)) / spec.n as f64;
        let sample_cov = SpdMatrix::new(cov)?;
        Ok(Self {
            spec,
            samples,
            sample_cov,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn model(&self) -> &SpectralModel {
        &self.spec.model
    }
}

/// Draws the unit-covariance innovations (before the `Σ*^{1/2}` transform).
pub fn sample_innovations(family: Family, n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        match family {
            Family::Gaussian => {
                for j in 0..p {
                    z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
                }
            }
            Family::SubGaussianRademacher => {
                for j in 0..p {
                    z[(i, j)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                }
            }
            Family::BoundedSphere => {
                let radius = (p as f64).sqrt();
                loop {
                    for j in 0..p {
                        z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
                    }
                    let norm = z.row(i).norm();
                    if norm > 0.0 {
                        let scale = radius / norm;
                        z.row_mut(i).scale_mut(scale);
                        break;
                    }
                }
            }
        }
    }
    z
}

pub fn sample_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let z = sample_innovations(spec.family, spec.n, spec.dim(), spec.seed);
    let x = z * spec.model.sigma_sqrt();
    Dataset::from_samples(spec.clone(), x)
}

/// Empirical `(1 − 1/n)`-quantile of a concentration deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationEstimate {
    pub radius: f64,
    pub confidence_level: f64,
    pub replications: usize,
}

/// Order statistic at `ceil(level · R)` (one-based), clamped to `R`.
pub fn upper_quantile(values: &mut [f64], level: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let r = values.len();
    let k = ((level * r as f64).ceil() as usize).clamp(1, r);
    values[k - 1]
}

fn concentration<F>(spec: &DatasetSpec, replications: usize, deviation: F) -> Result<ConcentrationEstimate>
where
    F: Fn(&Dataset) -> f64 + Sync,
{
    if replications < MIN_REPLICATIONS {
        return Err(Error::invalid(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    let mut devs = (0..replications)
        .into_par_iter()
        .map(|k| sample_dataset(&spec.replication(k)).map(|d| deviation(&d)))
        .collect::<Result<Vec<_>>>()?;
    let level = 1.0 - 1.0 / spec.n as f64;
    Ok(ConcentrationEstimate {
        radius: upper_quantile(&mut devs, level),
        confidence_level: level,
        replications,
    })
}

/// `δ̂_{n,p}`: quantile of `‖Σ̂ − Σ*‖_∞ / ‖Σ*‖_∞` over fresh datasets.
pub fn estimate_delta_hat(spec: &DatasetSpec, replications: usize) -> Result<ConcentrationEstimate> {
    let model = spec.model.clone();
    concentration(spec, replications, move |d| {
        d.sample_cov.relative_distance(model.sigma_star())
    })
}

/// `δ̃_{n,r}`: quantile of `‖Vᵀ Σ*^{-1/2} (Σ̂ − Σ*) Σ*^{-1/2} V‖_∞`.
pub fn estimate_delta_tilde(
    spec: &DatasetSpec,
    functional: &FunctionalSpec,
    replications: usize,
) -> Result<ConcentrationEstimate> {
    let v = functional.limit_basis();
    if v.nrows() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: v.nrows(),
        });
    }
    let model = spec.model.clone();
    let w = model.sigma_inv_sqrt() * v;
    concentration(spec, replications, move |d| {
        let diff = d.sample_cov.matrix() - model.sigma_star().matrix();
        let projected = w.transpose() * diff * &w;
        linalg::sym_spectral_norm(&linalg::symmetrize(&projected))
    })
}
