//! Contraction radii, prior flatness and distances between posterior laws.

pub mod budget;
mod law;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use budget::{
    budget_functional, budget_posterior_independence, budget_projector, gamma_normalizer, BudgetContext,
    ErrorBudget, FunctionalBudgetInputs, ProjectorBudgetInputs, ProjectorTerms,
};
pub use law::{dkw_radius, kolmogorov_distance, kolmogorov_distance_to_cdf, standard_normal_cdf, EmpiricalLaw, MIN_LAW_SIZE};

use crate::data::{sample_dataset, upper_quantile, DatasetSpec};
use crate::error::{Error, Result};
use crate::functionals::FunctionalSpec;
use crate::linalg;
use crate::posterior::{sample_posterior, PosteriorSampler, PriorSpec, SamplerMethod};
use crate::seed;
use crate::spectral::{SpdMatrix, SpectralModel};

type ScalarFn = dyn Fn(&SpdMatrix) -> f64 + Send + Sync;

/// Named scalar pushforward of a covariance draw.
#[derive(Clone)]
pub struct Statistic {
    pub name: String,
    f: Arc<ScalarFn>,
}

impl fmt::Debug for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Statistic").field("name", &self.name).finish()
    }
}

impl Statistic {
    pub fn new(name: impl Into<String>, f: impl Fn(&SpdMatrix) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, sigma: &SpdMatrix) -> f64 {
        (self.f)(sigma)
    }

    pub fn trace() -> Self {
        Self::new("trace", |s| s.matrix().trace())
    }

    pub fn spectral_norm() -> Self {
        Self::new("lambda_max", |s| linalg::sym_spectral_norm(s.matrix()))
    }

    pub fn entry(i: usize, j: usize) -> Self {
        Self::new(format!("entry_{}_{}", i + 1, j + 1), move |s| s.matrix()[(i, j)])
    }

    pub fn functional(f: &FunctionalSpec) -> Self {
        let f = f.clone();
        Self::new(f.kind().label(), move |s| f.evaluate(s))
    }

    /// Trace, top eigenvalue, first diagonal entry, plus the functional if given.
    pub fn default_battery(functional: Option<&FunctionalSpec>) -> Vec<Self> {
        let mut out = vec![Self::trace(), Self::spectral_norm(), Self::entry(0, 0)];
        out.extend(functional.map(Self::functional));
        out
    }

    pub fn pushforward(&self, draws: &[SpdMatrix], provenance: &str) -> Result<EmpiricalLaw> {
        let values = draws.par_iter().map(|s| self.eval(s)).collect();
        EmpiricalLaw::new(values, format!("{} {}", self.name, provenance))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticDistance {
    pub statistic: String,
    pub ks: f64,
}

/// KS distance per statistic between the pushforwards of two draw sets.
pub fn statistic_distances(a: &[SpdMatrix], b: &[SpdMatrix], statistics: &[Statistic]) -> Result<Vec<StatisticDistance>> {
    if statistics.is_empty() {
        return Err(Error::invalid("at least one statistic is required"));
    }
    statistics
        .iter()
        .map(|s| {
            Ok(StatisticDistance {
                statistic: s.name.clone(),
                ks: kolmogorov_distance(&s.pushforward(a, "a")?, &s.pushforward(b, "b")?),
            })
        })
        .collect()
}

/// Max KS distance over scalar pushforwards; a lower bound on the total
/// variation distance between the two laws.
pub fn tv_distance_over_statistics(a: &[SpdMatrix], b: &[SpdMatrix], statistics: &[Statistic]) -> Result<f64> {
    Ok(statistic_distances(a, b, statistics)?
        .iter()
        .fold(0.0, |m, d| m.max(d.ks)))
}

/// Unit-spectral-norm probe directions with radial fractions in `(0, 1]`.
struct ProbeSet {
    directions: Vec<DMatrix<f64>>,
    fractions: Vec<f64>,
}

impl ProbeSet {
    fn new(p: usize, count: usize, seed: u64) -> Self {
        let boundary = count / 2;
        let (directions, fractions) = (0..count)
            .into_par_iter()
            .map(|k| {
                let mut rng = seed::child_rng(seed, k as u64);
                let mut h = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
                h = linalg::symmetrize(&h);
                let norm = linalg::sym_spectral_norm(&h);
                let frac = if k < boundary { 1.0 } else { rng.random::<f64>().max(f64::MIN_POSITIVE) };
                (h / norm, frac)
            })
            .unzip();
        Self {
            directions,
            fractions,
        }
    }

    /// Max of `|π(Σ)/π(Σ*) − 1|` over probes `Σ* + δ‖Σ*‖ u H`, skipping
    /// probes that leave the cone.
    fn flatness(&self, prior: &PriorSpec, model: &SpectralModel, log_center: f64, delta: f64) -> f64 {
        let center = model.sigma_star().matrix();
        let radius = delta * model.spectral_norm();
        self.directions
            .par_iter()
            .zip(&self.fractions)
            .filter_map(|(h, &u)| SpdMatrix::new(center + h * (radius * u)).ok())
            .map(|s| (prior.log_density(&s) - log_center).exp_m1().abs())
            .reduce(|| 0.0, f64::max)
    }
}

fn center_log_density(prior: &PriorSpec, model: &SpectralModel) -> Result<f64> {
    if prior.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: prior.dim(),
        });
    }
    let v = prior.log_density(model.sigma_star());
    if v == f64::NEG_INFINITY || v.is_nan() {
        return Err(Error::UndefinedFlatness);
    }
    Ok(v)
}

fn check_probe_count(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 flatness probes"));
    }
    Ok(())
}

/// Monte Carlo lower bound on the flatness `ρ(δ)` of the prior around `Σ*`.
pub fn estimate_flatness(prior: &PriorSpec, model: &SpectralModel, delta: f64, probes: usize, seed: u64) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::invalid("flatness radius must be nonnegative"));
    }
    check_probe_count(probes)?;
    let log_center = center_log_density(prior, model)?;
    if delta == 0.0 {
        return Ok(0.0);
    }
    Ok(ProbeSet::new(model.dim(), probes, seed).flatness(prior, model, log_center, delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatnessProfile {
    pub delta_grid: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub points_per_delta: usize,
}

/// Flatness along an increasing grid. The same probe directions are rescaled
/// for every radius and the running maximum is reported, so the profile is
/// nondecreasing.
pub fn flatness_profile(
    prior: &PriorSpec,
    model: &SpectralModel,
    delta_grid: &[f64],
    probes: usize,
    seed: u64,
) -> Result<FlatnessProfile> {
    check_grid(delta_grid)?;
    check_probe_count(probes)?;
    let log_center = center_log_density(prior, model)?;
    let set = ProbeSet::new(model.dim(), probes, seed);
    let mut running = 0.0_f64;
    let rho_values = delta_grid
        .iter()
        .map(|&d| {
            running = running.max(set.flatness(prior, model, log_center, d));
            running
        })
        .collect();
    Ok(FlatnessProfile {
        delta_grid: delta_grid.to_vec(),
        rho_values,
        points_per_delta: probes,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("radius grid is empty"));
    }
    if grid.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
        return Err(Error::invalid("radius grid must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("radius grid must be strictly increasing"));
    }
    Ok(())
}

/// Geometric grid `lo, lo·ratio, …` up to and including the first point ≥ `hi`.
pub fn geometric_grid(lo: f64, hi: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && ratio > 1.0) {
        return Err(Error::invalid("geometric grid needs 0 < lo ≤ hi and ratio > 1"));
    }
    let mut out = vec![lo];
    while *out.last().unwrap() < hi {
        out.push(out.last().unwrap() * ratio);
    }
    Ok(out)
}

pub const MIN_CONTRACTION_DRAWS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// Smallest grid radius meeting the criterion, or `+∞`.
    pub radius: f64,
    pub exhausted: bool,
    /// Per-replication smallest sufficient radius (`+∞` if none).
    pub per_replication: Vec<f64>,
}

/// Smallest grid radius whose vicinity holds posterior mass `≥ 1 − 1/n` in at
/// least `ceil((1 − 1/n) R)` of `R` data replications.
pub fn estimate_contraction_radius(
    prior: &PriorSpec,
    data_spec: &DatasetSpec,
    delta_grid: &[f64],
    method: SamplerMethod,
    draws: usize,
    replications: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    check_grid(delta_grid)?;
    if draws < MIN_CONTRACTION_DRAWS {
        return Err(Error::invalid(format!(
            "need at least {MIN_CONTRACTION_DRAWS} posterior draws per point, got {draws}"
        )));
    }
    if replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let n = data_spec.n as f64;
    let level = 1.0 - 1.0 / n;
    let center = data_spec.model.sigma_star().clone();
    let per_replication = (0..replications)
        .map(|k| {
            let data = Arc::new(sample_dataset(&data_spec.replication(k))?);
            let sampler = PosteriorSampler::new(prior.clone(), data, method, seed::derive_seed(seed, k as u64))?;
            let mut dist: Vec<f64> = sample_posterior(&sampler, draws)?
                .draws
                .par_iter()
                .map(|s| s.relative_distance(&center))
                .collect();
            dist.sort_by(f64::total_cmp);
            // mass(δ) ≥ level  ⟺  #{dist ≤ δ} ≥ ceil(level · M)
            let needed = ((level * draws as f64).ceil() as usize).clamp(1, draws);
            let threshold = dist[needed - 1];
            Ok(delta_grid
                .iter()
                .copied()
                .find(|&d| threshold <= d)
                .unwrap_or(f64::INFINITY))
        })
        .collect::<Result<Vec<f64>>>()?;
    let radius = upper_quantile(&mut per_replication.clone(), level);
    if radius.is_infinite() {
        log::warn!("contraction radius grid exhausted");
    }
    Ok(ContractionEstimate {
        radius,
        exhausted: radius.is_infinite(),
        per_replication,
    })
}
