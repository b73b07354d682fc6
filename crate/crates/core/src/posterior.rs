//! Gaussian pseudo-likelihood, priors on covariance matrices and posterior
//! samplers (exact conjugate, random-walk Metropolis, vicinity rejection).

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::spectral::SpdMatrix;

/// `l_n(Σ) = −(n/2) log det Σ − (n/2) Tr(Σ⁻¹ Σ̂) − (np/2) log 2π`.
pub fn log_likelihood(sigma: &SpdMatrix, data: &Dataset) -> Result<f64> {
    if sigma.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: sigma.dim(),
        });
    }
    let n = data.n() as f64;
    let p = data.dim() as f64;
    let chol = sigma.cholesky()?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let trace = chol.solve(data.sample_cov.matrix()).trace();
    Ok(-0.5 * n * log_det - 0.5 * n * trace - 0.5 * n * p * (2.0 * PI).ln())
}

/// Whether `sigma` lies in `B(δ) = {‖Σ − Σ*‖_∞ ≤ δ ‖Σ*‖_∞}`.
pub fn in_vicinity(sigma: &SpdMatrix, center: &SpdMatrix, delta: f64) -> bool {
    sigma.relative_distance(center) <= delta
}

/// Density-evaluable prior supplied by the caller.
#[derive(Clone)]
pub struct GenericPrior {
    pub name: String,
    pub dim: usize,
    log_density: Arc<dyn Fn(&SpdMatrix) -> f64 + Send + Sync>,
    /// Upper bound of the log density, needed only for vicinity rejection sampling.
    pub log_sup: Option<f64>,
}

impl GenericPrior {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        log_density: impl Fn(&SpdMatrix) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            log_density: Arc::new(log_density),
            log_sup: None,
        }
    }

    pub fn with_log_sup(mut self, log_sup: f64) -> Self {
        self.log_sup = Some(log_sup);
        self
    }
}

impl fmt::Debug for GenericPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericPrior")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("log_sup", &self.log_sup)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PriorSpec {
    /// `W⁻¹_p(G, p + b − 1)`.
    InverseWishart { g: SpdMatrix, b: f64 },
    /// Lebesgue-uniform on `{‖Σ − center‖_∞ ≤ delta ‖center‖_∞}`.
    UniformVicinity { center: SpdMatrix, delta: f64 },
    Generic(GenericPrior),
}

impl PriorSpec {
    pub fn inverse_wishart(g: SpdMatrix, b: f64) -> Result<Self> {
        if !(b > 0.0) {
            return Err(Error::invalid(format!("inverse Wishart b must be positive, got {b}")));
        }
        Ok(PriorSpec::InverseWishart { g, b })
    }

    /// `G = 0.01·I`, `b = 2`.
    pub fn default_inverse_wishart(p: usize) -> Self {
        PriorSpec::InverseWishart {
            g: SpdMatrix::identity(p).scaled(0.01).expect("scaled identity is SPD"),
            b: 2.0,
        }
    }

    pub fn uniform_vicinity(center: SpdMatrix, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("vicinity radius must be positive, got {delta}")));
        }
        Ok(PriorSpec::UniformVicinity { center, delta })
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::InverseWishart { g, .. } => g.dim(),
            PriorSpec::UniformVicinity { center, .. } => center.dim(),
            PriorSpec::Generic(g) => g.dim,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            PriorSpec::InverseWishart { .. } => "inverse_wishart",
            PriorSpec::UniformVicinity { .. } => "uniform_vicinity",
            PriorSpec::Generic(g) => &g.name,
        }
    }

    /// Operator norm of `G` for inverse Wishart priors, zero otherwise.
    pub fn g_norm(&self) -> f64 {
        match self {
            PriorSpec::InverseWishart { g, .. } => g.norms().spectral,
            _ => 0.0,
        }
    }

    /// Unnormalized log density; `-inf` outside the support.
    pub fn log_density(&self, sigma: &SpdMatrix) -> f64 {
        match self {
            PriorSpec::InverseWishart { g, b } => {
                let p = sigma.dim() as f64;
                let (Ok(chol), Ok(log_det)) = (sigma.cholesky(), sigma.log_det()) else {
                    return f64::NEG_INFINITY;
                };
                let trace = chol.solve(g.matrix()).trace();
                -0.5 * (2.0 * p + b) * log_det - 0.5 * trace
            }
            PriorSpec::UniformVicinity { center, delta } => {
                if in_vicinity(sigma, center, *delta) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            PriorSpec::Generic(g) => (g.log_density)(sigma),
        }
    }

    /// Conjugate posterior parameters `(nΣ̂ + G, n + p + b − 1)`.
    pub fn conjugate_posterior(&self, data: &Dataset) -> Result<(SpdMatrix, f64)> {
        match self {
            PriorSpec::InverseWishart { g, b } => {
                check_dim(g.dim(), data.dim())?;
                let n = data.n() as f64;
                let p = data.dim() as f64;
                let scale = SpdMatrix::new(data.sample_cov.matrix() * n + g.matrix())?;
                Ok((scale, n + p + b - 1.0))
            }
            _ => Err(Error::Unsupported(format!(
                "exact conjugate sampling needs an inverse Wishart prior, got {}",
                self.name()
            ))),
        }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Likelihood normalized as a density in `Σ`: `W⁻¹(nΣ̂, n − p − 1)`.
pub fn flat_prior_posterior(data: &Dataset) -> Result<(SpdMatrix, f64)> {
    let n = data.n() as f64;
    let p = data.dim() as f64;
    Ok((data.sample_cov.scaled(n)?, n - p - 1.0))
}

/// Draws from `W⁻¹(scale, dof)` by inverting a Bartlett-factored Wishart draw.
///
/// Draw `i` uses its own stream derived from `(seed, i)`, so output does not
/// depend on thread scheduling.
pub fn sample_inverse_wishart(
    scale: &SpdMatrix,
    dof: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<SpdMatrix>> {
    let sampler = InverseWishartSampler::new(scale, dof)?;
    (0..count)
        .into_par_iter()
        .map(|i| sampler.draw(&mut seed::child_rng(seed, i as u64)))
        .collect()
}

struct InverseWishartSampler {
    scale_chol: DMatrix<f64>,
    chi: Vec<ChiSquared<f64>>,
}

impl InverseWishartSampler {
    fn new(scale: &SpdMatrix, dof: f64) -> Result<Self> {
        let p = scale.dim();
        if !(dof > (p as f64) - 1.0) {
            return Err(Error::BadDegreesOfFreedom { dof, dim: p });
        }
        let chi = (0..p)
            .map(|i| {
                ChiSquared::new(dof - i as f64).map_err(|_| Error::BadDegreesOfFreedom { dof, dim: p })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scale_chol: scale.cholesky()?.l(),
            chi,
        })
    }

    /// With `scale = R Rᵀ` and Bartlett factor `A`, returns `R A⁻ᵀ A⁻¹ Rᵀ`.
    fn draw(&self, rng: &mut seed::Rng) -> Result<SpdMatrix> {
        let p = self.scale_chol.nrows();
        let mut a = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            a[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let a_inv = a
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: 0.0,
            })?;
        let t = &self.scale_chol * a_inv.transpose();
        SpdMatrix::new(&t * t.transpose())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetropolisConfig {
    /// Initial random-walk step in the Cholesky/log-diagonal coordinates.
    pub step_scale: f64,
    pub burn_in: usize,
    pub thin: usize,
    /// Independent chains run in parallel; draws are split evenly.
    #[serde(default = "one")]
    pub chains: usize,
}

fn one() -> usize {
    1
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.01,
            burn_in: 5_000,
            thin: 10,
            chains: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SamplerMethod {
    ExactConjugate,
    Metropolis(MetropolisConfig),
    RejectionInVicinity { delta_bar: f64 },
}

#[derive(Debug, Clone)]
pub struct PosteriorSampler {
    pub prior: PriorSpec,
    pub data: Arc<Dataset>,
    pub method: SamplerMethod,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum SamplerWarning {
    /// Post-adaptation Metropolis acceptance rate outside `[0.05, 0.95]`.
    PoorMixing { acceptance: f64 },
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<SpdMatrix>,
    pub warnings: Vec<SamplerWarning>,
    /// Metropolis acceptance after adaptation, or rejection acceptance.
    pub acceptance_rate: Option<f64>,
}

impl PosteriorSampler {
    pub fn new(prior: PriorSpec, data: Arc<Dataset>, method: SamplerMethod, seed: u64) -> Result<Self> {
        check_dim(data.dim(), prior.dim())?;
        if matches!(method, SamplerMethod::ExactConjugate)
            && !matches!(prior, PriorSpec::InverseWishart { .. })
        {
            return Err(Error::Unsupported(
                "exact conjugate sampling needs an inverse Wishart prior".into(),
            ));
        }
        Ok(Self {
            prior,
            data,
            method,
            seed,
        })
    }
}

pub fn sample_posterior(sampler: &PosteriorSampler, count: usize) -> Result<PosteriorDraws> {
    if count == 0 {
        return Err(Error::invalid("draw count must be positive"));
    }
    match sampler.method {
        SamplerMethod::ExactConjugate => {
            let (scale, dof) = sampler.prior.conjugate_posterior(&sampler.data)?;
            Ok(PosteriorDraws {
                draws: sample_inverse_wishart(&scale, dof, count, sampler.seed)?,
                warnings: Vec::new(),
                acceptance_rate: None,
            })
        }
        SamplerMethod::Metropolis(cfg) => metropolis(sampler, &cfg, count),
        SamplerMethod::RejectionInVicinity { delta_bar } => rejection(sampler, delta_bar, count),
    }
}

/// Monte Carlo estimate of `Π(B(δ̄) | Xⁿ)` around the data's true covariance.
pub fn localized_posterior_mass(sampler: &PosteriorSampler, delta_bar: f64, count: usize) -> Result<f64> {
    let draws = sample_posterior(sampler, count)?;
    let center = sampler.data.model().sigma_star();
    let inside = draws
        .draws
        .par_iter()
        .filter(|s| in_vicinity(s, center, delta_bar))
        .count();
    Ok(inside as f64 / draws.draws.len() as f64)
}

const PILOT_PROPOSALS: usize = 10_000;
const MIN_ACCEPTANCE: f64 = 1e-4;
const MAX_ATTEMPTS_PER_DRAW: usize = 1_000_000;

fn rejection(sampler: &PosteriorSampler, delta_bar: f64, count: usize) -> Result<PosteriorDraws> {
    if !(delta_bar > 0.0) {
        return Err(Error::invalid("vicinity radius must be positive"));
    }
    let data = &sampler.data;
    let center = data.model().sigma_star();
    let (scale, dof) = match &sampler.prior {
        PriorSpec::InverseWishart { .. } => sampler.prior.conjugate_posterior(data)?,
        _ => flat_prior_posterior(data)?,
    };
    let log_sup = match &sampler.prior {
        PriorSpec::Generic(g) => Some(g.log_sup.ok_or_else(|| {
            Error::Unsupported(format!(
                "rejection sampling with generic prior {} needs a log-density upper bound",
                g.name
            ))
        })?),
        _ => None,
    };
    let proposal = InverseWishartSampler::new(&scale, dof)?;

    // Uniform and conjugate targets differ from the proposal only by the
    // vicinity indicator; generic targets are thinned by the prior density.
    let accept = |sigma: &SpdMatrix, rng: &mut seed::Rng| -> Result<bool> {
        if !in_vicinity(sigma, center, delta_bar) {
            return Ok(false);
        }
        let log_prior = match &sampler.prior {
            PriorSpec::InverseWishart { .. } => return Ok(true),
            PriorSpec::UniformVicinity { .. } => {
                return Ok(sampler.prior.log_density(sigma) > f64::NEG_INFINITY)
            }
            PriorSpec::Generic(_) => sampler.prior.log_density(sigma),
        };
        let log_sup = log_sup.unwrap_or(0.0);
        if log_prior > log_sup {
            return Err(Error::EnvelopeViolated);
        }
        Ok(rng.random::<f64>() < (log_prior - log_sup).exp())
    };

    let pilot_seed = seed::derive_named(sampler.seed, "rejection-pilot");
    let accepted = (0..PILOT_PROPOSALS)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::child_rng(pilot_seed, i as u64);
            let sigma = proposal.draw(&mut rng)?;
            accept(&sigma, &mut rng)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&a| a)
        .count();
    let pilot_rate = accepted as f64 / PILOT_PROPOSALS as f64;
    if pilot_rate < MIN_ACCEPTANCE {
        return Err(Error::RejectionStarved {
            acceptance: pilot_rate,
        });
    }

    let results = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::child_rng(sampler.seed, i as u64);
            for attempt in 1..=MAX_ATTEMPTS_PER_DRAW {
                let sigma = proposal.draw(&mut rng)?;
                if accept(&sigma, &mut rng)? {
                    return Ok((sigma, attempt));
                }
            }
            Err(Error::RejectionStarved {
                acceptance: 1.0 / MAX_ATTEMPTS_PER_DRAW as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let attempts: usize = results.iter().map(|(_, a)| a).sum();
    Ok(PosteriorDraws {
        acceptance_rate: Some(count as f64 / attempts as f64),
        draws: results.into_iter().map(|(s, _)| s).collect(),
        warnings: Vec::new(),
    })
}

/// Log target on the unconstrained coordinates `θ` of `Σ = L Lᵀ`
/// (strict lower triangle of `L` plus `log L_ii`), Jacobian included.
struct CholeskyTarget<'a> {
    prior: &'a PriorSpec,
    n: f64,
    p: usize,
    sample_cov_chol: DMatrix<f64>,
    g_chol: Option<DMatrix<f64>>,
}

impl<'a> CholeskyTarget<'a> {
    fn new(prior: &'a PriorSpec, data: &Dataset) -> Result<Self> {
        let g_chol = match prior {
            PriorSpec::InverseWishart { g, .. } => Some(g.cholesky()?.l()),
            _ => None,
        };
        Ok(Self {
            prior,
            n: data.n() as f64,
            p: data.dim(),
            sample_cov_chol: data.sample_cov.cholesky()?.l(),
            g_chol,
        })
    }

    fn dim(&self) -> usize {
        self.p * (self.p + 1) / 2
    }

    fn factor(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.p, self.p);
        let mut k = 0;
        for i in 0..self.p {
            for j in 0..=i {
                l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
                k += 1;
            }
        }
        l
    }

    fn encode(&self, sigma: &SpdMatrix) -> Result<DVector<f64>> {
        let l = sigma.cholesky()?.l();
        let mut theta = DVector::zeros(self.dim());
        let mut k = 0;
        for i in 0..self.p {
            for j in 0..=i {
                theta[k] = if i == j { l[(i, i)].ln() } else { l[(i, j)] };
                k += 1;
            }
        }
        Ok(theta)
    }

    fn log_density(&self, theta: &DVector<f64>) -> f64 {
        let l = self.factor(theta);
        let p = self.p;
        let mut log_det = 0.0;
        let mut log_jac = 0.0;
        let mut k = 0;
        for i in 0..p {
            k += i;
            log_det += 2.0 * theta[k];
            log_jac += (p - i + 1) as f64 * theta[k];
            k += 1;
        }
        let Some(whitened) = l.solve_lower_triangular(&self.sample_cov_chol) else {
            return f64::NEG_INFINITY;
        };
        let loglik = -0.5 * self.n * log_det - 0.5 * self.n * whitened.norm_squared();
        let log_prior = match (self.prior, &self.g_chol) {
            (PriorSpec::InverseWishart { b, .. }, Some(g_chol)) => {
                let Some(w) = l.solve_lower_triangular(g_chol) else {
                    return f64::NEG_INFINITY;
                };
                -0.5 * (2.0 * p as f64 + b) * log_det - 0.5 * w.norm_squared()
            }
            _ => match SpdMatrix::new(&l * l.transpose()) {
                Ok(sigma) => self.prior.log_density(&sigma),
                Err(_) => f64::NEG_INFINITY,
            },
        };
        let total = loglik + log_prior + log_jac;
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

const TARGET_ACCEPTANCE: f64 = 0.3;

fn metropolis(sampler: &PosteriorSampler, cfg: &MetropolisConfig, count: usize) -> Result<PosteriorDraws> {
    if cfg.thin == 0 {
        return Err(Error::invalid("thin must be at least 1"));
    }
    if !(cfg.step_scale > 0.0) {
        return Err(Error::invalid("step scale must be positive"));
    }
    let chains = cfg.chains.max(1).min(count);
    let target = CholeskyTarget::new(&sampler.prior, &sampler.data)?;
    let start = target.encode(&sampler.data.sample_cov)?;
    if target.log_density(&start) == f64::NEG_INFINITY {
        return Err(Error::invalid(
            "metropolis start (sample covariance) has zero posterior density",
        ));
    }
    let per_chain: Vec<usize> = (0..chains)
        .map(|c| count / chains + usize::from(c < count % chains))
        .collect();
    let runs = per_chain
        .par_iter()
        .enumerate()
        .map(|(c, &m)| run_chain(&target, &start, cfg, m, seed::derive_seed(sampler.seed, c as u64)))
        .collect::<Result<Vec<_>>>()?;

    let mut draws = Vec::with_capacity(count);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    for (chain_draws, acc, prop) in runs {
        draws.extend(chain_draws);
        accepted += acc;
        proposed += prop;
    }
    let rate = accepted as f64 / proposed.max(1) as f64;
    let mut warnings = Vec::new();
    if !(0.05..=0.95).contains(&rate) {
        warnings.push(SamplerWarning::PoorMixing { acceptance: rate });
    }
    Ok(PosteriorDraws {
        draws,
        warnings,
        acceptance_rate: Some(rate),
    })
}

fn empirical_shape(history: &[DVector<f64>]) -> Option<DMatrix<f64>> {
    let d = history.first()?.len();
    if history.len() < 2 * d + 2 {
        return None;
    }
    let m = history.len() as f64;
    let mean = history.iter().fold(DVector::zeros(d), |acc, x| acc + x) / m;
    let mut cov = DMatrix::zeros(d, d);
    for x in history {
        let c = x - &mean;
        cov += &c * c.transpose();
    }
    cov /= m - 1.0;
    let jitter = 1e-10 * cov.diagonal().max().max(1e-300);
    cov += DMatrix::identity(d, d) * jitter;
    cov.cholesky().map(|c| c.l())
}

/// One chain: adapt the step (and, twice, the proposal shape) during burn-in,
/// then freeze and record every `thin`-th state.
fn run_chain(
    target: &CholeskyTarget<'_>,
    start: &DVector<f64>,
    cfg: &MetropolisConfig,
    count: usize,
    chain_seed: u64,
) -> Result<(Vec<SpdMatrix>, usize, usize)> {
    let d = target.dim();
    let mut rng = seed::rng(chain_seed);
    let mut theta = start.clone();
    let mut log_p = target.log_density(&theta);
    let mut shape = DMatrix::<f64>::identity(d, d);
    let mut log_step = cfg.step_scale.ln();
    let mut adapt_t = 0usize;

    let step = |theta: &mut DVector<f64>,
                    log_p: &mut f64,
                    shape: &DMatrix<f64>,
                    step_size: f64,
                    rng: &mut seed::Rng|
     -> f64 {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let proposal = &*theta + shape * z * step_size;
        let log_q = target.log_density(&proposal);
        let log_alpha = log_q - *log_p;
        let accept_prob = if log_alpha >= 0.0 { 1.0 } else { log_alpha.exp() };
        if rng.random::<f64>() < accept_prob {
            *theta = proposal;
            *log_p = log_q;
        }
        accept_prob
    };

    let checkpoints = [cfg.burn_in / 3, 2 * cfg.burn_in / 3];
    let mut history = Vec::new();
    for t in 0..cfg.burn_in {
        let a = step(&mut theta, &mut log_p, &shape, log_step.exp(), &mut rng);
        adapt_t += 1;
        log_step += (a - TARGET_ACCEPTANCE) / (adapt_t as f64).powf(0.6);
        if t >= checkpoints[0] / 2 {
            history.push(theta.clone());
        }
        if checkpoints.contains(&(t + 1)) {
            if let Some(s) = empirical_shape(&history) {
                shape = s;
                log_step = (2.38 / (d as f64).sqrt()).ln();
                adapt_t = 0;
            }
            history.clear();
        }
    }

    let step_size = log_step.exp();
    let mut draws = Vec::with_capacity(count);
    let mut accepted = 0usize;
    let mut proposed = 0usize;
    while draws.len() < count {
        for _ in 0..cfg.thin {
            let before = log_p;
            step(&mut theta, &mut log_p, &shape, step_size, &mut rng);
            proposed += 1;
            if log_p != before {
                accepted += 1;
            }
        }
        let l = target.factor(&theta);
        draws.push(SpdMatrix::new(&l * l.transpose())?);
    }
    Ok((draws, accepted, proposed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample_dataset, DatasetSpec, Family};
    use crate::spectral::SpectralModel;
    use crate::linalg;
    use std::f64::consts::PI;

    fn dataset(values: &[f64], mults: &[usize], n: usize, seed: u64) -> Arc<Dataset> {
        let model = SpectralModel::from_groups(values, mults, None).unwrap();
        let spec = DatasetSpec::new(Arc::new(model), Family::Gaussian, n, seed).unwrap();
        Arc::new(sample_dataset(&spec).unwrap())
    }

    fn with_sample_cov(data: &Dataset, cov: SpdMatrix) -> Dataset {
        Dataset {
            spec: data.spec.clone(),
            samples: data.samples.clone(),
            sample_cov: cov,
        }
    }

    #[test]
    fn log_likelihood_identity() {
        let data = dataset(&[1.0], &[3], 10, 1);
        let data = with_sample_cov(&data, SpdMatrix::identity(3));
        let l = log_likelihood(&SpdMatrix::identity(3), &data).unwrap();
        let expected = -(10.0 * 3.0 / 2.0) * (1.0 + (2.0 * PI).ln());
        assert!((l - expected).abs() < 1e-10);
    }

    #[test]
    fn log_likelihood_scalar() {
        let data = dataset(&[1.0], &[1], 2, 1);
        let data = with_sample_cov(&data, SpdMatrix::identity(1));
        let sigma = SpdMatrix::from_diagonal(&[2.0]).unwrap();
        let l = log_likelihood(&sigma, &data).unwrap();
        let expected = -(2.0f64).ln() - 0.5 - (2.0 * PI).ln();
        assert!((l - expected).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_peaks_at_sample_cov() {
        let data = dataset(&[3.0, 1.0], &[1, 2], 200, 4);
        let best = log_likelihood(&data.sample_cov, &data).unwrap();
        let mut rng = seed::rng(5);
        for _ in 0..20 {
            let h = DMatrix::<f64>::from_fn(3, 3, |_, _| rng.sample(StandardNormal));
            let h = linalg::symmetrize(&h);
            for t in [-1e-3, -1e-4, 1e-4, 1e-3] {
                let s = SpdMatrix::new(data.sample_cov.matrix() + &h * t).unwrap();
                assert!(log_likelihood(&s, &data).unwrap() <= best);
            }
        }
    }

    #[test]
    fn inverse_wishart_rejects_small_dof() {
        assert!(matches!(
            sample_inverse_wishart(&SpdMatrix::identity(3), 1.5, 1, 0),
            Err(Error::BadDegreesOfFreedom { .. })
        ));
    }

    #[test]
    fn inverse_wishart_mean() {
        let draws = sample_inverse_wishart(&SpdMatrix::identity(3), 10.0, 100_000, 17).unwrap();
        let mean = draws.iter().fold(DMatrix::zeros(3, 3), |a, d| a + d.matrix()) / draws.len() as f64;
        let err = linalg::sym_spectral_norm(&(mean - DMatrix::identity(3, 3) / 6.0));
        assert!(err < 0.03, "mean error {err}");
    }

    #[test]
    fn draws_are_deterministic() {
        let a = sample_inverse_wishart(&SpdMatrix::identity(2), 5.0, 50, 3).unwrap();
        let b = sample_inverse_wishart(&SpdMatrix::identity(2), 5.0, 50, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exact_conjugate_needs_inverse_wishart() {
        let data = dataset(&[1.0], &[2], 100, 1);
        let prior = PriorSpec::uniform_vicinity(SpdMatrix::identity(2), 0.5).unwrap();
        assert!(PosteriorSampler::new(prior, data, SamplerMethod::ExactConjugate, 0).is_err());
    }

    #[test]
    fn conjugate_posterior_mean_near_sample_cov() {
        let data = dataset(&[2.0, 1.0], &[1, 2], 2000, 8);
        let prior = PriorSpec::default_inverse_wishart(3);
        let sampler = PosteriorSampler::new(prior, data.clone(), SamplerMethod::ExactConjugate, 2).unwrap();
        let draws = sample_posterior(&sampler, 20_000).unwrap().draws;
        let mean = draws.iter().fold(DMatrix::zeros(3, 3), |a, d| a + d.matrix()) / draws.len() as f64;
        let err = linalg::sym_spectral_norm(&(mean - data.sample_cov.matrix()));
        assert!(err < 0.05, "{err}");
    }

    #[test]
    fn uniform_vicinity_draws_stay_inside() {
        let data = dataset(&[1.0], &[2], 2000, 9);
        let center = data.model().sigma_star().clone();
        let delta = 0.08;
        let prior = PriorSpec::uniform_vicinity(center.clone(), delta).unwrap();
        let sampler = PosteriorSampler::new(
            prior,
            data,
            SamplerMethod::RejectionInVicinity { delta_bar: delta },
            1,
        )
        .unwrap();
        let out = sample_posterior(&sampler, 500).unwrap();
        assert!(out.draws.iter().all(|s| in_vicinity(s, &center, delta)));
    }

    #[test]
    fn rejection_starves_on_tiny_vicinity() {
        let data = dataset(&[1.0], &[3], 500, 10);
        let prior = PriorSpec::default_inverse_wishart(3);
        let sampler = PosteriorSampler::new(
            prior,
            data,
            SamplerMethod::RejectionInVicinity { delta_bar: 1e-4 },
            1,
        )
        .unwrap();
        assert!(matches!(
            sample_posterior(&sampler, 10),
            Err(Error::RejectionStarved { .. })
        ));
    }

    #[test]
    fn generic_rejection_needs_envelope() {
        let data = dataset(&[1.0], &[2], 500, 10);
        let prior = PriorSpec::Generic(GenericPrior::new("flat", 2, |_| 0.0));
        let sampler = PosteriorSampler::new(
            prior,
            data.clone(),
            SamplerMethod::RejectionInVicinity { delta_bar: 0.5 },
            1,
        )
        .unwrap();
        assert!(matches!(sample_posterior(&sampler, 10), Err(Error::Unsupported(_))));

        let prior = PriorSpec::Generic(GenericPrior::new("flat", 2, |_| 0.0).with_log_sup(0.0));
        let sampler = PosteriorSampler::new(
            prior,
            data,
            SamplerMethod::RejectionInVicinity { delta_bar: 0.5 },
            1,
        )
        .unwrap();
        assert_eq!(sample_posterior(&sampler, 10).unwrap().draws.len(), 10);
    }

    #[test]
    fn localized_mass_limits() {
        let data = dataset(&[1.0], &[3], 2000, 12);
        let sampler = PosteriorSampler::new(
            PriorSpec::default_inverse_wishart(3),
            data,
            SamplerMethod::ExactConjugate,
            3,
        )
        .unwrap();
        assert_eq!(localized_posterior_mass(&sampler, 1e3, 2000).unwrap(), 1.0);
        assert_eq!(localized_posterior_mass(&sampler, 0.0, 2000).unwrap(), 0.0);
    }

    #[test]
    fn cholesky_target_roundtrip() {
        let data = dataset(&[2.0, 1.0], &[1, 1], 100, 2);
        let prior = PriorSpec::default_inverse_wishart(2);
        let target = CholeskyTarget::new(&prior, &data).unwrap();
        let theta = target.encode(&data.sample_cov).unwrap();
        let l = target.factor(&theta);
        assert!((l.clone() * l.transpose() - data.sample_cov.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn metropolis_reports_acceptance() {
        let data = dataset(&[1.0], &[2], 500, 21);
        let sampler = PosteriorSampler::new(
            PriorSpec::default_inverse_wishart(2),
            data,
            SamplerMethod::Metropolis(MetropolisConfig {
                step_scale: 0.05,
                burn_in: 2000,
                thin: 2,
                chains: 2,
            }),
            5,
        )
        .unwrap();
        let out = sample_posterior(&sampler, 1001).unwrap();
        assert_eq!(out.draws.len(), 1001);
        let rate = out.acceptance_rate.unwrap();
        assert!((0.1..0.6).contains(&rate), "{rate}");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn metropolis_flags_frozen_huge_step() {
        let data = dataset(&[1.0], &[2], 500, 21);
        let sampler = PosteriorSampler::new(
            PriorSpec::default_inverse_wishart(2),
            data,
            SamplerMethod::Metropolis(MetropolisConfig {
                step_scale: 50.0,
                burn_in: 0,
                thin: 1,
                chains: 1,
            }),
            5,
        )
        .unwrap();
        let out = sample_posterior(&sampler, 200).unwrap();
        assert!(matches!(out.warnings.as_slice(), [SamplerWarning::PoorMixing { .. }]));
    }
}
