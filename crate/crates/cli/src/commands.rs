use std::sync::Arc;

use covbvm::data::{estimate_delta_hat, estimate_delta_tilde, sample_dataset, upper_quantile, Dataset};
use covbvm::diagnostics::{
    budget_functional, budget_posterior_independence, budget_projector, dkw_radius, estimate_contraction_radius,
    estimate_flatness, flatness_profile, geometric_grid, kolmogorov_distance_to_cdf, standard_normal_cdf,
    statistic_distances, FunctionalBudgetInputs, ProjectorBudgetInputs, Statistic,
};
use covbvm::functionals::{standardized_statistic, FunctionalSpec, Normalization};
use covbvm::io;
use covbvm::linalg;
use covbvm::posterior::{sample_posterior, PosteriorSampler, PriorSpec, SamplerMethod};
use covbvm::projectors::{
    empirical_projector, precondition_bound, projector_bvm_check, projector_from, ProjectorCheckConfig,
};
use covbvm::seed;
use covbvm::{EigenspaceSelection, SpdMatrix};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Command, Resolved};
use crate::CliError;

/// Report plus CSV artifacts produced by one command.
pub struct Outcome {
    pub report: Value,
    pub csv: Vec<(String, String, Vec<f64>)>,
    pub extra: Vec<(String, String)>,
}

impl Outcome {
    fn report(report: Value) -> Self {
        Self {
            report,
            csv: Vec::new(),
            extra: Vec::new(),
        }
    }

    fn with_column(mut self, file: &str, statistic: &str, values: Vec<f64>) -> Self {
        self.csv.push((file.into(), statistic.into(), values));
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PreconditionCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

fn dimension_ratio_check(r: &Resolved) -> PreconditionCheck {
    let value = r.model.dim() as f64 / r.data_spec.n as f64;
    let ok = value <= 0.1;
    if !ok {
        log::warn!("p/n = {value} exceeds 0.1; contraction guarantees may not apply");
    }
    PreconditionCheck {
        name: "p_over_n".into(),
        value,
        bound: 0.1,
        ok,
    }
}

fn derived(r: &Resolved, label: &str) -> u64 {
    seed::derive_named(r.seed, label)
}

fn posterior(r: &Resolved, prior: PriorSpec, data: Arc<Dataset>, method: SamplerMethod, label: &str) -> Result<PosteriorSampler, CliError> {
    Ok(PosteriorSampler::new(prior, data, method, derived(r, label))?)
}

/// Single-dataset proxy for the posterior contraction radius: the
/// `(1 − 1/n)` quantile of `‖Σ − Σ*‖/‖Σ*‖` over posterior draws.
fn posterior_radius(draws: &[SpdMatrix], center: &SpdMatrix, n: usize) -> f64 {
    let mut d: Vec<f64> = draws.par_iter().map(|s| s.relative_distance(center)).collect();
    upper_quantile(&mut d, 1.0 - 1.0 / n as f64)
}

/// `‖Σ*^{-1/2} G Σ*^{-1/2}‖_∞` for inverse Wishart priors, zero otherwise.
fn g_norm_scaled(r: &Resolved) -> f64 {
    match &r.prior {
        PriorSpec::InverseWishart { g, .. } => {
            let w = r.model.sigma_inv_sqrt();
            linalg::sym_spectral_norm(&linalg::symmetrize(&(w * g.matrix() * w)))
        }
        _ => 0.0,
    }
}

fn functional_budget_value(r: &Resolved, f: &FunctionalSpec, data: &Arc<Dataset>) -> Result<Value, CliError> {
    if f.c_phi().is_none() {
        return Ok(Value::Null);
    }
    let reps = r.monte_carlo.replications;
    let delta_hat = estimate_delta_hat(&r.data_spec.with_seed(derived(r, "delta-hat")), reps)?.radius;
    let delta_tilde = estimate_delta_tilde(&r.data_spec.with_seed(derived(r, "delta-tilde")), f, reps)?.radius;
    let iw = match &r.prior {
        PriorSpec::InverseWishart { .. } => r.prior.clone(),
        _ => PriorSpec::default_inverse_wishart(r.model.dim()),
    };
    let w_draws = sample_posterior(
        &posterior(r, iw, data.clone(), SamplerMethod::ExactConjugate, "budget-posterior")?,
        r.monte_carlo.posterior_draws,
    )?;
    let delta_w = posterior_radius(&w_draws.draws, r.model.sigma_star(), data.n());
    let inputs = FunctionalBudgetInputs {
        n: data.n(),
        delta_w,
        delta_hat,
        delta_tilde,
        g_norm_scaled: g_norm_scaled(r),
    };
    Ok(json!({ "inputs": inputs, "budget": budget_functional(&r.model, f, &inputs)? }))
}

fn bvm_functional(r: &Resolved) -> Result<Outcome, CliError> {
    let f = r.functional.as_ref().expect("validated");
    let data = Arc::new(sample_dataset(&r.data_spec)?);
    let draws = sample_posterior(&posterior(r, r.prior.clone(), data.clone(), r.method, "posterior")?, r.monte_carlo.posterior_draws)?;
    let stat = standardized_statistic(f, &draws.draws, &data, Normalization::Truth)?;
    let ks = kolmogorov_distance_to_cdf(&stat.values, standard_normal_cdf);
    let report = json!({
        "command": "bvm-functional",
        "functional": f.kind().label(),
        "n": data.n(),
        "p": data.dim(),
        "posterior_draws": stat.values.len(),
        "ks": ks,
        "dkw_radius_99": dkw_radius(stat.values.len(), 0.01),
        "normalizer": stat.normalizer,
        "rank": f.rank(),
        "acceptance_rate": draws.acceptance_rate,
        "warnings": draws.warnings,
        "preconditions": [dimension_ratio_check(r)],
        "budget": functional_budget_value(r, f, &data)?,
    });
    Ok(Outcome::report(report).with_column("statistic.csv", &f.kind().label(), stat.values.values().to_vec()))
}

fn bvm_projector(r: &Resolved) -> Result<Outcome, CliError> {
    let sel = r.selection.expect("validated");
    let check = projector_bvm_check(&ProjectorCheckConfig {
        prior: r.prior.clone(),
        method: r.method,
        data_spec: r.data_spec.clone(),
        selection: sel,
        posterior_draws: r.monte_carlo.posterior_draws,
        reference_draws: r.monte_carlo.reference_draws,
        delta_hat_replications: r.monte_carlo.replications,
        l_star: r.l_star.expect("validated"),
        seed: r.seed,
    })?;
    let gate = precondition_bound(&r.model, &sel)?;
    let report = json!({
        "command": "bvm-projector",
        "selection": { "s_minus": sel.s_minus + 1, "s_plus": sel.s_plus + 1 },
        "n": r.data_spec.n,
        "p": r.model.dim(),
        "ks": check.ks,
        "budget": check.budget,
        "precondition_ok": check.precondition_ok,
        "delta_hat": check.delta_hat,
        "near_degenerate_draws": check.statistic.near_degenerate_draws,
        "reference_mean": check.reference.mean(),
        "warnings": check.warnings,
        "preconditions": [
            dimension_ratio_check(r),
            PreconditionCheck { name: "delta_hat_gap".into(), value: check.delta_hat, bound: gate, ok: check.precondition_ok },
        ],
    });
    Ok(Outcome::report(report)
        .with_column("statistic.csv", "projector_statistic", check.statistic.values.values().to_vec())
        .with_column("reference.csv", "chi_square_mixture", check.reference.values().to_vec()))
}

fn default_contraction_grid() -> Vec<f64> {
    geometric_grid(1e-3, 4.0, 1.05).expect("valid grid")
}

fn contraction(r: &Resolved) -> Result<Outcome, CliError> {
    let grid = r.delta_grid.clone().unwrap_or_else(default_contraction_grid);
    let est = estimate_contraction_radius(
        &r.prior,
        &r.data_spec,
        &grid,
        r.method,
        r.monte_carlo.posterior_draws,
        r.monte_carlo.replications,
        derived(r, "contraction"),
    )?;
    let radius = if est.exhausted { Value::Null } else { json!(est.radius) };
    let report = json!({
        "command": "contraction",
        "n": r.data_spec.n,
        "p": r.model.dim(),
        "radius": radius,
        "exhausted": est.exhausted,
        "replications": est.per_replication.len(),
        "preconditions": [dimension_ratio_check(r)],
    });
    let per_rep = est.per_replication.iter().map(|v| if v.is_finite() { *v } else { f64::MAX }).collect();
    Ok(Outcome::report(report).with_column("per_replication.csv", "radius", per_rep))
}

fn flatness(r: &Resolved) -> Result<Outcome, CliError> {
    let grid = r.delta_grid.as_ref().expect("validated");
    let prof = flatness_profile(&r.prior, &r.model, grid, r.monte_carlo.flatness_probes, derived(r, "flatness"))?;
    let report = json!({
        "command": "flatness",
        "prior": r.prior.name(),
        "profile": prof,
    });
    let mut out = Outcome::report(report);
    out.extra.push(("flatness.csv".into(), io::write_flatness_csv(&prof.delta_grid, &prof.rho_values)));
    Ok(out)
}

fn bridge(r: &Resolved) -> Result<Outcome, CliError> {
    let iw = match &r.prior {
        PriorSpec::InverseWishart { .. } => r.prior.clone(),
        _ => PriorSpec::default_inverse_wishart(r.model.dim()),
    };
    let m = r.monte_carlo.posterior_draws;
    let delta_bar = match r.delta_bar {
        Some(d) => d,
        None => {
            let est = estimate_contraction_radius(
                &iw,
                &r.data_spec,
                &r.delta_grid.clone().unwrap_or_else(default_contraction_grid),
                SamplerMethod::ExactConjugate,
                m.max(1000),
                r.monte_carlo.replications,
                derived(r, "contraction"),
            )?;
            if est.exhausted {
                return Err(CliError::Runtime(covbvm::Error::invalid(
                    "contraction grid exhausted; supply delta_bar or a wider delta_grid",
                )));
            }
            est.radius
        }
    };
    let data = Arc::new(sample_dataset(&r.data_spec)?);
    let full = sample_posterior(&posterior(r, iw.clone(), data.clone(), SamplerMethod::ExactConjugate, "full")?, m)?;
    let localized = sample_posterior(
        &posterior(r, iw.clone(), data.clone(), SamplerMethod::RejectionInVicinity { delta_bar }, "localized")?,
        m,
    )?;
    let uniform_prior = PriorSpec::uniform_vicinity(r.model.sigma_star().clone(), delta_bar)?;
    let uniform = sample_posterior(
        &posterior(r, uniform_prior, data.clone(), SamplerMethod::RejectionInVicinity { delta_bar }, "uniform")?,
        m,
    )?;
    let battery = Statistic::default_battery(r.functional.as_ref());
    let rho_w = estimate_flatness(&iw, &r.model, delta_bar, r.monte_carlo.flatness_probes, derived(r, "flatness"))?;
    let n = data.n() as f64;
    // Two-sample KS fluctuation at level 1%, Bonferroni over the battery.
    let tolerance = ((2.0 * battery.len() as f64 / 0.01).ln() / m as f64).sqrt();
    let loc = statistic_distances(&full.draws, &localized.draws, &battery)?;
    let uni = statistic_distances(&full.draws, &uniform.draws, &battery)?;
    let max = |d: &[covbvm::diagnostics::StatisticDistance]| d.iter().fold(0.0_f64, |a, x| a.max(x.ks));
    let report = json!({
        "command": "bridge",
        "n": data.n(),
        "p": data.dim(),
        "delta_bar": delta_bar,
        "rho_w": rho_w,
        "ks_tolerance": tolerance,
        "localization": { "distances": loc, "max": max(&loc), "bound": 2.0 / n + tolerance },
        "uniform_vs_full": { "distances": uni, "max": max(&uni), "bound": 2.0 / n + 4.0 * rho_w + tolerance },
        "budget": budget_posterior_independence(0.0, rho_w, data.n())?,
        "preconditions": [dimension_ratio_check(r)],
    });
    Ok(Outcome::report(report))
}

/// Order statistics bounding the central `level` mass of `values`.
pub fn equal_tailed_interval(values: &mut [f64], level: f64) -> (f64, f64) {
    let alpha = 1.0 - level;
    let lo = upper_quantile(values, alpha / 2.0);
    let hi = upper_quantile(values, 1.0 - alpha / 2.0);
    (lo, hi)
}

#[derive(Debug, Clone, Serialize)]
pub struct WidthSummary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub nominal_level: f64,
    pub replications: usize,
    pub empirical_coverage: f64,
    pub interval_widths: WidthSummary,
    pub warnings: Vec<String>,
}

pub const LOW_DRAWS: usize = 100;

fn coverage_replication(r: &Resolved, k: usize) -> Result<(bool, f64), CliError> {
    let data = Arc::new(sample_dataset(&r.data_spec.replication(k))?);
    let sampler = PosteriorSampler::new(
        r.prior.clone(),
        data.clone(),
        r.method,
        seed::derive_seed(derived(r, "coverage-posterior"), k as u64),
    )?;
    let draws = sample_posterior(&sampler, r.monte_carlo.posterior_draws)?.draws;
    if let Some(f) = &r.functional {
        let mut values: Vec<f64> = draws.iter().map(|s| f.evaluate(s)).collect();
        let (lo, hi) = equal_tailed_interval(&mut values, r.nominal_level);
        let truth = f.value_at_truth();
        Ok((lo <= truth && truth <= hi, hi - lo))
    } else {
        let sel: EigenspaceSelection = r.selection.expect("validated");
        let n = data.n() as f64;
        let p_hat = empirical_projector(&data, &r.model, &sel)?;
        let truth = n * (r.model.selection_projector(&sel)? - &p_hat).norm_squared();
        let idx = r.model.selection_indices(&sel)?;
        let mut values: Vec<f64> = draws
            .par_iter()
            .map(|s| n * (projector_from(s.matrix(), idx.clone()) - &p_hat).norm_squared())
            .collect();
        let hi = upper_quantile(&mut values, r.nominal_level);
        Ok((truth <= hi, hi))
    }
}

pub fn coverage_report(r: &Resolved) -> Result<CoverageReport, CliError> {
    let reps = r.monte_carlo.replications;
    let results = (0..reps)
        .into_par_iter()
        .map(|k| coverage_replication(r, k))
        .collect::<Result<Vec<_>, CliError>>()?;
    let covered = results.iter().filter(|(c, _)| *c).count();
    let mut widths: Vec<f64> = results.iter().map(|(_, w)| *w).collect();
    let mean = widths.iter().sum::<f64>() / reps as f64;
    widths.sort_by(f64::total_cmp);
    let mut warnings = Vec::new();
    if r.monte_carlo.posterior_draws < LOW_DRAWS {
        log::warn!("only {} posterior draws per interval", r.monte_carlo.posterior_draws);
        warnings.push(format!(
            "low_draws: {} posterior draws per interval, quantiles are unreliable",
            r.monte_carlo.posterior_draws
        ));
    }
    Ok(CoverageReport {
        nominal_level: r.nominal_level,
        replications: reps,
        empirical_coverage: covered as f64 / reps as f64,
        interval_widths: WidthSummary {
            mean,
            median: widths[(reps - 1) / 2],
            min: widths[0],
            max: widths[reps - 1],
        },
        warnings,
    })
}

fn coverage(r: &Resolved) -> Result<Outcome, CliError> {
    let rep = coverage_report(r)?;
    let target = match (&r.functional, &r.selection) {
        (Some(f), _) => f.kind().label(),
        (None, Some(s)) => format!("projector {}..={}", s.s_minus + 1, s.s_plus + 1),
        _ => unreachable!("validated"),
    };
    Ok(Outcome::report(json!({
        "command": "coverage",
        "target": target,
        "n": r.data_spec.n,
        "p": r.model.dim(),
        "posterior_draws": r.monte_carlo.posterior_draws,
        "coverage": rep,
        "preconditions": [dimension_ratio_check(r)],
    })))
}

fn budget(r: &Resolved) -> Result<Outcome, CliError> {
    let mut report = json!({ "command": "budget", "n": r.data_spec.n, "p": r.model.dim() });
    if let Some(f) = &r.functional {
        let data = Arc::new(sample_dataset(&r.data_spec)?);
        let value = functional_budget_value(r, f, &data)?;
        if value.is_null() {
            return Err(CliError::Runtime(covbvm::Error::Unsupported(format!(
                "no linearization constant is known for {}",
                f.kind().label()
            ))));
        }
        report["functional"] = value;
    }
    if let Some(sel) = &r.selection {
        let delta_hat =
            estimate_delta_hat(&r.data_spec.with_seed(derived(r, "delta-hat")), r.monte_carlo.replications)?.radius;
        let inputs = ProjectorBudgetInputs {
            n: r.data_spec.n,
            delta_hat,
            g_norm: r.prior.g_norm(),
            l_star: r.l_star.expect("validated"),
        };
        report["projector"] = json!({ "inputs": inputs, "budget": budget_projector(&r.model, sel, &inputs)? });
    }
    report["preconditions"] = json!([dimension_ratio_check(r)]);
    Ok(Outcome::report(report))
}

pub fn execute(r: &Resolved) -> Result<Outcome, CliError> {
    match r.command {
        Command::BvmFunctional => bvm_functional(r),
        Command::BvmProjector => bvm_projector(r),
        Command::Contraction => contraction(r),
        Command::Flatness => flatness(r),
        Command::Bridge => bridge(r),
        Command::Coverage => coverage(r),
        Command::Budget => budget(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_uses_order_statistics() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(equal_tailed_interval(&mut v, 0.9), (5.0, 95.0));
        let mut two = vec![2.0, 1.0];
        assert_eq!(equal_tailed_interval(&mut two, 0.95), (1.0, 2.0));
    }
}
