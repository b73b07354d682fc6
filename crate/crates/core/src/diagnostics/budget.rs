//! Explicit error budgets. Suppressed absolute constants are not modelled, so
//! totals are meaningful up to a multiplicative constant only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::FunctionalSpec;
use crate::spectral::{build_gamma, selection_gap, EigenspaceSelection, SpectralModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetContext {
    PosteriorIndependence,
    Functional,
    Projector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub context: BudgetContext,
    pub terms: BTreeMap<String, f64>,
    pub total: f64,
}

impl ErrorBudget {
    fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(f64::NAN)
    }

    /// Recomputes the total from the stored terms with the same arithmetic
    /// used at construction.
    pub fn recompute_total(&self) -> f64 {
        match self.context {
            BudgetContext::PosteriorIndependence => {
                posterior_independence_total(self.term("rho_bar"), self.term("rho_w_bar"), self.term("one_over_n"))
            }
            BudgetContext::Functional => functional_total(self.term("diamond_nl"), self.term("diamond_ga")),
            BudgetContext::Projector => projector_total(
                self.term("diamond_1"),
                self.term("diamond_2"),
                self.term("diamond_3"),
                self.term("normalizer"),
                self.term("one_over_n"),
            ),
        }
    }
}

fn nonnegative(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

fn sample_size(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("sample size must be at least 2"));
    }
    Ok(n as f64)
}

fn posterior_independence_total(rho: f64, rho_w: f64, one_over_n: f64) -> f64 {
    rho + rho_w + one_over_n
}

fn functional_total(nl: f64, ga: f64) -> f64 {
    nl + ga
}

fn projector_total(d1: f64, d2: f64, d3: f64, normalizer: f64, one_over_n: f64) -> f64 {
    (d1 + d2 + d3) / normalizer + one_over_n
}

/// `◇*_Π = ρ(δ̄) + ρ^W(δ̄) + 1/n`.
pub fn budget_posterior_independence(rho: f64, rho_w: f64, n: usize) -> Result<ErrorBudget> {
    let rho = nonnegative("rho", rho)?;
    let rho_w = nonnegative("rho_w", rho_w)?;
    let one_over_n = 1.0 / sample_size(n)?;
    Ok(ErrorBudget {
        context: BudgetContext::PosteriorIndependence,
        total: posterior_independence_total(rho, rho_w, one_over_n),
        terms: BTreeMap::from([
            ("rho_bar".into(), rho),
            ("rho_w_bar".into(), rho_w),
            ("one_over_n".into(), one_over_n),
        ]),
    })
}

/// Inputs of the functional budget other than the model and functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBudgetInputs {
    pub n: usize,
    /// Contraction radius of the inverse Wishart posterior.
    pub delta_w: f64,
    pub delta_hat: f64,
    pub delta_tilde: f64,
    /// `‖Σ*^{-1/2} G Σ*^{-1/2}‖_∞`.
    pub g_norm_scaled: f64,
}

/// `◇_φ = ◇_NL + ◇_GA`.
pub fn budget_functional(
    model: &SpectralModel,
    functional: &FunctionalSpec,
    inputs: &FunctionalBudgetInputs,
) -> Result<ErrorBudget> {
    let n = sample_size(inputs.n)?;
    let delta_w = nonnegative("delta_w", inputs.delta_w)?;
    let delta_hat = nonnegative("delta_hat", inputs.delta_hat)?;
    let delta_tilde = nonnegative("delta_tilde", inputs.delta_tilde)?;
    let g_scaled = nonnegative("g_norm_scaled", inputs.g_norm_scaled)?;
    let c_phi = functional.c_phi().ok_or_else(|| {
        Error::Unsupported(format!(
            "no linearization constant is known for {}",
            functional.kind().label()
        ))
    })?;
    let frob = functional.limit_frobenius();
    if !(frob > 0.0) {
        return Err(Error::DegenerateFunctional);
    }
    let r = functional.rank() as f64;
    let sigma_norm = model.spectral_norm();
    let log_n = n.ln();

    let diamond_nl = n.sqrt() * (delta_w + delta_hat).powi(2) * c_phi * sigma_norm * sigma_norm / frob;
    let diamond_ga = (r * r + r * log_n).sqrt() * delta_tilde
        + ((r.powi(3) + r * r * log_n) / n).sqrt()
        + (r / n).sqrt() * g_scaled;

    Ok(ErrorBudget {
        context: BudgetContext::Functional,
        total: functional_total(diamond_nl, diamond_ga),
        terms: BTreeMap::from([("diamond_nl".into(), diamond_nl), ("diamond_ga".into(), diamond_ga)]),
    })
}

/// Scalar ingredients of the projector budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorTerms {
    pub n: f64,
    pub p: f64,
    /// `m*_J`.
    pub rank: f64,
    /// `g*_J`.
    pub gap: f64,
    /// `‖Σ*‖_∞`.
    pub sigma_norm: f64,
    /// `Tr Σ*`.
    pub sigma_trace: f64,
    /// `Tr Σ*²`.
    pub sigma_sq_trace: f64,
    pub delta_hat: f64,
    /// `‖G‖_∞`.
    pub g_norm: f64,
    /// `l*_J`, supplied by the caller.
    pub l_star: f64,
}

impl ProjectorTerms {
    pub fn diamond_1(&self) -> f64 {
        let t = self;
        let lp = t.n.ln() + t.p;
        let inner = lp * ((1.0 + t.l_star / t.gap) * t.rank.sqrt() * t.sigma_norm / t.gap + t.rank) * t.sigma_norm
            + t.rank * t.g_norm;
        inner * t.rank * t.sigma_norm / (t.gap * t.gap) * (lp / t.n).sqrt()
    }

    pub fn diamond_2(&self) -> f64 {
        let t = self;
        let spread = (t.rank * t.sigma_norm * t.sigma_norm).min(t.sigma_sq_trace);
        t.sigma_norm * spread / t.gap.powi(3) * t.p * (t.delta_hat + t.p / t.n)
    }

    pub fn diamond_3(&self) -> f64 {
        let t = self;
        t.rank.powf(1.5) * t.sigma_norm * t.sigma_trace / (t.gap * t.gap) * (t.n.ln() / t.n).sqrt()
    }
}

/// `‖Γ‖_2^{1/2} (‖Γ‖_2² − ‖Γ‖_∞²)^{1/4}`; zero when `Γ` has a single entry.
pub fn gamma_normalizer(weights: &[f64]) -> Result<f64> {
    if weights.len() < 2 {
        return Err(Error::DegenerateNormalizer);
    }
    let frob_sq: f64 = weights.iter().map(|w| w * w).sum();
    let max = weights.iter().fold(0.0_f64, |a, &w| a.max(w));
    let excess = frob_sq - max * max;
    if !(excess > 0.0) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok(frob_sq.sqrt().sqrt() * excess.sqrt().sqrt())
}

/// Inputs of the projector budget other than the model and selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectorBudgetInputs {
    pub n: usize,
    pub delta_hat: f64,
    pub g_norm: f64,
    pub l_star: f64,
}

/// `◇_P = (◇₁ + ◇₂ + ◇₃) / normalizer + 1/n`.
pub fn budget_projector(
    model: &SpectralModel,
    sel: &EigenspaceSelection,
    inputs: &ProjectorBudgetInputs,
) -> Result<ErrorBudget> {
    let n = sample_size(inputs.n)?;
    let gap = selection_gap(model, sel)?;
    let gamma = build_gamma(model, sel)?;
    let normalizer = gamma_normalizer(&gamma.diag_weights)?;
    let sigma = model.sigma_star().matrix();
    let terms = ProjectorTerms {
        n,
        p: model.dim() as f64,
        rank: model.selection_rank(sel)? as f64,
        gap,
        sigma_norm: model.spectral_norm(),
        sigma_trace: sigma.trace(),
        sigma_sq_trace: (sigma * sigma).trace(),
        delta_hat: nonnegative("delta_hat", inputs.delta_hat)?,
        g_norm: nonnegative("g_norm", inputs.g_norm)?,
        l_star: nonnegative("l_star", inputs.l_star)?,
    };
    let (d1, d2, d3) = (terms.diamond_1(), terms.diamond_2(), terms.diamond_3());
    let one_over_n = 1.0 / n;
    Ok(ErrorBudget {
        context: BudgetContext::Projector,
        total: projector_total(d1, d2, d3, normalizer, one_over_n),
        terms: BTreeMap::from([
            ("diamond_1".into(), d1),
            ("diamond_2".into(), d2),
            ("diamond_3".into(), d3),
            ("normalizer".into(), normalizer),
            ("one_over_n".into(), one_over_n),
        ]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::FunctionalKind;

    #[test]
    fn independence_budget_sums() {
        let b = budget_posterior_independence(0.0, 0.0, 50).unwrap();
        assert_eq!(b.total, 1.0 / 50.0);
        let b = budget_posterior_independence(0.1, 0.05, 100).unwrap();
        assert!((b.total - 0.16).abs() < 1e-15);
        let b = budget_posterior_independence(0.07, 0.07, 10).unwrap();
        assert_eq!(b.total, 2.0 * 0.07 + 0.1);
        assert!(budget_posterior_independence(-0.1, 0.0, 10).is_err());
    }

    #[test]
    fn linear_functional_has_no_nonlinearity_term() {
        let m = SpectralModel::from_groups(&[2.0, 1.0], &[1, 2], None).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::Trace, &m).unwrap();
        let inputs = FunctionalBudgetInputs {
            n: 1000,
            delta_w: 0.1,
            delta_hat: 0.1,
            delta_tilde: 0.05,
            g_norm_scaled: 0.01,
        };
        let b = budget_functional(&m, &f, &inputs).unwrap();
        assert_eq!(b.terms["diamond_nl"], 0.0);
        assert_eq!(b.total, b.recompute_total());
    }

    #[test]
    fn rank_one_gaussian_approximation_term() {
        let m = SpectralModel::from_groups(&[1.0], &[3], None).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::Entry(0, 0), &m).unwrap();
        let n = 10_000usize;
        let dt = 0.02;
        let inputs = FunctionalBudgetInputs {
            n,
            delta_w: 0.0,
            delta_hat: 0.0,
            delta_tilde: dt,
            g_norm_scaled: 0.0,
        };
        let b = budget_functional(&m, &f, &inputs).unwrap();
        let ln = (n as f64).ln();
        let expected = (1.0 + ln).sqrt() * dt + ((1.0 + ln) / n as f64).sqrt();
        assert!((b.terms["diamond_ga"] - expected).abs() < 1e-15);
    }

    #[test]
    fn nonlinear_term_formula() {
        let m = SpectralModel::from_groups(&[4.0, 1.0], &[1, 1], None).unwrap();
        let f = FunctionalSpec::new(FunctionalKind::EigenvalueCluster(0), &m).unwrap();
        let inputs = FunctionalBudgetInputs {
            n: 400,
            delta_w: 0.1,
            delta_hat: 0.05,
            delta_tilde: 0.0,
            g_norm_scaled: 0.0,
        };
        let b = budget_functional(&m, &f, &inputs).unwrap();
        // C = 2e²/3, ‖Σ*‖ = 4, ‖Σ*^{1/2} e₁e₁ᵀ Σ*^{1/2}‖_2 = 4.
        let c = 2.0 * std::f64::consts::E.powi(2) / 3.0;
        let expected = 20.0 * 0.15f64.powi(2) * c * 16.0 / 4.0;
        assert!((b.terms["diamond_nl"] - expected).abs() < 1e-12);
    }

    #[test]
    fn normalizer_of_two_equal_weights() {
        // ‖Γ‖_2² = 32, ‖Γ‖_∞ = 4
        let v = gamma_normalizer(&[4.0, 4.0]).unwrap();
        let expected = 32f64.powf(0.25) * 16f64.powf(0.25);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 4.756828460010884).abs() < 1e-12);
        assert!(matches!(gamma_normalizer(&[4.0]), Err(Error::DegenerateNormalizer)));
    }

    fn terms() -> ProjectorTerms {
        ProjectorTerms {
            n: 1000.0,
            p: 5.0,
            rank: 1.0,
            gap: 2.0,
            sigma_norm: 3.0,
            sigma_trace: 7.0,
            sigma_sq_trace: 13.0,
            delta_hat: 0.1,
            g_norm: 0.01,
            l_star: 0.5,
        }
    }

    #[test]
    fn diamond_2_vanishes_in_the_limit() {
        let t = ProjectorTerms {
            delta_hat: 0.0,
            n: 1e300,
            ..terms()
        };
        assert!(t.diamond_2() < 1e-290);
    }

    #[test]
    fn diamond_3_scales_with_rank() {
        let t = terms();
        let doubled = ProjectorTerms { rank: 2.0, ..t };
        let ratio = doubled.diamond_3() / t.diamond_3();
        assert!((ratio - 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn projector_budget_degenerates_only_for_single_weight() {
        let m = SpectralModel::from_groups(&[2.0, 1.0], &[1, 1], None).unwrap();
        let inputs = ProjectorBudgetInputs {
            n: 100,
            delta_hat: 0.1,
            g_norm: 0.01,
            l_star: 0.0,
        };
        assert!(matches!(
            budget_projector(&m, &EigenspaceSelection::single(0), &inputs),
            Err(Error::DegenerateNormalizer)
        ));
        let m = SpectralModel::from_groups(&[4.0, 1.0], &[1, 2], None).unwrap();
        let b = budget_projector(&m, &EigenspaceSelection::single(0), &inputs).unwrap();
        assert_eq!(b.total, b.recompute_total());
        assert!(b.terms.values().all(|v| *v >= 0.0));
    }
}
