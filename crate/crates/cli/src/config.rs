use std::path::{Path, PathBuf};

use covbvm::data::{DatasetSpec, Family};
use covbvm::functionals::FunctionalSpec;
use covbvm::io::{FunctionalJson, ModelJson, PriorJson, SelectionJson};
use covbvm::posterior::{PriorSpec, SamplerMethod};
use covbvm::seed;
use covbvm::{EigenspaceSelection, SpectralModel};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    BvmFunctional,
    BvmProjector,
    Contraction,
    Flatness,
    Bridge,
    Coverage,
    Budget,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BvmFunctional => "bvm-functional",
            Command::BvmProjector => "bvm-projector",
            Command::Contraction => "contraction",
            Command::Flatness => "flatness",
            Command::Bridge => "bridge",
            Command::Coverage => "coverage",
            Command::Budget => "budget",
        }
    }
}

/// Sample size and family; the model comes from the top level and the seed
/// is derived from the experiment seed unless given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub family: Family,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_posterior_draws() -> usize {
    20_000
}
fn default_replications() -> usize {
    100
}
fn default_reference_draws() -> usize {
    100_000
}
fn default_probes() -> usize {
    1_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_posterior_draws")]
    pub posterior_draws: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_reference_draws")]
    pub reference_draws: usize,
    #[serde(default = "default_probes")]
    pub flatness_probes: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            posterior_draws: default_posterior_draws(),
            replications: default_replications(),
            reference_draws: default_reference_draws(),
            flatness_probes: default_probes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub command: Command,
    pub seed: u64,
    pub model: ModelJson,
    pub data: DataConfig,
    #[serde(default = "default_prior")]
    pub prior: PriorJson,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionJson>,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Radius grid for `contraction` and `flatness`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_grid: Option<Vec<f64>>,
    /// Vicinity radius for `bridge`; estimated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_level: Option<f64>,
    /// `l*_J` of the projector budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_star: Option<f64>,
}

fn default_prior() -> PriorJson {
    PriorJson::InverseWishart { g_scale: 0.01, b: 2.0 }
}

/// Anchors a serde error at `path:line:column`.
fn anchored(path: &str, e: &serde_json::Error) -> String {
    format!("{path}:{}:{}: {e}", e.line(), e.column())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        Self::from_json_named(text, "<config>")
    }

    pub fn from_json_named(text: &str, name: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(anchored(name, &e)))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "{name}: unsupported schema_version {}, expected {SCHEMA_VERSION}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Everything a command needs, built and validated from the config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub seed: u64,
    pub model: Arc<SpectralModel>,
    pub data_spec: DatasetSpec,
    pub prior: PriorSpec,
    pub method: SamplerMethod,
    pub functional: Option<FunctionalSpec>,
    pub selection: Option<EigenspaceSelection>,
    pub monte_carlo: MonteCarloConfig,
    pub delta_grid: Option<Vec<f64>>,
    pub delta_bar: Option<f64>,
    pub nominal_level: f64,
    pub l_star: Option<f64>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn default_method(prior: &PriorSpec) -> SamplerMethod {
    match prior {
        PriorSpec::UniformVicinity { delta, .. } => SamplerMethod::RejectionInVicinity { delta_bar: *delta },
        _ => SamplerMethod::ExactConjugate,
    }
}

impl ExperimentConfig {
    pub fn resolve(&self, base_dir: &Path) -> Result<Resolved, CliError> {
        let v = |e: covbvm::Error| invalid(e.to_string());
        let model = Arc::new(self.model.build(base_dir).map_err(|e| invalid(format!("model: {e}")))?);
        let data_seed = self.data.seed.unwrap_or_else(|| seed::derive_named(self.seed, "data"));
        let data_spec = DatasetSpec::new(model.clone(), self.data.family, self.data.n, data_seed)
            .map_err(|e| invalid(format!("data: {e}")))?;
        let prior = self.prior.build(&model).map_err(|e| invalid(format!("prior: {e}")))?;
        let method = self.sampler.unwrap_or_else(|| default_method(&prior));
        if matches!(method, SamplerMethod::ExactConjugate) && !matches!(prior, PriorSpec::InverseWishart { .. }) {
            return Err(invalid("sampler: exact_conjugate needs an inverse_wishart prior"));
        }
        let functional = self
            .functional
            .as_ref()
            .map(|f| FunctionalSpec::new(f.to_kind().map_err(v)?, &model).map_err(v))
            .transpose()
            .map_err(|e| invalid(format!("functional: {e}")))?;
        let selection = self
            .selection
            .map(|s| {
                let sel = s.to_selection()?;
                model.selection_indices(&sel)?;
                Ok(sel)
            })
            .transpose()
            .map_err(|e: covbvm::Error| invalid(format!("selection: {e}")))?;
        let nominal_level = self.nominal_level.unwrap_or(0.95);
        if !(nominal_level > 0.0 && nominal_level < 1.0) {
            return Err(invalid(format!("nominal_level must lie in (0, 1), got {nominal_level}")));
        }
        if self.monte_carlo.posterior_draws == 0 {
            return Err(invalid("monte_carlo.posterior_draws must be positive"));
        }
        let resolved = Resolved {
            command: self.command,
            seed: self.seed,
            model,
            data_spec,
            prior,
            method,
            functional,
            selection,
            monte_carlo: self.monte_carlo.clone(),
            delta_grid: self.delta_grid.clone(),
            delta_bar: self.delta_bar,
            nominal_level,
            l_star: self.l_star,
        };
        resolved.check_required()?;
        Ok(resolved)
    }
}

impl Resolved {
    fn check_required(&self) -> Result<(), CliError> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!("command {} requires {what}", self.command.name())))
            }
        };
        match self.command {
            Command::BvmFunctional => need(self.functional.is_some(), "\"functional\""),
            Command::BvmProjector => {
                need(self.selection.is_some(), "\"selection\"")?;
                need(self.l_star.is_some(), "\"l_star\"")
            }
            Command::Flatness => need(self.delta_grid.is_some(), "\"delta_grid\""),
            Command::Coverage => {
                need(self.functional.is_some() || self.selection.is_some(), "\"functional\" or \"selection\"")?;
                if self.monte_carlo.replications < 100 {
                    return Err(invalid("coverage needs monte_carlo.replications ≥ 100"));
                }
                Ok(())
            }
            Command::Budget => {
                need(self.functional.is_some() || self.selection.is_some(), "\"functional\" or \"selection\"")?;
                if self.selection.is_some() {
                    need(self.l_star.is_some(), "\"l_star\" for a projector budget")?;
                }
                Ok(())
            }
            Command::Contraction | Command::Bridge => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "command": "bvm-functional",
        "seed": 7,
        "model": {"mu": [2, 1], "mult": [1, 2]},
        "data": {"family": "gaussian", "n": 500},
        "functional": {"kind": "trace"}
    }"#;

    #[test]
    fn minimal_config_resolves() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let r = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(r.model.dim(), 3);
        assert_eq!(r.method, SamplerMethod::ExactConjugate);
        assert_eq!(r.monte_carlo.posterior_draws, 20_000);
    }

    #[test]
    fn errors_are_line_anchored() {
        let text = MINIMAL.replace("\"seed\": 7", "\"seed\": \"x\"");
        let CliError::Validation(msg) = ExperimentConfig::from_json_named(&text, "c.json").unwrap_err() else {
            panic!()
        };
        assert!(msg.starts_with("c.json:4:"), "{msg}");
    }

    #[test]
    fn missing_requirements_rejected() {
        let text = MINIMAL.replace("\"bvm-functional\"", "\"bvm-projector\"");
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(matches!(cfg.resolve(Path::new(".")), Err(CliError::Validation(_))));
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let again = ExperimentConfig::from_json(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, again);
    }
}
