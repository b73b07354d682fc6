//! Configuration-driven experiment runner.

pub mod commands;
pub mod config;
pub mod output;

use std::path::Path;

pub use config::{Command, ExperimentConfig, Resolved, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Runtime(#[from] covbvm::Error),
    #[error("cannot write outputs: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) | CliError::Output(_) => 3,
        }
    }
}

/// Loads, validates and runs a config file, writing artifacts to `out_dir`
/// (or the config's `output_dir`, resolved against the config's directory).
pub fn run_file(config_path: &Path, seed: Option<u64>, out_dir: Option<&Path>) -> Result<output::Manifest, CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", config_path.display())))?;
    let mut cfg = ExperimentConfig::from_json_named(&text, &config_path.display().to_string())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    let out = match (out_dir, &cfg.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::Validation("no output directory: pass --out or set output_dir".into())),
    };
    run(&cfg, base, &out)
}

pub fn run(cfg: &ExperimentConfig, base_dir: &Path, out_dir: &Path) -> Result<output::Manifest, CliError> {
    let resolved = cfg.resolve(base_dir)?;
    let outcome = commands::execute(&resolved)?;
    output::write(cfg, &outcome, out_dir)
}
