use std::path::Path;

use covbvm::io::write_column_csv;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::Outcome;
use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to reproduce a run exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(cfg.canonical_json().as_bytes())
}

/// Writes the report, CSVs and manifest; returns the manifest.
pub fn write(cfg: &ExperimentConfig, outcome: &Outcome, out_dir: &Path) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(out_dir)?;
    let hash = config_hash(cfg);
    let tag = &hash[..16];
    let mut report = outcome.report.clone();
    report["config_sha256"] = hash.clone().into();
    report["seed"] = cfg.seed.into();
    let mut files: Vec<(String, String)> = vec![(
        "report.json".into(),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )];
    for (name, statistic, values) in &outcome.csv {
        files.push((name.clone(), write_column_csv(&format!("{statistic}@{tag}"), values)));
    }
    files.extend(outcome.extra.iter().cloned());

    let mut entries = Vec::new();
    for (name, body) in &files {
        std::fs::write(out_dir.join(name), body)?;
        entries.push(FileEntry {
            name: name.clone(),
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let manifest = Manifest {
        schema_version: cfg.schema_version,
        command: cfg.command.name().into(),
        config_sha256: hash,
        seed: cfg.seed,
        files: entries,
    };
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n",
    )?;
    Ok(manifest)
}
