//! Text formats: matrix and draw CSVs, and JSON descriptions of models, data,
//! functionals, priors and samplers. Group and entry indices on the wire are
//! 1-based.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetSpec, Family};
use crate::error::{Error, Result};
use crate::functionals::FunctionalKind;
use crate::linalg;
use crate::posterior::PriorSpec;
use crate::seed;
use crate::spectral::{spectral_decompose, EigenspaceSelection, Grouping, SpdMatrix, SpectralModel};

/// Largest matrix dimension accepted from text input.
pub const MAX_DIM: usize = 4096;

fn check_dim(p: usize) -> Result<()> {
    if p == 0 || p > MAX_DIM {
        return Err(Error::BadDimension(format!("dimension {p} outside 1..={MAX_DIM}")));
    }
    Ok(())
}

fn parse_row(line: &str, lineno: usize, expected: usize) -> Result<Vec<f64>> {
    let row = line
        .split(',')
        .map(|f| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("not a number: {:?}", f.trim())))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(lineno, "non-finite value"))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    if row.len() != expected {
        return Err(Error::parse(lineno, format!("expected {expected} fields, found {}", row.len())));
    }
    Ok(row)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// First line `p`, then `p` rows of `p` comma-separated decimals.
pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = content_lines(text);
    let (lineno, header) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    let p: usize = header
        .parse()
        .map_err(|_| Error::parse(lineno, format!("expected the dimension, found {header:?}")))?;
    check_dim(p)?;
    let mut m = DMatrix::zeros(p, p);
    for i in 0..p {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(lineno + i + 1, format!("expected {p} rows, found {i}")))?;
        for (j, v) in parse_row(line, lineno, p)?.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    if let Some((lineno, _)) = lines.next() {
        return Err(Error::parse(lineno, "trailing content after matrix"));
    }
    Ok(m)
}

pub fn write_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = format!("{}\n", m.nrows());
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Header `s_1_1,s_1_2,…` then one row per draw with the upper triangle.
pub fn write_draws_csv(draws: &[SpdMatrix]) -> Result<String> {
    let p = draws.first().map(|d| d.dim()).ok_or(Error::TooFewValues { needed: 1, got: 0 })?;
    let mut names = Vec::new();
    for i in 0..p {
        for j in i..p {
            names.push(format!("s_{}_{}", i + 1, j + 1));
        }
    }
    let mut out = names.join(",");
    out.push('\n');
    for d in draws {
        if d.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: d.dim(),
            });
        }
        let fields: Vec<String> = linalg::upper_triangle(d.matrix()).iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_draws_csv(text: &str) -> Result<Vec<SpdMatrix>> {
    let mut lines = content_lines(text);
    let (lineno, header) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    let width = header.split(',').count();
    let p = linalg::triangle_dim(width)
        .ok_or_else(|| Error::parse(lineno, format!("{width} columns is not a triangle size")))?;
    check_dim(p)?;
    lines
        .map(|(lineno, line)| {
            let row = parse_row(line, lineno, width)?;
            SpdMatrix::new(linalg::from_upper_triangle(&row, p)).map_err(|e| Error::parse(lineno, e.to_string()))
        })
        .collect()
}

/// One-column CSV with a header naming the statistic.
pub fn write_column_csv(header: &str, values: &[f64]) -> String {
    let mut out = format!("{header}\n");
    for v in values {
        let _ = writeln!(out, "{v:e}");
    }
    out
}

pub fn parse_column_csv(text: &str) -> Result<(String, Vec<f64>)> {
    let mut lines = content_lines(text);
    let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty input"))?;
    let values = lines
        .map(|(lineno, line)| parse_row(line, lineno, 1).map(|r| r[0]))
        .collect::<Result<Vec<f64>>>()?;
    Ok((header.to_string(), values))
}

pub fn write_flatness_csv(delta: &[f64], rho: &[f64]) -> String {
    let mut out = String::from("delta,rho\n");
    for (d, r) in delta.iter().zip(rho) {
        let _ = writeln!(out, "{d:e},{r:e}");
    }
    out
}

/// Haar-distributed orthogonal matrix from a seed.
pub fn random_orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let a = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for k in 0..p {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// `{"mu": [...], "mult": [...]}` with optional `rotation_seed`, or
/// `{"sigma_csv": path}` with optional `mult` to force the grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mult: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

impl ModelJson {
    /// Builds the model; `sigma_csv` is resolved against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<SpectralModel> {
        match (&self.mu, &self.sigma_csv) {
            (Some(mu), None) => {
                let mult = self
                    .mult
                    .as_ref()
                    .ok_or_else(|| Error::invalid("model with \"mu\" needs \"mult\""))?;
                let p = mult.iter().try_fold(0usize, |a, &m| a.checked_add(m));
                check_dim(p.ok_or_else(|| Error::BadDimension("multiplicities overflow".into()))?)?;
                if mu.len() != mult.len() {
                    return Err(Error::BadGrouping(format!(
                        "{} eigenvalues but {} multiplicities",
                        mu.len(),
                        mult.len()
                    )));
                }
                let rotation = self.rotation_seed.map(|s| random_orthogonal(mult.iter().sum(), s));
                SpectralModel::from_groups(mu, mult, rotation.as_ref())
            }
            (None, Some(path)) => {
                if self.rotation_seed.is_some() {
                    return Err(Error::invalid("\"rotation_seed\" applies only to \"mu\" models"));
                }
                let text = std::fs::read_to_string(base_dir.join(path))?;
                let sigma = SpdMatrix::new(parse_matrix_csv(&text)?)?;
                let grouping = match &self.mult {
                    Some(m) => Grouping::Multiplicities(m.clone()),
                    None => Grouping::default(),
                };
                spectral_decompose(&sigma, &grouping)
            }
            _ => Err(Error::invalid("model needs exactly one of \"mu\" or \"sigma_csv\"")),
        }
    }
}

pub fn parse_model_json(text: &str) -> Result<ModelJson> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpecJson {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub model: ModelJson,
}

impl DatasetSpecJson {
    pub fn build(&self, base_dir: &Path) -> Result<DatasetSpec> {
        DatasetSpec::new(Arc::new(self.model.build(base_dir)?), self.family, self.n, self.seed)
    }
}

pub fn parse_dataset_spec_json(text: &str) -> Result<DatasetSpecJson> {
    Ok(serde_json::from_str(text)?)
}

fn to_zero_based(what: &str, v: usize) -> Result<usize> {
    v.checked_sub(1)
        .ok_or_else(|| Error::invalid(format!("{what} is 1-based, got 0")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalJson {
    /// `Tr[ΦΣ]` with `Φ` given row by row.
    Linear { phi: Vec<Vec<f64>> },
    EigenvalueCluster { s: usize },
    Entry { i: usize, j: usize },
    Trace,
    LogDet,
}

impl FunctionalJson {
    pub fn to_kind(&self) -> Result<FunctionalKind> {
        Ok(match self {
            FunctionalJson::Linear { phi } => {
                let p = phi.len();
                check_dim(p)?;
                if phi.iter().any(|r| r.len() != p) {
                    return Err(Error::NotSquare {
                        rows: p,
                        cols: phi.iter().map(Vec::len).find(|&c| c != p).unwrap_or(p),
                    });
                }
                FunctionalKind::Linear(DMatrix::from_fn(p, p, |i, j| phi[i][j]))
            }
            FunctionalJson::EigenvalueCluster { s } => FunctionalKind::EigenvalueCluster(to_zero_based("s", *s)?),
            FunctionalJson::Entry { i, j } => FunctionalKind::Entry(to_zero_based("i", *i)?, to_zero_based("j", *j)?),
            FunctionalJson::Trace => FunctionalKind::Trace,
            FunctionalJson::LogDet => FunctionalKind::LogDet,
        })
    }
}

pub fn parse_functional_json(text: &str) -> Result<FunctionalJson> {
    Ok(serde_json::from_str(text)?)
}

/// Contiguous run of eigen-groups, 1-based and inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionJson {
    pub s_minus: usize,
    pub s_plus: usize,
}

impl SelectionJson {
    pub fn to_selection(&self) -> Result<EigenspaceSelection> {
        Ok(EigenspaceSelection::new(
            to_zero_based("s_minus", self.s_minus)?,
            to_zero_based("s_plus", self.s_plus)?,
        ))
    }
}

fn default_g_scale() -> f64 {
    0.01
}

fn default_b() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorJson {
    /// `W⁻¹_p(g_scale · I, p + b − 1)`.
    InverseWishart {
        #[serde(default = "default_g_scale")]
        g_scale: f64,
        #[serde(default = "default_b")]
        b: f64,
    },
    /// Uniform on `B(δ)` around the true covariance.
    UniformVicinity { delta: f64 },
}

impl PriorJson {
    pub fn build(&self, model: &SpectralModel) -> Result<PriorSpec> {
        match *self {
            PriorJson::InverseWishart { g_scale, b } => {
                PriorSpec::inverse_wishart(SpdMatrix::identity(model.dim()).scaled(g_scale)?, b)
            }
            PriorJson::UniformVicinity { delta } => PriorSpec::uniform_vicinity(model.sigma_star().clone(), delta),
        }
    }
}

pub fn parse_prior_json(text: &str) -> Result<PriorJson> {
    Ok(serde_json::from_str(text)?)
}

pub fn parse_sampler_json(text: &str) -> Result<crate::posterior::SamplerMethod> {
    Ok(serde_json::from_str(text)?)
}
