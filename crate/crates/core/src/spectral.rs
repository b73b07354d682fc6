//! SPD matrices, grouped spectral decompositions, eigenspace selections and
//! the diagonal covariance of the projector limit law.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance on the smallest eigenvalue accepted by [`SpdMatrix::new`].
pub const SPD_TOLERANCE: f64 = 1e-12;

/// Default relative tolerance used to cluster eigenvalues into groups.
pub const DEFAULT_CLUSTER_TOLERANCE: f64 = 1e-8;

/// Within-group relative spread tolerated when multiplicities are supplied.
const GROUP_SPREAD_TOLERANCE: f64 = 1e-6;

/// Symmetric positive-definite matrix.
///
/// Construction symmetrizes the input and rejects it unless every eigenvalue
/// exceeds `1e-12` times the spectral norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    inner: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let inner = linalg::symmetrize(&m);
        let values = linalg::sym_eigenvalues_desc(&inner);
        let largest = values[0];
        let smallest = *values.last().unwrap();
        if !(largest > 0.0) || smallest <= SPD_TOLERANCE * largest {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: smallest,
            });
        }
        Ok(Self { inner })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            inner: DMatrix::identity(p, p),
        }
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(
            values,
        )))
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.inner * c)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::sym_eigenvalues_desc(&self.inner)
    }

    pub fn eigen(&self) -> (nalgebra::DVector<f64>, DMatrix<f64>) {
        linalg::sym_eigen_desc(&self.inner)
    }

    pub fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        self.inner
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite {
                min_eigenvalue: f64::NAN,
            })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        Ok(linalg::symmetrize(&self.cholesky()?.inverse()))
    }

    pub fn log_det(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
    }

    /// Symmetric square root.
    pub fn sqrt(&self) -> DMatrix<f64> {
        linalg::sym_apply(&self.inner, f64::sqrt)
    }

    /// Symmetric inverse square root.
    pub fn inv_sqrt(&self) -> DMatrix<f64> {
        linalg::sym_apply(&self.inner, |v| 1.0 / v.sqrt())
    }

    pub fn norms(&self) -> MatrixNorms {
        norms(self)
    }

    /// Relative spectral-norm distance `‖self − center‖ / ‖center‖`.
    pub fn relative_distance(&self, center: &SpdMatrix) -> f64 {
        linalg::sym_spectral_norm(&(&self.inner - &center.inner))
            / linalg::sym_spectral_norm(&center.inner)
    }
}

/// Norm summary of an SPD matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub nuclear: f64,
    pub trace: f64,
    pub effective_rank: f64,
    pub condition: f64,
}

pub fn norms(m: &SpdMatrix) -> MatrixNorms {
    let values = m.eigenvalues();
    let spectral = values[0];
    let smallest = *values.last().unwrap();
    let trace = m.matrix().trace();
    MatrixNorms {
        spectral,
        frobenius: m.matrix().norm(),
        nuclear: values.iter().sum(),
        trace,
        effective_rank: trace / spectral,
        condition: spectral / smallest,
    }
}

/// How eigenvalues are grouped into distinct spectral clusters.
#[derive(Debug, Clone, PartialEq)]
pub enum Grouping {
    /// Group sizes in descending-eigenvalue order; must sum to `p`.
    Multiplicities(Vec<usize>),
    /// Merge neighbouring eigenvalues whose relative difference is within the tolerance.
    Tolerance(f64),
}

impl Default for Grouping {
    fn default() -> Self {
        Grouping::Tolerance(DEFAULT_CLUSTER_TOLERANCE)
    }
}

/// Ground-truth covariance with its grouped eigenstructure.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    sigma_star: SpdMatrix,
    values: Vec<f64>,
    mults: Vec<usize>,
    blocks: Vec<Range<usize>>,
    projectors: Vec<DMatrix<f64>>,
    gaps: Vec<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

/// Groups the spectrum of `m` and builds the per-group projectors.
pub fn spectral_decompose(m: &SpdMatrix, grouping: &Grouping) -> Result<SpectralModel> {
    let p = m.dim();
    let (eigenvalues, vectors) = m.eigen();
    let scale = eigenvalues[0];

    let mults = match grouping {
        Grouping::Multiplicities(mults) => {
            if mults.iter().any(|&k| k == 0) || mults.iter().sum::<usize>() != p {
                return Err(Error::BadGrouping(format!(
                    "multiplicities {mults:?} do not sum to p = {p}"
                )));
            }
            mults.clone()
        }
        Grouping::Tolerance(tol) => {
            if !(*tol >= 0.0) {
                return Err(Error::invalid("clustering tolerance must be nonnegative"));
            }
            let mut mults = vec![1usize];
            for k in 1..p {
                if (eigenvalues[k - 1] - eigenvalues[k]) <= tol * scale {
                    *mults.last_mut().unwrap() += 1;
                } else {
                    mults.push(1);
                }
            }
            mults
        }
    };

    let mut blocks = Vec::with_capacity(mults.len());
    let mut start = 0;
    for &k in &mults {
        blocks.push(start..start + k);
        start += k;
    }

    let mut values = Vec::with_capacity(mults.len());
    for block in &blocks {
        let group = &eigenvalues.as_slice()[block.clone()];
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        let spread = group[0] - group[group.len() - 1];
        if matches!(grouping, Grouping::Multiplicities(_)) && spread > GROUP_SPREAD_TOLERANCE * scale
        {
            return Err(Error::BadGrouping(format!(
                "eigenvalues {:?} placed in one group are not tied",
                group
            )));
        }
        values.push(mean);
    }

    let tol = match grouping {
        Grouping::Tolerance(t) => t.max(DEFAULT_CLUSTER_TOLERANCE),
        Grouping::Multiplicities(_) => DEFAULT_CLUSTER_TOLERANCE,
    };
    for s in 1..values.len() {
        if values[s - 1] - values[s] <= tol * scale {
            return Err(Error::DegenerateGap {
                left: s - 1,
                right: s,
            });
        }
    }

    let q = values.len();
    let gaps = (0..q)
        .map(|s| {
            let above = if s > 0 { values[s - 1] - values[s] } else { f64::INFINITY };
            let below = if s + 1 < q { values[s] - values[s + 1] } else { f64::INFINITY };
            above.min(below)
        })
        .collect();

    let projectors = blocks
        .iter()
        .map(|b| linalg::column_projector(&vectors, b.clone()))
        .collect();

    Ok(SpectralModel {
        sqrt: m.sqrt(),
        inv_sqrt: m.inv_sqrt(),
        sigma_star: m.clone(),
        values,
        mults,
        blocks,
        projectors,
        gaps,
    })
}

impl SpectralModel {
    /// Builds `Σ* = diag(μ_s repeated m_s times)`, optionally conjugated by `rotation`.
    pub fn from_groups(values: &[f64], mults: &[usize], rotation: Option<&DMatrix<f64>>) -> Result<Self> {
        if values.len() != mults.len() || values.is_empty() {
            return Err(Error::BadGrouping(
                "values and multiplicities must be nonempty and of equal length".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::BadGrouping("group values must be strictly decreasing".into()));
        }
        let diag: Vec<f64> = values
            .iter()
            .zip(mults)
            .flat_map(|(&v, &k)| std::iter::repeat_n(v, k))
            .collect();
        let p = diag.len();
        let mut m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        if let Some(q) = rotation {
            if q.nrows() != p || q.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: q.nrows(),
                });
            }
            m = q * m * q.transpose();
        }
        spectral_decompose(&SpdMatrix::new(m)?, &Grouping::Multiplicities(mults.to_vec()))
    }

    pub fn sigma_star(&self) -> &SpdMatrix {
        &self.sigma_star
    }

    pub fn dim(&self) -> usize {
        self.sigma_star.dim()
    }

    pub fn num_groups(&self) -> usize {
        self.values.len()
    }

    /// Distinct eigenvalues, strictly decreasing.
    pub fn group_values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_mults(&self) -> &[usize] {
        &self.mults
    }

    /// Positions of each group in the descending eigenvalue order.
    pub fn group_blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn group_projectors(&self) -> &[DMatrix<f64>] {
        &self.projectors
    }

    /// `g*_s`: distance from `μ*_s` to its nearest neighbouring group value.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn sigma_sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    pub fn sigma_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn spectral_norm(&self) -> f64 {
        self.values[0]
    }

    pub fn trace(&self) -> f64 {
        self.sigma_star.matrix().trace()
    }

    pub fn effective_rank(&self) -> f64 {
        self.trace() / self.spectral_norm()
    }

    pub fn condition(&self) -> f64 {
        self.values[0] / self.values[self.values.len() - 1]
    }

    fn check_selection(&self, sel: &EigenspaceSelection) -> Result<()> {
        if sel.s_minus > sel.s_plus || sel.s_plus >= self.num_groups() {
            return Err(Error::BadSelection {
                s_minus: sel.s_minus,
                s_plus: sel.s_plus,
                groups: self.num_groups(),
            });
        }
        Ok(())
    }

    /// Index set `I_J` as a range of descending-eigenvalue positions.
    pub fn selection_indices(&self, sel: &EigenspaceSelection) -> Result<Range<usize>> {
        self.check_selection(sel)?;
        Ok(self.blocks[sel.s_minus].start..self.blocks[sel.s_plus].end)
    }

    /// Total rank `m*_J`.
    pub fn selection_rank(&self, sel: &EigenspaceSelection) -> Result<usize> {
        Ok(self.selection_indices(sel)?.len())
    }

    /// `P*_J`, the projector onto the selected eigenspaces.
    pub fn selection_projector(&self, sel: &EigenspaceSelection) -> Result<DMatrix<f64>> {
        self.check_selection(sel)?;
        Ok(self.projectors[sel.s_minus..=sel.s_plus]
            .iter()
            .fold(DMatrix::zeros(self.dim(), self.dim()), |acc, p| acc + p))
    }
}

/// Contiguous run of groups `s_minus..=s_plus` (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EigenspaceSelection {
    pub s_minus: usize,
    pub s_plus: usize,
}

impl EigenspaceSelection {
    pub fn new(s_minus: usize, s_plus: usize) -> Self {
        Self { s_minus, s_plus }
    }

    pub fn single(s: usize) -> Self {
        Self::new(s, s)
    }

    pub fn contains(&self, s: usize) -> bool {
        (self.s_minus..=self.s_plus).contains(&s)
    }
}

/// Spectral gap `g*_J` between the selected groups and the rest of the spectrum.
pub fn selection_gap(model: &SpectralModel, sel: &EigenspaceSelection) -> Result<f64> {
    model.check_selection(sel)?;
    let mu = model.group_values();
    let q = mu.len();
    let first = sel.s_minus == 0;
    let last = sel.s_plus == q - 1;
    let gap = match (first, last) {
        (true, true) => return Err(Error::NoExteriorGap),
        (true, false) => mu[sel.s_plus] - mu[sel.s_plus + 1],
        (false, true) => mu[sel.s_minus - 1] - mu[sel.s_minus],
        (false, false) => {
            (mu[sel.s_minus - 1] - mu[sel.s_minus]).min(mu[sel.s_plus] - mu[sel.s_plus + 1])
        }
    };
    Ok(gap)
}

/// Diagonal of `Γ*_J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaMatrix {
    pub selection: EigenspaceSelection,
    pub diag_weights: Vec<f64>,
}

impl GammaMatrix {
    /// Frobenius norm `‖Γ‖_2`.
    pub fn frobenius(&self) -> f64 {
        self.diag_weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Operator norm `‖Γ‖_∞`.
    pub fn spectral(&self) -> f64 {
        self.diag_weights.iter().fold(0.0_f64, |a, &w| a.max(w))
    }

    pub fn len(&self) -> usize {
        self.diag_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag_weights.is_empty()
    }
}

/// Blocks `2 μ_s μ_k / (μ_s − μ_k)²` of size `m_s m_k`, `s` in the selection
/// (outer loop) and `k` outside it (inner loop).
pub fn build_gamma(model: &SpectralModel, sel: &EigenspaceSelection) -> Result<GammaMatrix> {
    selection_gap(model, sel)?;
    let mu = model.group_values();
    let m = model.group_mults();
    let mut weights = Vec::new();
    for s in sel.s_minus..=sel.s_plus {
        for k in (0..mu.len()).filter(|k| !sel.contains(*k)) {
            let diff = mu[s] - mu[k];
            if diff == 0.0 {
                return Err(Error::DegenerateGap { left: s, right: k });
            }
            let w = 2.0 * mu[s] * mu[k] / (diff * diff);
            weights.extend(std::iter::repeat_n(w, m[s] * m[k]));
        }
    }
    Ok(GammaMatrix {
        selection: *sel,
        diag_weights: weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model(values: &[f64], mults: &[usize]) -> SpectralModel {
        SpectralModel::from_groups(values, mults, None).unwrap()
    }

    #[test]
    fn identity_is_one_group() {
        let m = spectral_decompose(&SpdMatrix::identity(3), &Grouping::Tolerance(1e-8)).unwrap();
        assert_eq!(m.num_groups(), 1);
        assert_eq!(m.group_mults(), &[3]);
        assert_relative_eq!(m.group_values()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.group_projectors()[0], DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn diagonal_explicit_multiplicities() {
        let sigma = SpdMatrix::from_diagonal(&[2.0, 2.0, 1.0]).unwrap();
        let m = spectral_decompose(&sigma, &Grouping::Multiplicities(vec![2, 1])).unwrap();
        assert_eq!(m.group_values(), &[2.0, 1.0]);
        assert_eq!(m.gaps(), &[1.0, 1.0]);
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert_relative_eq!(m.group_projectors()[0], expected, epsilon = 1e-12);
    }

    #[test]
    fn grouping_errors() {
        let sigma = SpdMatrix::from_diagonal(&[2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            spectral_decompose(&sigma, &Grouping::Multiplicities(vec![2, 2])),
            Err(Error::BadGrouping(_))
        ));
        assert!(matches!(
            spectral_decompose(&sigma, &Grouping::Multiplicities(vec![1, 1, 1])),
            Err(Error::DegenerateGap { left: 0, right: 1 })
        ));
        assert!(matches!(
            spectral_decompose(&sigma, &Grouping::Multiplicities(vec![1, 2])),
            Err(Error::BadGrouping(_))
        ));
    }

    #[test]
    fn spd_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(SpdMatrix::new(bad), Err(Error::NotPositiveDefinite { .. })));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.3, 2.0]);
        let s = SpdMatrix::new(asym).unwrap();
        assert_eq!(s.matrix()[(0, 1)], s.matrix()[(1, 0)]);
        assert_relative_eq!(s.matrix()[(0, 1)], 0.2, epsilon = 1e-15);
        assert!(matches!(
            SpdMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
    }

    #[test]
    fn norms_of_diagonals() {
        let n = SpdMatrix::from_diagonal(&[2.0, 1.0, 1.0]).unwrap().norms();
        assert_relative_eq!(n.spectral, 2.0, epsilon = 1e-14);
        assert_relative_eq!(n.trace, 4.0, epsilon = 1e-14);
        assert_relative_eq!(n.effective_rank, 2.0, epsilon = 1e-14);
        assert_relative_eq!(n.frobenius, 6.0_f64.sqrt(), epsilon = 1e-14);

        let n = SpdMatrix::identity(7).norms();
        assert_relative_eq!(n.effective_rank, 7.0, epsilon = 1e-14);
        assert_relative_eq!(n.condition, 1.0, epsilon = 1e-14);

        let n = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap().norms();
        assert_relative_eq!(n.condition, 4.0, epsilon = 1e-14);
        assert_relative_eq!(n.nuclear, 5.0, epsilon = 1e-14);
    }

    #[test]
    fn selection_gaps() {
        let m = model(&[5.0, 2.0, 1.0], &[1, 1, 1]);
        assert_eq!(selection_gap(&m, &EigenspaceSelection::single(0)).unwrap(), 3.0);
        assert_eq!(selection_gap(&m, &EigenspaceSelection::single(1)).unwrap(), 1.0);
        assert_eq!(selection_gap(&m, &EigenspaceSelection::single(2)).unwrap(), 1.0);
        assert!(matches!(
            selection_gap(&m, &EigenspaceSelection::new(0, 2)),
            Err(Error::NoExteriorGap)
        ));
        assert!(matches!(
            selection_gap(&m, &EigenspaceSelection::new(1, 3)),
            Err(Error::BadSelection { .. })
        ));
    }

    #[test]
    fn gamma_weights() {
        let g = build_gamma(&model(&[2.0, 1.0], &[1, 1]), &EigenspaceSelection::single(0)).unwrap();
        assert_eq!(g.diag_weights, vec![4.0]);

        let g = build_gamma(&model(&[3.0, 1.0], &[2, 1]), &EigenspaceSelection::single(0)).unwrap();
        assert_eq!(g.diag_weights, vec![1.5, 1.5]);

        // s=1: k=3 -> 2*5*1/16; s=2: k=3 -> 2*2*1/1
        let g = build_gamma(&model(&[5.0, 2.0, 1.0], &[1, 1, 1]), &EigenspaceSelection::new(0, 1))
            .unwrap();
        assert_eq!(g.diag_weights, vec![0.625, 4.0]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn gamma_block_sizes() {
        let m = model(&[6.0, 3.0, 1.0], &[2, 3, 1]);
        let sel = EigenspaceSelection::single(1);
        let g = build_gamma(&m, &sel).unwrap();
        let mj = m.selection_rank(&sel).unwrap();
        assert_eq!(g.len(), mj * (m.dim() - mj));
        assert_eq!(&g.diag_weights[..6], &[4.0; 6]);
        assert_eq!(&g.diag_weights[6..], &[1.5; 3]);
    }
}
