//! Small dense helpers on top of nalgebra used throughout the crate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Column `k` of the returned matrix pairs with value `k`.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let p = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Eigenvalues only, descending.
pub fn sym_eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Operator norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(m);
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, k| {
        vectors[(i, k)] * f(values[k])
    });
    symmetrize(&(scaled * vectors.transpose()))
}

/// Sum of outer products of the selected columns.
pub fn column_projector(vectors: &DMatrix<f64>, cols: std::ops::Range<usize>) -> DMatrix<f64> {
    let sub = vectors.columns(cols.start, cols.len());
    symmetrize(&(&sub * sub.transpose()))
}

/// Trace of a product `A B` without forming it.
pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.transpose().iter())
        .map(|(x, y)| x * y)
        .sum()
}

/// Packs the upper triangle (row-major, diagonal included).
pub fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let p = m.nrows();
    let mut out = Vec::with_capacity(p * (p + 1) / 2);
    for i in 0..p {
        for j in i..p {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse of [`upper_triangle`].
pub fn from_upper_triangle(values: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for i in 0..p {
        for j in i..p {
            m[(i, j)] = values[k];
            m[(j, i)] = values[k];
            k += 1;
        }
    }
    m
}

/// Dimension `p` such that `p(p+1)/2 == len`, if one exists.
pub fn triangle_dim(len: usize) -> Option<usize> {
    let mut p = 0usize;
    while p * (p + 1) / 2 < len {
        p += 1;
    }
    (p * (p + 1) / 2 == len).then_some(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        let (v, q) = sym_eigen_desc(&m);
        assert_eq!(v.as_slice(), &[3.0, 2.0, 1.0]);
        assert!((q[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn trace_product_matches_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(trace_product(&a, &b), (&a * &b).trace());
    }

    #[test]
    fn triangle_roundtrip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let packed = upper_triangle(&m);
        assert_eq!(packed, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(triangle_dim(packed.len()), Some(3));
        assert_eq!(from_upper_triangle(&packed, 3), m);
        assert_eq!(triangle_dim(4), None);
    }
}
