//! Small dense linear-algebra helpers shared across the pipeline.
//!
//! Vectorization is column-major everywhere: `vec(m)[j * p + i] == m[(i, j)]`
//! for a `p x q` matrix. The orthogonality system relies only on this being
//! consistent between [`vec`], [`unvec`] and [`kron_row`].

use nalgebra::{DMatrix, DVector, Matrix2x3, RowDVector};

use crate::error::{Error, Result};

/// Column-major stacking of `m` into a vector of length `rows * cols`.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec`].
pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Row of the Kronecker system such that `kron_row(a, b) * vec(F) == a F b^T`.
///
/// Entry `j * p + i` holds `b[j] * a[i]`.
pub fn kron_row(a: &[f64], b: &[f64]) -> Result<RowDVector<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "kron_row operands have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let p = a.len();
    Ok(RowDVector::from_fn(p * p, |_, idx| b[idx / p] * a[idx % p]))
}

/// Thin SVD with singular values sorted in descending order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> SortedSvd {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    SortedSvd {
        u: DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]),
        singular_values: DVector::from_fn(order.len(), |i, _| sv[order[i]]),
        v_t: DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]),
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.clone().symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Moore-Penrose pseudo-inverse; singular values below `rel_tol * sigma_max`
/// are treated as zero.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = sorted_svd(m);
    let smax = svd.singular_values.get(0).copied().unwrap_or(0.0);
    let cutoff = rel_tol * smax;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            break;
        }
        let v = svd.v_t.row(k).transpose();
        let u = svd.u.column(k);
        out += (v * u.transpose()) / s;
    }
    out
}

/// Nearest 2x3 matrix with orthonormal rows (polar factor `U V^T`).
pub fn nearest_row_orthonormal(p: &Matrix2x3<f64>) -> Matrix2x3<f64> {
    let svd = p.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    u * v_t
}

/// `max |R R^T - I|` over the entries of the 2x2 product.
pub fn row_orthonormality_error(r: &Matrix2x3<f64>) -> f64 {
    let g = r * r.transpose();
    (g - nalgebra::Matrix2::identity()).abs().max()
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}
