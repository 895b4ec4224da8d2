//! Value types shared by every stage of the reconstruction.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3xX};

use crate::error::{Error, Result};

/// Centroid-registered 2D point tracks, stored as a `2T x N` measurement
/// matrix. Rows `2i` and `2i + 1` hold the x and y image coordinates of
/// every point in frame `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTable {
    data: DMatrix<f64>,
    centered: bool,
}

impl TrackTable {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        Self::with_centered(data, false)
    }

    pub(crate) fn with_centered(data: DMatrix<f64>, centered: bool) -> Result<Self> {
        if data.nrows() == 0 || !data.nrows().is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "track matrix needs an even, nonzero row count, got {}",
                data.nrows()
            )));
        }
        if data.ncols() == 0 {
            return Err(Error::Dimension("track matrix has no points".into()));
        }
        if !crate::linalg::all_finite(&data) {
            return Err(Error::NonFinite("track matrix".into()));
        }
        Ok(Self { data, centered })
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn points(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// The `2 x N` block of frame `i`.
    pub fn frame(&self, i: usize) -> DMatrix<f64> {
        self.data.rows(2 * i, 2).into_owned()
    }
}

/// Orthographic camera poses, one `2 x 3` row-orthonormal block per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPoseSequence {
    blocks: Vec<Matrix2x3<f64>>,
}

/// Row-orthonormality tolerance accepted for pose blocks.
pub const POSE_ORTHONORMALITY_TOL: f64 = 1e-8;

impl CameraPoseSequence {
    pub fn new(blocks: Vec<Matrix2x3<f64>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Dimension("pose sequence is empty".into()));
        }
        for (i, r) in blocks.iter().enumerate() {
            let err = crate::linalg::row_orthonormality_error(r);
            if err.is_nan() || err > POSE_ORTHONORMALITY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "pose {i} rows are not orthonormal (error {err:e})"
                )));
            }
        }
        Ok(Self { blocks })
    }

    pub fn frames(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Matrix2x3<f64>] {
        &self.blocks
    }

    pub fn get(&self, i: usize) -> &Matrix2x3<f64> {
        &self.blocks[i]
    }

    /// Largest `|R R^T - I|` entry over all frames.
    pub fn max_orthonormality_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(crate::linalg::row_orthonormality_error)
            .fold(0.0, f64::max)
    }

    /// Right-multiplies every block by `g`.
    pub fn right_multiply(&self, g: &nalgebra::Matrix3<f64>) -> Result<Self> {
        Self::new(self.blocks.iter().map(|r| r * g).collect())
    }
}

/// Per-frame `3 x N` shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    shapes: Vec<Matrix3xX<f64>>,
}

impl ShapeSequence {
    pub fn new(shapes: Vec<Matrix3xX<f64>>) -> Result<Self> {
        let Some(first) = shapes.first() else {
            return Err(Error::Dimension("shape sequence is empty".into()));
        };
        let n = first.ncols();
        if n == 0 {
            return Err(Error::Dimension("shapes have no points".into()));
        }
        for (i, s) in shapes.iter().enumerate() {
            if s.ncols() != n {
                return Err(Error::Dimension(format!(
                    "frame {i} has {} points, expected {n}",
                    s.ncols()
                )));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("shape of frame {i}")));
            }
        }
        Ok(Self { shapes })
    }

    pub fn frames(&self) -> usize {
        self.shapes.len()
    }

    pub fn points(&self) -> usize {
        self.shapes[0].ncols()
    }

    pub fn shapes(&self) -> &[Matrix3xX<f64>] {
        &self.shapes
    }

    pub fn get(&self, i: usize) -> &Matrix3xX<f64> {
        &self.shapes[i]
    }

    pub fn into_shapes(self) -> Vec<Matrix3xX<f64>> {
        self.shapes
    }

    /// Applies `x -> g x` to every frame.
    pub fn left_multiply(&self, g: &nalgebra::Matrix3<f64>) -> Self {
        Self {
            shapes: self.shapes.iter().map(|s| g * s).collect(),
        }
    }
}

/// `2T x 3K` motion matrix whose row pair `i` is `R_i (c_i ⊗ I_3)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionMatrix {
    data: DMatrix<f64>,
}

impl MotionMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if !data.nrows().is_multiple_of(2) || !data.ncols().is_multiple_of(3) {
            return Err(Error::Dimension(format!(
                "motion matrix must be 2T x 3K, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows() / 2
    }

    pub fn basis_count(&self) -> usize {
        self.data.ncols() / 3
    }
}

/// Shape trajectory expressed in a truncated DCT basis.
///
/// The coefficient matrix `C = omega * X` is always derived on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryModel {
    omega: DMatrix<f64>,
    x: DMatrix<f64>,
    basis: DMatrix<f64>,
}

impl TrajectoryModel {
    pub fn new(omega: DMatrix<f64>, x: DMatrix<f64>, basis: DMatrix<f64>) -> Result<Self> {
        let (t, d) = omega.shape();
        let k = x.ncols();
        if x.nrows() != d {
            return Err(Error::Dimension(format!(
                "trajectory has {} rows but the basis has {d} columns",
                x.nrows()
            )));
        }
        if !(1 <= k && k <= d && d <= t) {
            return Err(Error::Dimension(format!(
                "need 1 <= K <= d <= T, got K={k}, d={d}, T={t}"
            )));
        }
        if basis.nrows() != 3 * k {
            return Err(Error::Dimension(format!(
                "basis shapes have {} rows, expected {}",
                basis.nrows(),
                3 * k
            )));
        }
        Ok(Self { omega, x, basis })
    }

    pub fn basis_count(&self) -> usize {
        self.x.ncols()
    }

    pub fn dct_count(&self) -> usize {
        self.omega.ncols()
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn trajectory(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn basis_shapes(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn coefficients(&self) -> DMatrix<f64> {
        &self.omega * &self.x
    }
}

/// Symmetric `3K x 3K` Gram matrix `F = Q Q^T` of one corrective column
/// triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectiveGram {
    f: DMatrix<f64>,
}

impl CorrectiveGram {
    pub fn new(f: DMatrix<f64>) -> Result<Self> {
        if !f.is_square() || !f.nrows().is_multiple_of(3) || f.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "Gram matrix must be 3K x 3K, got {}x{}",
                f.nrows(),
                f.ncols()
            )));
        }
        if !crate::linalg::all_finite(&f) {
            return Err(Error::NonFinite("Gram matrix".into()));
        }
        Ok(Self { f })
    }

    pub fn basis_count(&self) -> usize {
        self.f.nrows() / 3
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn eigenvalues_desc(&self) -> DVector<f64> {
        crate::linalg::sym_eigen_desc(&self.f).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn track_table_rejects_odd_rows_and_nan() {
        assert!(TrackTable::new(DMatrix::zeros(3, 2)).is_err());
        let mut d = DMatrix::zeros(2, 2);
        d[(0, 1)] = f64::NAN;
        assert!(TrackTable::new(d).is_err());
    }

    #[test]
    fn pose_sequence_checks_orthonormality() {
        let ok = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert!(CameraPoseSequence::new(vec![ok]).is_ok());
        let bad = Matrix2x3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0);
        assert!(CameraPoseSequence::new(vec![bad]).is_err());
    }

    #[test]
    fn shape_sequence_requires_consistent_points() {
        let a = Matrix3xX::zeros(2);
        let b = Matrix3xX::zeros(3);
        assert!(ShapeSequence::new(vec![a, b]).is_err());
    }

    #[test]
    fn trajectory_model_enforces_k_le_d_le_t() {
        let omega = DMatrix::zeros(4, 2);
        assert!(TrajectoryModel::new(omega.clone(), DMatrix::zeros(2, 3), DMatrix::zeros(9, 1)).is_err());
        assert!(TrajectoryModel::new(omega, DMatrix::zeros(2, 2), DMatrix::zeros(6, 1)).is_ok());
    }
}
