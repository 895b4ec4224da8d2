//! Smooth-trajectory refinement of the measurement matrix.
//!
//! Shape coefficients are constrained to a truncated DCT basis, `C = Ω_d X`.
//! `X` is fitted by damped Gauss-Newton on the reprojection error and the
//! fitted model re-synthesizes a smoothed track matrix.

use nalgebra::DMatrix;
use nalgebra::DVector;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::io::register_to_centroid;
use crate::linalg::pinv;
use crate::lm::{self, LeastSquares, LmOptions};
use crate::model::{CameraPoseSequence, MotionMatrix, TrackTable, TrajectoryModel};

/// Relative singular value cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

/// Smoothing is skipped automatically above this many track entries per
/// coordinate (`T * N`) unless forced.
pub const AUTO_SKIP_ENTRIES: usize = 5_000_000;

/// Orthonormal DCT-II basis, `T x d`.
pub fn dct_basis(t: usize, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || d > t {
        return Err(Error::InvalidArgument(format!(
            "DCT basis needs 1 <= d <= T, got d = {d}, T = {t}"
        )));
    }
    let tf = t as f64;
    Ok(DMatrix::from_fn(t, d, |i, j| {
        let s = if j == 0 { (1.0 / tf).sqrt() } else { (2.0 / tf).sqrt() };
        s * (std::f64::consts::PI * (2 * i + 1) as f64 * j as f64 / (2.0 * tf)).cos()
    }))
}

/// `clamp(ceil(0.1 T), K, T)`.
pub fn default_dct_count(t: usize, k: usize) -> usize {
    t.div_ceil(10).clamp(k, t.max(k))
}

/// `M_i = R_i (c_i ⊗ I_3)` with `c_i` the i-th row of `Ω X`, assembled per
/// frame.
pub fn assemble_motion(
    r: &CameraPoseSequence,
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<MotionMatrix> {
    if omega.ncols() != x.nrows() || omega.nrows() != r.frames() {
        return Err(Error::Dimension(format!(
            "cannot combine {} poses, {}x{} basis and {}x{} trajectory",
            r.frames(),
            omega.nrows(),
            omega.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let c = omega * x;
    MotionMatrix::new(motion_from_coefficients(r, &c))
}

pub(crate) fn motion_from_coefficients(r: &CameraPoseSequence, c: &DMatrix<f64>) -> DMatrix<f64> {
    let k = c.ncols();
    let mut m = DMatrix::zeros(2 * r.frames(), 3 * k);
    for (i, block) in r.blocks().iter().enumerate() {
        for j in 0..k {
            m.view_mut((2 * i, 3 * j), (2, 3)).copy_from(&(block * c[(i, j)]));
        }
    }
    m
}

/// Minimum-norm least-squares basis `B = M^+ W`.
pub fn basis_from_motion(m: &MotionMatrix, w: &TrackTable) -> Result<DMatrix<f64>> {
    check_rows(m.data(), w)?;
    Ok(pinv(m.data(), PINV_CUTOFF) * w.data())
}

/// `||W - M M^+ W||_F^2` and the residual matrix.
pub fn reprojection_residual(w: &TrackTable, m: &MotionMatrix) -> Result<(f64, DMatrix<f64>)> {
    check_rows(m.data(), w)?;
    let residual = residual_matrix(w.data(), m.data());
    Ok((residual.norm_squared(), residual))
}

fn residual_matrix(w: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    w - m * (pinv(m, PINV_CUTOFF) * w)
}

fn check_rows(m: &DMatrix<f64>, w: &TrackTable) -> Result<()> {
    if m.nrows() != w.data().nrows() {
        return Err(Error::Dimension(format!(
            "motion has {} rows, tracks have {}",
            m.nrows(),
            w.data().nrows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrajectoryFit {
    pub model: TrajectoryModel,
    /// Reprojection error at `X⁰` followed by every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl TrajectoryFit {
    pub fn initial_objective(&self) -> f64 {
        self.objective_trace[0]
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

struct ReprojectionProblem<'a> {
    w: &'a DMatrix<f64>,
    r: &'a CameraPoseSequence,
    omega: &'a DMatrix<f64>,
    x0: &'a DMatrix<f64>,
    /// Leading rows of `X` held at `X⁰`.
    frozen: usize,
}

impl ReprojectionProblem<'_> {
    fn unpack(&self, free: &DVector<f64>) -> DMatrix<f64> {
        let (d, k) = self.x0.shape();
        let rows = d - self.frozen;
        let mut x = self.x0.clone();
        for j in 0..k {
            for i in 0..rows {
                x[(self.frozen + i, j)] = free[j * rows + i];
            }
        }
        x
    }

    fn pack(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let (d, k) = x.shape();
        let rows = d - self.frozen;
        DVector::from_fn(rows * k, |idx, _| x[(self.frozen + idx % rows, idx / rows)])
    }
}

impl LeastSquares for ReprojectionProblem<'_> {
    fn residuals(&self, free: &DVector<f64>) -> DVector<f64> {
        let c = self.omega * self.unpack(free);
        let m = motion_from_coefficients(self.r, &c);
        let res = residual_matrix(self.w, &m);
        DVector::from_column_slice(res.as_slice())
    }

    fn jacobian(&self, free: &DVector<f64>, residuals: &DVector<f64>) -> DMatrix<f64> {
        lm::forward_difference_jacobian(|v| self.residuals(v), free, residuals)
    }
}

/// Fits `X` (`d x K`) from `X⁰ = [I_K; 0]`. Reaching `gn_max_iters` is
/// reported through `converged`.
pub fn fit_shape_trajectory(
    w: &TrackTable,
    r: &CameraPoseSequence,
    d: usize,
    k: usize,
    cfg: &SolverConfig,
) -> Result<TrajectoryFit> {
    if r.frames() != w.frames() {
        return Err(Error::Dimension(format!(
            "{} poses for {} frames",
            r.frames(),
            w.frames()
        )));
    }
    if k == 0 || d < k {
        return Err(Error::InvalidArgument(format!(
            "trajectory fit needs 1 <= K <= d, got K = {k}, d = {d}"
        )));
    }
    let omega = dct_basis(w.frames(), d)?;
    let x0 = DMatrix::from_fn(d, k, |i, j| if i == j { 1.0 } else { 0.0 });
    let problem = ReprojectionProblem {
        w: w.data(),
        r,
        omega: &omega,
        x0: &x0,
        frozen: if cfg.freeze_low_frequencies { k } else { 0 },
    };
    let opts = LmOptions {
        max_iters: cfg.gn_max_iters,
        rel_tol: cfg.gn_tol,
        ..Default::default()
    };
    let outcome = lm::minimize(&problem, problem.pack(&x0), &opts);
    let x = problem.unpack(&outcome.x);
    let motion = MotionMatrix::new(motion_from_coefficients(r, &(&omega * &x)))?;
    let basis = basis_from_motion(&motion, w)?;
    Ok(TrajectoryFit {
        model: TrajectoryModel::new(omega, x, basis)?,
        objective_trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
    })
}

/// Re-synthesizes `W_new = R S` with `S = (Ω X ⊗ I_3) M^+ W`, centroid
/// registered.
pub fn smooth_measurements(
    w: &TrackTable,
    r: &CameraPoseSequence,
    model: &TrajectoryModel,
) -> Result<TrackTable> {
    let c = model.coefficients();
    if c.nrows() != r.frames() || r.frames() != w.frames() {
        return Err(Error::Dimension(format!(
            "model has {} frames, poses {}, tracks {}",
            c.nrows(),
            r.frames(),
            w.frames()
        )));
    }
    let m = MotionMatrix::new(motion_from_coefficients(r, &c))?;
    let b = basis_from_motion(&m, w)?;
    let smoothed = m.data() * b;
    Ok(register_to_centroid(&TrackTable::new(smoothed)?))
}

/// Whether the smoothing stage runs for this problem size.
pub fn smoothing_enabled(w: &TrackTable, cfg: &SolverConfig) -> bool {
    if cfg.skip_smoothing {
        return false;
    }
    cfg.force_smoothing || w.frames() * w.points() <= AUTO_SKIP_ENTRIES
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2x3;

    fn front_poses(t: usize) -> CameraPoseSequence {
        CameraPoseSequence::new(vec![Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0); t]).unwrap()
    }

    #[test]
    fn constant_column() {
        let omega = dct_basis(4, 1).unwrap();
        assert!(omega.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn complete_basis_is_orthogonal() {
        let omega = dct_basis(8, 8).unwrap();
        assert!((&omega * omega.transpose() - DMatrix::identity(8, 8)).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_bad_count() {
        assert!(dct_basis(3, 4).is_err());
        assert!(dct_basis(3, 0).is_err());
    }

    #[test]
    fn default_count() {
        assert_eq!(default_dct_count(100, 3), 10);
        assert_eq!(default_dct_count(20, 3), 3);
        assert_eq!(default_dct_count(5, 1), 1);
    }

    #[test]
    fn rigid_motion_from_unit_coefficients() {
        let r = front_poses(3);
        let omega = DMatrix::from_element(3, 1, 1.0);
        let x = DMatrix::from_element(1, 1, 1.0);
        let m = assemble_motion(&r, &omega, &x).unwrap();
        for i in 0..3 {
            assert_eq!(m.data().view((2 * i, 0), (2, 3)).into_owned(), DMatrix::from_fn(2, 3, |a, b| r.get(i)[(a, b)]));
        }
        let zero = assemble_motion(&r, &omega, &DMatrix::zeros(1, 1)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_motion_pseudo_inverse_is_transpose() {
        let m = dct_basis(6, 3).unwrap();
        let w = TrackTable::new(DMatrix::from_fn(6, 4, |i, j| (i * 4 + j) as f64 * 0.3 - 2.0)).unwrap();
        let b = basis_from_motion(&MotionMatrix::new(m.clone()).unwrap(), &w).unwrap();
        assert!((b - m.transpose() * w.data()).abs().max() < 1e-12);
    }

    #[test]
    fn residual_edges() {
        let w = TrackTable::new(DMatrix::from_fn(6, 4, |i, j| ((i + 2 * j) % 5) as f64)).unwrap();
        let (zero, _) = reprojection_residual(&w, &MotionMatrix::new(DMatrix::zeros(6, 3)).unwrap()).unwrap();
        assert!((zero - w.data().norm_squared()).abs() < 1e-12);
        let full = MotionMatrix::new(DMatrix::identity(6, 6)).unwrap();
        assert!(reprojection_residual(&w, &full).unwrap().0 <= 1e-18 * w.data().norm_squared());
    }

    #[test]
    fn zero_trajectory_smooths_to_zero() {
        let r = front_poses(4);
        let w = TrackTable::new(DMatrix::from_fn(8, 5, |i, j| (i as f64 - j as f64).sin())).unwrap();
        let model = TrajectoryModel::new(dct_basis(4, 2).unwrap(), DMatrix::zeros(2, 1), DMatrix::zeros(3, 5)).unwrap();
        let out = smooth_measurements(&w, &r, &model).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}
