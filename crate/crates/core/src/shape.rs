//! Shape recovery by nuclear-norm minimization of the mean-removed
//! rearranged shape matrix, subject to `W = R S`.

use nalgebra::{DMatrix, Matrix3xX};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::linalg::{nuclear_norm, sorted_svd, sym_eigen_desc};
use crate::model::{CameraPoseSequence, ShapeSequence, TrackTable};

/// Consecutive residual increases after which the solver gives up.
pub const DIVERGENCE_WINDOW: usize = 50;

/// `T x 3N` matrix whose row `t` is `[X_t, Y_t, Z_t]`.
pub fn rearrange_shape(s: &ShapeSequence) -> DMatrix<f64> {
    let n = s.points();
    let mut out = DMatrix::zeros(s.frames(), 3 * n);
    for (t, shape) in s.shapes().iter().enumerate() {
        for axis in 0..3 {
            for j in 0..n {
                out[(t, axis * n + j)] = shape[(axis, j)];
            }
        }
    }
    out
}

/// Inverse of [`rearrange_shape`].
pub fn unrearrange(m: &DMatrix<f64>, t: usize, n: usize) -> Result<ShapeSequence> {
    if m.nrows() != t || m.ncols() != 3 * n {
        return Err(Error::Dimension(format!(
            "rearranged matrix is {}x{}, expected {t}x{}",
            m.nrows(),
            m.ncols(),
            3 * n
        )));
    }
    ShapeSequence::new(
        (0..t)
            .map(|row| Matrix3xX::from_fn(n, |axis, j| m[(row, axis * n + j)]))
            .collect(),
    )
}

/// `I - (1/T) 1 1^T`.
pub fn centering_projector(t: usize) -> DMatrix<f64> {
    let inv = 1.0 / t as f64;
    DMatrix::from_fn(t, t, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// Singular value soft-thresholding `U max(Σ - τ, 0) V^T`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let svd = sorted_svd(m);
    let mut u = svd.u;
    for (k, s) in svd.singular_values.iter().enumerate() {
        u.column_mut(k).scale_mut((s - tau).max(0.0));
    }
    u * svd.v_t
}

/// Same operator as [`svt`], computed from the eigen-decomposition of the
/// smaller Gram matrix. Several times cheaper on the wide matrices of the
/// shape update; agrees with [`svt`] up to the conditioning of the Gram
/// eigenproblem.
pub fn svt_gram(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let shrink = |norm: f64| if norm > 0.0 { (norm - tau).max(0.0) / norm } else { 0.0 };
    if m.nrows() <= m.ncols() {
        let (_, u) = sym_eigen_desc(&(m * m.transpose()));
        let mut b = u.tr_mul(m);
        for mut row in b.row_iter_mut() {
            let f = shrink(row.norm());
            row.scale_mut(f);
        }
        u * b
    } else {
        let (_, v) = sym_eigen_desc(&m.tr_mul(m));
        let mut b = m * &v;
        for mut col in b.column_iter_mut() {
            let f = shrink(col.norm());
            col.scale_mut(f);
        }
        b * v.transpose()
    }
}

/// Back-projects every frame into its camera plane, `S_i = R_i^T W_i`.
pub fn initialize_planar(w: &TrackTable, r: &CameraPoseSequence) -> Result<ShapeSequence> {
    check_frames(w, r)?;
    ShapeSequence::new(
        r.blocks()
            .iter()
            .enumerate()
            .map(|(i, block)| {
                let wi = w.data().rows(2 * i, 2);
                let mut s = Matrix3xX::zeros(w.points());
                s.gemm_tr(1.0, block, &wi, 0.0);
                s
            })
            .collect(),
    )
}

fn check_frames(w: &TrackTable, r: &CameraPoseSequence) -> Result<()> {
    if w.frames() != r.frames() {
        return Err(Error::Dimension(format!(
            "{} poses for {} frames",
            r.frames(),
            w.frames()
        )));
    }
    Ok(())
}

/// `R S` stacked as a `2T x N` matrix from a rearranged `T x 3N` shape.
fn project_rearranged(r: &CameraPoseSequence, s: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * r.frames(), n);
    for (t, block) in r.blocks().iter().enumerate() {
        for row in 0..2 {
            for axis in 0..3 {
                let coef = block[(row, axis)];
                if coef != 0.0 {
                    for j in 0..n {
                        out[(2 * t + row, j)] += coef * s[(t, axis * n + j)];
                    }
                }
            }
        }
    }
    out
}

/// Adds `R^T G` to the rearranged shape, frame by frame.
fn add_back_projection(r: &CameraPoseSequence, g: &DMatrix<f64>, s: &mut DMatrix<f64>, n: usize) {
    for (t, block) in r.blocks().iter().enumerate() {
        for axis in 0..3 {
            let (a, b) = (block[(0, axis)], block[(1, axis)]);
            for j in 0..n {
                s[(t, axis * n + j)] += a * g[(2 * t, j)] + b * g[(2 * t + 1, j)];
            }
        }
    }
}

/// Shrinks the temporally centered part of a rearranged shape and leaves
/// its mean row untouched.
fn shrink_centered(s: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mean = s.row_mean();
    let mut centered = s.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let mut out = svt_gram(&centered, tau);
    for mut row in out.row_iter_mut() {
        row += &mean;
    }
    out
}

fn centered_nuclear_norm(s: &DMatrix<f64>) -> f64 {
    let mean = s.row_mean();
    let mut centered = s.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    nuclear_norm(&centered)
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    /// Multiplier, `2T x N`.
    pub y: DMatrix<f64>,
    pub mu: f64,
    pub iterations: usize,
    /// Relative primal residual `||W - R S||_F / ||W||_F` per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl AdmmState {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Linearized ADMM for `min ||S# P||_*  s.t.  W = R S`.
///
/// Each outer iteration runs `admm_inner_iters` proximal steps on `S` (a
/// unit gradient step on the augmented term followed by SVT with threshold
/// `1/μ` on the centered shape), then updates `Y += μ (W - R S)` and
/// `μ = min(ρ μ, μ_max)`.
pub fn admm_recover(
    w: &TrackTable,
    r: &CameraPoseSequence,
    cfg: &SolverConfig,
) -> Result<(ShapeSequence, AdmmState)> {
    check_frames(w, r)?;
    let (t, n) = (w.frames(), w.points());
    let init = initialize_planar(w, r)?;
    let w_norm = w.data().norm();
    let mut state = AdmmState {
        y: DMatrix::zeros(2 * t, n),
        mu: cfg.mu0,
        iterations: 0,
        residuals: Vec::new(),
        converged: false,
    };
    if w_norm == 0.0 {
        state.converged = true;
        return Ok((init, state));
    }

    let init_rearranged = rearrange_shape(&init);
    let mut s = init_rearranged.clone();
    let mut increases = 0;
    while state.iterations < cfg.admm_max_iters {
        for _ in 0..cfg.admm_inner_iters.max(1) {
            let g = w.data() - project_rearranged(r, &s, n) + &state.y / state.mu;
            add_back_projection(r, &g, &mut s, n);
            s = shrink_centered(&s, 1.0 / state.mu);
        }
        let primal = w.data() - project_rearranged(r, &s, n);
        let residual = primal.norm() / w_norm;
        if !residual.is_finite() {
            return Err(Error::NonFinite("ADMM primal residual".into()));
        }
        state.y += &primal * state.mu;
        state.mu = (state.mu * cfg.rho).min(cfg.mu_max);
        state.iterations += 1;
        if state.residuals.last().is_some_and(|&prev| residual > prev) {
            increases += 1;
        } else {
            increases = 0;
        }
        state.residuals.push(residual);
        if residual <= cfg.admm_tol {
            state.converged = true;
            break;
        }
        if increases >= DIVERGENCE_WINDOW {
            return Err(Error::Diverged {
                iterations: state.iterations,
                residual,
            });
        }
    }

    // The planar start is exactly feasible; never hand back something that
    // is both less feasible and has a larger nuclear norm.
    let init_residual = (w.data() - project_rearranged(r, &init_rearranged, n)).norm() / w_norm;
    if state.final_residual() > init_residual
        && centered_nuclear_norm(&s) > centered_nuclear_norm(&init_rearranged)
    {
        s = init_rearranged;
    }
    Ok((unrearrange(&s, t, n)?, state))
}
