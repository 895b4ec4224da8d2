//! Camera pose recovery from the measurement matrix.
//!
//! The track matrix is factored into a rank-3K motion/basis pair, the
//! per-frame orthogonality constraints on one corrective column triplet are
//! assembled into a linear system over `vec(F)`, and the rank-3 PSD Gram
//! matrix `F = Q Q^T` is found by proximal gradient. The triplet `Q` then
//! yields every pose up to a global rotation.

use nalgebra::{DMatrix, DVector, Matrix2x3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, sorted_svd, sym_eigen_desc, symmetrize};
use crate::lm::{self, LeastSquares, LmOptions};
use crate::model::{CameraPoseSequence, CorrectiveGram, TrackTable};

/// Trace imposed on the Gram matrix after every projection; removes the
/// trivial `F = 0` solution and the global scale.
pub const GRAM_TRACE: f64 = 3.0;

/// Problems with at most this many unknowns in `vec(F)` get an exact
/// Lipschitz constant from a dense eigensolver.
const DENSE_LIPSCHITZ_LIMIT: usize = 512;

/// Smallest K whose top `3K` singular values hold at least
/// `energy_threshold` of the spectral energy of `w`, clamped to
/// `[1, floor(min(2T, N) / 3)]`.
pub fn select_basis_count(w: &TrackTable, energy_threshold: f64) -> Result<usize> {
    if !(energy_threshold > 0.0 && energy_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "energy threshold must lie in (0, 1], got {energy_threshold}"
        )));
    }
    let k_max = w.data().nrows().min(w.data().ncols()) / 3;
    if k_max == 0 {
        return Err(Error::Dimension(format!(
            "need min(2T, N) >= 3 to fit a shape basis, got {}x{}",
            w.data().nrows(),
            w.data().ncols()
        )));
    }
    let energies: Vec<f64> = w
        .data()
        .clone()
        .singular_values()
        .iter()
        .map(|s| s * s)
        .collect();
    let mut sorted = energies;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("measurement matrix is all zeros".into()));
    }
    let mut captured = 0.0;
    for k in 1..=k_max {
        captured += sorted[3 * k - 3..3 * k].iter().sum::<f64>();
        if captured >= energy_threshold * total {
            return Ok(k);
        }
    }
    Ok(k_max)
}

/// Rank-3K factorization `W ~ M' B'` together with the singular triplets it
/// came from.
#[derive(Debug, Clone)]
pub struct FactoredPair {
    motion: DMatrix<f64>,
    basis: DMatrix<f64>,
    left: DMatrix<f64>,
    singular_values: DVector<f64>,
}

impl FactoredPair {
    /// `2T x 3K` motion factor `M'`.
    pub fn motion(&self) -> &DMatrix<f64> {
        &self.motion
    }

    /// `3K x N` basis factor `B'`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    pub fn basis_count(&self) -> usize {
        self.motion.ncols() / 3
    }

    pub fn product(&self) -> DMatrix<f64> {
        &self.motion * &self.basis
    }

    /// The same factorization with column-orthonormal motion `U` and basis
    /// `Σ V^T`.
    pub fn orthonormal_motion(&self) -> FactoredPair {
        let basis = DMatrix::from_diagonal(&self.singular_values.map(f64::sqrt)) * &self.basis;
        FactoredPair {
            motion: self.left.clone(),
            basis,
            left: self.left.clone(),
            singular_values: self.singular_values.clone(),
        }
    }
}

/// Balanced rank-3K split `M' = U Σ^{1/2}`, `B' = Σ^{1/2} V^T`.
pub fn truncated_factorization(w: &TrackTable, k: usize) -> Result<FactoredPair> {
    let (rows, cols) = w.data().shape();
    let rank = 3 * k;
    if k == 0 || rank > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "K = {k} needs 3K <= min(2T, N) = {}",
            rows.min(cols)
        )));
    }
    let svd = sorted_svd(w.data());
    let left = svd.u.columns(0, rank).into_owned();
    let singular_values = svd.singular_values.rows(0, rank).into_owned();
    let root = singular_values.map(f64::sqrt);
    let mut motion = left.clone();
    let mut basis = svd.v_t.rows(0, rank).into_owned();
    for c in 0..rank {
        motion.column_mut(c).scale_mut(root[c]);
        basis.row_mut(c).scale_mut(root[c]);
    }
    Ok(FactoredPair {
        motion,
        basis,
        left,
        singular_values,
    })
}

/// Stacked orthogonality constraints `A vec(F) = 0`, two rows per frame.
#[derive(Debug, Clone)]
pub struct OrthogonalitySystem {
    a: DMatrix<f64>,
    dim: usize,
}

impl OrthogonalitySystem {
    /// Wraps an explicit `m x p^2` constraint matrix acting on `p x p` Gram
    /// matrices.
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        let dim = (a.ncols() as f64).sqrt().round() as usize;
        if dim * dim != a.ncols() || dim == 0 {
            return Err(Error::Dimension(format!(
                "system has {} columns, not a perfect square",
                a.ncols()
            )));
        }
        Ok(Self { a, dim })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Side length of the Gram matrix (`3K`).
    pub fn gram_dim(&self) -> usize {
        self.dim
    }

    pub fn residual(&self, f: &DMatrix<f64>) -> DVector<f64> {
        &self.a * linalg::vec(f)
    }

    /// `||A vec(F)||^2`.
    pub fn objective(&self, f: &DMatrix<f64>) -> f64 {
        self.residual(f).norm_squared()
    }

    fn gradient(&self, f: &DMatrix<f64>) -> DMatrix<f64> {
        let g = self.a.tr_mul(&self.residual(f));
        DMatrix::from_column_slice(self.dim, self.dim, g.as_slice())
    }
}

/// Row `2i` is `kron(m_x, m_x) - kron(m_y, m_y)` and row `2i + 1` is
/// `kron(m_x, m_y)`, where `m_x`, `m_y` are the motion rows of frame `i`.
pub fn build_orthogonality_system(pair: &FactoredPair) -> OrthogonalitySystem {
    let m = pair.motion();
    let frames = m.nrows() / 2;
    let dim = m.ncols();
    let mut a = DMatrix::zeros(2 * frames, dim * dim);
    for i in 0..frames {
        let mx: Vec<f64> = m.row(2 * i).iter().copied().collect();
        let my: Vec<f64> = m.row(2 * i + 1).iter().copied().collect();
        let xx = linalg::kron_row(&mx, &mx).expect("equal lengths");
        let yy = linalg::kron_row(&my, &my).expect("equal lengths");
        let xy = linalg::kron_row(&mx, &my).expect("equal lengths");
        a.row_mut(2 * i).copy_from(&(xx - yy));
        a.row_mut(2 * i + 1).copy_from(&xy);
    }
    OrthogonalitySystem { a, dim }
}

/// Largest eigenvalue of `A^T A`.
pub fn lipschitz_constant(sys: &OrthogonalitySystem) -> Result<f64> {
    let a = sys.matrix();
    if a.iter().all(|&v| v == 0.0) {
        return Err(Error::Degenerate("orthogonality system is zero".into()));
    }
    let l = if a.ncols() <= DENSE_LIPSCHITZ_LIMIT {
        let ata = a.tr_mul(a);
        sym_eigen_desc(&ata).0[0]
    } else {
        power_iteration(a)
    };
    if l <= 0.0 {
        return Err(Error::Degenerate("orthogonality system is zero".into()));
    }
    Ok(l)
}

fn power_iteration(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..10_000 {
        let w = a.tr_mul(&(a * &v));
        let next = w.norm();
        if next == 0.0 {
            return 0.0;
        }
        v = w / next;
        if (next - estimate).abs() <= 1e-13 * next {
            return next;
        }
        estimate = next;
    }
    estimate
}

fn reconstruct(vectors: &DMatrix<f64>, values: &[f64]) -> DMatrix<f64> {
    let n = vectors.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &lam) in values.iter().enumerate() {
        if lam != 0.0 {
            let e = vectors.column(k);
            out += lam * e * e.transpose();
        }
    }
    out
}

/// Euclidean projection onto positive semi-definite matrices of rank at
/// most three: the three largest eigenvalues are kept (clamped at zero) and
/// the rest are dropped.
pub fn rank3_psd_project(f: &DMatrix<f64>) -> Result<CorrectiveGram> {
    if !linalg::all_finite(f) {
        return Err(Error::NonFinite("Gram matrix".into()));
    }
    let (values, vectors) = sym_eigen_desc(&symmetrize(f));
    let kept: Vec<f64> = values.iter().take(3).map(|v| v.max(0.0)).collect();
    CorrectiveGram::new(reconstruct(&vectors, &kept))
}

/// Projection of `v` onto `{x >= 0, sum(x) = total}`.
fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let candidate = (cumulative - total) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Euclidean projection onto `{F PSD, rank(F) <= 3, trace(F) = GRAM_TRACE}`.
///
/// The feasible set is closed, so a gradient step of length `1/L` followed
/// by this projection never increases `||A vec(F)||^2`.
pub fn project_rank3_trace(f: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(&symmetrize(f));
    let top: Vec<f64> = values.iter().take(3).copied().collect();
    reconstruct(&vectors, &project_simplex(&top, GRAM_TRACE))
}

#[derive(Debug, Clone)]
pub struct GramSolution {
    pub gram: CorrectiveGram,
    pub iterations: usize,
    pub converged: bool,
    /// `||A vec(F)||^2` at the start point and after every iteration.
    pub objective_trace: Vec<f64>,
}

impl GramSolution {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Proximal gradient on `||A vec(F)||^2` over trace-normalized rank-3 PSD
/// matrices: `vec(F*) = vec(F) - A^T A vec(F) / L_A`, then project.
///
/// With `f0 = None` the start point comes from [`initial_gram`]. Hitting
/// `pg_max_iters` is reported through `converged`, not as an error.
pub fn solve_gram_proximal(
    sys: &OrthogonalitySystem,
    f0: Option<&CorrectiveGram>,
    cfg: &SolverConfig,
) -> Result<GramSolution> {
    let dim = sys.gram_dim();
    if let Some(f0) = f0 {
        if f0.matrix().nrows() != dim {
            return Err(Error::Dimension(format!(
                "initial Gram is {}x{}, system expects {dim}x{dim}",
                f0.matrix().nrows(),
                f0.matrix().ncols()
            )));
        }
    }
    if sys.matrix().iter().all(|&v| v == 0.0) {
        let start = f0
            .map(|g| g.matrix().clone())
            .unwrap_or_else(|| DMatrix::identity(dim, dim));
        let f = project_rank3_trace(&start);
        return Ok(GramSolution {
            objective_trace: vec![sys.objective(&f)],
            gram: CorrectiveGram::new(f)?,
            iterations: 1,
            converged: true,
        });
    }
    let lipschitz = lipschitz_constant(sys)?;
    let mut f = match f0 {
        Some(g) => project_rank3_trace(g.matrix()),
        None => initial_gram(sys, cfg),
    };
    let mut trace = vec![sys.objective(&f)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.pg_max_iters {
        iterations += 1;
        let step = &f - sys.gradient(&f) / lipschitz;
        let next = project_rank3_trace(&step);
        let change = (&next - &f).norm();
        let scale = 1.0 + f.norm();
        f = next;
        trace.push(sys.objective(&f));
        if change <= cfg.pg_tol * scale {
            converged = true;
            break;
        }
    }
    Ok(GramSolution {
        gram: CorrectiveGram::new(f)?,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Start point for the proximal gradient loop.
///
/// Candidates are the null-space direction of the symmetric-restricted
/// normal equations closest to the identity, plus `gram_restarts` seeded
/// random triplets. Each is refined on the factor `Q` of `F = Q Q^T` by
/// damped Gauss-Newton and the candidate with the lowest trace-normalized
/// objective wins.
pub fn initial_gram(sys: &OrthogonalitySystem, cfg: &SolverConfig) -> DMatrix<f64> {
    let dim = sys.gram_dim();
    let factored = FactoredGram::new(sys);
    let mut starts = vec![top3_factor(&null_space_start(sys))];
    for r in 0..cfg.gram_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(r as u64));
        starts.push(DMatrix::from_fn(dim, 3, |_, _| StandardNormal.sample(&mut rng)));
    }
    let opts = LmOptions {
        max_iters: 300,
        rel_tol: 1e-12,
        ..Default::default()
    };
    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for q0 in starts {
        if q0.norm() == 0.0 {
            continue;
        }
        let out = lm::minimize(&factored, DVector::from_column_slice(q0.as_slice()), &opts);
        let q = DMatrix::from_column_slice(dim, 3, out.x.as_slice());
        // Rescaled onto the trace constraint; the objective is scale invariant in Q.
        let qq = &q * q.transpose();
        if qq.trace() <= 0.0 || !linalg::all_finite(&qq) {
            continue;
        }
        let f = qq.scale(GRAM_TRACE / qq.trace());
        let objective = sys.objective(&f);
        if best.as_ref().is_none_or(|(b, _)| objective < *b) {
            best = Some((objective, f));
        }
    }
    best.map(|(_, f)| f)
        .unwrap_or_else(|| project_rank3_trace(&DMatrix::identity(dim, dim)))
}

fn top3_factor(f: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(f);
    let mut q = DMatrix::zeros(f.nrows(), 3);
    for k in 0..3.min(values.len()) {
        q.column_mut(k)
            .copy_from(&(vectors.column(k) * values[k].max(0.0).sqrt()));
    }
    q
}

/// Symmetric matrix in the numerical null space of `A` (restricted to
/// symmetric `F`) closest to the identity, projected onto the feasible set.
fn null_space_start(sys: &OrthogonalitySystem) -> DMatrix<f64> {
    let n = sys.gram_dim();
    let a = sys.matrix();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let half = std::f64::consts::FRAC_1_SQRT_2;
    let reduced = DMatrix::from_fn(a.nrows(), pairs.len(), |r, c| {
        let (i, j) = pairs[c];
        if i == j {
            a[(r, j * n + i)]
        } else {
            half * (a[(r, j * n + i)] + a[(r, i * n + j)])
        }
    });
    let (_, vectors) = sym_eigen_desc(&reduced.tr_mul(&reduced));
    // The solution space of the orthogonality constraints has dimension
    // 2K^2 - K; take that many of the weakest directions.
    let k = n / 3;
    let null_dim = (2 * k * k - k).clamp(1, pairs.len());
    let basis = vectors.columns(pairs.len() - null_dim, null_dim);
    let identity = DVector::from_fn(pairs.len(), |c, _| if pairs[c].0 == pairs[c].1 { 1.0 } else { 0.0 });
    let coords = basis * basis.tr_mul(&identity);
    if coords.norm() < 1e-12 {
        return project_rank3_trace(&DMatrix::identity(n, n));
    }
    let mut f = DMatrix::zeros(n, n);
    for (c, &(i, j)) in pairs.iter().enumerate() {
        let v = if i == j { coords[c] } else { coords[c] * half };
        f[(i, j)] = v;
        f[(j, i)] = v;
    }
    if f.trace() < 0.0 {
        f = -f;
    }
    project_rank3_trace(&f)
}

/// `r(Q) = A vec(Q Q^T) / ||Q||_F^2`, scale-invariant in `Q`.
struct FactoredGram {
    dim: usize,
    /// `A_l + A_l^T` for every constraint row, with `A_l = unvec(row l)`.
    sym_rows: Vec<DMatrix<f64>>,
}

impl FactoredGram {
    fn new(sys: &OrthogonalitySystem) -> Self {
        let dim = sys.gram_dim();
        let sym_rows = sys
            .matrix()
            .row_iter()
            .map(|row| {
                let m = DMatrix::from_iterator(dim, dim, row.iter().copied());
                &m + m.transpose()
            })
            .collect();
        Self { dim, sym_rows }
    }

    fn unpack(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, 3, x.as_slice())
    }
}

impl LeastSquares for FactoredGram {
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let q = self.unpack(x);
        let norm = q.norm_squared();
        DVector::from_iterator(
            self.sym_rows.len(),
            self.sym_rows
                .iter()
                .map(|s| 0.5 * (q.tr_mul(&(s * &q))).trace() / norm),
        )
    }

    fn jacobian(&self, x: &DVector<f64>, residuals: &DVector<f64>) -> DMatrix<f64> {
        let q = self.unpack(x);
        let norm = q.norm_squared();
        let mut jac = DMatrix::zeros(self.sym_rows.len(), x.len());
        for (l, s) in self.sym_rows.iter().enumerate() {
            let d = (s * &q) / norm - &q * (2.0 * residuals[l] / norm);
            jac.row_mut(l).copy_from_slice(d.as_slice());
        }
        jac
    }
}

/// Column triplet `Q_k` with `Q_k Q_k^T = F`.
#[derive(Debug, Clone)]
pub struct CorrectiveTriplet {
    pub q: DMatrix<f64>,
    /// Fewer than three non-negligible eigenvalues; missing columns are zero.
    pub rank_deficient: bool,
}

/// `Q = E_3 diag(sqrt(λ_1), sqrt(λ_2), sqrt(λ_3))` from the top eigenpairs
/// of `F`. Strict Cholesky is undefined for a singular `F`; this factor
/// differs from it only by a right rotation.
pub fn recover_corrective(gram: &CorrectiveGram) -> CorrectiveTriplet {
    let f = gram.matrix();
    let (values, vectors) = sym_eigen_desc(&symmetrize(f));
    let largest = values[0].max(0.0);
    let mut q = DMatrix::zeros(f.nrows(), 3);
    let mut rank_deficient = false;
    for k in 0..3 {
        let lam = values.get(k).copied().unwrap_or(0.0);
        if lam <= 1e-12 * largest || lam <= 0.0 {
            rank_deficient = true;
            continue;
        }
        q.column_mut(k).copy_from(&(vectors.column(k) * lam.sqrt()));
    }
    CorrectiveTriplet { q, rank_deficient }
}

#[derive(Debug, Clone)]
pub struct PoseRecovery {
    pub poses: CameraPoseSequence,
    /// Signed per-frame coefficient `c_i` of the recovered triplet.
    pub coefficients: DVector<f64>,
    /// Frames whose coefficient vanished; their pose is copied from a
    /// neighbour.
    pub degenerate_frames: Vec<usize>,
}

/// Poses from `M'_i Q = c_i R_i`.
///
/// Each `P_i = M'_i Q` is scaled by `c_i = sqrt((|p_1|^2 + |p_2|^2) / 2)` and
/// replaced by its nearest row-orthonormal matrix. The sign of each
/// `(c_i, R_i)` pair is chosen to keep `R_i` closest to the previous pose.
pub fn recover_poses(pair: &FactoredPair, q: &DMatrix<f64>) -> Result<PoseRecovery> {
    let m = pair.motion();
    if q.nrows() != m.ncols() || q.ncols() != 3 {
        return Err(Error::Dimension(format!(
            "corrective triplet is {}x{}, expected {}x3",
            q.nrows(),
            q.ncols(),
            m.ncols()
        )));
    }
    let frames = m.nrows() / 2;
    let projected: Vec<Matrix2x3<f64>> = (0..frames)
        .map(|i| {
            let p = m.rows(2 * i, 2) * q;
            Matrix2x3::from_fn(|r, c| p[(r, c)])
        })
        .collect();
    let scales: Vec<f64> = projected
        .iter()
        .map(|p| (p.norm_squared() / 2.0).sqrt())
        .collect();
    let largest = scales.iter().copied().fold(0.0, f64::max);
    if largest.is_nan() || largest <= 0.0 {
        return Err(Error::Degenerate("all frame coefficients vanish".into()));
    }

    let mut blocks: Vec<Option<Matrix2x3<f64>>> = vec![None; frames];
    let mut coefficients = DVector::zeros(frames);
    let mut degenerate_frames = Vec::new();
    let mut previous: Option<Matrix2x3<f64>> = None;
    for i in 0..frames {
        let c = scales[i];
        if c < 1e-12 * largest {
            degenerate_frames.push(i);
            continue;
        }
        let mut r = linalg::nearest_row_orthonormal(&(projected[i] / c));
        let mut c = c;
        if let Some(prev) = previous {
            if (-r - prev).norm() < (r - prev).norm() {
                r = -r;
                c = -c;
            }
        }
        blocks[i] = Some(r);
        coefficients[i] = c;
        previous = Some(r);
    }

    let first_valid = blocks.iter().flatten().next().copied().expect("largest > 0");
    let mut last = first_valid;
    let filled = blocks
        .into_iter()
        .map(|b| {
            if let Some(r) = b {
                last = r;
            }
            last
        })
        .collect();
    Ok(PoseRecovery {
        poses: CameraPoseSequence::new(filled)?,
        coefficients,
        degenerate_frames,
    })
}

/// Everything the pose stage produces.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub recovery: PoseRecovery,
    pub gram: GramSolution,
    pub triplet: CorrectiveTriplet,
    pub pair: FactoredPair,
}

/// Full pose stage on registered tracks with a fixed K.
///
/// The orthogonality system is assembled on the column-orthonormal motion
/// factor, which weights all frames by their share of the measurement
/// energy rather than by the balanced split's singular values.
pub fn estimate_poses(w: &TrackTable, k: usize, cfg: &SolverConfig) -> Result<PoseEstimate> {
    let pair = truncated_factorization(w, k)?.orthonormal_motion();
    let sys = build_orthogonality_system(&pair);
    let gram = solve_gram_proximal(&sys, None, cfg)?;
    let triplet = recover_corrective(&gram.gram);
    let recovery = recover_poses(&pair, &triplet.q)?;
    Ok(PoseEstimate {
        recovery,
        gram,
        triplet,
        pair,
    })
}
