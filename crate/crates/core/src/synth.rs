//! Seeded low-rank scenes and their orthographic projections.

use nalgebra::{DMatrix, Matrix2x3, Matrix3xX};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::io::register_to_centroid;
use crate::model::{CameraPoseSequence, ShapeSequence, TrackTable};
use crate::trajectory::dct_basis;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub frames: usize,
    pub points: usize,
    pub basis_count: usize,
    /// DCT coefficients used for the shape coefficient trajectories.
    pub d_motion: usize,
    pub seed: u64,
    /// Largest magnitude of any non-dominant shape coefficient.
    pub deform_scale: f64,
    /// Amplitude of the sinusoidal rotation about the vertical axis.
    pub max_angle_deg: f64,
}

impl SceneParams {
    /// Defaults for everything except size: `d_motion = clamp(ceil(T/10), K, T)`,
    /// seed 0, `deform_scale` 0.3, ±30°.
    pub fn new(frames: usize, points: usize, basis_count: usize) -> Self {
        Self {
            frames,
            points,
            basis_count,
            d_motion: crate::trajectory::default_dct_count(frames, basis_count),
            seed: 0,
            deform_scale: 0.3,
            max_angle_deg: 30.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub shapes: ShapeSequence,
    pub poses: CameraPoseSequence,
    /// `T x K` shape coefficients; the first column is all ones.
    pub coefficients: DMatrix<f64>,
    /// `3K x N` basis shapes.
    pub basis: DMatrix<f64>,
}

/// Scene with `S_t = (c_t ⊗ I_3) B`, `B ~ U[-1, 1]`, `C = Ω X` rescaled so
/// that `c_t1 = 1` and the remaining columns peak at `deform_scale`, viewed
/// by a camera swinging `±max_angle` about the vertical axis.
pub fn generate_low_rank_scene(p: &SceneParams) -> Result<Scene> {
    let (t, n, k) = (p.frames, p.points, p.basis_count);
    if t == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "scene needs T, N, K >= 1, got T = {t}, N = {n}, K = {k}"
        )));
    }
    if p.d_motion < k || p.d_motion > t {
        return Err(Error::InvalidArgument(format!(
            "need K <= d_motion <= T, got K = {k}, d_motion = {}, T = {t}",
            p.d_motion
        )));
    }
    if !(p.deform_scale >= 0.0 && p.deform_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "deform scale must be finite and non-negative, got {}",
            p.deform_scale
        )));
    }
    if !p.max_angle_deg.is_finite() {
        return Err(Error::InvalidArgument("rotation amplitude must be finite".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let basis = DMatrix::from_fn(3 * k, n, |_, _| unit.sample(&mut rng));
    let x = DMatrix::from_fn(p.d_motion, k, |_, _| unit.sample(&mut rng));
    let mut coefficients = dct_basis(t, p.d_motion)? * x;
    coefficients.column_mut(0).fill(1.0);
    for j in 1..k {
        let mut col = coefficients.column_mut(j);
        let peak = col.amax();
        if peak > 0.0 {
            col *= p.deform_scale / peak;
        }
    }

    let shapes = (0..t)
        .map(|i| {
            let mut s = Matrix3xX::zeros(n);
            for j in 0..k {
                s += basis.rows(3 * j, 3) * coefficients[(i, j)];
            }
            s
        })
        .collect();
    let amplitude = p.max_angle_deg.to_radians();
    let poses = (0..t)
        .map(|i| {
            let theta = amplitude * (2.0 * std::f64::consts::PI * i as f64 / t as f64).sin();
            let (s, c) = theta.sin_cos();
            Matrix2x3::new(c, 0.0, s, 0.0, 1.0, 0.0)
        })
        .collect();
    Ok(Scene {
        shapes: ShapeSequence::new(shapes)?,
        poses: CameraPoseSequence::new(poses)?,
        coefficients,
        basis,
    })
}

/// Centroid-registered `W_i = R_i S_i`.
pub fn orthographic_project(s: &ShapeSequence, r: &CameraPoseSequence) -> Result<TrackTable> {
    if s.frames() != r.frames() {
        return Err(Error::Dimension(format!(
            "{} shapes for {} poses",
            s.frames(),
            r.frames()
        )));
    }
    let mut w = DMatrix::zeros(2 * s.frames(), s.points());
    for (i, (shape, pose)) in s.shapes().iter().zip(r.blocks()).enumerate() {
        w.rows_mut(2 * i, 2).copy_from(&(pose * shape));
    }
    Ok(register_to_centroid(&TrackTable::new(w)?))
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma_rel` times
/// the RMS entry of `w`, then re-registers.
pub fn add_noise(w: &TrackTable, sigma_rel: f64, seed: u64) -> Result<TrackTable> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be finite and non-negative, got {sigma_rel}"
        )));
    }
    if sigma_rel == 0.0 {
        return Ok(w.clone());
    }
    let data = w.data();
    let rms = (data.norm_squared() / data.len() as f64).sqrt();
    let normal = Normal::new(0.0, sigma_rel * rms).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy = data.map(|v| v + normal.sample(&mut rng));
    Ok(register_to_centroid(&TrackTable::new(noisy)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rigid_scene_is_static() {
        let mut p = SceneParams::new(10, 8, 2);
        p.deform_scale = 0.0;
        let scene = generate_low_rank_scene(&p).unwrap();
        let first = scene.shapes.get(0);
        assert!(scene.shapes.shapes().iter().all(|s| s == first));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams::new(12, 9, 2);
        let a = generate_low_rank_scene(&p).unwrap();
        let b = generate_low_rank_scene(&p).unwrap();
        assert_eq!(a.shapes, b.shapes);
        assert_eq!(a.poses, b.poses);
    }

    #[test]
    fn coefficient_scaling() {
        let p = SceneParams::new(30, 10, 3);
        let scene = generate_low_rank_scene(&p).unwrap();
        assert!(scene.coefficients.column(0).iter().all(|&c| c == 1.0));
        for j in 1..3 {
            assert!((scene.coefficients.column(j).amax() - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(generate_low_rank_scene(&SceneParams::new(10, 5, 0)).is_err());
        let mut p = SceneParams::new(10, 5, 3);
        p.d_motion = 2;
        assert!(generate_low_rank_scene(&p).is_err());
        p.d_motion = 11;
        assert!(generate_low_rank_scene(&p).is_err());
    }

    #[test]
    fn front_camera_projection_keeps_xy() {
        let s = ShapeSequence::new(vec![Matrix3xX::from_column_slice(&[1.0, 2.0, 3.0, 3.0, 0.0, -1.0])]).unwrap();
        let r = CameraPoseSequence::new(vec![Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0)]).unwrap();
        let w = orthographic_project(&s, &r).unwrap();
        assert_eq!(w.data(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn zero_noise_is_identity() {
        let w = TrackTable::new(DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64)).unwrap();
        assert_eq!(add_noise(&w, 0.0, 5).unwrap(), w);
        assert!(add_noise(&w, -0.1, 5).is_err());
        assert_eq!(add_noise(&w, 0.1, 5).unwrap(), add_noise(&w, 0.1, 5).unwrap());
    }
}
