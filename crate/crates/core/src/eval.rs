//! Reconstruction accuracy against ground truth.

use nalgebra::{Matrix3, Matrix3xX, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ShapeSequence;

/// Similarity transform `s Ω x + t` that best maps `x` onto `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned: Matrix3xX<f64>,
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// `x` had no spread; only the translation was fitted.
    pub degenerate: bool,
}

/// Orthogonal Procrustes with scale and translation.
pub fn procrustes_align(
    x: &Matrix3xX<f64>,
    g: &Matrix3xX<f64>,
    allow_reflection: bool,
) -> Result<Alignment> {
    if x.ncols() != g.ncols() || x.ncols() == 0 {
        return Err(Error::Dimension(format!(
            "cannot align {} points to {}",
            x.ncols(),
            g.ncols()
        )));
    }
    if x == g {
        return Ok(Alignment {
            aligned: x.clone(),
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            degenerate: false,
        });
    }
    let x_mean = x.column_mean();
    let g_mean = g.column_mean();
    let xc = x.map_with_location(|r, _, v| v - x_mean[r]);
    let gc = g.map_with_location(|r, _, v| v - g_mean[r]);
    let spread = xc.norm_squared();
    if spread == 0.0 {
        let translation = g_mean - x_mean;
        return Ok(Alignment {
            aligned: x.map_with_location(|r, _, v| v + translation[r]),
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation,
            degenerate: true,
        });
    }
    let cross = &gc * xc.transpose();
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if !allow_reflection && (u * v_t).determinant() < 0.0 {
        // nalgebra does not order singular values; flip the smallest.
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three values");
        d[k] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;
    let scale = svd.singular_values.dot(&d) / spread;
    let translation = g_mean - scale * rotation * x_mean;
    let mut aligned = scale * rotation * x;
    for mut col in aligned.column_iter_mut() {
        col += translation;
    }
    Ok(Alignment {
        aligned,
        scale,
        rotation,
        translation,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    /// One similarity per frame.
    #[default]
    PerFrame,
    /// One similarity for the whole sequence.
    Sequence,
    /// Compare raw coordinates.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub allow_reflection: bool,
    /// Exponent applied to each per-point distance: 2 follows the squared
    /// form, 1 the plain Euclidean distance.
    pub error_power: u8,
    pub alignment: AlignmentMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            allow_reflection: true,
            error_power: 2,
            alignment: AlignmentMode::PerFrame,
        }
    }
}

/// A scalar metric together with its per-frame contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub per_frame: Vec<f64>,
}

/// Applies the alignment policy, returning aligned copies of `x`.
pub fn align_sequence(
    x: &ShapeSequence,
    g: &ShapeSequence,
    opts: &EvalOptions,
) -> Result<Vec<Matrix3xX<f64>>> {
    if x.frames() != g.frames() || x.points() != g.points() {
        return Err(Error::Dimension(format!(
            "reconstruction is {} frames x {} points, ground truth {} x {}",
            x.frames(),
            x.points(),
            g.frames(),
            g.points()
        )));
    }
    match opts.alignment {
        AlignmentMode::None => Ok(x.shapes().to_vec()),
        AlignmentMode::PerFrame => x
            .shapes()
            .par_iter()
            .zip(g.shapes().par_iter())
            .map(|(xs, gs)| procrustes_align(xs, gs, opts.allow_reflection).map(|a| a.aligned))
            .collect(),
        AlignmentMode::Sequence => {
            let n = x.points();
            let stack = |s: &ShapeSequence| {
                Matrix3xX::from_fn(s.frames() * n, |r, c| s.get(c / n)[(r, c % n)])
            };
            let a = procrustes_align(&stack(x), &stack(g), opts.allow_reflection)?;
            Ok((0..x.frames())
                .map(|t| a.aligned.columns(t * n, n).into_owned())
                .collect())
        }
    }
}

/// Population standard deviation of each coordinate axis.
fn axis_std(g: &Matrix3xX<f64>) -> Vector3<f64> {
    let mean = g.column_mean();
    let n = g.ncols() as f64;
    Vector3::from_fn(|r, _| {
        (g.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>() / n).sqrt()
    })
}

/// Normalized mean 3D error: `(1 / (σ T N)) Σ_t Σ_j e_tj` where `e_tj` is
/// the (squared, by default) distance between matched points after
/// alignment and `σ` is the mean per-axis standard deviation of the ground
/// truth. Per-frame entries average to the total.
pub fn e3d(x: &ShapeSequence, g: &ShapeSequence, opts: &EvalOptions) -> Result<Metric> {
    let power = check_power(opts.error_power)?;
    let aligned = align_sequence(x, g, opts)?;
    let t = g.frames() as f64;
    let n = g.points() as f64;
    let sigma = g.shapes().iter().map(|s| axis_std(s).sum()).sum::<f64>() / (3.0 * t);
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::Degenerate(
            "ground truth has zero spread; e3D is undefined".into(),
        ));
    }
    let per_frame: Vec<f64> = aligned
        .iter()
        .zip(g.shapes())
        .map(|(xs, gs)| {
            (gs - xs)
                .column_iter()
                .map(|d| d.norm_squared().powf(power / 2.0))
                .sum::<f64>()
                / (sigma * n)
        })
        .collect();
    Ok(Metric {
        value: per_frame.iter().sum::<f64>() / t,
        per_frame,
    })
}

/// `(1/T) Σ_t ||X_t - G_t||_F / ||G_t||_F` after alignment.
pub fn rms_error(x: &ShapeSequence, g: &ShapeSequence, opts: &EvalOptions) -> Result<Metric> {
    let aligned = align_sequence(x, g, opts)?;
    let per_frame = aligned
        .iter()
        .zip(g.shapes())
        .enumerate()
        .map(|(t, (xs, gs))| {
            let norm = gs.norm();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!(
                    "ground-truth frame {t} is all zeros"
                )));
            }
            Ok((gs - xs).norm() / norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Metric {
        value: per_frame.iter().sum::<f64>() / per_frame.len() as f64,
        per_frame,
    })
}

fn check_power(p: u8) -> Result<f64> {
    match p {
        1 | 2 => Ok(p as f64),
        _ => Err(Error::InvalidArgument(format!(
            "error power must be 1 or 2, got {p}"
        ))),
    }
}
