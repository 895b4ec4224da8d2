//! End-to-end reconstruction: poses, optional trajectory smoothing, shapes.

use std::ops::RangeInclusive;
use std::time::Instant;

use crate::config::{KSearchEntry, ReconstructionReport, SolverConfig, StageReport, StageStats};
use crate::error::{Error, Result, StageContext};
use crate::eval::{self, EvalOptions};
use crate::io::register_to_centroid;
use crate::model::{CameraPoseSequence, ShapeSequence, TrackTable};
use crate::pose;
use crate::shape;
use crate::trajectory;

/// Reference shapes and the policy used to score against them.
#[derive(Debug, Clone, Copy)]
pub struct GroundTruth<'a> {
    pub shapes: &'a ShapeSequence,
    pub options: EvalOptions,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub shapes: ShapeSequence,
    pub poses: CameraPoseSequence,
    pub report: ReconstructionReport,
}

fn stats(start: Instant, iterations: usize, converged: bool) -> StageStats {
    StageStats {
        iterations,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    }
}

/// `||W - R S||_F`.
pub fn reprojection_error(w: &TrackTable, r: &CameraPoseSequence, s: &ShapeSequence) -> f64 {
    let mut total = 0.0;
    for (i, (pose, shape)) in r.blocks().iter().zip(s.shapes()).enumerate() {
        let diff = w.data().rows(2 * i, 2) - pose * shape;
        total += diff.norm_squared();
    }
    total.sqrt()
}

/// Runs every stage with the configured (or automatically selected) K.
pub fn reconstruct(
    tracks: &TrackTable,
    cfg: &SolverConfig,
    truth: Option<GroundTruth<'_>>,
) -> Result<Reconstruction> {
    cfg.validate().stage("config")?;
    if let Some(gt) = truth {
        if gt.shapes.frames() != tracks.frames() || gt.shapes.points() != tracks.points() {
            return Err(Error::Dimension(format!(
                "ground truth is {} frames x {} points, tracks {} x {}",
                gt.shapes.frames(),
                gt.shapes.points(),
                tracks.frames(),
                tracks.points()
            )))
            .stage("evaluation");
        }
    }

    let started = Instant::now();
    let w = register_to_centroid(tracks);
    let k = match cfg.k {
        0 => pose::select_basis_count(&w, cfg.energy_threshold).stage("factorization")?,
        k => k,
    };
    let pair = pose::truncated_factorization(&w, k)
        .stage("factorization")?
        .orthonormal_motion();
    let factorization = stats(started, 1, true);

    let started = Instant::now();
    let sys = pose::build_orthogonality_system(&pair);
    let gram = pose::solve_gram_proximal(&sys, None, cfg).stage("pose")?;
    let triplet = pose::recover_corrective(&gram.gram);
    let recovery = pose::recover_poses(&pair, &triplet.q).stage("pose")?;
    let poses = recovery.poses;
    let pose_stats = stats(started, gram.iterations, gram.converged);

    let started = Instant::now();
    let d = match cfg.d {
        0 => trajectory::default_dct_count(w.frames(), k),
        d => d,
    };
    let smoothing_on = trajectory::smoothing_enabled(&w, cfg);
    let (w_shape, smoothing, smoothing_objectives) = if smoothing_on {
        if d > w.frames() {
            return Err(Error::InvalidArgument(format!(
                "d = {d} exceeds the {} available frames",
                w.frames()
            )))
            .stage("smoothing");
        }
        let fit = trajectory::fit_shape_trajectory(&w, &poses, d, k, cfg).stage("smoothing")?;
        let smoothed = trajectory::smooth_measurements(&w, &poses, &fit.model).stage("smoothing")?;
        let objectives = (fit.initial_objective(), fit.objective());
        (smoothed, stats(started, fit.iterations, fit.converged), Some(objectives))
    } else {
        (w.clone(), StageStats::default(), None)
    };

    let started = Instant::now();
    let (shapes, admm) = shape::admm_recover(&w_shape, &poses, cfg).stage("shape")?;
    let shape_stats = stats(started, admm.iterations, admm.converged);

    let reprojection = reprojection_error(&w, &poses, &shapes);
    let w_norm = w.data().norm();
    let (e3d, rms, per_frame) = match truth {
        Some(gt) => {
            let e = eval::e3d(&shapes, gt.shapes, &gt.options).stage("evaluation")?;
            let r = eval::rms_error(&shapes, gt.shapes, &gt.options).stage("evaluation")?;
            (Some(e.value), Some(r.value), Some(e.per_frame))
        }
        None => (None, None, None),
    };

    let report = ReconstructionReport {
        k,
        d,
        frames: w.frames(),
        points: w.points(),
        e3d,
        rms,
        per_frame_errors: per_frame,
        reprojection_error: reprojection,
        relative_reprojection_error: if w_norm > 0.0 { reprojection / w_norm } else { 0.0 },
        max_pose_orthonormality_error: poses.max_orthonormality_error(),
        gram_objective: gram.objective(),
        degenerate_frames: recovery.degenerate_frames,
        smoothing_skipped: !smoothing_on,
        smoothing_objective_initial: smoothing_objectives.map(|o| o.0),
        smoothing_objective_final: smoothing_objectives.map(|o| o.1),
        admm_residuals: admm.residuals,
        stages: StageReport {
            factorization,
            pose: pose_stats,
            smoothing,
            shape: shape_stats,
        },
        k_search: None,
        config: SolverConfig { k, d, ..cfg.clone() },
    };
    Ok(Reconstruction {
        shapes,
        poses,
        report,
    })
}

/// Reconstructs once per K in `range` and keeps the run with the smallest
/// reprojection error (the smaller K on ties). K values the data cannot
/// support are skipped.
pub fn reconstruct_search_k(
    tracks: &TrackTable,
    cfg: &SolverConfig,
    range: RangeInclusive<usize>,
    truth: Option<GroundTruth<'_>>,
) -> Result<Reconstruction> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::InvalidArgument(format!(
            "K search range {}..{} must be non-empty and start at 1 or more",
            range.start(),
            range.end()
        )));
    }
    let k_cap = tracks.data().nrows().min(tracks.points()) / 3;
    let mut entries = Vec::new();
    let mut best: Option<Reconstruction> = None;
    let mut last_error = None;
    for k in range.clone().take_while(|&k| k <= k_cap.max(1)) {
        let run_cfg = SolverConfig { k, ..cfg.clone() };
        match reconstruct(tracks, &run_cfg, truth) {
            Ok(run) => {
                let err = run.report.reprojection_error;
                entries.push(KSearchEntry {
                    k,
                    reprojection_error: err,
                });
                if best.as_ref().is_none_or(|b| err < b.report.reprojection_error) {
                    best = Some(run);
                }
            }
            Err(e) if e.is_divergence() => return Err(e),
            Err(e) => last_error = Some(e),
        }
    }
    match best {
        Some(mut run) => {
            run.report.k_search = Some(entries);
            Ok(run)
        }
        None => Err(last_error.unwrap_or_else(|| {
            Error::InvalidArgument(format!(
                "no K in {}..{} fits {} rows and {} points",
                range.start(),
                range.end(),
                tracks.data().nrows(),
                tracks.points()
            ))
        })),
    }
}
