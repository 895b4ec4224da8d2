//! `smsr` command-line interface.

use std::ffi::OsString;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::eval::{self, AlignmentMode, EvalOptions};
use crate::io;
use crate::pipeline::{self, GroundTruth};
use crate::synth::{self, SceneParams};

/// Exit status for a solver that stopped because its residual kept growing.
pub const EXIT_DIVERGED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "smsr", version, about = "Non-rigid structure from motion for orthographic tracks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover poses and per-frame shapes from a tracks file.
    Reconstruct(ReconstructArgs),
    /// Score a shapes file against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic tracks/shapes/poses fixture.
    Synth(SynthArgs),
    /// Write one PLY point cloud per frame of a shapes file.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Alignment {
    PerFrame,
    Sequence,
    None,
}

impl From<Alignment> for AlignmentMode {
    fn from(a: Alignment) -> Self {
        match a {
            Alignment::PerFrame => AlignmentMode::PerFrame,
            Alignment::Sequence => AlignmentMode::Sequence,
            Alignment::None => AlignmentMode::None,
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    /// Require proper rotations when aligning to ground truth.
    #[arg(long)]
    pub no_reflection: bool,
    /// Per-point error exponent: 2 (squared distance) or 1 (distance).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub error_power: u8,
    /// Similarity alignment applied before scoring.
    #[arg(long, value_enum, default_value_t = Alignment::PerFrame)]
    pub alignment: Alignment,
}

impl MetricArgs {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            allow_reflection: !self.no_reflection,
            error_power: self.error_power,
            alignment: self.alignment.into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// NRSFM-TRACKS input.
    pub tracks: PathBuf,
    /// JSON solver configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of shape bases (default: chosen from the spectrum).
    #[arg(long = "K", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    /// Try every K in `a..b` and keep the lowest reprojection error.
    #[arg(long = "search-K", value_name = "A..B", value_parser = parse_k_range, conflicts_with = "k")]
    pub search_k: Option<RangeInclusive<usize>>,
    /// Number of DCT coefficients for trajectory smoothing.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: Option<u64>,
    /// Initial ADMM penalty.
    #[arg(long)]
    pub mu: Option<f64>,
    /// ADMM penalty growth factor.
    #[arg(long)]
    pub rho: Option<f64>,
    /// ADMM relative residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// ADMM iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Skip trajectory smoothing of the measurements.
    #[arg(long)]
    pub skip_smoothing: bool,
    /// Smooth even above the automatic size cutoff.
    #[arg(long, conflicts_with = "skip_smoothing")]
    pub force_smoothing: bool,
    /// Seed for the randomized Gram restarts.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ground-truth NRSFM-SHAPES file; adds accuracy metrics to the report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricArgs,
    /// Output directory for shapes.txt, poses.txt and report.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Reconstructed NRSFM-SHAPES file.
    pub reconstruction: PathBuf,
    /// Ground-truth NRSFM-SHAPES file.
    pub ground_truth: PathBuf,
    #[command(flatten)]
    pub metrics: MetricArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of frames.
    #[arg(long = "T", value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Number of points.
    #[arg(long = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub points: u64,
    /// Number of shape bases.
    #[arg(long = "K", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// DCT coefficients of the coefficient trajectories (default: clamp(ceil(T/10), K, T)).
    #[arg(long)]
    pub d_motion: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Largest magnitude of the non-rigid coefficients; 0 gives a rigid scene.
    #[arg(long, default_value_t = 0.3)]
    pub deform_scale: f64,
    /// Gaussian noise std relative to the RMS track value.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Camera swing amplitude in degrees.
    #[arg(long, default_value_t = 30.0)]
    pub max_angle: f64,
    /// Output directory for tracks.txt, shapes.txt and poses.txt.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// NRSFM-SHAPES input.
    pub shapes: PathBuf,
    /// Output directory for frame_NNNN.ply files.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_k_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    if a == 0 || b < a {
        return Err(format!("need 1 <= A <= B, got {a}..{b}"));
    }
    Ok(a..=b)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => SolverConfig::load(path)?,
        None => SolverConfig::default(),
    };
    if let Some(k) = args.k {
        cfg.k = k as usize;
    }
    if let Some(d) = args.d {
        cfg.d = d as usize;
    }
    if let Some(mu) = args.mu {
        cfg.mu0 = mu;
    }
    if let Some(rho) = args.rho {
        cfg.rho = rho;
    }
    if let Some(tol) = args.tol {
        cfg.admm_tol = tol;
    }
    if let Some(iters) = args.max_iters {
        cfg.admm_max_iters = iters;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.skip_smoothing |= args.skip_smoothing;
    cfg.force_smoothing |= args.force_smoothing;
    cfg.validate()?;

    let tracks = io::load_tracks(&args.tracks)?;
    let gt_shapes = args.gt.as_ref().map(io::load_shapes).transpose()?;
    let truth = gt_shapes.as_ref().map(|shapes| GroundTruth {
        shapes,
        options: args.metrics.options(),
    });
    let run = match &args.search_k {
        Some(range) => pipeline::reconstruct_search_k(&tracks, &cfg, range.clone(), truth)?,
        None => pipeline::reconstruct(&tracks, &cfg, truth)?,
    };

    create_dir(&args.out)?;
    io::save_shapes(&run.shapes, args.out.join("shapes.txt"))?;
    io::save_poses(&run.poses, args.out.join("poses.txt"))?;
    write_text(&args.out.join("report.json"), &run.report.to_json()?)?;
    let r = &run.report;
    println!(
        "{}",
        json!({
            "K": r.k,
            "d": r.d,
            "relative_reprojection_error": r.relative_reprojection_error,
            "e3d": r.e3d,
            "rms": r.rms,
            "out": args.out,
        })
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let x = io::load_shapes(&args.reconstruction)?;
    let g = io::load_shapes(&args.ground_truth)?;
    let opts = args.metrics.options();
    let e = eval::e3d(&x, &g, &opts)?;
    let rms = eval::rms_error(&x, &g, &opts)?;
    println!(
        "{}",
        json!({ "e3d": e.value, "rms": rms.value, "per_frame": e.per_frame })
    );
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let (t, n, k) = (args.frames as usize, args.points as usize, args.k as usize);
    let mut params = SceneParams::new(t, n, k);
    if let Some(d) = args.d_motion {
        params.d_motion = d;
    }
    params.seed = args.seed;
    params.deform_scale = args.deform_scale;
    params.max_angle_deg = args.max_angle;
    let scene = synth::generate_low_rank_scene(&params)?;
    let tracks = synth::orthographic_project(&scene.shapes, &scene.poses)?;
    let tracks = synth::add_noise(&tracks, args.noise, args.seed.wrapping_add(1))?;

    create_dir(&args.out)?;
    let files = [
        args.out.join("tracks.txt"),
        args.out.join("shapes.txt"),
        args.out.join("poses.txt"),
    ];
    io::save_tracks(&tracks, &files[0])?;
    io::save_shapes(&scene.shapes, &files[1])?;
    io::save_poses(&scene.poses, &files[2])?;
    println!(
        "{}",
        json!({
            "T": t,
            "N": n,
            "K": k,
            "d_motion": params.d_motion,
            "seed": params.seed,
            "deform_scale": params.deform_scale,
            "noise": args.noise,
            "max_angle": params.max_angle_deg,
            "files": files,
        })
    );
    Ok(())
}

fn export(args: &ExportArgs) -> Result<()> {
    let shapes = io::load_shapes(&args.shapes)?;
    let written = io::export_ply(&shapes, &args.out)?;
    println!("{}", json!({ "frames": written.len(), "files": written }));
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("SMSR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SMSR_THREADS must be a positive integer, got {value:?}")))?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Reconstruct(a) => reconstruct(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
        Command::Export(a) => export(a),
    }
}

/// Parses `args`, runs the command and returns the process exit status:
/// 0 on success, 1 on usage or input errors, 2 when a solver diverged.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_divergence() {
                EXIT_DIVERGED
            } else {
                1
            }
        }
    }
}
