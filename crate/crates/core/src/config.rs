//! Solver configuration and the per-run report, both serialized as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every tunable of one reconstruction run.
///
/// JSON keys match the field names (with `K` upper-case); unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Number of shape bases; 0 selects automatically from the spectrum.
    #[serde(rename = "K")]
    pub k: usize,
    /// Number of DCT coefficients; 0 uses `clamp(ceil(0.1 T), K, T)`.
    pub d: usize,
    pub mu0: f64,
    pub rho: f64,
    pub mu_max: f64,
    pub admm_max_iters: usize,
    /// Relative primal residual `||W - RS||_F / ||W||_F` at which ADMM stops.
    pub admm_tol: f64,
    /// Proximal steps on the shape subproblem per outer ADMM iteration.
    pub admm_inner_iters: usize,
    pub pg_max_iters: usize,
    pub pg_tol: f64,
    /// Seeded random starts for the factored Gram search.
    pub gram_restarts: usize,
    pub gn_max_iters: usize,
    pub gn_tol: f64,
    /// Keep the leading `K x K` block of the trajectory fixed during fitting.
    pub freeze_low_frequencies: bool,
    /// Spectral energy fraction used for automatic K selection.
    pub energy_threshold: f64,
    pub skip_smoothing: bool,
    /// Run smoothing even above the automatic size cutoff.
    pub force_smoothing: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            k: 0,
            d: 0,
            mu0: 1.0,
            rho: 1.02,
            mu_max: 1e6,
            admm_max_iters: 300,
            admm_tol: 1e-6,
            admm_inner_iters: 5,
            pg_max_iters: 500,
            pg_tol: 1e-8,
            gram_restarts: 4,
            gn_max_iters: 20,
            gn_tol: 1e-6,
            freeze_low_frequencies: false,
            energy_threshold: 0.999,
            skip_smoothing: false,
            force_smoothing: false,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu0", self.mu0),
            ("mu_max", self.mu_max),
            ("admm_tol", self.admm_tol),
            ("pg_tol", self.pg_tol),
            ("gn_tol", self.gn_tol),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.rho >= 1.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be >= 1, got {}", self.rho)));
        }
        if self.mu_max < self.mu0 {
            return Err(Error::Config("mu_max must be >= mu0".into()));
        }
        if !(self.energy_threshold > 0.0 && self.energy_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "energy_threshold must lie in (0, 1], got {}",
                self.energy_threshold
            )));
        }
        if self.admm_inner_iters == 0 {
            return Err(Error::Config("admm_inner_iters must be at least 1".into()));
        }
        if self.d != 0 && self.k != 0 && self.d < self.k {
            return Err(Error::Config(format!("d = {} is smaller than K = {}", self.d, self.k)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SolverConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Iteration count, wall time and convergence flag of one pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub iterations: usize,
    pub wall_time: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub factorization: StageStats,
    pub pose: StageStats,
    pub smoothing: StageStats,
    pub shape: StageStats,
}

/// One candidate of a K grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSearchEntry {
    #[serde(rename = "K")]
    pub k: usize,
    pub reprojection_error: f64,
}

/// Outputs and diagnostics of one reconstruction run.
///
/// The accuracy metrics are only present when ground truth was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub frames: usize,
    pub points: usize,
    pub e3d: Option<f64>,
    pub rms: Option<f64>,
    pub per_frame_errors: Option<Vec<f64>>,
    /// `||W - R S||_F` against the registered input tracks.
    pub reprojection_error: f64,
    /// `reprojection_error / ||W||_F`.
    pub relative_reprojection_error: f64,
    pub max_pose_orthonormality_error: f64,
    pub gram_objective: f64,
    pub degenerate_frames: Vec<usize>,
    pub smoothing_skipped: bool,
    pub smoothing_objective_initial: Option<f64>,
    pub smoothing_objective_final: Option<f64>,
    pub admm_residuals: Vec<f64>,
    pub stages: StageReport,
    pub k_search: Option<Vec<KSearchEntry>>,
    pub config: SolverConfig,
}

impl ReconstructionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SolverConfig::default().validate().unwrap();
    }

    #[test]
    fn long_float_literals_round_trip() {
        let cfg = SolverConfig::from_json(r#"{"rho": 111111111111111111111111}"#).unwrap();
        assert_eq!(cfg.rho, 1.1111111111111111e23);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SolverConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(SolverConfig::from_json(r#"{"K": 2, "bogus": 1}"#).is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg = SolverConfig::from_json(r#"{"K": 3, "rho": 1.05}"#).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.rho, 1.05);
        assert_eq!(cfg.mu0, 1.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SolverConfig::from_json(r#"{"rho": 0.5}"#).is_err());
        assert!(SolverConfig::from_json(r#"{"admm_tol": 0}"#).is_err());
        assert!(SolverConfig::from_json(r#"{"mu0": -1}"#).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = SolverConfig {
            k: 2,
            seed: 9,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"K\":2"));
        assert_eq!(SolverConfig::from_json(&text).unwrap(), cfg);
    }
}
