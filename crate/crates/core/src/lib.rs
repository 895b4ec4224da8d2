//! Non-rigid structure from motion under orthographic projection.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod linalg;
pub mod lm;
pub mod model;
pub mod pipeline;
pub mod pose;
pub mod shape;
pub mod synth;
pub mod trajectory;

pub use config::SolverConfig;
pub use error::{Error, Result};
pub use model::{CameraPoseSequence, CorrectiveGram, MotionMatrix, ShapeSequence, TrackTable, TrajectoryModel};
