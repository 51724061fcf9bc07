//! Dataset format, run configuration and stage orchestration: calibration,
//! cloud processing and object tracking, grasp labeling, pose-generator
//! training, candidate generation, selection, motion training, synthesis and
//! evaluation, each reading the previous stage's artifacts from a run
//! directory.

mod config;
mod dataset;
mod eval;
mod run;
pub mod toy;

use std::path::PathBuf;

pub use config::{
    CalibrationSection, EvalSection, GenerationSection, GeometrySection, Paths, PipelineConfig, SelectionSection, Split,
};
pub use dataset::{
    discover_sequences, load_sequence, write_frames_csv, FrameRow, SequenceManifest, SequenceRecord, FRAMES_HEADER_FIELDS,
};
pub use eval::{
    evaluate_grasps, evaluate_grasps_file, read_candidates, write_candidates, Aggregate, CandidateRecord, GraspReport, GraspRow,
    MeanStd,
};
pub use run::{item_seed, run_pipeline, RunManifest, RunOptions, Stage, StageRecord};

use crate::calibration::CalibrationError;
use crate::geometry::GeometryError;
use crate::graspgen::GraspError;
use crate::kinematics::KinematicsError;
use crate::motionsynth::MotionError;
use crate::neural::NeuralError;
use crate::selection::SelectionError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: non-monotone at row {row}", file.display())]
    NonMonotone { file: PathBuf, row: usize },
    #[error("{}: malformed row {row}: {msg}", file.display())]
    Malformed { file: PathBuf, row: usize, msg: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("missing {what}: {} (run `{stage}` first)", path.display())]
    MissingArtifact { what: &'static str, path: PathBuf, stage: Stage },
    #[error("run directory {} was created with config hash {recorded}, current config hashes to {current}", dir.display())]
    ManifestMismatch { dir: PathBuf, recorded: String, current: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Grasp(#[from] GraspError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// Process exit status: 1 for problems with the inputs, 2 for failures
    /// inside a stage.
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Config(_) | MissingFile(_) | NonMonotone { .. } | Malformed { .. } | Dataset(_) | UnknownStage(_) | MissingArtifact { .. } | ManifestMismatch { .. } | Json { .. } => 1,
            Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 1,
            Calibration(CalibrationError::Format { .. }) | Motion(MotionError::Parse { .. }) | Geometry(GeometryError::Ply(_)) => 1,
            _ => 2,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
