use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{io_err, PipelineError, Result};
use crate::calibration::{IcpParams, TRACK_REVIEW_RMS};
use crate::geometry::DEFAULT_CONTACT_THRESHOLD_M;
use crate::graspgen::{PoseGenConfig, RefineParams, StabilityFilter};
use crate::kinematics::{load_model_file, toy_hand, KinematicModel};
use crate::motionsynth::{MotionConfig, Termination};
use crate::selection::{MllmConfig, ViewConfig, BACKEND_HEURISTIC, BACKEND_MLLM};
use crate::sim::SimParams;

/// Input locations. Relative paths are resolved against the config file's
/// directory when loaded from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset root holding `objects/`, `sequences/` and the split file.
    pub dataset: PathBuf,
    /// Split file, relative to the dataset root.
    pub split: PathBuf,
    /// Calibration rig captures, relative to the dataset root.
    pub rig: PathBuf,
    /// Hand model TOML; the bundled toy hand when absent.
    pub hand: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dataset: PathBuf::from("."), split: PathBuf::from("split.toml"), rig: PathBuf::from("rig"), hand: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub contact_threshold_m: f64,
    pub self_intersection_voxel_m: f64,
    /// Parent–child link overlap within this radius of the shared joint is
    /// not counted as self-intersection.
    pub collar_m: f64,
    pub hand_object_voxel_m: f64,
    pub denoise_k: usize,
    pub denoise_sigma: f64,
    /// Hand surface samples for penetration and contact statistics.
    pub hand_points: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            contact_threshold_m: DEFAULT_CONTACT_THRESHOLD_M,
            self_intersection_voxel_m: 0.0005,
            collar_m: 0.004,
            hand_object_voxel_m: 0.001,
            denoise_k: 20,
            denoise_sigma: 2.0,
            hand_points: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub icp: IcpParams,
    /// Camera pairs with overlapping views; consecutive ids when empty.
    pub neighbor_pairs: Vec<(usize, usize)>,
    /// Object surface samples registered against each frame's cloud.
    pub track_samples: usize,
    pub track_review_rms: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self { icp: IcpParams::default(), neighbor_pairs: Vec::new(), track_samples: 512, track_review_rms: TRACK_REVIEW_RMS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub candidates_per_object: usize,
    /// Run contact refinement on every decoded candidate.
    pub refine: bool,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self { candidates_per_object: 100, refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSection {
    /// `heuristic` (offline) or `mllm`.
    pub backend: String,
    pub top_k: usize,
    pub views: ViewConfig,
    pub mllm: MllmConfig,
    /// Prompt file replacing the bundled prompt.
    pub prompt: Option<PathBuf>,
}

impl Default for SelectionSection {
    fn default() -> Self {
        Self { backend: BACKEND_HEURISTIC.into(), top_k: 10, views: ViewConfig::default(), mllm: MllmConfig::default(), prompt: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Synthesized motions whose final object displacement exceeds this are
    /// reported as not executable.
    pub max_displacement_cm: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { max_displacement_cm: 2.0 }
    }
}

/// Full run configuration. Every module seed is overwritten from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads per stage; 0 uses every core.
    pub workers: usize,
    pub paths: Paths,
    pub geometry: GeometrySection,
    pub calibration: CalibrationSection,
    pub sim: SimParams,
    pub posegen: PoseGenConfig,
    pub refine: RefineParams,
    pub filter: StabilityFilter,
    pub generation: GenerationSection,
    pub selection: SelectionSection,
    pub motion: MotionConfig,
    pub termination: Termination,
    pub eval: EvalSection,
}

/// Object ids per subset; no object may appear in two subsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Split {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingFile(path.to_path_buf()),
            _ => PipelineError::Io { path: path.to_path_buf(), source: e },
        })?;
        let split: Split = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(id) {
                return Err(PipelineError::Config(format!("object `{id}` appears in more than one split entry")));
            }
        }
        Ok(())
    }

    pub fn subset_of(&self, object: &str) -> Option<&'static str> {
        let has = |v: &[String]| v.iter().any(|o| o == object);
        if has(&self.train) {
            Some("train")
        } else if has(&self.val) {
            Some("val")
        } else if has(&self.test) {
            Some("test")
        } else {
            None
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, resolving relative paths against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let dataset = base_dir.join(&c.paths.dataset);
        // Relative bases stay relative: canonicalizing them would bake in the cwd.
        c.paths.dataset = if base_dir.is_absolute() { std::fs::canonicalize(&dataset).unwrap_or(dataset) } else { dataset };
        c.paths.hand = c.paths.hand.as_ref().map(|h| base_dir.join(h));
        c.selection.prompt = c.selection.prompt.as_ref().map(|p| base_dir.join(p));
        c.apply_seed(c.seed);
        Ok(c)
    }

    /// Reads and validates a config file, checking that referenced paths exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => PipelineError::MissingFile(path.to_path_buf()),
            _ => PipelineError::Io { path: path.to_path_buf(), source: e },
        })?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        // Absolute so the config hash does not depend on the working directory.
        let base = std::fs::canonicalize(parent).map_err(|e| PipelineError::Io { path: parent.to_path_buf(), source: e })?;
        let c = Self::from_toml_str(&text, &base)?;
        c.validate()?;
        Ok(c)
    }

    /// Sets the global seed and every module seed derived from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.sim.seed = seed;
        self.posegen.seed = seed;
        self.refine.seed = seed;
        self.filter.seed = seed;
        self.motion.seed = seed;
    }

    pub fn split_path(&self) -> PathBuf {
        self.paths.dataset.join(&self.paths.split)
    }

    pub fn rig_path(&self) -> PathBuf {
        self.paths.dataset.join(&self.paths.rig)
    }

    pub fn hand_model(&self) -> Result<KinematicModel> {
        match &self.paths.hand {
            Some(p) => Ok(load_model_file(p)?),
            None => Ok(toy_hand()),
        }
    }

    pub fn prompt(&self) -> Result<String> {
        match &self.selection.prompt {
            Some(p) => std::fs::read_to_string(p).map_err(io_err(p)),
            None => Ok(crate::selection::DEFAULT_PROMPT.to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for p in [self.paths.dataset.clone(), self.split_path(), self.rig_path()].into_iter().chain(self.paths.hand.clone()).chain(self.selection.prompt.clone()) {
            if !p.exists() {
                return Err(PipelineError::MissingFile(p));
            }
        }
        let g = &self.geometry;
        if [g.contact_threshold_m, g.self_intersection_voxel_m, g.hand_object_voxel_m, g.denoise_sigma].iter().any(|v| !(*v > 0.0) || !v.is_finite()) || g.collar_m < 0.0 {
            return bad("geometry thresholds, voxel sizes and denoise_sigma must be positive".into());
        }
        if g.denoise_k == 0 || g.hand_points == 0 || self.calibration.track_samples == 0 {
            return bad("denoise_k, hand_points and track_samples must be positive".into());
        }
        self.calibration.icp.validate()?;
        self.sim.validate()?;
        self.posegen.validate()?;
        self.motion.validate()?;
        if self.generation.candidates_per_object == 0 || self.selection.top_k == 0 {
            return bad("candidates_per_object and top_k must be positive".into());
        }
        if self.selection.backend != BACKEND_HEURISTIC && self.selection.backend != BACKEND_MLLM {
            return bad(format!("selection backend must be `{BACKEND_HEURISTIC}` or `{BACKEND_MLLM}`, got `{}`", self.selection.backend));
        }
        if self.termination.max_steps == 0 || !(self.termination.divergence_factor > 0.0) {
            return bad("termination max_steps and divergence_factor must be positive".into());
        }
        if !(self.eval.max_displacement_cm >= 0.0) {
            return bad("max_displacement_cm must be non-negative".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
