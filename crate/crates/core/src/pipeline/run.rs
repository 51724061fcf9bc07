use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{discover_sequences, load_sequence, SequenceRecord};
use super::eval::{evaluate_grasps, object_cloud, read_candidates, write_candidates, CandidateRecord, GraspReport};
use super::{io_err, PipelineConfig, PipelineError, Result, Split};
use crate::calibration::{
    hand_eye_residual, hand_eye_solve, object_samples, read_motion_pairs, refine_extrinsics, track_object_pose, CalibrationFile, CameraRecord,
};
use crate::geometry::{denoise_statistical, merge_views, ply, PointCloud, TriangleMesh};
use crate::graspgen::{contact_summary, refine_to_contact, sample_candidates, train_posegen, GraspSample, PoseGenModel};
use crate::kinematics::{HandPose, HandSurfaceSampler, KinematicModel};
use crate::math::{RigidTransform, Vec3};
use crate::motionsynth::{
    motion_metrics, read_motion_csv, rollout, safety_check, train_motion, write_motion_csv, MotionMetrics, MotionNet, MotionSequence, SafetyReport,
    Termination,
};
use crate::selection::{
    best_per_candidate, build_requests, render_candidates, score_heuristic, score_mllm, select_top_k, ScoreRecord, BACKEND_HEURISTIC,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Calibrate,
    Process,
    Label,
    TrainPose,
    Gen,
    Select,
    TrainMotion,
    Synth,
    Eval,
}

impl Stage {
    /// Every stage in execution order.
    pub const ALL: [Stage; 9] =
        [Stage::Calibrate, Stage::Process, Stage::Label, Stage::TrainPose, Stage::Gen, Stage::Select, Stage::TrainMotion, Stage::Synth, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Process => "process",
            Stage::Label => "label",
            Stage::TrainPose => "train-pose",
            Stage::Gen => "gen",
            Stage::Select => "select",
            Stage::TrainMotion => "train-motion",
            Stage::Synth => "synth",
            Stage::Eval => "eval",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| PipelineError::UnknownStage(s.to_string()))
    }
}

/// Seed for item `index` of a stochastic step named `tag`.
pub fn item_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// Files written, relative to the run directory.
    pub outputs: Vec<String>,
}

/// `manifest.json` in the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: PathBuf,
    /// Completed stages in execution order; a rerun replaces its entry.
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    /// Overrides `config.workers`.
    pub workers: Option<usize>,
}

const MANIFEST: &str = "manifest.json";
const CALIBRATION: &str = "calibration.txt";
const CALIBRATION_REPORT: &str = "calibration_report.json";
const PROCESSED: &str = "processed";
const GRASP_LABELS: &str = "labels/grasps.jsonl";
const LABEL_MOTION: &str = "labels/motion";
const POSEGEN: &str = "models/posegen.ckpt";
const POSEGEN_CURVE: &str = "models/posegen_curve.json";
const CANDIDATES: &str = "candidates.jsonl";
const GRASP_EVAL: &str = "grasp_eval.json";
const SCORES: &str = "scores.jsonl";
const SELECTED: &str = "selected.json";
const MOTION_MODEL: &str = "models/motion.ckpt";
const MOTION_CURVE: &str = "models/motion_curve.json";
const MOTION: &str = "motion";
const MOTION_SUMMARY: &str = "motion/summary.json";
const METRICS: &str = "metrics.json";

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(io_err(p))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json { path: path.to_path_buf(), source })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

/// Ground-truth grasp of one sequence, in the object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspLabel {
    pub sequence: String,
    pub object: String,
    pub subset: String,
    pub mesh: PathBuf,
    pub frame_period_s: f64,
    pub pose: HandPose,
    pub contact_count: usize,
    pub contact_links: usize,
}

/// Per-frame tracking output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedRow {
    pub timestamp: f64,
    pub pose: RigidTransform,
    pub rms: f64,
    pub flagged: bool,
}

const TRACKED_HEADER: &str = "frame,timestamp,tx,ty,tz,rx,ry,rz,rms,flagged";

pub(crate) fn write_tracked<W: Write>(mut w: W, rows: &[TrackedRow]) -> std::io::Result<()> {
    writeln!(w, "{TRACKED_HEADER}")?;
    for (i, r) in rows.iter().enumerate() {
        let t = r.pose.translation;
        let a = r.pose.axis_angle();
        writeln!(w, "{i},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}", r.timestamp, t.x, t.y, t.z, a.x, a.y, a.z, r.rms, u8::from(r.flagged))?;
    }
    Ok(())
}

pub(crate) fn read_tracked(path: &Path) -> Result<Vec<TrackedRow>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| PipelineError::Malformed { file: path.to_path_buf(), row: i, msg: msg.to_string() };
        let v: Vec<f64> = line.split(',').map(|f| f.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad number"))?;
        if v.len() != 10 || v[0] as usize != out.len() {
            return Err(bad("expected 10 fields with consecutive frame indices"));
        }
        let pose = RigidTransform::from_translation_axis_angle(Vec3::new(v[2], v[3], v[4]), Vec3::new(v[5], v[6], v[7]));
        out.push(TrackedRow { timestamp: v[1], pose, rms: v[8], flagged: v[9] != 0.0 });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrackSummary {
    frames: usize,
    flagged: usize,
    mean_rms_m: f64,
    /// Worst deviation from the recorded object pose.
    max_rotation_error_deg: f64,
    max_translation_error_mm: f64,
    points_removed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationReport {
    hand_eye_rotation_residual_deg: f64,
    hand_eye_translation_residual_mm: f64,
    motion_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ScoreLine {
    object: String,
    #[serde(flatten)]
    record: ScoreRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Outcome<T> {
    Ok(T),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MotionSummary {
    /// Test sequences reconstructed from their first frame towards their last.
    sequences: BTreeMap<String, Outcome<usize>>,
    /// Per test object: motion towards the top selected candidate.
    selected: BTreeMap<String, Outcome<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MotionMean {
    sequences: usize,
    mpjpe_cm: f64,
    ave_cm2: f64,
    verts_offset_cm: f64,
    min_dist_cm: f64,
    min_dist_diff_cm: f64,
}

/// `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsReport {
    config_hash: String,
    seed: u64,
    grasps: BTreeMap<String, GraspReport>,
    motion: BTreeMap<String, Outcome<MotionMetrics>>,
    motion_mean: Option<MotionMean>,
    safety: BTreeMap<String, Outcome<SafetyReport>>,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    dir: &'a Path,
    hand: KinematicModel,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn require(&self, rel: &str, what: &'static str, stage: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact { what, path: p, stage })
        }
    }

    fn sequences(&self) -> Result<Vec<SequenceRecord>> {
        let dirs = discover_sequences(&self.config.paths.dataset)?;
        if dirs.is_empty() {
            return Err(PipelineError::Dataset(format!("no sequences under {}", self.config.paths.dataset.display())));
        }
        dirs.iter().map(|d| load_sequence(d)).collect()
    }

    fn labels(&self) -> Result<Vec<GraspLabel>> {
        let p = self.require(GRASP_LABELS, "grasp labels", Stage::Label)?;
        let text = std::fs::read_to_string(&p).map_err(io_err(&p))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Malformed { file: p.clone(), row: i + 1, msg: e.to_string() }))
            .collect()
    }

    fn label_motion(&self, label: &GraspLabel) -> Result<MotionSequence> {
        let p = self.path(LABEL_MOTION).join(format!("{}.csv", label.sequence));
        let f = std::fs::File::open(&p).map_err(io_err(&p))?;
        Ok(read_motion_csv(BufReader::new(f), label.frame_period_s)?)
    }

    fn calibration(&self) -> Result<CalibrationFile> {
        let p = self.require(CALIBRATION, "calibration", Stage::Calibrate)?;
        let f = std::fs::File::open(&p).map_err(io_err(&p))?;
        Ok(CalibrationFile::read(BufReader::new(f))?)
    }

    /// Test objects with their meshes, sorted by id.
    fn test_objects(&self, labels: &[GraspLabel]) -> Result<BTreeMap<String, TriangleMesh>> {
        let mut out = BTreeMap::new();
        for l in labels.iter().filter(|l| l.subset == "test") {
            if !out.contains_key(&l.object) {
                out.insert(l.object.clone(), ply::read_mesh(&l.mesh)?);
            }
        }
        Ok(out)
    }

    fn motion_net(&self) -> Result<MotionNet> {
        let p = self.require(MOTION_MODEL, "motion model", Stage::TrainMotion)?;
        let f = std::fs::File::open(&p).map_err(io_err(&p))?;
        Ok(MotionNet::load(BufReader::new(f), &self.config.motion, &self.hand)?)
    }
}

fn calibrate(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let rig = c.rig_path();
    let rough_path = rig.join("rough.txt");
    let f = std::fs::File::open(&rough_path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingFile(rough_path.clone()),
        _ => PipelineError::Io { path: rough_path.clone(), source: e },
    })?;
    let mut rough = CalibrationFile::read(BufReader::new(f))?;
    rough.cameras.sort_by_key(|r| r.id);
    if rough.cameras.iter().enumerate().any(|(i, r)| r.id != i) {
        return Err(PipelineError::Dataset("camera ids in rough.txt must be 0, 1, …".into()));
    }
    let views = rough.cameras.iter().map(|r| Ok(ply::read_cloud(&rig.join(format!("cam{}.ply", r.id)))?)).collect::<Result<Vec<PointCloud>>>()?;
    let pairs = if c.calibration.neighbor_pairs.is_empty() {
        (1..views.len()).map(|i| (i - 1, i)).collect()
    } else {
        c.calibration.neighbor_pairs.clone()
    };
    let rough_ext: Vec<RigidTransform> = rough.cameras.iter().map(|r| r.extrinsic).collect();
    let refined = refine_extrinsics(&views, &rough_ext, &pairs, &c.calibration.icp)?;
    let pairs_path = rig.join("pairs.csv");
    let f = std::fs::File::open(&pairs_path).map_err(io_err(&pairs_path))?;
    let motions = read_motion_pairs(BufReader::new(f))?;
    let x = hand_eye_solve(&motions)?;
    let (rot, trans) = hand_eye_residual(&motions, &x);
    log::info!("hand-eye from {} pairs: residual {:.4} deg, {:.3} mm", motions.len(), rot.to_degrees(), trans * 1000.0);
    let out = CalibrationFile {
        cameras: rough.cameras.iter().zip(&refined).map(|(r, e)| CameraRecord { id: r.id, timestamp: r.timestamp, extrinsic: *e }).collect(),
        hand_eye: Some(x),
        sync_offset: None,
    };
    let mut buf = Vec::new();
    out.write(&mut buf).map_err(io_err(ctx.path(CALIBRATION)))?;
    write_bytes(&ctx.path(CALIBRATION), &buf)?;
    let report = CalibrationReport { hand_eye_rotation_residual_deg: rot.to_degrees(), hand_eye_translation_residual_mm: trans * 1000.0, motion_pairs: motions.len() };
    write_json(&ctx.path(CALIBRATION_REPORT), &report)?;
    Ok(vec![CALIBRATION.into(), CALIBRATION_REPORT.into()])
}

fn process(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let calib = ctx.calibration()?;
    let sequences = ctx.sequences()?;
    let results: Vec<(String, TrackSummary, Vec<TrackedRow>)> = sequences
        .par_iter()
        .map(|s| {
            let extrinsics = s
                .manifest
                .cameras
                .iter()
                .map(|id| calib.cameras.iter().find(|r| r.id == *id).map(|r| r.extrinsic).ok_or_else(|| PipelineError::Dataset(format!("{}: camera {id} is not calibrated", s.name))))
                .collect::<Result<Vec<_>>>()?;
            let mut removed = 0;
            let clouds = s
                .camera_frames()?
                .iter()
                .map(|views| {
                    let merged = merge_views(views, &extrinsics)?;
                    let clean = denoise_statistical(&merged, c.geometry.denoise_k, c.geometry.denoise_sigma)?;
                    removed += merged.len() - clean.len();
                    Ok(clean)
                })
                .collect::<Result<Vec<_>>>()?;
            let samples = object_samples(&s.object_mesh()?, c.calibration.track_samples, item_seed(c.seed, "track", 0));
            let tracked = track_object_pose(&samples, &clouds, &s.rows[0].object, &c.calibration.icp, c.calibration.track_review_rms)?;
            let rows: Vec<TrackedRow> =
                tracked.iter().zip(&s.rows).map(|(t, r)| TrackedRow { timestamp: r.timestamp, pose: t.pose, rms: t.rms, flagged: t.flagged }).collect();
            let (mut max_r, mut max_t) = (0.0f64, 0.0f64);
            for (t, r) in rows.iter().zip(&s.rows) {
                let (dr, dt) = t.pose.distance_to(&r.object);
                max_r = max_r.max(dr);
                max_t = max_t.max(dt);
            }
            let summary = TrackSummary {
                frames: rows.len(),
                flagged: rows.iter().filter(|r| r.flagged).count(),
                mean_rms_m: rows.iter().map(|r| r.rms).sum::<f64>() / rows.len() as f64,
                max_rotation_error_deg: max_r.to_degrees(),
                max_translation_error_mm: max_t * 1000.0,
                points_removed: removed,
            };
            Ok((s.name.clone(), summary, rows))
        })
        .collect::<Result<_>>()?;
    let mut outputs = Vec::new();
    let mut summaries = BTreeMap::new();
    for (name, summary, rows) in results {
        let rel = format!("{PROCESSED}/{name}.csv");
        let mut buf = Vec::new();
        write_tracked(&mut buf, &rows).map_err(io_err(ctx.path(&rel)))?;
        write_bytes(&ctx.path(&rel), &buf)?;
        log::info!("tracked {name}: {} frames, {} flagged, worst error {:.2} mm", summary.frames, summary.flagged, summary.max_translation_error_mm);
        summaries.insert(name, summary);
        outputs.push(rel);
    }
    let rel = format!("{PROCESSED}/summary.json");
    write_json(&ctx.path(&rel), &summaries)?;
    outputs.push(rel);
    Ok(outputs)
}

fn label(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let x = ctx.calibration()?.hand_eye.ok_or_else(|| PipelineError::Dataset("calibration has no hand-eye transform".into()))?;
    let split = Split::load(&c.split_path())?;
    let sequences = ctx.sequences()?;
    let sampler = HandSurfaceSampler::new(&ctx.hand, c.geometry.hand_points, c.seed)?;
    let mut labels = Vec::new();
    let mut outputs = Vec::new();
    for s in &sequences {
        let subset = split.subset_of(&s.manifest.object).ok_or_else(|| PipelineError::Config(format!("object `{}` is not in the split file", s.manifest.object)))?;
        if (s.manifest.frame_period_s - c.motion.frame_period_s).abs() > 1e-9 {
            return Err(PipelineError::Config(format!("{}: frame period {} differs from motion.frame_period_s {}", s.name, s.manifest.frame_period_s, c.motion.frame_period_s)));
        }
        let tracked_path = ctx.require(&format!("{PROCESSED}/{}.csv", s.name), "processed sequence", Stage::Process)?;
        let tracked = read_tracked(&tracked_path)?;
        if tracked.len() != s.len() {
            return Err(PipelineError::Dataset(format!("{}: {} tracked frames for {} recorded", s.name, tracked.len(), s.len())));
        }
        let poses: Vec<HandPose> = s
            .rows
            .iter()
            .zip(&tracked)
            .map(|(r, t)| r.hand.with_root(&t.pose.inverse().compose(&x).compose(&r.hand.root_transform())))
            .collect();
        let seq = MotionSequence::new(poses, s.manifest.frame_period_s)?;
        let rel = format!("{LABEL_MOTION}/{}.csv", s.name);
        let mut buf = Vec::new();
        write_motion_csv(&seq, &mut buf)?;
        write_bytes(&ctx.path(&rel), &buf)?;
        outputs.push(rel);
        let mesh = s.object_mesh()?;
        let grasp = *seq.last();
        let summary = contact_summary(&ctx.hand, &sampler, &grasp, &object_cloud(&mesh, c), c.geometry.contact_threshold_m)?;
        labels.push(GraspLabel {
            sequence: s.name.clone(),
            object: s.manifest.object.clone(),
            subset: subset.to_string(),
            mesh: s.mesh_path(),
            frame_period_s: s.manifest.frame_period_s,
            pose: grasp,
            contact_count: summary.points,
            contact_links: summary.links.len(),
        });
    }
    let mut buf = Vec::new();
    for l in &labels {
        serde_json::to_writer(&mut buf, l).map_err(|source| PipelineError::Json { path: ctx.path(GRASP_LABELS), source })?;
        buf.push(b'\n');
    }
    write_bytes(&ctx.path(GRASP_LABELS), &buf)?;
    outputs.push(GRASP_LABELS.into());
    Ok(outputs)
}

fn train_pose(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let labels = ctx.labels()?;
    let dataset = labels
        .iter()
        .filter(|l| l.subset == "train")
        .map(|l| Ok(GraspSample { object: object_cloud(&ply::read_mesh(&l.mesh)?, c), pose: l.pose }))
        .collect::<Result<Vec<_>>>()?;
    log::info!("training pose generator on {} grasps", dataset.len());
    let (model, curve) = train_posegen(&dataset, &c.posegen, &ctx.hand)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        log::info!("pose generator loss {:.5} -> {:.5}", first.total, last.total);
    }
    let mut buf = Vec::new();
    model.save(&mut buf)?;
    write_bytes(&ctx.path(POSEGEN), &buf)?;
    write_json(&ctx.path(POSEGEN_CURVE), &curve)?;
    Ok(vec![POSEGEN.into(), POSEGEN_CURVE.into()])
}

fn gen(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let p = ctx.require(POSEGEN, "pose generator", Stage::TrainPose)?;
    let labels = ctx.labels()?;
    let f = std::fs::File::open(&p).map_err(io_err(&p))?;
    let model = PoseGenModel::load(BufReader::new(f), &c.posegen, &ctx.hand)?;
    let filter_sampler = HandSurfaceSampler::new(&ctx.hand, c.filter.hand_points, c.filter.seed)?;
    let mut records = Vec::new();
    for (k, (object, mesh)) in ctx.test_objects(&labels)?.into_iter().enumerate() {
        let cloud = object_cloud(&mesh, c);
        let candidates = sample_candidates(&model, &cloud, c.generation.candidates_per_object, item_seed(c.seed, "gen", k as u64))?;
        let recs = candidates
            .into_par_iter()
            .map(|cand| {
                let cand = if c.generation.refine {
                    match refine_to_contact(&cand, &cloud, &mesh, &ctx.hand, &c.refine) {
                        Ok((r, _)) => r,
                        Err(e) => {
                            log::warn!("{object} candidate {}: refinement failed: {e}", cand.id);
                            cand
                        }
                    }
                } else {
                    cand
                };
                let s = contact_summary(&ctx.hand, &filter_sampler, &cand.pose, &cloud, c.filter.threshold_m)?;
                let stable = s.points >= c.filter.min_contacts && s.links.len() >= c.filter.min_links;
                Ok(CandidateRecord { object: object.clone(), stable, candidate: cand })
            })
            .collect::<Result<Vec<_>>>()?;
        log::info!("{object}: {} candidates, {} pass the contact filter", recs.len(), recs.iter().filter(|r| r.stable).count());
        records.extend(recs);
    }
    let mut buf = Vec::new();
    write_candidates(&mut buf, &records).map_err(io_err(ctx.path(CANDIDATES)))?;
    write_bytes(&ctx.path(CANDIDATES), &buf)?;
    Ok(vec![CANDIDATES.into()])
}

/// Candidates grouped by object, in file order.
fn by_object(records: Vec<CandidateRecord>) -> BTreeMap<String, Vec<CandidateRecord>> {
    let mut out: BTreeMap<String, Vec<CandidateRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.object.clone()).or_default().push(r);
    }
    out
}

fn meshes_for(labels: &[GraspLabel]) -> Result<BTreeMap<String, TriangleMesh>> {
    let mut out = BTreeMap::new();
    for l in labels {
        if !out.contains_key(&l.object) {
            out.insert(l.object.clone(), ply::read_mesh(&l.mesh)?);
        }
    }
    Ok(out)
}

fn mesh_of<'m>(meshes: &'m BTreeMap<String, TriangleMesh>, object: &str) -> Result<&'m TriangleMesh> {
    meshes.get(object).ok_or_else(|| PipelineError::Dataset(format!("no labeled sequence for object `{object}`")))
}

fn select(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let p = ctx.require(CANDIDATES, "candidates", Stage::Gen)?;
    let grouped = by_object(read_candidates(&p)?);
    let meshes = meshes_for(&ctx.labels()?)?;
    let prompt = c.prompt()?;
    let mut evals = BTreeMap::new();
    let mut scores = Vec::new();
    let mut selected: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (object, recs) in grouped {
        let mesh = mesh_of(&meshes, &object)?;
        let mut cands: Vec<_> = recs.iter().map(|r| r.candidate.clone()).collect();
        let report = evaluate_grasps(&cands, mesh, &ctx.hand, c)?;
        for (cand, row) in cands.iter_mut().zip(&report.rows) {
            cand.metrics = row.metrics.clone();
        }
        let stable: Vec<_> = cands.iter().zip(&recs).filter(|(cd, r)| r.stable && cd.metrics.is_some()).map(|(cd, _)| cd.clone()).collect();
        let pool = if stable.is_empty() {
            log::warn!("{object}: no candidate passes the contact filter; selecting among all");
            cands.iter().filter(|cd| cd.metrics.is_some()).cloned().collect()
        } else {
            stable
        };
        let records = if c.selection.backend == BACKEND_HEURISTIC {
            pool.iter().map(score_heuristic).collect::<std::result::Result<Vec<_>, _>>()?
        } else {
            let images = render_candidates(&ctx.hand, &pool, mesh, &c.selection.views)?;
            let requests = build_requests(&images, &c.selection.mllm, &prompt)?;
            best_per_candidate(&score_mllm(&requests, c.selection.mllm.max_in_flight)?)
        };
        let top = select_top_k(&records, c.selection.top_k);
        log::info!("{object}: selected {:?}", top);
        selected.insert(object.clone(), top);
        scores.extend(records.into_iter().map(|record| ScoreLine { object: object.clone(), record }));
        evals.insert(object, report);
    }
    write_json(&ctx.path(GRASP_EVAL), &evals)?;
    let mut buf = Vec::new();
    for s in &scores {
        serde_json::to_writer(&mut buf, s).map_err(|source| PipelineError::Json { path: ctx.path(SCORES), source })?;
        buf.push(b'\n');
    }
    write_bytes(&ctx.path(SCORES), &buf)?;
    write_json(&ctx.path(SELECTED), &selected)?;
    Ok(vec![GRASP_EVAL.into(), SCORES.into(), SELECTED.into()])
}

fn train_motion_stage(ctx: &Ctx) -> Result<Vec<String>> {
    let labels = ctx.labels()?;
    let seqs = labels.iter().filter(|l| l.subset == "train").map(|l| ctx.label_motion(l)).collect::<Result<Vec<_>>>()?;
    log::info!("training motion network on {} sequences", seqs.len());
    let (net, curve) = train_motion(&seqs, &ctx.config.motion, &ctx.hand)?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        log::info!("motion loss {:.5} -> {:.5}", first.loss.total, last.loss.total);
    }
    let mut buf = Vec::new();
    net.save(&mut buf)?;
    write_bytes(&ctx.path(MOTION_MODEL), &buf)?;
    write_json(&ctx.path(MOTION_CURVE), &curve)?;
    Ok(vec![MOTION_MODEL.into(), MOTION_CURVE.into()])
}

/// Holds the last pose until `seq` has `len` frames.
fn pad_to(mut seq: MotionSequence, len: usize) -> MotionSequence {
    let last = *seq.last();
    seq.poses.resize(len.max(seq.len()), last);
    seq
}

fn write_motion(ctx: &Ctx, rel: &str, seq: &MotionSequence) -> Result<()> {
    let mut buf = Vec::new();
    write_motion_csv(seq, &mut buf)?;
    write_bytes(&ctx.path(rel), &buf)
}

fn synth(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let cand_path = ctx.require(CANDIDATES, "candidates", Stage::Gen)?;
    let sel_path = ctx.require(SELECTED, "selection", Stage::Select)?;
    let net = ctx.motion_net()?;
    let labels = ctx.labels()?;
    let selected: BTreeMap<String, Vec<usize>> = read_json(&sel_path)?;
    let grouped = by_object(read_candidates(&cand_path)?);
    let tests: Vec<&GraspLabel> = labels.iter().filter(|l| l.subset == "test").collect();
    let gts = tests.iter().map(|l| ctx.label_motion(l)).collect::<Result<Vec<_>>>()?;
    let recon: Vec<(String, Outcome<MotionSequence>)> = tests
        .par_iter()
        .zip(&gts)
        .map(|(l, gt)| {
            let term = Termination { max_steps: gt.len() - 1, ..c.termination };
            let out = match rollout(&net, &ctx.hand, &gt.poses[0], gt.last(), &term) {
                Ok(s) => Outcome::Ok(pad_to(s, gt.len())),
                Err(e) => Outcome::Error(e.to_string()),
            };
            (l.sequence.clone(), out)
        })
        .collect();
    let mut outputs = Vec::new();
    let mut summary = MotionSummary { sequences: BTreeMap::new(), selected: BTreeMap::new() };
    for (name, out) in recon {
        match out {
            Outcome::Ok(s) => {
                let rel = format!("{MOTION}/{name}.csv");
                write_motion(ctx, &rel, &s)?;
                outputs.push(rel);
                summary.sequences.insert(name, Outcome::Ok(s.len()));
            }
            Outcome::Error(e) => {
                log::warn!("{name}: {e}");
                summary.sequences.insert(name, Outcome::Error(e));
            }
        }
    }
    for (object, ids) in &selected {
        let Some(best) = ids.first() else { continue };
        let target = grouped
            .get(object)
            .and_then(|v| v.iter().find(|r| r.candidate.id == *best))
            .ok_or_else(|| PipelineError::Dataset(format!("selected candidate {best} of `{object}` is not in {CANDIDATES}")))?;
        let Some(start) = tests.iter().zip(&gts).find(|(l, _)| &l.object == object).map(|(_, g)| g.poses[0]) else { continue };
        match rollout(&net, &ctx.hand, &start, &target.candidate.pose, &c.termination) {
            Ok(s) => {
                let rel = format!("{MOTION}/{object}_selected.csv");
                write_motion(ctx, &rel, &s)?;
                outputs.push(rel);
                summary.selected.insert(object.clone(), Outcome::Ok(s.len()));
            }
            Err(e) => {
                log::warn!("{object}: {e}");
                summary.selected.insert(object.clone(), Outcome::Error(e.to_string()));
            }
        }
    }
    write_json(&ctx.path(MOTION_SUMMARY), &summary)?;
    outputs.push(MOTION_SUMMARY.into());
    Ok(outputs)
}

fn eval(ctx: &Ctx) -> Result<Vec<String>> {
    let c = ctx.config;
    let cand_path = ctx.require(CANDIDATES, "candidates", Stage::Gen)?;
    let summary: MotionSummary = read_json(&ctx.require(MOTION_SUMMARY, "synthesized motion", Stage::Synth)?)?;
    let labels = ctx.labels()?;
    let meshes = meshes_for(&labels)?;
    let mut grasps = BTreeMap::new();
    for (object, recs) in by_object(read_candidates(&cand_path)?) {
        let cands: Vec<_> = recs.into_iter().map(|r| r.candidate).collect();
        grasps.insert(object.clone(), evaluate_grasps(&cands, mesh_of(&meshes, &object)?, &ctx.hand, c)?);
    }
    let read_pred = |rel: String, period: f64| -> Result<MotionSequence> {
        let p = ctx.path(&rel);
        let f = std::fs::File::open(&p).map_err(io_err(&p))?;
        Ok(read_motion_csv(BufReader::new(f), period)?)
    };
    let mut motion = BTreeMap::new();
    for l in labels.iter().filter(|l| l.subset == "test") {
        let entry = match summary.sequences.get(&l.sequence) {
            Some(Outcome::Ok(_)) => {
                let pred = read_pred(format!("{MOTION}/{}.csv", l.sequence), l.frame_period_s)?;
                let gt = ctx.label_motion(l)?;
                match motion_metrics(&pred, &gt, &ctx.hand, mesh_of(&meshes, &l.object)?) {
                    Ok(m) => Outcome::Ok(m),
                    Err(e) => Outcome::Error(e.to_string()),
                }
            }
            Some(Outcome::Error(e)) => Outcome::Error(e.clone()),
            None => return Err(PipelineError::MissingArtifact { what: "synthesized motion", path: ctx.path(&format!("{MOTION}/{}.csv", l.sequence)), stage: Stage::Synth }),
        };
        motion.insert(l.sequence.clone(), entry);
    }
    let ok: Vec<&MotionMetrics> = motion.values().filter_map(|o| if let Outcome::Ok(m) = o { Some(m) } else { None }).collect();
    let motion_mean = (!ok.is_empty()).then(|| {
        let mean = |f: &dyn Fn(&MotionMetrics) -> f64| ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64;
        MotionMean {
            sequences: ok.len(),
            mpjpe_cm: mean(&|m| m.mpjpe_cm),
            ave_cm2: mean(&|m| m.ave_cm2),
            verts_offset_cm: mean(&|m| m.verts_offset_cm),
            min_dist_cm: mean(&|m| m.min_dist_cm),
            min_dist_diff_cm: mean(&|m| m.min_dist_diff_cm),
        }
    });
    let mut safety = BTreeMap::new();
    for (object, out) in &summary.selected {
        let entry = match out {
            Outcome::Ok(_) => {
                let period = labels.iter().find(|l| &l.object == object).map_or(c.motion.frame_period_s, |l| l.frame_period_s);
                let seq = read_pred(format!("{MOTION}/{object}_selected.csv"), period)?;
                match safety_check(&seq, mesh_of(&meshes, object)?, &RigidTransform::identity(), &ctx.hand, &c.sim, c.eval.max_displacement_cm) {
                    Ok(r) => Outcome::Ok(r),
                    Err(e) => Outcome::Error(e.to_string()),
                }
            }
            Outcome::Error(e) => Outcome::Error(e.clone()),
        };
        safety.insert(object.clone(), entry);
    }
    let report = MetricsReport { config_hash: c.hash(), seed: c.seed, grasps, motion, motion_mean, safety };
    write_json(&ctx.path(METRICS), &report)?;
    Ok(vec![METRICS.into()])
}

fn run_stage(ctx: &Ctx, stage: Stage) -> Result<Vec<String>> {
    match stage {
        Stage::Calibrate => calibrate(ctx),
        Stage::Process => process(ctx),
        Stage::Label => label(ctx),
        Stage::TrainPose => train_pose(ctx),
        Stage::Gen => gen(ctx),
        Stage::Select => select(ctx),
        Stage::TrainMotion => train_motion_stage(ctx),
        Stage::Synth => synth(ctx),
        Stage::Eval => eval(ctx),
    }
}

/// Runs `stages` in pipeline order (duplicates collapse) against `run_dir`.
///
/// Each stage reads only files written by earlier stages, so a later
/// invocation can resume from an existing run directory. The run directory
/// is bound to the config hash of its first invocation; the dataset is only
/// read.
pub fn run_pipeline(stages: &[Stage], config: &PipelineConfig, run_dir: &Path, options: RunOptions) -> Result<RunManifest> {
    config.validate()?;
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let manifest_path = run_dir.join(MANIFEST);
    let hash = config.hash();
    let mut manifest = if manifest_path.exists() {
        let m: RunManifest = read_json(&manifest_path)?;
        if m.config_hash != hash {
            return Err(PipelineError::ManifestMismatch { dir: run_dir.to_path_buf(), recorded: m.config_hash, current: hash });
        }
        m
    } else {
        RunManifest { config_hash: hash, seed: config.seed, dataset: config.paths.dataset.clone(), stages: Vec::new() }
    };
    let mut order: Vec<Stage> = stages.to_vec();
    order.sort();
    order.dedup();
    let workers = options.workers.unwrap_or(config.workers);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    let ctx = Ctx { config, dir: run_dir, hand: config.hand_model()? };
    for stage in order {
        log::info!("stage {stage}: start");
        let started = std::time::Instant::now();
        let outputs = pool.install(|| run_stage(&ctx, stage))?;
        log::info!("stage {stage}: done in {:.2} s, {} outputs", started.elapsed().as_secs_f64(), outputs.len());
        manifest.stages.retain(|r| r.stage != stage);
        manifest.stages.push(StageRecord { stage, outputs });
        manifest.stages.sort_by_key(|r| r.stage);
        write_json(&manifest_path, &manifest)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
        let err = "deploy".parse::<Stage>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("deploy"));
    }

    #[test]
    fn item_seeds_differ() {
        assert_eq!(item_seed(1, "a", 0), item_seed(1, "a", 0));
        assert_ne!(item_seed(1, "a", 0), item_seed(1, "a", 1));
        assert_ne!(item_seed(1, "a", 0), item_seed(1, "b", 0));
        assert_ne!(item_seed(1, "a", 0), item_seed(2, "a", 0));
    }

    #[test]
    fn tracked_round_trip() {
        let rows = vec![
            TrackedRow { timestamp: 0.0, pose: RigidTransform::from_translation_axis_angle(Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 0.4)), rms: 1e-4, flagged: false },
            TrackedRow { timestamp: 0.1, pose: RigidTransform::identity(), rms: 0.02, flagged: true },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut buf = Vec::new();
        write_tracked(&mut buf, &rows).unwrap();
        std::fs::write(&p, buf).unwrap();
        let back = read_tracked(&p).unwrap();
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!((a.timestamp, a.rms, a.flagged), (b.timestamp, b.rms, b.flagged));
            let (dr, dt) = a.pose.distance_to(&b.pose);
            assert!(dr < 1e-12 && dt == 0.0);
        }
    }

    #[test]
    fn padding_holds_last_pose() {
        let a = HandPose::default();
        let b = HandPose::mean_pose(Vec3::new(0.1, 0.0, 0.0));
        let s = pad_to(MotionSequence::new(vec![a, b], 0.1).unwrap(), 4);
        assert_eq!(s.poses, vec![a, b, b, b]);
    }
}
