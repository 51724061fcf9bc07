//! On-disk sequence format.
//!
//! A sequence directory holds `manifest.toml`, a frames CSV and one PLY cloud
//! per camera. The frames CSV has the header
//! `timestamp,phi0,…,phi27,tx,ty,tz,qw,qx,qy,qz`: the hand pose recorded in
//! the robot base frame, then the object pose in the world frame as a
//! translation and unit quaternion. Each camera cloud stores every frame's
//! points in that camera's frame, tagged with the frame timestamp.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{io_err, PipelineError, Result};
use crate::geometry::{ply, PointCloud, TriangleMesh};
use crate::kinematics::{HandPose, POSE_DIM};
use crate::math::{RigidTransform, Vec3};

/// Columns per frames CSV row.
pub const FRAMES_HEADER_FIELDS: usize = 1 + POSE_DIM + 7;

const QUATERNION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    pub object: String,
    pub cameras: Vec<usize>,
    pub frame_period_s: f64,
    /// Paths are relative to the sequence directory.
    pub mesh: PathBuf,
    pub frames: PathBuf,
    /// One cloud file per entry of `cameras`, in the same order.
    pub clouds: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRow {
    pub timestamp: f64,
    /// Hand pose in the robot base frame.
    pub hand: HandPose,
    /// Object pose in the world frame.
    pub object: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRecord {
    /// Directory name.
    pub name: String,
    pub dir: PathBuf,
    pub manifest: SequenceManifest,
    pub rows: Vec<FrameRow>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingFile(path.to_path_buf()),
        _ => PipelineError::Io { path: path.to_path_buf(), source: e },
    })
}

impl SequenceRecord {
    pub fn mesh_path(&self) -> PathBuf {
        self.dir.join(&self.manifest.mesh)
    }

    pub fn cloud_paths(&self) -> Vec<PathBuf> {
        self.manifest.clouds.iter().map(|c| self.dir.join(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn object_mesh(&self) -> Result<TriangleMesh> {
        Ok(ply::read_mesh(&self.mesh_path())?)
    }

    /// Per frame, the cloud of every camera (in camera order and camera frame).
    pub fn camera_frames(&self) -> Result<Vec<Vec<PointCloud>>> {
        let index: HashMap<u64, usize> = self.rows.iter().enumerate().map(|(i, r)| (r.timestamp.to_bits(), i)).collect();
        let mut out = vec![vec![PointCloud::default(); self.manifest.cameras.len()]; self.rows.len()];
        for (c, path) in self.cloud_paths().iter().enumerate() {
            let cloud = ply::read_cloud(path)?;
            let stamps = cloud.timestamps.as_ref().ok_or_else(|| PipelineError::Dataset(format!("{} has no timestamps", path.display())))?;
            for (p, t) in cloud.points.iter().zip(stamps) {
                let f = *index
                    .get(&t.to_bits())
                    .ok_or_else(|| PipelineError::Dataset(format!("{}: timestamp {t} matches no frame", path.display())))?;
                out[f][c].points.push(*p);
            }
        }
        for (f, frame) in out.iter().enumerate() {
            if let Some(c) = frame.iter().position(|cl| cl.is_empty()) {
                return Err(PipelineError::Dataset(format!("camera {} has no points for frame {f}", self.manifest.cameras[c])));
            }
        }
        Ok(out)
    }
}

fn parse_row(line: &str, file: &Path, row: usize) -> Result<FrameRow> {
    let malformed = |msg: String| PipelineError::Malformed { file: file.to_path_buf(), row, msg };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != FRAMES_HEADER_FIELDS {
        return Err(malformed(format!("expected {FRAMES_HEADER_FIELDS} fields, got {}", fields.len())));
    }
    let v = fields.iter().map(|f| f.parse::<f64>().map_err(|_| malformed(format!("bad number {f:?}")))).collect::<Result<Vec<_>>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(malformed("non-finite value".into()));
    }
    let hand = HandPose::from_slice(&v[1..1 + POSE_DIM]).map_err(|e| malformed(e.to_string()))?;
    let o = &v[1 + POSE_DIM..];
    let q = Quaternion::new(o[3], o[4], o[5], o[6]);
    if (q.norm() - 1.0).abs() > QUATERNION_TOL {
        return Err(malformed(format!("quaternion norm {} is not 1", q.norm())));
    }
    let object = RigidTransform::from_quaternion(Vec3::new(o[0], o[1], o[2]), &UnitQuaternion::new_normalize(q));
    Ok(FrameRow { timestamp: v[0], hand, object })
}

/// Loads and validates a sequence from its directory or manifest path. Row
/// numbers in errors count data rows from 1.
pub fn load_sequence(path: &Path) -> Result<SequenceRecord> {
    let manifest_path = if path.is_dir() { path.join("manifest.toml") } else { path.to_path_buf() };
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest: SequenceManifest =
        toml::from_str(&read_text(&manifest_path)?).map_err(|e| PipelineError::Dataset(format!("{}: {e}", manifest_path.display())))?;
    if manifest.cameras.len() != manifest.clouds.len() {
        return Err(PipelineError::Dataset(format!("{} lists {} cameras but {} clouds", manifest_path.display(), manifest.cameras.len(), manifest.clouds.len())));
    }
    if !(manifest.frame_period_s > 0.0) {
        return Err(PipelineError::Dataset(format!("{}: frame_period_s must be positive", manifest_path.display())));
    }
    for p in std::iter::once(&manifest.mesh).chain(std::iter::once(&manifest.frames)).chain(&manifest.clouds) {
        let full = dir.join(p);
        if !full.is_file() {
            return Err(PipelineError::MissingFile(full));
        }
    }
    let frames_path = dir.join(&manifest.frames);
    let text = read_text(&frames_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.starts_with("timestamp") && h.split(',').count() == FRAMES_HEADER_FIELDS => {}
        _ => return Err(PipelineError::Malformed { file: frames_path, row: 0, msg: "missing or wrong header".into() }),
    }
    let mut rows: Vec<FrameRow> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let r = parse_row(line, &frames_path, row)?;
        if rows.last().is_some_and(|prev| r.timestamp <= prev.timestamp) {
            return Err(PipelineError::NonMonotone { file: frames_path, row });
        }
        rows.push(r);
    }
    if rows.is_empty() {
        return Err(PipelineError::Dataset(format!("{} has no frames", frames_path.display())));
    }
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(SequenceRecord { name, dir, manifest, rows })
}

pub fn write_frames_csv<W: Write>(mut w: W, rows: &[FrameRow]) -> std::io::Result<()> {
    let mut header = vec!["timestamp".to_string()];
    header.extend((0..POSE_DIM).map(|i| format!("phi{i}")));
    header.extend(["tx", "ty", "tz", "qw", "qx", "qy", "qz"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let q = r.object.quaternion();
        let t = r.object.translation;
        let vals: Vec<String> = std::iter::once(r.timestamp)
            .chain(r.hand.to_array())
            .chain([t.x, t.y, t.z, q.w, q.i, q.j, q.k])
            .map(|v| format!("{v:?}"))
            .collect();
        writeln!(w, "{}", vals.join(","))?;
    }
    Ok(())
}

/// Sequence directories under `dataset/sequences`, sorted by name.
pub fn discover_sequences(dataset: &Path) -> Result<Vec<PathBuf>> {
    let root = dataset.join("sequences");
    let entries = std::fs::read_dir(&root).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingFile(root.clone()),
        _ => PipelineError::Io { path: root.clone(), source: e },
    })?;
    let mut out = Vec::new();
    for e in entries {
        let p = e.map_err(io_err(&root))?.path();
        if p.join("manifest.toml").is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
