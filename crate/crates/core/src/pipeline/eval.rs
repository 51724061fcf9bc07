use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{io_err, PipelineConfig, PipelineError, Result};
use crate::calibration::object_samples;
use crate::geometry::{hand_object_intersection_volume, penetration_distance, self_intersection_volume, PointCloud, TriangleMesh};
use crate::graspgen::{contact_summary, GraspCandidate, GraspMetrics};
use crate::kinematics::{forward_kinematics, posed_link_meshes, HandSurfaceSampler, KinematicModel};
use crate::math::RigidTransform;
use crate::sim::simulation_displacement;

/// One line of a candidates file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub object: String,
    /// Passed the contact-count stability filter.
    pub stable: bool,
    pub candidate: GraspCandidate,
}

pub fn write_candidates<W: Write>(mut w: W, records: &[CandidateRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a JSON-lines candidates file; blank lines are skipped.
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRecord>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingFile(path.to_path_buf()),
        _ => PipelineError::Io { path: path.to_path_buf(), source: e },
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| PipelineError::Malformed { file: path.to_path_buf(), row: i + 1, msg: e.to_string() })?;
        out.push(r);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspRow {
    pub id: usize,
    pub metrics: Option<GraspMetrics>,
    pub hand_object_volume_cm3: Option<f64>,
    /// Object displacement at the end of the settle horizon (cm).
    pub sim_final_cm: Option<f64>,
    pub error: Option<String>,
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Statistics over the rows that evaluated without error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub failed: usize,
    pub penetration_cm: MeanStd,
    pub self_intersection_cm3: MeanStd,
    pub hand_object_volume_cm3: MeanStd,
    pub sim_displacement_cm: MeanStd,
    pub contact_count: MeanStd,
    pub contact_links: MeanStd,
    /// `sim_displacement_cm` as `mean ± std` with two decimals.
    pub sim_displacement: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GraspReport {
    pub rows: Vec<GraspRow>,
    /// Absent when no row evaluated successfully.
    pub aggregate: Option<Aggregate>,
}

impl GraspReport {
    fn from_rows(rows: Vec<GraspRow>) -> Self {
        let ok: Vec<(&GraspMetrics, f64)> = rows.iter().filter_map(|r| Some((r.metrics.as_ref()?, r.hand_object_volume_cm3?))).collect();
        let aggregate = (!ok.is_empty()).then(|| {
            let col = |f: &dyn Fn(&GraspMetrics, f64) -> f64| MeanStd::of(&ok.iter().map(|(m, h)| f(m, *h)).collect::<Vec<_>>());
            let sim = col(&|m, _| m.sim_displacement_cm);
            Aggregate {
                count: ok.len(),
                failed: rows.len() - ok.len(),
                penetration_cm: col(&|m, _| m.penetration_cm),
                self_intersection_cm3: col(&|m, _| m.self_intersection_cm3),
                hand_object_volume_cm3: col(&|_, h| h),
                sim_displacement_cm: sim,
                contact_count: col(&|m, _| m.contact_count as f64),
                contact_links: col(&|m, _| m.contact_links as f64),
                sim_displacement: sim.to_string(),
            }
        });
        Self { rows, aggregate }
    }
}

/// Object cloud that candidates' contact maps and statistics refer to.
pub(crate) fn object_cloud(mesh: &TriangleMesh, config: &PipelineConfig) -> PointCloud {
    object_samples(mesh, config.posegen.point_count, config.seed)
}

fn evaluate_one(
    c: &GraspCandidate,
    mesh: &TriangleMesh,
    cloud: &PointCloud,
    hand: &KinematicModel,
    sampler: &HandSurfaceSampler,
    config: &PipelineConfig,
) -> Result<(GraspMetrics, f64, f64)> {
    let g = &config.geometry;
    let fk = forward_kinematics(hand, &c.pose);
    let points = sampler.points(&fk);
    let links = posed_link_meshes(hand, &fk);
    let penetration_cm = penetration_distance(&points, mesh)? * 100.0;
    let self_intersection_cm3 = self_intersection_volume(&links, g.self_intersection_voxel_m, g.collar_m)?;
    let link_meshes: Vec<TriangleMesh> = links.into_iter().map(|l| l.mesh).collect();
    let ho = hand_object_intersection_volume(&link_meshes, mesh, g.hand_object_voxel_m)?;
    let d = simulation_displacement(mesh, &RigidTransform::identity(), &c.pose, hand, &config.sim)?;
    let s = contact_summary(hand, sampler, &c.pose, cloud, g.contact_threshold_m)?;
    let m = GraspMetrics { penetration_cm, self_intersection_cm3, sim_displacement_cm: d.mean_cm, contact_count: s.points, contact_links: s.links.len() };
    Ok((m, ho, d.final_cm))
}

/// Per-candidate grasp metrics in the object frame, with gravity along the
/// configured direction. A candidate that fails to evaluate yields a row
/// carrying the error; the batch continues.
pub fn evaluate_grasps(candidates: &[GraspCandidate], object_mesh: &TriangleMesh, hand: &KinematicModel, config: &PipelineConfig) -> Result<GraspReport> {
    if candidates.is_empty() {
        return Ok(GraspReport::default());
    }
    let cloud = object_cloud(object_mesh, config);
    let sampler = HandSurfaceSampler::new(hand, config.geometry.hand_points, config.seed)?;
    let rows = candidates
        .par_iter()
        .map(|c| match evaluate_one(c, object_mesh, &cloud, hand, &sampler, config) {
            Ok((m, ho, fin)) => GraspRow { id: c.id, metrics: Some(m), hand_object_volume_cm3: Some(ho), sim_final_cm: Some(fin), error: None },
            Err(e) => {
                log::warn!("candidate {}: {e}", c.id);
                GraspRow { id: c.id, metrics: None, hand_object_volume_cm3: None, sim_final_cm: None, error: Some(e.to_string()) }
            }
        })
        .collect();
    Ok(GraspReport::from_rows(rows))
}

/// [`evaluate_grasps`] over the candidates of a candidates file.
pub fn evaluate_grasps_file(path: &Path, object_mesh: &TriangleMesh, hand: &KinematicModel, config: &PipelineConfig) -> Result<GraspReport> {
    let candidates: Vec<GraspCandidate> = read_candidates(path)?.into_iter().map(|r| r.candidate).collect();
    evaluate_grasps(&candidates, object_mesh, hand, config)
}
