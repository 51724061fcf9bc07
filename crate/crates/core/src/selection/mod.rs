//! Grasp selection: render each candidate with its object, score the images
//! with a multimodal model over HTTP or with an offline heuristic, keep the
//! top K.

mod heuristic;
mod mllm;
pub mod mock;
mod render;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use heuristic::{heuristic_criteria, score_heuristic};
pub use mllm::{build_requests, score_mllm, MllmConfig, MllmRequest, ENV_ENDPOINT, ENV_KEY};
pub use render::{render_grasp, Camera, Render, RenderSpec, RgbImage};

use crate::geometry::TriangleMesh;
use crate::graspgen::GraspCandidate;
use crate::kinematics::{forward_kinematics, hand_mesh, KinematicModel};

pub const BACKEND_HEURISTIC: &str = "heuristic";
pub const BACKEND_MLLM: &str = "mllm";

/// Prompt sent with every scoring request.
pub const DEFAULT_PROMPT: &str = include_str!("../../assets/selection_prompt.txt");

#[derive(Debug, thiserror::Error)]
pub enum SelectionError {
    #[error("render: {0}")]
    Render(String),
    #[error("candidate {0} has no metrics")]
    MissingMetrics(usize),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("mock server: {0}")]
    Server(String),
    #[error(transparent)]
    Kinematics(#[from] crate::kinematics::KinematicsError),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

/// The four criteria, each in `[0, 10]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub naturalness: f64,
    pub physical_plausibility: f64,
    pub human_likeness: f64,
    pub preference: f64,
}

impl Criteria {
    pub fn values(&self) -> [f64; 4] {
        [self.naturalness, self.physical_plausibility, self.human_likeness, self.preference]
    }

    /// Unweighted mean of the criteria.
    pub fn total(&self) -> f64 {
        self.values().iter().sum::<f64>() / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: usize,
    /// Render view the score belongs to, when scored from images.
    #[serde(default)]
    pub view: Option<usize>,
    pub naturalness: f64,
    pub physical_plausibility: f64,
    pub human_likeness: f64,
    pub preference: f64,
    /// Mean of the four criteria.
    pub total: f64,
    pub explanation: String,
    pub backend: String,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Set when no usable score was obtained; all criteria are then 0.
    #[serde(default)]
    pub error: Option<String>,
    /// Backend payload kept for failed parses.
    #[serde(default)]
    pub raw: Option<String>,
}

impl ScoreRecord {
    pub fn new(id: usize, view: Option<usize>, c: Criteria, explanation: String, backend: &str) -> Self {
        Self {
            id,
            view,
            naturalness: c.naturalness,
            physical_plausibility: c.physical_plausibility,
            human_likeness: c.human_likeness,
            preference: c.preference,
            total: c.total(),
            explanation,
            backend: backend.into(),
            warnings: Vec::new(),
            error: None,
            raw: None,
        }
    }

    pub fn failed(id: usize, view: Option<usize>, error: String, raw: Option<String>, backend: &str) -> Self {
        let zero = Criteria { naturalness: 0.0, physical_plausibility: 0.0, human_likeness: 0.0, preference: 0.0 };
        Self { error: Some(error), raw, ..Self::new(id, view, zero, String::new(), backend) }
    }

    pub fn criteria(&self) -> Criteria {
        Criteria {
            naturalness: self.naturalness,
            physical_plausibility: self.physical_plausibility,
            human_likeness: self.human_likeness,
            preference: self.preference,
        }
    }
}

/// Ranking used by [`select_top_k`]: scored records before failed ones, then
/// higher total, then lower id.
fn rank(a: &ScoreRecord, b: &ScoreRecord) -> Ordering {
    a.error.is_some().cmp(&b.error.is_some()).then(b.total.total_cmp(&a.total)).then(a.id.cmp(&b.id))
}

/// Ids of the `k` best records in rank order; fewer if fewer records exist.
/// Ranking is a total order, so the result for `k` is a prefix of the result for `k + 1`.
pub fn select_top_k(records: &[ScoreRecord], k: usize) -> Vec<usize> {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| rank(a, b));
    sorted.into_iter().take(k).map(|r| r.id).collect()
}

/// One record per candidate id: the best-ranked view, ascending by id.
pub fn best_per_candidate(records: &[ScoreRecord]) -> Vec<ScoreRecord> {
    let mut best: std::collections::BTreeMap<usize, &ScoreRecord> = Default::default();
    for r in records {
        best.entry(r.id).and_modify(|b| if rank(r, b) == Ordering::Less { *b = r }).or_insert(r);
    }
    best.into_values().cloned().collect()
}

/// Azimuths (degrees) used when rendering several views per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub spec: RenderSpec,
    pub azimuths_deg: Vec<f64>,
    pub elevation_deg: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { spec: RenderSpec::default(), azimuths_deg: vec![0.0, 120.0, 240.0], elevation_deg: 25.0 }
    }
}

/// PNG renders of every candidate from every configured azimuth, as
/// `(candidate id, view index, png bytes)` in candidate then view order.
pub fn render_candidates(
    hand: &KinematicModel,
    candidates: &[GraspCandidate],
    object_mesh: &TriangleMesh,
    views: &ViewConfig,
) -> Result<Vec<(usize, usize, Vec<u8>)>> {
    if views.azimuths_deg.is_empty() {
        return Err(SelectionError::Request("at least one view azimuth is required".into()));
    }
    let per: Vec<Vec<(usize, usize, Vec<u8>)>> = candidates
        .par_iter()
        .map(|c| {
            let hm = hand_mesh(hand, &forward_kinematics(hand, &c.pose));
            views
                .azimuths_deg
                .iter()
                .enumerate()
                .map(|(v, &az)| {
                    let spec = views.spec.fitted(&[&hm, object_mesh], az, views.elevation_deg);
                    let r = render_grasp(&hm, object_mesh, &spec)?;
                    if r.camera_inside {
                        log::warn!("candidate {} view {v}: camera inside geometry", c.id);
                    }
                    Ok((c.id, v, r.image.to_png()?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: usize, total: f64) -> ScoreRecord {
        let c = Criteria { naturalness: total, physical_plausibility: total, human_likeness: total, preference: total };
        ScoreRecord::new(id, None, c, String::new(), BACKEND_HEURISTIC)
    }

    #[test]
    fn top_ten_of_hundred_distinct() {
        // Totals are a permutation of 0..100 scaled into [0, 10).
        let records: Vec<ScoreRecord> = (0..100).map(|i| rec(i, ((i * 37) % 100) as f64 / 10.0)).collect();
        let top = select_top_k(&records, 10);
        assert_eq!(top.len(), 10);
        let totals: Vec<f64> = top.iter().map(|&i| records[i].total).collect();
        assert_eq!(totals, (90..100).rev().map(|t| t as f64 / 10.0).collect::<Vec<_>>());
    }

    #[test]
    fn ties_and_short_lists() {
        let records: Vec<ScoreRecord> = [5, 3, 9, 1, 7].iter().map(|&i| rec(i, 4.0)).collect();
        assert_eq!(select_top_k(&records, 3), vec![1, 3, 5]);
        assert_eq!(select_top_k(&records[..3], 10).len(), 3);
        let mut with_err = records.clone();
        with_err.push(ScoreRecord::failed(0, None, "x".into(), None, BACKEND_MLLM));
        assert_eq!(select_top_k(&with_err, 6).last(), Some(&0));
    }

    #[test]
    fn prefix_stable() {
        let records: Vec<ScoreRecord> = (0..40).map(|i| rec(i, ((i * 7) % 5) as f64)).collect();
        let full = select_top_k(&records, 40);
        for k in 1..=40 {
            assert_eq!(select_top_k(&records, k), full[..k]);
        }
    }

    #[test]
    fn best_view_is_kept() {
        let mut a = rec(2, 3.0);
        a.view = Some(0);
        let mut b = rec(2, 6.0);
        b.view = Some(1);
        let c = rec(1, 1.0);
        let best = best_per_candidate(&[a, b, c]);
        assert_eq!(best.iter().map(|r| (r.id, r.view)).collect::<Vec<_>>(), vec![(1, None), (2, Some(1))]);
    }

    #[test]
    fn prompt_asset_lists_criteria() {
        for k in ["naturalness", "physical_plausibility", "human_likeness", "preference"] {
            assert!(DEFAULT_PROMPT.contains(k));
        }
    }
}
