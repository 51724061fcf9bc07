//! Offline scorer built from fixed monotone piecewise-linear curves.
//!
//! | input                | curve knots (input → score)              |
//! |----------------------|------------------------------------------|
//! | penetration cm       | 0→10, 0.5→6, 2→0                         |
//! | self-intersection cm³| 0→10, 1→5, 5→0                           |
//! | sim displacement cm  | 0→10, 1→9, 5→3, 10→0                     |
//! | contacting links     | 0→0, 1→3, 2→6, 3→8.5, 5→10               |
//! | contact points       | 0→0, 3→5, 10→8, 30→10                    |
//!
//! Inputs beyond the last knot keep the last score. Criteria:
//! naturalness = (si + links) / 2, physical = min(pen, disp),
//! human = (2 links + points) / 3, preference = (disp + links) / 2.

use super::{Criteria, Result, ScoreRecord, SelectionError, BACKEND_HEURISTIC};
use crate::graspgen::{GraspCandidate, GraspMetrics};

struct Curve(&'static [(f64, f64)]);

impl Curve {
    fn at(&self, x: f64) -> f64 {
        let k = self.0;
        if x.is_nan() {
            return k[k.len() - 1].1.min(k[0].1);
        }
        if x <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }
}

const PENETRATION: Curve = Curve(&[(0.0, 10.0), (0.5, 6.0), (2.0, 0.0)]);
const SELF_INTERSECTION: Curve = Curve(&[(0.0, 10.0), (1.0, 5.0), (5.0, 0.0)]);
const DISPLACEMENT: Curve = Curve(&[(0.0, 10.0), (1.0, 9.0), (5.0, 3.0), (10.0, 0.0)]);
const LINKS: Curve = Curve(&[(0.0, 0.0), (1.0, 3.0), (2.0, 6.0), (3.0, 8.5), (5.0, 10.0)]);
const POINTS: Curve = Curve(&[(0.0, 0.0), (3.0, 5.0), (10.0, 8.0), (30.0, 10.0)]);

pub fn heuristic_criteria(m: &GraspMetrics) -> Criteria {
    let pen = PENETRATION.at(m.penetration_cm);
    let si = SELF_INTERSECTION.at(m.self_intersection_cm3);
    let disp = DISPLACEMENT.at(m.sim_displacement_cm);
    let links = LINKS.at(m.contact_links as f64);
    let points = POINTS.at(m.contact_count as f64);
    Criteria {
        naturalness: (si + links) / 2.0,
        physical_plausibility: pen.min(disp),
        human_likeness: (2.0 * links + points) / 3.0,
        preference: (disp + links) / 2.0,
    }
}

pub fn score_heuristic(candidate: &GraspCandidate) -> Result<ScoreRecord> {
    let m = candidate.metrics.as_ref().ok_or(SelectionError::MissingMetrics(candidate.id))?;
    let c = heuristic_criteria(m);
    let explanation = format!(
        "penetration {:.2} cm, self-intersection {:.2} cm3, displacement {:.2} cm, {} contact points on {} links",
        m.penetration_cm, m.self_intersection_cm3, m.sim_displacement_cm, m.contact_count, m.contact_links
    );
    Ok(ScoreRecord::new(candidate.id, None, c, explanation, BACKEND_HEURISTIC))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ContactMap;
    use crate::kinematics::HandPose;
    use proptest::prelude::*;

    fn cand(id: usize, m: GraspMetrics) -> GraspCandidate {
        GraspCandidate { id, pose: HandPose::default(), contact: ContactMap { flags: vec![], threshold_m: 0.005 }, metrics: Some(m), score: None }
    }

    fn metrics(pen: f64, si: f64, disp: f64, points: usize, links: usize) -> GraspMetrics {
        GraspMetrics { penetration_cm: pen, self_intersection_cm3: si, sim_displacement_cm: disp, contact_count: points, contact_links: links }
    }

    #[test]
    fn clean_grasp_scores_in_top_band() {
        // One contact point is the fewest a three-link contact can produce.
        let r = score_heuristic(&cand(0, metrics(0.0, 0.0, 0.99, 1, 3))).unwrap();
        assert!(r.total >= 8.0, "{}", r.total);
    }

    #[test]
    fn deep_penetration_zeroes_physical() {
        let r = score_heuristic(&cand(0, metrics(2.0, 0.0, 0.0, 40, 5))).unwrap();
        assert_eq!(r.physical_plausibility, 0.0);
        let r = score_heuristic(&cand(0, metrics(7.0, 0.0, 0.0, 40, 5))).unwrap();
        assert_eq!(r.physical_plausibility, 0.0);
    }

    #[test]
    fn identical_metrics_identical_scores_and_missing_errors() {
        let m = metrics(0.3, 0.4, 2.0, 12, 2);
        let a = score_heuristic(&cand(1, m.clone())).unwrap();
        let b = score_heuristic(&cand(2, m)).unwrap();
        assert_eq!((a.total, a.naturalness, a.preference), (b.total, b.naturalness, b.preference));
        let mut c = cand(3, metrics(0.0, 0.0, 0.0, 0, 0));
        c.metrics = None;
        assert!(matches!(score_heuristic(&c), Err(SelectionError::MissingMetrics(3))));
    }

    #[test]
    fn curve_knots_are_exact() {
        assert_eq!(PENETRATION.at(0.5), 6.0);
        assert_eq!(DISPLACEMENT.at(5.0), 3.0);
        assert_eq!(LINKS.at(4.0), 9.25);
        assert_eq!(POINTS.at(100.0), 10.0);
        assert_eq!(SELF_INTERSECTION.at(-1.0), 10.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn less_penetration_never_lowers_total(
            pen in 0.0..5.0f64, cut in 0.0..1.0f64, si in 0.0..8.0f64, disp in 0.0..15.0f64,
            points in 0usize..60, links in 0usize..8,
        ) {
            let hi = score_heuristic(&cand(0, metrics(pen, si, disp, points, links))).unwrap();
            let lo = score_heuristic(&cand(0, metrics(pen * cut, si, disp, points, links))).unwrap();
            prop_assert!(lo.total >= hi.total);
            for v in [lo.naturalness, lo.physical_plausibility, lo.human_likeness, lo.preference, lo.total] {
                prop_assert!((0.0..=10.0).contains(&v));
            }
        }
    }
}
