//! Graph operations whose values come from geometry and kinematics.

use std::sync::Arc;

use super::{GraspError, Result};
use crate::geometry::PointGrid;
use crate::kinematics::{forward_kinematics, pose_gradient, HandPose, HandSurfaceSampler, KinematicModel, POSE_DIM};
use crate::math::Vec3;
use crate::neural::{Graph, Tensor, Var};

fn rows_to_points(t: &Tensor) -> Vec<Vec3> {
    (0..t.rows()).map(|r| Vec3::new(t.get(r, 0), t.get(r, 1), t.get(r, 2))).collect()
}

fn points_to_rows(p: &[Vec3]) -> Result<Tensor> {
    Ok(Tensor::new(p.len(), 3, p.iter().flat_map(|v| [v.x, v.y, v.z]).collect())?)
}

/// Row subset `a[idx]`; gradients scatter-add back.
pub fn gather_rows(g: &mut Graph, a: Var, idx: &[usize]) -> Result<Var> {
    let src = g.value(a);
    let [rows, cols] = src.shape();
    if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
        return Err(GraspError::Dim(format!("row {bad} of {rows}")));
    }
    let mut data = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        data.extend_from_slice(src.row_slice(i));
    }
    let value = Tensor::new(idx.len(), cols, data)?;
    let idx = idx.to_vec();
    Ok(g.custom(&[a], value, move |gout| {
        let mut ga = Tensor::zeros(rows, cols);
        for (k, &i) in idx.iter().enumerate() {
            for c in 0..cols {
                ga.set(i, c, ga.get(i, c) + gout.get(k, c));
            }
        }
        vec![ga]
    })?)
}

/// Hand surface points (`n × 3`) of the `1 × 28` pose `pose`. The backward
/// pass goes through the kinematic tree.
pub fn hand_points_op(g: &mut Graph, pose: Var, hand: &Arc<KinematicModel>, sampler: &Arc<HandSurfaceSampler>) -> Result<Var> {
    let pv = g.value(pose);
    if pv.shape() != [1, POSE_DIM] {
        return Err(GraspError::Dim(format!("pose value has shape {:?}", pv.shape())));
    }
    let p = HandPose::from_slice(pv.data())?;
    let fk = forward_kinematics(hand, &p);
    let set = sampler.sample(&fk);
    let value = points_to_rows(&set.points)?;
    let (hand, links, points) = (Arc::clone(hand), set.source_link, set.points);
    Ok(g.custom(&[pose], value, move |gout| {
        let grads = rows_to_points(gout);
        let pg = pose_gradient(&hand, &fk, &points, &links, &grads);
        vec![Tensor::row(&pg.to_array(&p))]
    })?)
}

/// Chamfer distance `Σ_a min_b ‖a−b‖² + Σ_b min_a ‖b−a‖²` between the rows of
/// `a` and the constant set `b`, as `1 × 1`.
pub fn chamfer_op(g: &mut Graph, a: Var, b: &[Vec3]) -> Result<Var> {
    let av = g.value(a);
    if av.cols() != 3 || av.rows() == 0 || b.is_empty() {
        return Err(GraspError::Dim(format!("chamfer on {:?} and {} points", av.shape(), b.len())));
    }
    let pa = rows_to_points(av);
    let (ga, gb) = (PointGrid::new(b), PointGrid::new(&pa));
    let mut total = 0.0;
    // Each term contributes 2(a_i − b_j) to the gradient of the matched a_i.
    let mut grad = vec![Vec3::zeros(); pa.len()];
    for (i, p) in pa.iter().enumerate() {
        let (j, d2) = ga.nearest(p).expect("non-empty");
        total += d2;
        grad[i] += 2.0 * (p - b[j]);
    }
    for q in b {
        let (i, d2) = gb.nearest(q).expect("non-empty");
        total += d2;
        grad[i] += 2.0 * (pa[i] - q);
    }
    let gt = points_to_rows(&grad)?;
    Ok(g.custom(&[a], Tensor::scalar(total), move |gout| vec![gt.scaled(gout.item())])?)
}
