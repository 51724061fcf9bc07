use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{forward_kinematics, FkResult, HandPose, KinematicModel, KinematicsError, Result, NUM_JOINTS, POSE_DIM};
use crate::geometry::mesh::{stratified_counts, uniform_barycentric};
use crate::geometry::{PosedLink, TriangleMesh};
use crate::math::{left_jacobian_so3, Vec3};

/// Points sampled on the posed hand surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePointSet {
    pub points: Vec<Vec3>,
    pub source_link: Vec<usize>,
    pub normals: Vec<Vec3>,
}

impl SurfacePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Fixed surface samples in link frames. Samples are drawn once, area-weighted
/// over the union of link meshes, and then posed by rigid link transforms, so
/// a sampler reused across poses yields corresponding points.
#[derive(Debug, Clone)]
pub struct HandSurfaceSampler {
    link: Vec<usize>,
    local: Vec<Vec3>,
    local_normal: Vec<Vec3>,
}

impl HandSurfaceSampler {
    pub fn new(model: &KinematicModel, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(KinematicsError::Invalid("n_samples must be at least 1".into()));
        }
        let mut tris: Vec<(usize, usize)> = Vec::new();
        let mut areas = Vec::new();
        for (l, link) in model.links.iter().enumerate() {
            if let Some(mesh) = &link.mesh {
                for t in 0..mesh.triangles.len() {
                    tris.push((l, t));
                    areas.push(mesh.triangle_area(t));
                }
            }
        }
        if tris.is_empty() {
            return Err(KinematicsError::MissingMesh);
        }
        let counts = stratified_counts(&areas, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Self { link: Vec::with_capacity(n), local: Vec::with_capacity(n), local_normal: Vec::with_capacity(n) };
        for (&(l, t), &count) in tris.iter().zip(&counts) {
            let mesh = model.links[l].mesh.as_ref().expect("sampled link has mesh");
            let [a, b, c] = mesh.triangle_vertices(t);
            let normal = mesh.triangle_normal(t);
            for _ in 0..count {
                let w = uniform_barycentric(&mut rng);
                out.link.push(l);
                out.local.push(a * w[0] + b * w[1] + c * w[2]);
                out.local_normal.push(normal);
            }
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    pub fn links(&self) -> &[usize] {
        &self.link
    }

    pub fn sample(&self, fk: &FkResult) -> SurfacePointSet {
        let points = self.local.iter().zip(&self.link).map(|(p, &l)| fk.links[l].apply(p)).collect();
        let normals = self.local_normal.iter().zip(&self.link).map(|(n, &l)| fk.links[l].rotation * n).collect();
        SurfacePointSet { points, source_link: self.link.clone(), normals }
    }

    pub fn points(&self, fk: &FkResult) -> Vec<Vec3> {
        self.local.iter().zip(&self.link).map(|(p, &l)| fk.links[l].apply(p)).collect()
    }
}

/// Union of all posed link meshes.
pub fn hand_mesh(model: &KinematicModel, fk: &FkResult) -> TriangleMesh {
    let mut out = TriangleMesh::default();
    for (l, link) in model.links.iter().enumerate() {
        if let Some(mesh) = &link.mesh {
            out.append(&mesh.transformed(&fk.links[l]));
        }
    }
    out
}

/// Posed meshes of the links that carry geometry, in link order, each linked
/// to its nearest meshed ancestor for the self-intersection collar.
pub fn posed_link_meshes(model: &KinematicModel, fk: &FkResult) -> Vec<PosedLink> {
    let mut list_index = vec![None; model.links.len()];
    let mut out = Vec::new();
    for (l, link) in model.links.iter().enumerate() {
        let Some(mesh) = &link.mesh else { continue };
        let mut parent = None;
        let mut cur = l;
        while let Some(j) = model.links[cur].parent_joint {
            cur = model.joints[j].parent;
            if model.links[cur].mesh.is_some() {
                parent = Some(cur);
                break;
            }
        }
        let joint_origin = match link.parent_joint {
            Some(j) => fk.joint_frames[j].translation,
            None => fk.links[l].translation,
        };
        list_index[l] = Some(out.len());
        out.push(PosedLink { mesh: mesh.transformed(&fk.links[l]), parent, joint_origin });
    }
    // Link order is topological for parents declared first; resolve indices afterwards.
    for posed in &mut out {
        posed.parent = posed.parent.and_then(|p| list_index[p]);
    }
    out
}

/// Posed hand mesh and `n_samples` area-weighted surface points, deterministic in `seed`.
pub fn hand_mesh_and_points(model: &KinematicModel, pose: &HandPose, n_samples: usize, seed: u64) -> Result<(TriangleMesh, SurfacePointSet)> {
    if !pose.is_finite() {
        return Err(KinematicsError::Pose("non-finite value".into()));
    }
    let sampler = HandSurfaceSampler::new(model, n_samples, seed)?;
    let fk = forward_kinematics(model, pose);
    Ok((hand_mesh(model, &fk), sampler.sample(&fk)))
}

/// Gradient of a scalar with respect to the pose, given its gradient with
/// respect to points rigidly attached to links.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub theta: [f64; NUM_JOINTS],
    pub translation: Vec3,
    /// Gradient for the left-multiplied update `R ← exp(ω) R`.
    pub rotation_tangent: Vec3,
}

impl PoseGradient {
    /// Gradient with respect to the flat pose vector, axis-angle root included.
    pub fn to_array(&self, pose: &HandPose) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        out[..NUM_JOINTS].copy_from_slice(&self.theta);
        out[NUM_JOINTS..NUM_JOINTS + 3].copy_from_slice(self.translation.as_slice());
        let g = left_jacobian_so3(&pose.rotation_vector()).transpose() * self.rotation_tangent;
        out[NUM_JOINTS + 3..].copy_from_slice(g.as_slice());
        out
    }
}

/// Back-propagates point gradients through the kinematic tree. `points[i]` is
/// the world position of a point fixed to link `links[i]` under `fk`.
pub fn pose_gradient(model: &KinematicModel, fk: &FkResult, points: &[Vec3], links: &[usize], grads: &[Vec3]) -> PoseGradient {
    assert!(points.len() == links.len() && points.len() == grads.len());
    // Per subtree: S = Σ p × g and G = Σ g, so dL/dθ = ω · (S − o × G).
    let mut s = vec![Vec3::zeros(); model.links.len()];
    let mut g = vec![Vec3::zeros(); model.links.len()];
    for ((p, &l), d) in points.iter().zip(links).zip(grads) {
        s[l] += p.cross(d);
        g[l] += d;
    }
    let mut theta = [0.0; NUM_JOINTS];
    for &j in model.order.iter().rev() {
        let joint = &model.joints[j];
        let (c, p) = (joint.child, joint.parent);
        if let Some(slot) = model.slot[j] {
            let frame = &fk.joint_frames[j];
            let axis = frame.rotation * joint.axis;
            theta[slot] = axis.dot(&(s[c] - frame.translation.cross(&g[c])));
        }
        let (sc, gc) = (s[c], g[c]);
        s[p] += sc;
        g[p] += gc;
    }
    let root = model.root;
    let t = fk.links[root].translation;
    PoseGradient { theta, translation: g[root], rotation_tangent: s[root] - t.cross(&g[root]) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::closest_point_on_triangle;
    use crate::kinematics::toy_hand;
    use proptest::prelude::*;

    fn bent_pose() -> HandPose {
        let mut p = HandPose::default();
        for (s, v) in p.theta.iter_mut().enumerate() {
            *v = 0.1 + 0.02 * s as f64;
        }
        p.eta = [0.02, -0.01, 0.3, 0.4, -0.3, 0.2];
        p
    }

    #[test]
    fn deterministic_count_and_membership() {
        let m = toy_hand();
        let pose = bent_pose();
        let (mesh, a) = hand_mesh_and_points(&m, &pose, 2048, 7).unwrap();
        let (_, b) = hand_mesh_and_points(&m, &pose, 2048, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2048);
        for (p, n) in a.points.iter().zip(&a.normals) {
            assert!((n.norm() - 1.0).abs() <= 1e-6);
            let d = (0..mesh.triangles.len())
                .map(|t| {
                    let [x, y, z] = mesh.triangle_vertices(t);
                    (closest_point_on_triangle(p, &x, &y, &z) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1e-7, "point off surface by {d}");
        }
        assert!(hand_mesh_and_points(&m, &pose, 0, 7).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let m = toy_hand();
        let pose = bent_pose();
        let mut moved = pose;
        let t = Vec3::new(0.1, -0.2, 0.05);
        moved.set_translation(pose.translation() + t);
        let (_, a) = hand_mesh_and_points(&m, &pose, 256, 3).unwrap();
        let (_, b) = hand_mesh_and_points(&m, &moved, 256, 3).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert!((p + t - q).norm() <= 1e-12);
        }
    }

    #[test]
    fn posed_links_track_meshed_ancestors() {
        let m = toy_hand();
        let fk = forward_kinematics(&m, &HandPose::default());
        let links = posed_link_meshes(&m, &fk);
        assert_eq!(links.len(), m.links.iter().filter(|l| l.mesh.is_some()).count());
        assert_eq!(links[0].parent, None);
        // ff_proximal hangs off the meshless knuckle, so its meshed parent is the palm.
        assert_eq!(links[1].parent, Some(0));
        assert_eq!(links[2].parent, Some(1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn gradient_matches_finite_differences(seed in 0u64..1000) {
            // Scalar L = Σ w_i · p_i with fixed random weights.
            use rand::Rng;
            let m = toy_hand();
            let sampler = HandSurfaceSampler::new(&m, 128, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let w: Vec<Vec3> = (0..128).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let mut pose = bent_pose();
            for v in pose.eta.iter_mut().skip(3) {
                *v += rng.random_range(-0.5..0.5);
            }
            let loss = |p: &HandPose| -> f64 {
                sampler.points(&forward_kinematics(&m, p)).iter().zip(&w).map(|(a, b)| a.dot(b)).sum()
            };
            let fk = forward_kinematics(&m, &pose);
            let grad = pose_gradient(&m, &fk, &sampler.points(&fk), sampler.links(), &w).to_array(&pose);
            let base = pose.to_array();
            for k in 0..POSE_DIM {
                let h = 1e-6;
                let mut a = base;
                let mut b = base;
                a[k] += h;
                b[k] -= h;
                let fd = (loss(&HandPose::from_slice(&a).unwrap()) - loss(&HandPose::from_slice(&b).unwrap())) / (2.0 * h);
                prop_assert!((fd - grad[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "k={} fd={} an={}", k, fd, grad[k]);
            }
        }
    }
}
