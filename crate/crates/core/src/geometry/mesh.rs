use std::collections::HashMap;

use rand::Rng;

use super::{GeometryError, Result};
use crate::math::{RigidTransform, Vec3};

/// Indexed triangle mesh in meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

/// A point on a mesh surface expressed as a triangle index plus barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub triangle: usize,
    pub bary: [f64; 3],
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self { vertices, triangles };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) {
                return Err(GeometryError::InvalidMesh(format!(
                    "triangle {i} references vertex beyond {n}"
                )));
            }
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Every undirected edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        self.watertight_violation().is_none()
    }

    pub(crate) fn watertight_violation(&self) -> Option<String> {
        if self.triangles.is_empty() {
            return Some("mesh has no triangles".into());
        }
        let mut edges: HashMap<(usize, usize), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        edges
            .iter()
            .find(|(_, &c)| c != 2)
            .map(|((a, b), c)| format!("edge ({a},{b}) shared by {c} triangles"))
    }

    pub fn triangle_vertices(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the counter-clockwise winding; zero for degenerate triangles.
    pub fn triangle_normal(&self, i: usize) -> Vec3 {
        let [a, b, c] = self.triangle_vertices(i);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    /// Enclosed volume by the divergence theorem (positive for outward winding).
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn aabb(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| t.apply(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn append(&mut self, other: &TriangleMesh) {
        let offset = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]));
    }

    pub fn point_at(&self, s: &SurfaceSample) -> Vec3 {
        let [a, b, c] = self.triangle_vertices(s.triangle);
        a * s.bary[0] + b * s.bary[1] + c * s.bary[2]
    }

    /// Area-weighted stratified sampling: every triangle receives
    /// `floor(n·area/total)` samples and the remainder goes to the largest
    /// fractional parts (ties to the lower triangle index). Positions within a
    /// triangle are uniform.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SurfaceSample> {
        let areas: Vec<f64> = (0..self.triangles.len()).map(|i| self.triangle_area(i)).collect();
        let counts = stratified_counts(&areas, n);
        let mut out = Vec::with_capacity(n);
        for (tri, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                out.push(SurfaceSample { triangle: tri, bary: uniform_barycentric(rng) });
            }
        }
        out
    }

    /// Axis-aligned box centered at `center` with full extents `size`.
    pub fn cuboid(center: Vec3, size: Vec3) -> TriangleMesh {
        let h = size * 0.5;
        let vertices = (0..8)
            .map(|i| {
                let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
                let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
                let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
                center + Vec3::new(sx * h.x, sy * h.y, sz * h.z)
            })
            .collect();
        // Outward counter-clockwise faces.
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        TriangleMesh { vertices, triangles }
    }

    /// Box spanning `lo..hi`.
    pub fn aabb_box(lo: Vec3, hi: Vec3) -> TriangleMesh {
        Self::cuboid((lo + hi) * 0.5, hi - lo)
    }

    /// Closed cylinder along z with the base at `z = 0`.
    pub fn cylinder(radius: f64, height: f64, segments: usize) -> TriangleMesh {
        Self::lathe(&[(0.0, 0.0), (radius, 0.0), (radius, height), (0.0, height)], segments)
    }

    /// UV sphere.
    pub fn sphere(center: Vec3, radius: f64, rings: usize, segments: usize) -> TriangleMesh {
        let profile: Vec<(f64, f64)> = (0..=rings)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / rings as f64;
                let r = if i == 0 || i == rings { 0.0 } else { radius * a.sin() };
                (r, -radius * a.cos())
            })
            .collect();
        let mut m = Self::lathe(&profile, segments);
        for v in &mut m.vertices {
            *v += center;
        }
        m
    }

    /// Surface of revolution about z from a `(radius, z)` profile whose first
    /// and last entries lie on the axis (radius 0). The profile must run from
    /// low z to high z along the outside of the solid.
    pub fn lathe(profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
        assert!(profile.len() >= 3 && segments >= 3);
        assert!(profile[0].0 == 0.0 && profile[profile.len() - 1].0 == 0.0);
        let mut vertices = vec![Vec3::new(0.0, 0.0, profile[0].1)];
        let rings = &profile[1..profile.len() - 1];
        for &(r, z) in rings {
            for s in 0..segments {
                let a = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                vertices.push(Vec3::new(r * a.cos(), r * a.sin(), z));
            }
        }
        let top = vertices.len();
        vertices.push(Vec3::new(0.0, 0.0, profile[profile.len() - 1].1));
        let ring = |k: usize, s: usize| 1 + k * segments + (s % segments);
        let mut triangles = Vec::new();
        for s in 0..segments {
            triangles.push([0, ring(0, s + 1), ring(0, s)]);
        }
        for k in 0..rings.len() - 1 {
            for s in 0..segments {
                let (a, b) = (ring(k, s), ring(k, s + 1));
                let (c, d) = (ring(k + 1, s), ring(k + 1, s + 1));
                triangles.push([a, b, d]);
                triangles.push([a, d, c]);
            }
        }
        let last = rings.len() - 1;
        for s in 0..segments {
            triangles.push([top, ring(last, s), ring(last, s + 1)]);
        }
        TriangleMesh { vertices, triangles }
    }
}

pub(crate) fn stratified_counts(areas: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    if areas.is_empty() || total <= 0.0 {
        return vec![0; areas.len()];
    }
    let expected: Vec<f64> = areas.iter().map(|a| n as f64 * a / total).collect();
    let mut counts: Vec<usize> = expected.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = expected[a] - expected[a].floor();
        let fb = expected[b] - expected[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

pub(crate) fn uniform_barycentric<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let mut u: f64 = rng.random();
    let mut v: f64 = rng.random();
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    [1.0 - u - v, u, v]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn primitives_are_watertight_with_positive_volume() {
        let cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
        assert!(cube.is_watertight());
        assert!((cube.volume() - 6.0).abs() < 1e-12);
        let cyl = TriangleMesh::cylinder(0.5, 1.0, 32);
        assert!(cyl.is_watertight());
        assert!(cyl.volume() > 0.0);
        let sph = TriangleMesh::sphere(Vec3::zeros(), 1.0, 12, 24);
        assert!(sph.is_watertight());
        // Inscribed polyhedron: slightly under the true ball volume.
        let ball = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(sph.volume() < ball && sph.volume() > 0.95 * ball);
    }

    #[test]
    fn open_mesh_is_not_watertight() {
        let mut cube = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        cube.triangles.pop();
        assert!(!cube.is_watertight());
    }

    #[test]
    fn stratified_counts_sum_to_n() {
        let counts = stratified_counts(&[1.0, 2.0, 3.0, 0.5], 17);
        assert_eq!(counts.iter().sum::<usize>(), 17);
        assert_eq!(stratified_counts(&[1.0, 1.0], 1), vec![1, 0]);
    }

    #[test]
    fn samples_lie_on_their_triangles() {
        let mesh = TriangleMesh::cuboid(Vec3::zeros(), Vec3::repeat(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = mesh.sample_surface(100, &mut rng);
        assert_eq!(samples.len(), 100);
        for s in &samples {
            let p = mesh.point_at(s);
            assert!(p.iter().any(|c| (c.abs() - 0.5).abs() < 1e-12));
            assert!(s.bary.iter().all(|&b| (0.0..=1.0).contains(&b)));
        }
    }
}
