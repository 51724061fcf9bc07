use super::{GeometryError, Result, TriangleMesh};
use crate::math::Vec3;

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection §5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Solid angle subtended by triangle `abc` seen from the origin (Van Oosterom–Strackee).
fn solid_angle(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(c));
    let den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * num.atan2(den)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self { lo: Vec3::repeat(f64::INFINITY), hi: Vec3::repeat(f64::NEG_INFINITY) }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&self, o: &Aabb) -> Aabb {
        Aabb { lo: self.lo.inf(&o.lo), hi: self.hi.sup(&o.hi) }
    }

    fn dist2(&self, p: &Vec3) -> f64 {
        let d = (self.lo - p).sup(&(p - self.hi)).sup(&Vec3::zeros());
        d.norm_squared()
    }

    fn contains(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] - margin && p[i] <= self.hi[i] + margin)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Distance and inside/outside queries against one triangle mesh.
///
/// Unsigned distance walks a bounding-volume hierarchy; the sign comes from the
/// generalized winding number, so signed queries require a watertight mesh.
#[derive(Debug, Clone)]
pub struct MeshQuery {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    watertight: Option<String>,
    bounds: Aabb,
}

impl MeshQuery {
    pub fn new(mesh: &TriangleMesh) -> Self {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|i| mesh.triangle_vertices(i)).collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut nodes = Vec::new();
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                t.iter().for_each(|v| b.grow(v));
                b
            })
            .collect();
        if !tris.is_empty() {
            build(&boxes, &tris, &mut order, 0, tris.len(), &mut nodes);
        }
        let bounds = nodes.first().map(|n| *n.bounds()).unwrap_or_else(Aabb::empty);
        Self { tris, order, nodes, watertight: mesh.watertight_violation(), bounds }
    }

    /// Builds the query and rejects meshes that are not closed.
    pub fn watertight(mesh: &TriangleMesh) -> Result<Self> {
        let q = Self::new(mesh);
        match &q.watertight {
            None => Ok(q),
            Some(why) => Err(GeometryError::NotWatertight(why.clone())),
        }
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight.is_none()
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.bounds.lo, self.bounds.hi)
    }

    /// Whether `p` lies within the mesh bounding box grown by `margin`.
    pub fn near_bounds(&self, p: &Vec3, margin: f64) -> bool {
        self.bounds.contains(p, margin)
    }

    /// Closest surface point and its distance; `None` for an empty mesh.
    pub fn closest(&self, p: &Vec3) -> Option<(Vec3, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (Vec3::zeros(), f64::INFINITY);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.bounds().dist2(p) >= best.1 {
                continue;
            }
            match *node {
                Node::Leaf { start, end, .. } => {
                    for &ti in &self.order[start..end] {
                        let [a, b, c] = &self.tris[ti];
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d2 = (q - p).norm_squared();
                        if d2 < best.1 {
                            best = (q, d2);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[left].bounds().dist2(p);
                    let dr = self.nodes[right].bounds().dist2(p);
                    if dl < dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        Some((best.0, best.1.sqrt()))
    }

    pub fn unsigned_distance(&self, p: &Vec3) -> f64 {
        self.closest(p).map_or(f64::INFINITY, |(_, d)| d)
    }

    /// Generalized winding number of the surface around `p`.
    pub fn winding_number(&self, p: &Vec3) -> f64 {
        let total: f64 = self.tris.iter().map(|[a, b, c]| solid_angle(&(a - p), &(b - p), &(c - p))).sum();
        total / (4.0 * std::f64::consts::PI)
    }

    pub fn contains(&self, p: &Vec3) -> Result<bool> {
        self.require_watertight()?;
        if !self.bounds.contains(p, 0.0) {
            return Ok(false);
        }
        Ok(self.winding_number(p) > 0.5)
    }

    fn require_watertight(&self) -> Result<()> {
        match &self.watertight {
            None => Ok(()),
            Some(why) => Err(GeometryError::NotWatertight(why.clone())),
        }
    }

    /// Signed distance (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> Result<f64> {
        Ok(self.signed_closest(p)?.1)
    }

    /// Closest surface point together with the signed distance.
    pub fn signed_closest(&self, p: &Vec3) -> Result<(Vec3, f64)> {
        self.require_watertight()?;
        let (q, d) = self.closest(p).ok_or(GeometryError::Empty("mesh"))?;
        if d == 0.0 || !self.bounds.contains(p, 0.0) {
            return Ok((q, d));
        }
        let inside = self.winding_number(p) > 0.5;
        Ok((q, if inside { -d } else { d }))
    }
}

fn build(boxes: &[Aabb], tris: &[[Vec3; 3]], order: &mut [usize], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let bounds = order[start..end].iter().fold(Aabb::empty(), |acc, &i| acc.merge(&boxes[i]));
    let idx = nodes.len();
    if end - start <= LEAF_SIZE {
        nodes.push(Node::Leaf { bounds, start, end });
        return idx;
    }
    let centroid = |i: usize| (tris[i][0] + tris[i][1] + tris[i][2]) / 3.0;
    let ext = bounds.hi - bounds.lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
    order[start..end].sort_by(|&a, &b| centroid(a)[axis].total_cmp(&centroid(b)[axis]).then(a.cmp(&b)));
    let mid = (start + end) / 2;
    nodes.push(Node::Leaf { bounds, start, end });
    let left = build(boxes, tris, order, start, mid, nodes);
    let right = build(boxes, tris, order, mid, end, nodes);
    nodes[idx] = Node::Inner { bounds, left, right };
    idx
}

/// Signed distance from `point` to a watertight `mesh` (negative inside).
pub fn signed_distance(mesh: &TriangleMesh, point: &Vec3) -> Result<f64> {
    MeshQuery::watertight(mesh)?.signed_distance(point)
}
