use std::collections::HashMap;

use crate::math::Vec3;

type Cell = (i64, i64, i64);

/// Uniform hash grid over a point set answering exact nearest-neighbor and
/// k-nearest-neighbor queries. Distances are computed as `(a - b).norm_squared()`
/// so results agree bit-for-bit with a brute-force scan; ties resolve to the
/// lower point index.
#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<Vec3>,
    cell: f64,
    cells: HashMap<Cell, Vec<u32>>,
    lo: Cell,
    hi: Cell,
}

impl PointGrid {
    /// Builds a grid with a cell size chosen for roughly four points per cell.
    pub fn new(points: &[Vec3]) -> Self {
        let cell = Self::auto_cell_size(points);
        Self::with_cell_size(points, cell)
    }

    pub fn with_cell_size(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite());
        let mut cells: HashMap<Cell, Vec<u32>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let c = Self::key(p, cell);
            lo = (lo.0.min(c.0), lo.1.min(c.1), lo.2.min(c.2));
            hi = (hi.0.max(c.0), hi.1.max(c.1), hi.2.max(c.2));
            cells.entry(c).or_default().push(i as u32);
        }
        Self { points: points.to_vec(), cell, cells, lo, hi }
    }

    fn auto_cell_size(points: &[Vec3]) -> f64 {
        let Some(first) = points.first() else { return 1.0 };
        let (lo, hi) = points.iter().fold((*first, *first), |(l, h), p| (l.inf(p), h.sup(p)));
        let ext = hi - lo;
        let max_ext = ext.max();
        if max_ext <= 0.0 {
            return 1.0;
        }
        let floor = max_ext / 256.0;
        let padded = ext.map(|e| e.max(floor));
        let vol = padded.x * padded.y * padded.z;
        (vol * 4.0 / points.len() as f64).cbrt().max(floor)
    }

    fn key(p: &Vec3, cell: f64) -> Cell {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Chebyshev ring distance from `c` to the occupied cell range; rings closer
    /// than this are empty.
    fn first_ring(&self, c: Cell) -> i64 {
        let gap = |v: i64, lo: i64, hi: i64| (lo - v).max(v - hi).max(0);
        gap(c.0, self.lo.0, self.hi.0).max(gap(c.1, self.lo.1, self.hi.1)).max(gap(c.2, self.lo.2, self.hi.2))
    }

    fn last_ring(&self, c: Cell) -> i64 {
        let span = |v: i64, lo: i64, hi: i64| (v - lo).abs().max((hi - v).abs());
        span(c.0, self.lo.0, self.hi.0).max(span(c.1, self.lo.1, self.hi.1)).max(span(c.2, self.lo.2, self.hi.2))
    }

    fn visit_ring(&self, c: Cell, r: i64, mut f: impl FnMut(u32)) {
        let x0 = (c.0 - r).max(self.lo.0);
        let x1 = (c.0 + r).min(self.hi.0);
        let y0 = (c.1 - r).max(self.lo.1);
        let y1 = (c.1 + r).min(self.hi.1);
        let z0 = (c.2 - r).max(self.lo.2);
        let z1 = (c.2 + r).min(self.hi.2);
        for x in x0..=x1 {
            for y in y0..=y1 {
                let edge_xy = (x - c.0).abs() == r || (y - c.1).abs() == r;
                if edge_xy {
                    for z in z0..=z1 {
                        if let Some(ids) = self.cells.get(&(x, y, z)) {
                            ids.iter().for_each(|&i| f(i));
                        }
                    }
                } else {
                    // r > 0 here: interior columns only touch the two z faces.
                    for z in [c.2 - r, c.2 + r] {
                        if z < z0 || z > z1 {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&(x, y, z)) {
                            ids.iter().for_each(|&i| f(i));
                        }
                    }
                }
            }
        }
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_filtered(q, |_| true)
    }

    /// Nearest point among those accepted by `keep`.
    pub fn nearest_filtered(&self, q: &Vec3, keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let last = self.last_ring(c);
        let mut r = self.first_ring(c);
        while r <= last {
            self.visit_ring(c, r, |i| {
                let i = i as usize;
                if !keep(i) {
                    return;
                }
                let d = (self.points[i] - q).norm_squared();
                if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                    best = Some((i, d));
                }
            });
            if let Some((_, bd)) = best {
                let bound = r as f64 * self.cell;
                if bd < bound * bound {
                    break;
                }
            }
            r += 1;
        }
        best
    }

    /// The `k` nearest points as `(index, squared distance)`, ascending by
    /// distance then index. `exclude` removes one index (the query point itself).
    pub fn knn(&self, q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut found: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        if k == 0 || self.points.is_empty() {
            return found;
        }
        let c = Self::key(q, self.cell);
        let last = self.last_ring(c);
        let mut r = self.first_ring(c);
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        while r <= last {
            self.visit_ring(c, r, |i| {
                let i = i as usize;
                if Some(i) == exclude {
                    return;
                }
                let cand = (i, (self.points[i] - q).norm_squared());
                if found.len() < k {
                    let pos = found.partition_point(|e| cmp(e, &cand).is_lt());
                    found.insert(pos, cand);
                } else if cmp(&cand, &found[k - 1]).is_lt() {
                    found.pop();
                    let pos = found.partition_point(|e| cmp(e, &cand).is_lt());
                    found.insert(pos, cand);
                }
            });
            if found.len() == k {
                let bound = r as f64 * self.cell;
                if found[k - 1].1 < bound * bound {
                    break;
                }
            }
            r += 1;
        }
        found
    }

    /// Indices of all points within `radius` of `q`, ascending.
    pub fn within(&self, q: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() {
            return out;
        }
        let c = Self::key(q, self.cell);
        let reach = (radius / self.cell).ceil() as i64 + 1;
        let r2 = radius * radius;
        for r in 0..=reach.min(self.last_ring(c)) {
            self.visit_ring(c, r, |i| {
                if (self.points[i as usize] - q).norm_squared() <= r2 {
                    out.push(i as usize);
                }
            });
        }
        out.sort_unstable();
        out
    }
}
