use std::cmp::Ordering;

use super::{gather_rows, GraspError, Result};
use crate::geometry::PointCloud;
use crate::math::Vec3;
use crate::neural::{Activation, Graph, Network, NetworkSpec, ParamStore, Tensor, Var};

pub const MIN_POINTS: usize = 32;

fn lex(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Farthest-point subset of at most `count` indices.
///
/// Starts from the lexicographically smallest point and breaks distance ties
/// the same way, so the selected coordinates do not depend on input order.
/// Clouds with at most `count` points are returned whole, in order.
pub fn farthest_point_indices(points: &[Vec3], count: usize) -> Vec<usize> {
    let n = points.len();
    if n <= count {
        return (0..n).collect();
    }
    let pick = |score: &dyn Fn(usize) -> f64| -> usize {
        let mut best = 0;
        for i in 1..n {
            let (s, b) = (score(i), score(best));
            if s > b || (s == b && lex(&points[i], &points[best]) == Ordering::Less) {
                best = i;
            }
        }
        best
    };
    let first = pick(&|_| 0.0);
    let mut dist = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(count);
    let mut cur = first;
    for _ in 0..count {
        out.push(cur);
        let c = points[cur];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
        cur = pick(&|i| dist[i]);
    }
    out
}

/// Shared per-point MLP followed by max pooling over a resampled subset.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub net: Network,
    /// Size of the farthest-point subset that is pooled.
    pub points: usize,
    /// Coordinates are multiplied by this before the first layer, so that
    /// object-sized clouds in metres reach roughly unit range.
    pub input_scale: f64,
}

impl PointEncoder {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], points: usize, input_scale: f64, seed: u64) -> Result<Self> {
        let mut all = vec![3];
        all.extend_from_slice(widths);
        let net = Network::new(&NetworkSpec::mlp(&all, Activation::Relu, seed), store, name)?;
        Ok(Self { net, points, input_scale })
    }

    pub fn output(&self) -> usize {
        self.net.output()
    }

    /// Per-point features for every input point (`n × F`) and the pooled `1 × F` feature.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, points: &[Vec3]) -> Result<(Var, Var)> {
        if points.len() < MIN_POINTS {
            return Err(GraspError::TooFewPoints { have: points.len(), need: MIN_POINTS });
        }
        let k = self.input_scale;
        let data = points.iter().flat_map(|p| [k * p.x, k * p.y, k * p.z]).collect();
        let x = g.input(Tensor::new(points.len(), 3, data)?);
        let h = self.net.forward(g, store, x, None)?;
        let subset = farthest_point_indices(points, self.points);
        let pooled = if subset.len() == points.len() {
            g.max_rows(h)?
        } else {
            let s = gather_rows(g, h, &subset)?;
            g.max_rows(s)?
        };
        Ok((h, pooled))
    }

    pub fn encode(&self, store: &ParamStore, points: &[Vec3]) -> Result<Tensor> {
        let mut g = Graph::new();
        let (_, pooled) = self.forward(&mut g, store, points)?;
        Ok(g.value(pooled).clone())
    }
}

/// Global feature of a point set under `encoder`.
pub fn point_set_encode(points: &PointCloud, encoder: &PointEncoder, store: &ParamStore) -> Result<Vec<f64>> {
    Ok(encoder.encode(store, &points.points)?.into_data())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(0.0..0.1))).collect()
    }

    fn encoder(points: usize) -> (ParamStore, PointEncoder) {
        let mut store = ParamStore::new();
        let e = PointEncoder::new(&mut store, "enc", &[16, 24], points, 10.0, 4).unwrap();
        (store, e)
    }

    #[test]
    fn permutation_and_duplication_invariant() {
        let (store, e) = encoder(64);
        let pts = cloud(100, 1);
        let base = e.encode(&store, &pts).unwrap();
        assert_eq!(base.shape(), [1, 24]);

        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
        let b = e.encode(&store, &shuffled).unwrap();
        assert!(base.zip_map(&b, |x, y| x - y).max_abs() <= 1e-12);

        let doubled: Vec<Vec3> = pts.iter().chain(&pts).copied().collect();
        let c = e.encode(&store, &doubled).unwrap();
        assert!(base.zip_map(&c, |x, y| x - y).max_abs() <= 1e-12);
    }

    #[test]
    fn far_point_changes_feature() {
        let (store, e) = encoder(1024);
        let pts = cloud(64, 3);
        let mut moved = pts.clone();
        moved[10] = Vec3::new(2.0, -1.5, 3.0);
        let a = e.encode(&store, &pts).unwrap();
        let b = e.encode(&store, &moved).unwrap();
        assert!(a.zip_map(&b, |x, y| x - y).max_abs() > 1e-3);
    }

    #[test]
    fn too_few_points() {
        let (store, e) = encoder(64);
        assert!(matches!(e.encode(&store, &cloud(31, 0)), Err(GraspError::TooFewPoints { have: 31, need: 32 })));
    }

    #[test]
    fn fps_is_order_independent_and_spread() {
        let pts = cloud(500, 5);
        let idx = farthest_point_indices(&pts, 50);
        assert_eq!(idx.len(), 50);
        let mut sel: Vec<[u64; 3]> = idx.iter().map(|&i| [pts[i].x.to_bits(), pts[i].y.to_bits(), pts[i].z.to_bits()]).collect();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        let mut sel2: Vec<[u64; 3]> =
            farthest_point_indices(&shuffled, 50).iter().map(|&i| [shuffled[i].x.to_bits(), shuffled[i].y.to_bits(), shuffled[i].z.to_bits()]).collect();
        sel.sort();
        sel2.sort();
        assert_eq!(sel, sel2);
        let unique: std::collections::HashSet<_> = idx.iter().collect();
        assert_eq!(unique.len(), 50);
        assert_eq!(farthest_point_indices(&pts[..20], 50), (0..20).collect::<Vec<_>>());
    }
}
