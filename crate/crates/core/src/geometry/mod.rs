//! Core 3D types: points, point clouds with a nearest-neighbor index,
//! triangle meshes, and the raw (non-differentiable) Chamfer distance.

mod io;
mod kdtree;

use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};

pub use io::{
    load_mesh, load_point_cloud, read_point_cloud, write_mesh, write_normals, write_point_cloud,
    CloudFormat, MeshFormat,
};
pub use kdtree::KdTree;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Squared Euclidean distance, summed in x, y, z order. Every
    /// nearest-neighbor routine in the crate uses this exact expression so
    /// indexed and brute-force answers agree bit for bit.
    pub fn distance_squared(self, o: Vec3) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    pub fn distance(self, o: Vec3) -> f64 {
        self.distance_squared(o).sqrt()
    }

    /// Unit vector, or `None` when the norm is below `eps`.
    pub fn normalized(self, eps: f64) -> Option<Vec3> {
        let n = self.norm();
        (n >= eps && n.is_finite()).then(|| self / n)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Similarity transform mapping raw coordinates into the unit box:
/// `normalized = (raw - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        center: Vec3::ZERO,
        scale: 1.0,
    };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        (p - self.center) / self.scale
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        p * self.scale + self.center
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::IDENTITY
    }
}

/// An immutable set of surface samples with a nearest-neighbor index.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
    index: KdTree,
    normalization: Normalization,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        Self::build(points, None, Normalization::IDENTITY)
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        Self::build(points, Some(normals), Normalization::IDENTITY)
    }

    fn build(
        points: Vec<Vec3>,
        normals: Option<Vec<Vec3>>,
        normalization: Normalization,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        let index = KdTree::build(&points);
        Ok(PointCloud {
            points,
            normals,
            index,
            normalization,
        })
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

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        bounds_of(&self.points)
    }

    /// Center at the bounding-box midpoint and scale uniformly so that the
    /// longest bounding-box edge has length 1.
    pub fn normalize(&self) -> Result<PointCloud> {
        let (lo, hi) = self.bounds();
        let scale = (hi - lo).max_component();
        if !(scale > 0.0) {
            return Err(Error::DegenerateInput(
                "all points are identical; cannot normalize".into(),
            ));
        }
        let center = (lo + hi) * 0.5;
        let t = Normalization { center, scale };
        let points = self.points.iter().map(|&p| t.apply(p)).collect();
        Self::build(points, self.normals.clone(), t)
    }

    /// Re-tag this cloud with a normalization record, e.g. one read back
    /// from a checkpoint.
    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Nearest cloud point to `q`: `(point, index, distance)`. Ties resolve
    /// to the lowest point index.
    pub fn nearest(&self, q: Vec3) -> (Vec3, usize, f64) {
        let (i, d2) = self.index.nearest(q);
        (self.points[i], i, d2.sqrt())
    }
}

pub(crate) fn bounds_of(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for &p in points {
        lo = lo.min(p);
        hi = hi.max(p);
    }
    (lo, hi)
}

/// Indexed triangle soup; triangles may leave open boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {k} references a vertex beyond {n}"
                )));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidArgument(format!(
                    "triangle {k} is degenerate {t:?}"
                )));
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(c - a).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edges used by exactly one triangle, sorted.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|&[a, b, c]| [(a, b), (b, c), (c, a)])
            .map(|(u, v)| (u.min(v), u.max(v)))
            .collect();
        edges.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < edges.len() {
            let mut j = i + 1;
            while j < edges.len() && edges[j] == edges[i] {
                j += 1;
            }
            if j - i == 1 {
                out.push(edges[i]);
            }
            i = j;
        }
        out
    }

    /// Number of connected components of the triangle set, where two
    /// triangles connect when they share a vertex.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c)] {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                if ru != rv {
                    parent[ru.max(rv)] = ru.min(rv);
                }
            }
        }
        let mut roots: Vec<usize> = self
            .triangles
            .iter()
            .map(|t| find(&mut parent, t[0]))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// Map every vertex through `f` (e.g. a de-normalization).
    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }
}

/// Which norm the Chamfer summands use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChamferNorm {
    /// `‖a − b‖₂`, as in the training objective.
    #[default]
    Unsquared,
    /// `‖a − b‖₂²`.
    Squared,
}

/// Two-sided Chamfer distance: mean nearest distance from `a` to `b` plus
/// mean nearest distance from `b` to `a` (a sum, not an average).
pub fn chamfer(a: &[Vec3], b: &[Vec3], norm: ChamferNorm) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer needs two non-empty sets".into()));
    }
    let ta = KdTree::build(a);
    let tb = KdTree::build(b);
    let side = |from: &[Vec3], tree: &KdTree| -> f64 {
        let sum: f64 = from
            .iter()
            .map(|&p| {
                let (_, d2) = tree.nearest(p);
                match norm {
                    ChamferNorm::Unsquared => d2.sqrt(),
                    ChamferNorm::Squared => d2,
                }
            })
            .sum();
        sum / from.len() as f64
    };
    Ok(side(a, &tb) + side(b, &ta))
}

/// Unsquared two-sided Chamfer distance.
pub fn chamfer_l2(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    chamfer(a, b, ChamferNorm::Unsquared)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Vec3], q: Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, &p) in points.iter().enumerate() {
            let d = p.distance_squared(q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    #[test]
    fn normalize_two_points() {
        let c = PointCloud::new(vec![Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)]).unwrap();
        let n = c.normalize().unwrap();
        assert_eq!(n.points(), &[Vec3::new(-0.5, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)]);
        assert_eq!(n.normalization().center, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(n.normalization().scale, 2.0);
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..200)
            .map(|_| Vec3::new(rng.random_range(-3.0..5.0), rng.random(), rng.random()))
            .collect();
        let once = PointCloud::new(pts).unwrap().normalize().unwrap();
        let twice = once.normalize().unwrap();
        assert!((twice.normalization().scale - 1.0).abs() < 1e-12);
        for (a, b) in once.points().iter().zip(twice.points()) {
            assert!(a.distance(*b) < 1e-12);
        }
        for p in once.points() {
            assert!(p.x.abs() <= 0.5 && p.y.abs() <= 0.5 && p.z.abs() <= 0.5);
        }
    }

    #[test]
    fn normalize_repeated_point_is_degenerate() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0); 5]).unwrap();
        assert!(matches!(c.normalize(), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn nearest_two_point_case() {
        let c = PointCloud::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let (p, i, d) = c.nearest(Vec3::new(0.9, 0.0, 0.0));
        assert_eq!((p, i), (Vec3::new(1.0, 0.0, 0.0), 1));
        assert_relative_eq!(d, 0.1, epsilon = 1e-12);
        let (_, i, d) = c.nearest(Vec3::ZERO);
        assert_eq!((i, d), (0, 0.0));
    }

    #[test]
    fn nearest_tie_prefers_lowest_index() {
        let c = PointCloud::new(vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ])
        .unwrap();
        assert_eq!(c.nearest(Vec3::ZERO).1, 0);
        assert_eq!(c.nearest(Vec3::new(2.0, 0.0, 0.0)).1, 0);
    }

    #[test]
    fn nearest_matches_linear_scan_1k() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = PointCloud::new(pts.clone()).unwrap();
        for _ in 0..100 {
            let q = Vec3::new(rng.random(), rng.random(), rng.random());
            let (i, d2) = brute_nearest(&pts, q);
            let (_, j, d) = c.nearest(q);
            assert_eq!(i, j);
            assert_eq!(d2.sqrt(), d);
        }
    }

    #[test]
    fn chamfer_examples() {
        let o = [Vec3::ZERO];
        assert_eq!(chamfer_l2(&o, &o).unwrap(), 0.0);
        assert_eq!(chamfer_l2(&[Vec3::new(1.0, 0.0, 0.0)], &o).unwrap(), 2.0);
        let a = [Vec3::ZERO, Vec3::new(2.0, 0.0, 0.0)];
        assert_eq!(chamfer_l2(&a, &o).unwrap(), 1.0);
        assert!(matches!(chamfer_l2(&[], &o), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn mesh_rejects_bad_triangles() {
        let v = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 1]]).is_err());
        let m = TriangleMesh::new(v, vec![[0, 1, 2]]).unwrap();
        assert_eq!(m.boundary_edges().len(), 3);
        assert_eq!(m.connected_components(), 1);
        assert_relative_eq!(m.total_area(), 0.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn cloud() -> impl Strategy<Value = Vec<Vec3>> {
            prop::collection::vec(
                (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0).prop_map(|(x, y, z)| Vec3::new(x, y, z)),
                1..120,
            )
        }

        proptest! {
            #[test]
            fn nearest_agrees_with_scan(pts in cloud(), qs in cloud()) {
                let c = PointCloud::new(pts.clone()).unwrap();
                for q in qs {
                    let (i, _) = brute_nearest(&pts, q);
                    prop_assert_eq!(c.nearest(q).1, i);
                }
            }

            #[test]
            fn chamfer_symmetric_and_nonnegative(a in cloud(), b in cloud()) {
                let ab = chamfer_l2(&a, &b).unwrap();
                let ba = chamfer_l2(&b, &a).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
                prop_assert_eq!(chamfer_l2(&a, &a).unwrap(), 0.0);
            }
        }
    }
}
