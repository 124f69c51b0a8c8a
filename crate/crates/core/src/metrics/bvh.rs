//! Exact point-to-triangle distance and a bounding-volume hierarchy for
//! nearest-triangle queries.

use crate::geometry::{TriangleMesh, Vec3};

/// Closest point to `p` on triangle `(a, b, c)`, by Voronoi-region tests.
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = va + vb + vc;
    if denom.abs() < f64::MIN_POSITIVE {
        // Collinear corners: fall back to the closest edge point.
        return [(a, b), (b, c), (c, a)]
            .into_iter()
            .map(|(u, v)| closest_point_on_segment(p, u, v))
            .min_by(|x, y| x.distance_squared(p).total_cmp(&y.distance_squared(p)))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    a + ab * v + ac * w
}

fn closest_point_on_segment(p: Vec3, a: Vec3, b: Vec3) -> Vec3 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return a;
    }
    a + d * ((p - a).dot(d) / len2).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn distance_squared(&self, p: Vec3) -> f64 {
        let mut d = 0.0;
        for a in 0..3 {
            let v = if p[a] < self.lo[a] {
                self.lo[a] - p[a]
            } else if p[a] > self.hi[a] {
                p[a] - self.hi[a]
            } else {
                0.0
            };
            d += v * v;
        }
        d
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

/// Triangle hierarchy over a fixed mesh.
#[derive(Debug, Clone)]
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl TriangleBvh {
    pub fn build(mesh: &TriangleMesh) -> TriangleBvh {
        let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
        let mut bvh = TriangleBvh {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            bvh.split(0, bvh.tris.len());
        }
        bvh
    }

    fn bounds_of(&self, start: usize, end: usize) -> Aabb {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &t in &self.order[start..end] {
            for v in self.tris[t] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Aabb { lo, hi }
    }

    fn split(&mut self, start: usize, end: usize) -> usize {
        let bounds = self.bounds_of(start, end);
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let ext = bounds.hi - bounds.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let tris = &self.tris;
        let centroid = |t: usize| (tris[t][0][axis] + tris[t][1][axis] + tris[t][2][axis]) / 3.0;
        let mid = (start + end) / 2;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&x, &y| centroid(x).total_cmp(&centroid(y)).then(x.cmp(&y)));
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.split(start, mid);
        let right = self.split(mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Closest surface point and its triangle index, or `None` for an
    /// empty mesh.
    pub fn closest(&self, p: Vec3) -> Option<(Vec3, usize)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(Vec3, usize, f64)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let bound = best.map_or(f64::INFINITY, |b| b.2);
            if self.nodes[n].bounds().distance_squared(p) > bound {
                continue;
            }
            match self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &t in &self.order[start..end] {
                        let [a, b, c] = self.tris[t];
                        let q = closest_point_on_triangle(p, a, b, c);
                        let d = q.distance_squared(p);
                        let better = match best {
                            None => true,
                            Some((_, bt, bd)) => d < bd || (d == bd && t < bt),
                        };
                        if better {
                            best = Some((q, t, d));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let (dl, dr) = (
                        self.nodes[left].bounds().distance_squared(p),
                        self.nodes[right].bounds().distance_squared(p),
                    );
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best.map(|(q, t, _)| (q, t))
    }

    pub fn distance(&self, p: Vec3) -> Option<f64> {
        self.closest(p).map(|(q, _)| q.distance(p))
    }
}
