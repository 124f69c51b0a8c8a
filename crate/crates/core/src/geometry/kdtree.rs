use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree over a point set. Queries return the original point
/// index; exact distance ties resolve to the lowest index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Candidate {
    fn beats(&self, other: &Candidate) -> bool {
        self.d2 < other.d2 || (self.d2 == other.d2 && self.id < other.id)
    }
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.d2.total_cmp(&o.d2).then(self.id.cmp(&o.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> KdTree {
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build_node(points, &mut ids, 0, &mut nodes);
        }
        let permuted = ids.iter().map(|&i| points[i]).collect();
        KdTree {
            points: permuted,
            ids,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(index, squared distance)` of the point nearest to `q`.
    ///
    /// Panics on an empty tree.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        assert!(!self.points.is_empty(), "nearest() on an empty KdTree");
        let mut best = Candidate {
            d2: f64::INFINITY,
            id: usize::MAX,
        };
        self.nearest_in(0, q, &mut best);
        (best.id, best.d2)
    }

    fn nearest_in(&self, node: usize, q: Vec3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for k in start..end {
                    let c = Candidate {
                        d2: self.points[k].distance_squared(q),
                        id: self.ids[k],
                    };
                    if c.beats(best) {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                // `<=` keeps equal-distance candidates with a lower index reachable.
                if diff * diff <= best.d2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points to `q` as `(index, squared distance)`,
    /// ascending by distance then index.
    pub fn k_nearest(&self, q: Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.k_nearest_in(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.id, c.d2)).collect()
    }

    fn k_nearest_in(&self, node: usize, q: Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let c = Candidate {
                        d2: self.points[i].distance_squared(q),
                        id: self.ids[i],
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c.beats(heap.peek().unwrap()) {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.k_nearest_in(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.k_nearest_in(far, q, k, heap);
                }
            }
        }
    }
}

fn build_node(points: &[Vec3], ids: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let slot = nodes.len();
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + ids.len(),
        });
        return slot;
    }
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for &i in ids.iter() {
        lo = lo.min(points[i]);
        hi = hi.max(points[i]);
    }
    let ext = hi - lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[ids[mid]][axis];
    // Points left of `mid` are <= value, points from `mid` on are >= value.
    nodes.push(Node::Split {
        axis,
        value,
        left: 0,
        right: 0,
    });
    let (l, r) = ids.split_at_mut(mid);
    let left = build_node(points, l, offset, nodes);
    let right = build_node(points, r, offset + mid, nodes);
    if let Node::Split {
        left: ref mut ls,
        right: ref mut rs,
        ..
    } = nodes[slot]
    {
        *ls = left;
        *rs = right;
    }
    slot
}
