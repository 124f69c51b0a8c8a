//! Marching-cubes case table, generated from the face rules instead of
//! being typed in.
//!
//! Corner `c` of a cell sits at offset `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
//! On every face, sign-changing edges are joined pairwise; on a face whose
//! diagonals carry equal signs the two corners of the diagonal through the
//! face's lowest corner are cut off. The rule depends only on geometry, so
//! a mask and its complement triangulate identically and neighbouring
//! cells agree on shared faces.

use std::sync::OnceLock;

/// The 12 cell edges as corner pairs, lower corner first.
pub const EDGES: [(u8, u8); 12] = build_edges();

const fn build_edges() -> [(u8, u8); 12] {
    let mut out = [(0u8, 0u8); 12];
    let mut n = 0;
    let mut axis = 0;
    while axis < 3 {
        let mut a = 0u8;
        while a < 8 {
            if a & (1 << axis) == 0 {
                out[n] = (a, a | (1 << axis));
                n += 1;
            }
            a += 1;
        }
        axis += 1;
    }
    out
}

/// Axis along which an edge runs.
pub fn edge_axis(e: usize) -> usize {
    let (a, b) = EDGES[e];
    (a ^ b).trailing_zeros() as usize
}

fn edge_between(a: u8, b: u8) -> usize {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    EDGES
        .iter()
        .position(|&e| e == (lo, hi))
        .expect("corners are adjacent")
}

/// Corners of each face in cyclic order, lowest corner first.
fn faces() -> Vec<[u8; 4]> {
    let mut out = Vec::with_capacity(6);
    for axis in 0..3u8 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for v in 0..2u8 {
            let base = v << axis;
            out.push([base, base | 1 << u, base | 1 << u | 1 << w, base | 1 << w]);
        }
    }
    out
}

/// Closed loops of edge ids for a corner mask (bit `c` set when corner
/// `c` carries the negative pseudo-sign).
fn polygons(mask: u8) -> Vec<Vec<u8>> {
    let neg = |c: u8| mask >> c & 1 == 1;
    let mut segments: Vec<(usize, usize)> = Vec::new();
    for f in faces() {
        let cut: Vec<bool> = (0..4).map(|i| neg(f[i]) != neg(f[(i + 1) % 4])).collect();
        let e = |i: usize| edge_between(f[i], f[(i + 1) % 4]);
        match cut.iter().filter(|&&c| c).count() {
            0 => {}
            2 => {
                let ids: Vec<usize> = (0..4).filter(|&i| cut[i]).map(e).collect();
                segments.push((ids[0], ids[1]));
            }
            4 => {
                // Cut off corners f[0] and f[2].
                segments.push((e(3), e(0)));
                segments.push((e(1), e(2)));
            }
            _ => unreachable!("sign changes around a face come in pairs"),
        }
    }
    let mut used = vec![false; segments.len()];
    let mut loops = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let (first, mut cur) = segments[start];
        let mut cycle = vec![first as u8];
        while cur != first {
            cycle.push(cur as u8);
            let next = (0..segments.len())
                .find(|&s| !used[s] && (segments[s].0 == cur || segments[s].1 == cur))
                .expect("every crossing edge is shared by two faces");
            used[next] = true;
            cur = if segments[next].0 == cur {
                segments[next].1
            } else {
                segments[next].0
            };
        }
        loops.push(cycle);
    }
    loops
}

/// Triangles (as edge-id triples) for every corner mask.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        std::array::from_fn(|mask| {
            let mut tris = Vec::new();
            for cycle in polygons(mask as u8) {
                for i in 1..cycle.len() - 1 {
                    tris.push([cycle[0], cycle[i], cycle[i + 1]]);
                }
            }
            tris
        })
    })
}
