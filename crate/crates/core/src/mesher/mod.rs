//! Open-surface extraction from an unsigned field: corners of each cell
//! get pseudo-signs from pairwise gradient agreement, then a marching-cubes
//! table triangulates the sign changes.

mod table;

use std::collections::HashMap;

use crate::field::DistanceField;
use crate::geometry::{TriangleMesh, Vec3};
use crate::parallel;
use crate::{Error, Result};

pub use table::{case_table, EDGES};

/// Relative side of two lattice corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Same,
    Opposite,
    Ambiguous,
}

/// Compare two gradients: same side when `g_i·g_j > tau`, opposite when
/// below `-tau`, ambiguous otherwise.
pub fn side_classifier(g_i: Vec3, g_j: Vec3, tau: f64) -> Side {
    let d = g_i.dot(g_j);
    if d > tau {
        Side::Same
    } else if d < -tau {
        Side::Opposite
    } else {
        Side::Ambiguous
    }
}

/// Pseudo-signs of the 8 cell corners. Corner 0 is `+1`; every later corner
/// takes the majority vote of its classifications against the corners
/// before it. Ambiguous pairs abstain and ties fall back to the anchor.
pub fn pseudo_signs(grads: &[Vec3; 8], tau: f64) -> [i8; 8] {
    let mut s = [1i8; 8];
    for c in 1..8 {
        let mut votes = 0i32;
        for j in 0..c {
            votes += match side_classifier(grads[c], grads[j], tau) {
                Side::Same => s[j] as i32,
                Side::Opposite => -(s[j] as i32),
                Side::Ambiguous => 0,
            };
        }
        s[c] = if votes < 0 { -1 } else { 1 };
    }
    s
}

/// Extraction settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Lattice points per axis.
    pub resolution: usize,
    pub bounds: (Vec3, Vec3),
    /// Cells whose smallest corner distance is not below this are skipped.
    /// `None` uses twice the cell diagonal.
    pub activation_threshold: Option<f64>,
    pub tau_amb: f64,
    /// Worker threads for field evaluation; 0 uses every core.
    pub threads: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions {
            resolution: 128,
            bounds: (Vec3::splat(-0.55), Vec3::splat(0.55)),
            activation_threshold: None,
            tau_amb: 0.0,
            threads: 0,
        }
    }
}

impl MeshOptions {
    pub fn new(resolution: usize) -> Self {
        MeshOptions {
            resolution,
            ..MeshOptions::default()
        }
    }

    pub fn with_bounds(mut self, lo: Vec3, hi: Vec3) -> Self {
        self.bounds = (lo, hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "lattice resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        let (lo, hi) = self.bounds;
        if !(lo.is_finite() && hi.is_finite()) || (0..3).any(|a| lo[a] >= hi[a]) {
            return Err(Error::InvalidArgument(format!(
                "lattice bounds {lo} .. {hi} are empty"
            )));
        }
        if let Some(t) = self.activation_threshold {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "activation threshold must be positive, got {t}"
                )));
            }
        }
        if !(self.tau_amb.is_finite() && self.tau_amb >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau_amb must be non-negative, got {}",
                self.tau_amb
            )));
        }
        Ok(())
    }
}

/// Distances on every lattice point; gradients only where some active cell
/// needs them.
#[derive(Debug, Clone)]
pub struct LatticeGrid {
    resolution: usize,
    lo: Vec3,
    hi: Vec3,
    distances: Vec<f64>,
    gradients: Vec<Option<Vec3>>,
}

impl LatticeGrid {
    /// Sample `field` over the lattice described by `opts`.
    pub fn evaluate<F: DistanceField + ?Sized>(field: &F, opts: &MeshOptions) -> Result<LatticeGrid> {
        opts.validate()?;
        let r = opts.resolution;
        let (lo, hi) = opts.bounds;
        let mut grid = LatticeGrid {
            resolution: r,
            lo,
            hi,
            distances: Vec::new(),
            gradients: vec![None; r * r * r],
        };
        let points: Vec<Vec3> = (0..r * r * r).map(|n| grid.point_at(n)).collect();
        grid.distances = parallel::map_chunks(&points, opts.threads, |c| field.distances(c));
        grid.check_distances()?;

        let threshold = opts
            .activation_threshold
            .unwrap_or(2.0 * grid.cell_diagonal());
        let mut needed = vec![false; r * r * r];
        for cell in grid.active_cells(threshold) {
            for c in 0..8 {
                needed[grid.corner_index(cell, c)] = true;
            }
        }
        let wanted: Vec<usize> = (0..needed.len()).filter(|&n| needed[n]).collect();
        let qs: Vec<Vec3> = wanted.iter().map(|&n| points[n]).collect();
        let grads = parallel::map_chunks(&qs, opts.threads, |c| {
            field
                .distances_and_gradients(c)
                .into_iter()
                .map(|(_, g)| g)
                .collect()
        });
        for (n, g) in wanted.into_iter().zip(grads) {
            grid.gradients[n] = Some(g);
        }
        Ok(grid)
    }

    /// Build a lattice from precomputed samples, indexed `i + r(j + r k)`.
    pub fn from_samples(
        resolution: usize,
        bounds: (Vec3, Vec3),
        distances: Vec<f64>,
        gradients: Vec<Option<Vec3>>,
    ) -> Result<LatticeGrid> {
        MeshOptions::new(resolution).with_bounds(bounds.0, bounds.1).validate()?;
        let n = resolution.pow(3);
        if distances.len() != n || gradients.len() != n {
            return Err(Error::Shape(format!(
                "lattice of resolution {resolution} needs {n} samples, got {} distances and {} gradients",
                distances.len(),
                gradients.len()
            )));
        }
        let grid = LatticeGrid {
            resolution,
            lo: bounds.0,
            hi: bounds.1,
            distances,
            gradients,
        };
        grid.check_distances()?;
        Ok(grid)
    }

    fn check_distances(&self) -> Result<()> {
        match self
            .distances
            .iter()
            .position(|d| !(d.is_finite() && *d >= 0.0))
        {
            Some(n) => Err(Error::Numeric {
                node: n,
                op: "lattice",
                message: format!(
                    "field value {} at {} is not a finite distance",
                    self.distances[n],
                    self.point_at(n)
                ),
            }),
            None => Ok(()),
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.lo, self.hi)
    }

    pub fn spacing(&self) -> Vec3 {
        (self.hi - self.lo) / (self.resolution - 1) as f64
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn gradients(&self) -> &[Option<Vec3>] {
        &self.gradients
    }

    /// Flip every cached gradient.
    pub fn negate_gradients(&mut self) {
        for g in self.gradients.iter_mut().flatten() {
            *g = -*g;
        }
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.spacing();
        // Pin the far face exactly to the upper bound.
        let coord = |n: usize, a: usize| {
            if n + 1 == self.resolution {
                self.hi[a]
            } else {
                self.lo[a] + n as f64 * h[a]
            }
        };
        Vec3::new(coord(i, 0), coord(j, 1), coord(k, 2))
    }

    fn point_at(&self, n: usize) -> Vec3 {
        let r = self.resolution;
        self.point(n % r, n / r % r, n / (r * r))
    }

    fn corner_index(&self, cell: usize, c: u8) -> usize {
        let m = self.resolution - 1;
        let (i, j, k) = (cell % m, cell / m % m, cell / (m * m));
        let r = self.resolution;
        (i + (c & 1) as usize) + r * ((j + (c >> 1 & 1) as usize) + r * (k + (c >> 2 & 1) as usize))
    }

    /// Bounding box of a cell.
    pub fn cell_bounds(&self, cell: usize) -> (Vec3, Vec3) {
        (
            self.point_at(self.corner_index(cell, 0)),
            self.point_at(self.corner_index(cell, 7)),
        )
    }

    /// Cells, in index order, whose smallest corner distance is below
    /// `threshold`.
    pub fn active_cells(&self, threshold: f64) -> Vec<usize> {
        let m = self.resolution - 1;
        (0..m * m * m)
            .filter(|&cell| (0..8).any(|c| self.distances[self.corner_index(cell, c)] < threshold))
            .collect()
    }

    /// Triangulate every active cell and merge vertices shared between
    /// cells. Cells whose corners lack gradients are skipped.
    pub fn triangulate(&self, threshold: f64, tau: f64) -> Extraction {
        let active = self.active_cells(threshold);
        let table = case_table();
        let mut vertex_of: HashMap<(usize, usize), usize> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        let mut emitting = 0;
        for &cell in &active {
            let mut grads = [Vec3::default(); 8];
            let mut complete = true;
            for c in 0..8u8 {
                match self.gradients[self.corner_index(cell, c)] {
                    Some(g) if g.is_finite() => grads[c as usize] = g,
                    Some(_) => {}
                    None => complete = false,
                }
            }
            if !complete {
                continue;
            }
            let signs = pseudo_signs(&grads, tau);
            let mask = (0..8).fold(0usize, |m, c| m | ((signs[c] < 0) as usize) << c);
            let tris = &table[mask];
            if tris.is_empty() {
                continue;
            }
            emitting += 1;
            for tri in tris {
                let ids = tri.map(|e| {
                    let (a, b) = EDGES[e as usize];
                    let (ga, gb) = (self.corner_index(cell, a), self.corner_index(cell, b));
                    *vertex_of.entry((ga, table::edge_axis(e as usize))).or_insert_with(|| {
                        vertices.push(self.edge_vertex(ga, gb));
                        vertices.len() - 1
                    })
                });
                triangles.push(ids);
            }
        }
        Extraction {
            mesh: TriangleMesh {
                vertices,
                triangles,
            },
            active_cells: active.len(),
            emitting_cells: emitting,
            threshold,
        }
    }

    fn edge_vertex(&self, a: usize, b: usize) -> Vec3 {
        let (da, db) = (self.distances[a], self.distances[b]);
        let t = if da + db < 1e-12 { 0.5 } else { da / (da + db) };
        self.point_at(a).lerp(self.point_at(b), t)
    }
}

/// A triangulated lattice plus what it took to get there.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub mesh: TriangleMesh,
    pub active_cells: usize,
    pub emitting_cells: usize,
    pub threshold: f64,
}

/// Extract a mesh with the given options. No active cell gives an empty
/// mesh rather than an error.
pub fn extract<F: DistanceField + ?Sized>(field: &F, opts: &MeshOptions) -> Result<Extraction> {
    let grid = LatticeGrid::evaluate(field, opts)?;
    let threshold = opts
        .activation_threshold
        .unwrap_or(2.0 * grid.cell_diagonal());
    Ok(grid.triangulate(threshold, opts.tau_amb))
}

/// Extract over the default bounds with the given resolution and
/// activation threshold.
pub fn extract_mesh(
    field: &impl DistanceField,
    resolution: usize,
    activation_threshold: f64,
) -> Result<TriangleMesh> {
    let opts = MeshOptions {
        activation_threshold: Some(activation_threshold),
        ..MeshOptions::new(resolution)
    };
    Ok(extract(field, &opts)?.mesh)
}
