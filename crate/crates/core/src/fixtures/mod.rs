//! Analytic shapes with exact unsigned distances, used as test oracles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffengine::{Dual, FieldNodes, FieldRecorder, Graph, Matrix, NodeId};
use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::geometry::{PointCloud, Vec3};

const LOCUS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticShape {
    /// The plane `z = 0`. Distances are to the infinite plane; samples cover
    /// the square `|x|, |y| ≤ half_extent`.
    Plane { half_extent: f64 },
    Sphere { radius: f64 },
    /// The closed upper cap `z ≥ 0` of a sphere centred at the origin.
    HalfSphere { radius: f64 },
    /// Planes `z = ±gap/2`, sampled on squares like [`AnalyticShape::Plane`].
    TwoPlanes { gap: f64, half_extent: f64 },
    /// Torus around the z axis.
    Torus { major: f64, minor: f64 },
}

/// Closed-form distance and gradient at one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactUdf {
    pub distance: f64,
    /// Unit vector away from the closest surface point. Zero on the surface
    /// and on the cut locus.
    pub gradient: Vec3,
    pub on_cut_locus: bool,
}

impl AnalyticShape {
    pub const NAMES: [&'static str; 5] = ["plane", "sphere", "half-sphere", "two-planes", "torus"];

    pub fn plane() -> Self {
        AnalyticShape::Plane { half_extent: 0.4 }
    }

    pub fn sphere() -> Self {
        AnalyticShape::Sphere { radius: 0.4 }
    }

    pub fn half_sphere() -> Self {
        AnalyticShape::HalfSphere { radius: 0.4 }
    }

    pub fn two_planes() -> Self {
        AnalyticShape::TwoPlanes {
            gap: 0.4,
            half_extent: 0.4,
        }
    }

    pub fn torus() -> Self {
        AnalyticShape::Torus {
            major: 0.3,
            minor: 0.1,
        }
    }

    pub fn all() -> [AnalyticShape; 5] {
        [
            Self::plane(),
            Self::sphere(),
            Self::half_sphere(),
            Self::two_planes(),
            Self::torus(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticShape::Plane { .. } => "plane",
            AnalyticShape::Sphere { .. } => "sphere",
            AnalyticShape::HalfSphere { .. } => "half-sphere",
            AnalyticShape::TwoPlanes { .. } => "two-planes",
            AnalyticShape::Torus { .. } => "torus",
        }
    }

    /// Closest surface point; `None` when `q` is on the cut locus.
    pub fn closest_point(&self, q: Vec3) -> Option<Vec3> {
        match *self {
            AnalyticShape::Plane { .. } => Some(Vec3::new(q.x, q.y, 0.0)),
            AnalyticShape::Sphere { radius } => q.normalized(LOCUS_EPS).map(|u| u * radius),
            AnalyticShape::HalfSphere { radius } => {
                if q.z >= 0.0 {
                    q.normalized(LOCUS_EPS).map(|u| u * radius)
                } else {
                    Vec3::new(q.x, q.y, 0.0).normalized(LOCUS_EPS).map(|u| u * radius)
                }
            }
            AnalyticShape::TwoPlanes { gap, .. } => {
                if q.z.abs() < LOCUS_EPS {
                    None
                } else {
                    Some(Vec3::new(q.x, q.y, q.z.signum() * gap / 2.0))
                }
            }
            AnalyticShape::Torus { major, minor } => {
                let ring = Vec3::new(q.x, q.y, 0.0).normalized(LOCUS_EPS)? * major;
                let off = (q - ring).normalized(LOCUS_EPS)?;
                Some(ring + off * minor)
            }
        }
    }

    /// Unsigned distance, defined everywhere.
    pub fn distance(&self, q: Vec3) -> f64 {
        match *self {
            AnalyticShape::Plane { .. } => q.z.abs(),
            AnalyticShape::Sphere { radius } => (q.norm() - radius).abs(),
            AnalyticShape::HalfSphere { radius } => {
                if q.z >= 0.0 {
                    (q.norm() - radius).abs()
                } else {
                    let rho = q.x.hypot(q.y);
                    (rho - radius).hypot(q.z)
                }
            }
            AnalyticShape::TwoPlanes { gap, .. } => {
                (q.z - gap / 2.0).abs().min((q.z + gap / 2.0).abs())
            }
            AnalyticShape::Torus { major, minor } => {
                let rho = q.x.hypot(q.y);
                ((rho - major).hypot(q.z) - minor).abs()
            }
        }
    }

    pub fn exact_udf(&self, q: Vec3) -> ExactUdf {
        let distance = self.distance(q);
        match self.closest_point(q) {
            None => ExactUdf {
                distance,
                gradient: Vec3::ZERO,
                on_cut_locus: true,
            },
            Some(c) => ExactUdf {
                distance,
                gradient: (q - c).normalized(LOCUS_EPS).unwrap_or(Vec3::ZERO),
                on_cut_locus: false,
            },
        }
    }

    /// Outward unit normal at a surface point.
    fn surface_normal(&self, p: Vec3) -> Vec3 {
        match *self {
            AnalyticShape::Plane { .. } => Vec3::new(0.0, 0.0, 1.0),
            AnalyticShape::TwoPlanes { .. } => Vec3::new(0.0, 0.0, p.z.signum()),
            AnalyticShape::Sphere { .. } | AnalyticShape::HalfSphere { .. } => {
                p.normalized(0.0).unwrap_or(Vec3::new(0.0, 0.0, 1.0))
            }
            AnalyticShape::Torus { major, .. } => {
                let ring = Vec3::new(p.x, p.y, 0.0).normalized(0.0).unwrap_or(Vec3::ZERO) * major;
                (p - ring).normalized(0.0).unwrap_or(Vec3::ZERO)
            }
        }
    }

    /// Total surface area of the sampled region.
    pub fn area(&self) -> f64 {
        match *self {
            AnalyticShape::Plane { half_extent } => 4.0 * half_extent * half_extent,
            AnalyticShape::Sphere { radius } => 4.0 * PI * radius * radius,
            AnalyticShape::HalfSphere { radius } => 2.0 * PI * radius * radius,
            AnalyticShape::TwoPlanes { half_extent, .. } => 8.0 * half_extent * half_extent,
            AnalyticShape::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            AnalyticShape::Plane { half_extent: h } => {
                Vec3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), 0.0)
            }
            AnalyticShape::Sphere { radius } => unit_sphere(rng) * radius,
            AnalyticShape::HalfSphere { radius } => {
                let u = unit_sphere(rng);
                Vec3::new(u.x, u.y, u.z.abs()) * radius
            }
            AnalyticShape::TwoPlanes { gap, half_extent: h } => {
                let z = if rng.random_bool(0.5) { gap / 2.0 } else { -gap / 2.0 };
                Vec3::new(rng.random_range(-h..=h), rng.random_range(-h..=h), z)
            }
            AnalyticShape::Torus { major, minor } => loop {
                // The area element is proportional to major + minor·cos v.
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                let accept = rng.random_range(0.0..1.0) * (major + minor);
                if accept <= major + minor * v.cos() {
                    let rr = major + minor * v.cos();
                    break Vec3::new(rr * u.cos(), rr * u.sin(), minor * v.sin());
                }
            },
        }
    }

    /// `count` area-uniform surface samples with exact normals.
    pub fn sample_surface(&self, count: usize, seed: u64) -> Result<PointCloud> {
        self.sample_surface_noisy(count, seed, 0.0)
    }

    /// As [`AnalyticShape::sample_surface`], with every sample perturbed by
    /// isotropic Gaussian noise of standard deviation `noise_std` per axis.
    pub fn sample_surface_noisy(&self, count: usize, seed: u64, noise_std: f64) -> Result<PointCloud> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument("noise must be finite and non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        for _ in 0..count {
            let p = self.sample_point(&mut rng);
            normals.push(self.surface_normal(p));
            points.push(p);
        }
        if noise_std > 0.0 {
            let n = Normal::new(0.0, noise_std).expect("valid std");
            for p in &mut points {
                *p += Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
            }
        }
        PointCloud::with_normals(points, normals)
    }

    fn record_dual(&self, g: &mut Graph, x: Dual) -> Dual {
        let rows = g.value(x.value).rows();
        match *self {
            AnalyticShape::Plane { .. } => {
                let z = select(g, x, &[2]);
                g.dual_abs(z)
            }
            AnalyticShape::Sphere { radius } => {
                let n = g.dual_row_norm(x);
                let s = g.dual_add_scalar(n, -radius);
                g.dual_abs(s)
            }
            AnalyticShape::HalfSphere { radius } => {
                let zs: Vec<f64> = (0..rows).map(|i| g.value(x.value).get(i, 2)).collect();
                let upper_sel = g.constant(Matrix::from_fn(rows, 1, |i, _| if zs[i] >= 0.0 { 1.0 } else { -1.0 }));
                let lower_sel = g.constant(Matrix::from_fn(rows, 1, |i, _| if zs[i] >= 0.0 { -1.0 } else { 1.0 }));

                let n = g.dual_row_norm(x);
                let s = g.dual_add_scalar(n, -radius);
                let upper = g.dual_abs(s);

                let xy = select(g, x, &[0, 1]);
                let rho = g.dual_row_norm(xy);
                let rho_off = g.dual_add_scalar(rho, -radius);
                let z = select(g, x, &[2]);
                let pair = g.dual_concat(rho_off, z);
                let lower = g.dual_row_norm(pair);

                let a = g.dual_mask_positive(upper, upper_sel);
                let b = g.dual_mask_positive(lower, lower_sel);
                g.dual_add(a, b)
            }
            AnalyticShape::TwoPlanes { gap, .. } => {
                let z = select(g, x, &[2]);
                let up = g.dual_add_scalar(z, -gap / 2.0);
                let u = g.dual_abs(up);
                let down = g.dual_add_scalar(z, gap / 2.0);
                let v = g.dual_abs(down);
                // min(u, v) = (u + v - |u - v|) / 2
                let sum = g.dual_add(u, v);
                let diff = g.dual_sub(u, v);
                let adiff = g.dual_abs(diff);
                let m = g.dual_sub(sum, adiff);
                g.dual_scale(m, 0.5)
            }
            AnalyticShape::Torus { major, minor } => {
                let xy = select(g, x, &[0, 1]);
                let rho = g.dual_row_norm(xy);
                let rho_off = g.dual_add_scalar(rho, -major);
                let z = select(g, x, &[2]);
                let pair = g.dual_concat(rho_off, z);
                let tube = g.dual_row_norm(pair);
                let s = g.dual_add_scalar(tube, -minor);
                g.dual_abs(s)
            }
        }
    }
}

/// Keep the listed input columns.
fn select(g: &mut Graph, x: Dual, cols: &[usize]) -> Dual {
    let s = Matrix::from_fn(cols.len(), 3, |r, c| if cols[r] == c { 1.0 } else { 0.0 });
    g.dual_linear_const(x, s)
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

impl FieldRecorder for AnalyticShape {
    fn record(&self, g: &mut Graph, x: NodeId, with_gradient: bool) -> FieldNodes {
        let d = g.dual_input(x, with_gradient);
        let out = self.record_dual(g, d);
        FieldNodes {
            value: out.value,
            gradient: with_gradient.then(|| g.gradient_of(out)),
        }
    }
}

impl DistanceField for AnalyticShape {
    fn distances(&self, qs: &[Vec3]) -> Vec<f64> {
        qs.iter().map(|&q| self.distance(q)).collect()
    }

    fn distances_and_gradients(&self, qs: &[Vec3]) -> Vec<(f64, Vec3)> {
        qs.iter()
            .map(|&q| {
                let e = self.exact_udf(q);
                (e.distance, e.gradient)
            })
            .collect()
    }
}

impl fmt::Display for AnalyticShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnalyticShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plane" => Ok(Self::plane()),
            "sphere" => Ok(Self::sphere()),
            "half-sphere" => Ok(Self::half_sphere()),
            "two-planes" => Ok(Self::two_planes()),
            "torus" => Ok(Self::torus()),
            other => Err(Error::InvalidArgument(format!(
                "unknown shape '{other}', expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}
