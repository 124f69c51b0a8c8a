//! Reconstruction, normal and upsampling metrics.

mod bvh;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{KdTree, PointCloud, TriangleMesh, Vec3};
use crate::parallel;
use crate::{Error, Result};

pub use bvh::{closest_point_on_triangle, TriangleBvh};

/// Factor applied to Chamfer-L2 in reports.
pub const CD_L2_REPORT_SCALE: f64 = 1e4;

/// Area-weighted uniform samples on `mesh`, each carrying its face normal.
pub fn sample_mesh(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<PointCloud> {
    if mesh.is_empty() {
        return Err(Error::EmptyInput("cannot sample an empty mesh".into()));
    }
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "mesh has total area {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let r = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= r)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(t);
        let (u, v): (f64, f64) = (rng.random(), rng.random());
        let su = u.sqrt();
        points.push(a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v));
        normals.push(
            (b - a)
                .cross(c - a)
                .normalized(0.0)
                .expect("sampled triangles have positive area"),
        );
    }
    PointCloud::with_normals(points, normals)
}

fn nonempty(name: &str, pts: &[Vec3]) -> Result<()> {
    if pts.is_empty() {
        Err(Error::EmptyInput(format!("{name} has no points")))
    } else {
        Ok(())
    }
}

/// Distance from every point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &[Vec3], to: &KdTree) -> Vec<f64> {
    parallel::map_chunks(from, 0, |c| c.iter().map(|&p| to.nearest(p).1.sqrt()).collect())
}

fn directed(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    nearest_distances(from, &KdTree::build(to))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Chamfer-L1: mean unsquared nearest distance, averaged over both
/// directions.
pub fn cd_l1(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    Ok(0.5 * (mean(&directed(a, b)) + mean(&directed(b, a))))
}

/// Chamfer-L2: mean squared nearest distance, averaged over both
/// directions. Unscaled; reports multiply by [`CD_L2_REPORT_SCALE`].
pub fn cd_l2(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    let sq = |v: Vec<f64>| v.into_iter().map(|d| d * d).collect::<Vec<_>>();
    Ok(0.5 * (mean(&sq(directed(a, b))) + mean(&sq(directed(b, a)))))
}

/// F-score ×100 at distance `tau`.
pub fn fscore(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    nonempty("prediction", pred)?;
    nonempty("ground truth", gt)?;
    Ok(fscore_from(&directed(pred, gt), &directed(gt, pred), tau))
}

fn fscore_from(pred_to_gt: &[f64], gt_to_pred: &[f64], tau: f64) -> f64 {
    let frac = |d: &[f64]| d.iter().filter(|&&x| x <= tau).count() as f64 / d.len() as f64;
    let (p, r) = (frac(pred_to_gt), frac(gt_to_pred));
    if p + r == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * p * r / (p + r)
    }
}

/// Mean absolute cosine between each normal and the normal of its nearest
/// neighbour in the other set, averaged over both directions, ×100.
pub fn normal_consistency(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    let (np, ng) = match (pred.normals(), gt.normals()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::MissingData(
                "normal consistency needs normals on both sets".into(),
            ))
        }
    };
    let side = |from: &PointCloud, nf: &[Vec3], to: &PointCloud, nt: &[Vec3]| -> f64 {
        let cos: Vec<f64> = from
            .points()
            .iter()
            .zip(nf)
            .map(|(&p, &n)| {
                let (j, _) = to.index().nearest(p);
                abs_cos(n, nt[j])
            })
            .collect();
        mean(&cos)
    };
    Ok(100.0 * 0.5 * (side(pred, np, gt, ng) + side(gt, ng, pred, np)))
}

fn abs_cos(a: Vec3, b: Vec3) -> f64 {
    let den = a.norm() * b.norm();
    if den == 0.0 {
        0.0
    } else {
        (a.dot(b) / den).abs().min(1.0)
    }
}

/// Unoriented angle between two directions in degrees, in `[0, 90]`.
pub fn unoriented_angle_deg(a: Vec3, b: Vec3) -> f64 {
    abs_cos(a, b).acos().to_degrees()
}

/// Root-mean-square of index-aligned unoriented angles, in degrees.
pub fn rmse_unoriented(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted normals against {} reference normals",
            pred.len(),
            gt.len()
        )));
    }
    nonempty("normals", pred)?;
    let sq: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(&a, &b)| unoriented_angle_deg(a, b).powi(2))
        .collect();
    Ok(mean(&sq).sqrt())
}

/// Mean exact point-to-surface distance from `points` to `mesh`.
pub fn p2f(points: &[Vec3], mesh: &TriangleMesh) -> Result<f64> {
    nonempty("points", points)?;
    if mesh.is_empty() {
        return Err(Error::EmptyInput("reference mesh has no triangles".into()));
    }
    let bvh = TriangleBvh::build(mesh);
    let d = parallel::map_chunks(points, 0, |c| {
        c.iter().map(|&p| bvh.distance(p).expect("non-empty mesh")).collect()
    });
    Ok(mean(&d))
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    let max = |v: Vec<f64>| v.into_iter().fold(0.0f64, f64::max);
    Ok(max(directed(a, b)).max(max(directed(b, a))))
}

/// Metrics for one prediction; absent entries were not computable from the
/// inputs given.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub cd_l1: Option<f64>,
    /// Unscaled mean squared distance.
    pub cd_l2: Option<f64>,
    pub fscore_at: Vec<(f64, f64)>,
    pub normal_consistency: Option<f64>,
    pub rmse_deg: Option<f64>,
    pub p2f: Option<f64>,
    pub hausdorff: Option<f64>,
}

impl EvalReport {
    /// Compare two point sets: Chamfer, F-score per threshold, Hausdorff and,
    /// when both carry normals, normal consistency.
    pub fn compare(pred: &PointCloud, gt: &PointCloud, thresholds: &[f64]) -> Result<EvalReport> {
        let ab = directed(pred.points(), gt.points());
        let ba = directed(gt.points(), pred.points());
        let sq = |v: &[f64]| v.iter().map(|d| d * d).collect::<Vec<_>>();
        let normal_consistency = match (pred.normals(), gt.normals()) {
            (Some(_), Some(_)) => Some(normal_consistency(pred, gt)?),
            _ => None,
        };
        Ok(EvalReport {
            cd_l1: Some(0.5 * (mean(&ab) + mean(&ba))),
            cd_l2: Some(0.5 * (mean(&sq(&ab)) + mean(&sq(&ba)))),
            fscore_at: thresholds
                .iter()
                .map(|&t| (t, fscore_from(&ab, &ba, t)))
                .collect(),
            normal_consistency,
            rmse_deg: None,
            p2f: None,
            hausdorff: Some(
                ab.iter()
                    .chain(&ba)
                    .fold(0.0f64, |m, &d| m.max(d)),
            ),
        })
    }

    fn rows(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("cd_l1", self.cd_l1);
        push("cd_l2_x1e4", self.cd_l2.map(|v| v * CD_L2_REPORT_SCALE));
        push("normal_consistency", self.normal_consistency);
        push("rmse_deg", self.rmse_deg);
        push("p2f", self.p2f);
        push("hausdorff", self.hausdorff);
        for &(t, f) in &self.fscore_at {
            out.push((format!("fscore@{t}"), f));
        }
        out
    }

    const CONVENTIONS: &'static str = "\
# cd_l1: mean nearest distance, averaged over both directions
# cd_l2_x1e4: mean squared nearest distance, averaged over both directions, times 1e4
# fscore@t and normal_consistency are percentages; rmse_deg folds angles to [0, 90]
";

    /// Tab-separated `metric\tvalue` table with a convention header.
    pub fn to_table(&self) -> String {
        let mut s = String::from(Self::CONVENTIONS);
        s.push_str("metric\tvalue\n");
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k}\t{v}");
        }
        s
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut s = String::from(Self::CONVENTIONS);
        for (k, v) in self.rows() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
