//! Pull operation, Chamfer, projection, surface-distance and orthogonality
//! losses, and their weighted sum.

use std::collections::BTreeSet;

use crate::diffengine::{FieldRecorder, Graph, Matrix, NodeId};
use crate::error::{Error, Result};
use crate::field::{matrix_to_points, points_to_matrix, DistanceField};
use crate::geometry::{ChamferNorm, PointCloud, Vec3};
use crate::sampler::QueryBatch;

pub const EPS_GRAD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.002,
            alpha2: 0.1,
            alpha3: 0.01,
            lambda: 10.0,
        }
    }
}

impl LossWeights {
    /// Chamfer only.
    pub fn pull_only() -> Self {
        LossWeights {
            alpha1: 0.0,
            alpha2: 0.0,
            alpha3: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub weights: LossWeights,
    pub eps_grad: f64,
    /// Let derivatives flow through the location of `q̂` when the gradient
    /// is re-evaluated there.
    pub full_chain_projection: bool,
    /// Differentiate through `γ` instead of treating it as a per-step weight.
    pub differentiate_gamma: bool,
    /// `false` replaces `γ` by 1.
    pub adaptive_weighting: bool,
    pub chamfer_norm: ChamferNorm,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            weights: LossWeights::default(),
            eps_grad: EPS_GRAD,
            full_chain_projection: false,
            differentiate_gamma: false,
            adaptive_weighting: true,
            chamfer_norm: ChamferNorm::Unsquared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub cd: f64,
    pub proj: f64,
    pub dist: f64,
    pub orth: f64,
    pub total: f64,
}

/// Queries dropped from individual terms during one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SkipCounts {
    /// `‖∇f(q)‖` below the threshold; dropped from every query term.
    pub degenerate_query: usize,
    /// `‖∇f(q̂)‖` below the threshold; dropped from the projection term.
    pub degenerate_projection: usize,
    /// Query coincides with its nearest cloud point; dropped from the
    /// orthogonality term.
    pub coincident: usize,
}

impl SkipCounts {
    pub fn add(&mut self, o: &SkipCounts) {
        self.degenerate_query += o.degenerate_query;
        self.degenerate_projection += o.degenerate_projection;
        self.coincident += o.coincident;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub cd: NodeId,
    pub proj: NodeId,
    pub dist: NodeId,
    pub orth: NodeId,
    pub total: NodeId,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub nodes: LossNodes,
    pub breakdown: LossBreakdown,
    pub skips: SkipCounts,
}

/// `q̂ = q − f(q)·∇f(q)/‖∇f(q)‖`, or `None` when the gradient is degenerate.
pub fn pull_point(q: Vec3, f: f64, grad: Vec3, eps: f64) -> Option<Vec3> {
    let n = grad.norm();
    if n < eps {
        return None;
    }
    Some(q - grad * (f / n))
}

/// Numeric pull of every query through `field`.
pub fn pull_to_surface(field: &impl DistanceField, qs: &[Vec3]) -> Vec<Option<Vec3>> {
    field
        .distances_and_gradients(qs)
        .into_iter()
        .zip(qs)
        .map(|((f, g), &q)| pull_point(q, f, g, EPS_GRAD))
        .collect()
}

/// `γ = exp(−λ|f|)`
pub fn adaptive_weight(f: f64, lambda: f64) -> f64 {
    (-lambda * f.abs()).exp()
}

/// `1 − |cos∠(a, b)|`, or `None` if either vector is degenerate.
pub fn alignment_term(a: Vec3, b: Vec3, eps: f64) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na < eps || nb < eps {
        return None;
    }
    Some(1.0 - (a.dot(b) / (na * nb)).abs().min(1.0))
}

/// Per-query projection term `γ·(1 − |cos∠(∇f(q), ∇f(q̂))|)`.
pub fn projection_term(grad_q: Vec3, grad_hat: Vec3, f_q: f64, lambda: f64, eps: f64) -> Option<f64> {
    alignment_term(grad_q, grad_hat, eps).map(|t| adaptive_weight(f_q, lambda) * t)
}

/// Per-query orthogonality term with `T = p − q`.
pub fn orthogonality_term(grad_q: Vec3, q: Vec3, p: Vec3, eps: f64) -> Option<f64> {
    alignment_term(grad_q, p - q, eps)
}

/// Recorded state shared by the query terms: rows of the batch whose
/// gradient is usable, their values, gradients and pulled positions.
struct QueryStage {
    valid: Vec<usize>,
    f: NodeId,
    grad: NodeId,
    pulled: NodeId,
    skipped: usize,
}

fn query_stage<R: FieldRecorder>(g: &mut Graph, field: &R, batch: &QueryBatch, eps: f64) -> Result<QueryStage> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("query batch is empty".into()));
    }
    let x = g.constant(points_to_matrix(&batch.queries));
    let nodes = field.record(g, x, true);
    let grad = nodes.gradient.expect("recorder returned no gradient");
    let gv = g.value(grad);
    let valid: Vec<usize> = (0..batch.len())
        .filter(|&i| {
            let r = gv.row(i);
            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() >= eps
        })
        .collect();
    if valid.is_empty() {
        return Err(Error::EmptyInput(format!(
            "all {} queries have a degenerate gradient",
            batch.len()
        )));
    }
    let skipped = batch.len() - valid.len();
    let (f, grad, xv) = if skipped == 0 {
        (nodes.value, grad, x)
    } else {
        let f = g.gather(nodes.value, valid.clone());
        let gr = g.gather(grad, valid.clone());
        let xv = g.gather(x, valid.clone());
        (f, gr, xv)
    };
    let n = g.row_norm(grad);
    let inv = g.recip(n);
    let unit = g.mul_col(grad, inv);
    let step = g.mul_col(unit, f);
    let pulled = g.sub(xv, step);
    Ok(QueryStage {
        valid,
        f,
        grad,
        pulled,
        skipped,
    })
}

fn mean_distance(g: &mut Graph, diff: NodeId, norm: ChamferNorm) -> NodeId {
    let d = g.row_norm(diff);
    let d = match norm {
        ChamferNorm::Unsquared => d,
        ChamferNorm::Squared => g.square(d),
    };
    g.mean(d)
}

/// Chamfer between the pulled queries and the cloud. The first summand
/// matches every pulled query to its nearest cloud point; the second
/// matches every anchor point of the batch to its nearest pulled query.
fn cd_term(g: &mut Graph, stage: &QueryStage, batch: &QueryBatch, cloud: &PointCloud, norm: ChamferNorm) -> NodeId {
    let pulled = matrix_to_points(g.value(stage.pulled));
    let targets: Vec<Vec3> = pulled.iter().map(|&q| cloud.nearest(q).0).collect();
    let t = g.constant(points_to_matrix(&targets));
    let d1 = g.sub(stage.pulled, t);
    let first = mean_distance(g, d1, norm);

    let anchors: BTreeSet<usize> = stage.valid.iter().map(|&i| batch.anchor_index[i]).collect();
    let anchor_pts: Vec<Vec3> = anchors.iter().map(|&a| cloud.points()[a]).collect();
    let nearest_pulled: Vec<usize> = anchor_pts
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0);
            for (j, q) in pulled.iter().enumerate() {
                let d = p.distance_squared(*q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect();
    let p = g.constant(points_to_matrix(&anchor_pts));
    let matched = g.gather(stage.pulled, nearest_pulled);
    let d2 = g.sub(p, matched);
    let second = mean_distance(g, d2, norm);
    g.add(first, second)
}

/// `mean(1 − |cos∠(a_i, b_i)|)` over rows, times an optional weight column.
fn alignment_mean(g: &mut Graph, a: NodeId, b: NodeId, weight: Option<NodeId>) -> NodeId {
    let dot = g.row_dot(a, b);
    let na = g.row_norm(a);
    let nb = g.row_norm(b);
    let ia = g.recip(na);
    let ib = g.recip(nb);
    let c = g.mul(dot, ia);
    let c = g.mul(c, ib);
    let ac = g.abs(c);
    let neg = g.scale(ac, -1.0);
    let term = g.add_scalar(neg, 1.0);
    let term = match weight {
        Some(w) => g.mul(term, w),
        None => term,
    };
    g.mean(term)
}

fn proj_term<R: FieldRecorder>(
    g: &mut Graph,
    field: &R,
    stage: &QueryStage,
    opts: &LossOptions,
    skips: &mut SkipCounts,
) -> NodeId {
    let at = if opts.full_chain_projection {
        stage.pulled
    } else {
        g.stop_gradient(stage.pulled)
    };
    let hat = field.record(g, at, true);
    let ghat = hat.gradient.expect("recorder returned no gradient");
    let gv = g.value(ghat);
    let rows: Vec<usize> = (0..gv.rows())
        .filter(|&i| {
            let r = gv.row(i);
            (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() >= opts.eps_grad
        })
        .collect();
    skips.degenerate_projection += gv.rows() - rows.len();
    if rows.is_empty() {
        return g.constant(Matrix::scalar(0.0));
    }
    let full = rows.len() == gv.rows();
    let (gq, gh, f) = if full {
        (stage.grad, ghat, stage.f)
    } else {
        let a = g.gather(stage.grad, rows.clone());
        let b = g.gather(ghat, rows.clone());
        let f = g.gather(stage.f, rows);
        (a, b, f)
    };
    let weight = opts.adaptive_weighting.then(|| {
        let af = g.abs(f);
        let s = g.scale(af, -opts.weights.lambda);
        let gamma = g.exp(s);
        if opts.differentiate_gamma {
            gamma
        } else {
            g.stop_gradient(gamma)
        }
    });
    alignment_mean(g, gq, gh, weight)
}

fn orth_term(g: &mut Graph, stage: &QueryStage, batch: &QueryBatch, eps: f64, skips: &mut SkipCounts) -> NodeId {
    let mut rows = Vec::new();
    let mut dirs = Vec::new();
    for (k, &i) in stage.valid.iter().enumerate() {
        let t = batch.nearest_point[i] - batch.queries[i];
        if t.norm() < eps {
            skips.coincident += 1;
        } else {
            rows.push(k);
            dirs.push(t);
        }
    }
    if rows.is_empty() {
        return g.constant(Matrix::scalar(0.0));
    }
    let gq = if rows.len() == stage.valid.len() {
        stage.grad
    } else {
        g.gather(stage.grad, rows)
    };
    let t = g.constant(points_to_matrix(&dirs));
    alignment_mean(g, gq, t, None)
}

/// `(1/|S|)Σ|f(p)|` over the given surface points.
pub fn loss_dist<R: FieldRecorder>(g: &mut Graph, field: &R, points: &[Vec3]) -> Result<NodeId> {
    if points.is_empty() {
        return Err(Error::EmptyInput("no surface points for the distance loss".into()));
    }
    let p = g.constant(points_to_matrix(points));
    let f = field.record(g, p, false).value;
    let a = g.abs(f);
    Ok(g.mean(a))
}

pub fn loss_cd<R: FieldRecorder>(
    g: &mut Graph,
    field: &R,
    batch: &QueryBatch,
    cloud: &PointCloud,
    opts: &LossOptions,
) -> Result<(NodeId, SkipCounts)> {
    let stage = query_stage(g, field, batch, opts.eps_grad)?;
    let skips = SkipCounts {
        degenerate_query: stage.skipped,
        ..SkipCounts::default()
    };
    Ok((cd_term(g, &stage, batch, cloud, opts.chamfer_norm), skips))
}

pub fn loss_proj<R: FieldRecorder>(
    g: &mut Graph,
    field: &R,
    batch: &QueryBatch,
    opts: &LossOptions,
) -> Result<(NodeId, SkipCounts)> {
    let stage = query_stage(g, field, batch, opts.eps_grad)?;
    let mut skips = SkipCounts {
        degenerate_query: stage.skipped,
        ..SkipCounts::default()
    };
    let node = proj_term(g, field, &stage, opts, &mut skips);
    Ok((node, skips))
}

pub fn loss_orth<R: FieldRecorder>(
    g: &mut Graph,
    field: &R,
    batch: &QueryBatch,
    opts: &LossOptions,
) -> Result<(NodeId, SkipCounts)> {
    let stage = query_stage(g, field, batch, opts.eps_grad)?;
    let mut skips = SkipCounts {
        degenerate_query: stage.skipped,
        ..SkipCounts::default()
    };
    let node = orth_term(g, &stage, batch, opts.eps_grad, &mut skips);
    Ok((node, skips))
}

/// `L = L_CD + α₁L_proj + α₂L_dist + α₃L_orth`, with `dist_points` the
/// surface samples used for `L_dist` this step.
pub fn loss_total<R: FieldRecorder>(
    g: &mut Graph,
    field: &R,
    batch: &QueryBatch,
    cloud: &PointCloud,
    dist_points: &[Vec3],
    opts: &LossOptions,
) -> Result<LossOutput> {
    opts.weights.validate()?;
    let stage = query_stage(g, field, batch, opts.eps_grad)?;
    let mut skips = SkipCounts {
        degenerate_query: stage.skipped,
        ..SkipCounts::default()
    };
    let cd = cd_term(g, &stage, batch, cloud, opts.chamfer_norm);
    let proj = proj_term(g, field, &stage, opts, &mut skips);
    let dist = loss_dist(g, field, dist_points)?;
    let orth = orth_term(g, &stage, batch, opts.eps_grad, &mut skips);

    let w = opts.weights;
    let mut total = cd;
    for (node, alpha) in [(proj, w.alpha1), (dist, w.alpha2), (orth, w.alpha3)] {
        if alpha != 0.0 {
            let s = g.scale(node, alpha);
            total = g.add(total, s);
        }
    }
    let breakdown = LossBreakdown {
        cd: g.value(cd).item(),
        proj: g.value(proj).item(),
        dist: g.value(dist).item(),
        orth: g.value(orth).item(),
        total: g.value(total).item(),
    };
    Ok(LossOutput {
        nodes: LossNodes {
            cd,
            proj,
            dist,
            orth,
            total,
        },
        breakdown,
        skips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::AnalyticShape;

    #[test]
    fn pull_closed_forms() {
        let plane = AnalyticShape::plane();
        let q = Vec3::new(1.0, 2.0, 3.0);
        let e = plane.exact_udf(q);
        assert_eq!(pull_point(q, e.distance, e.gradient, EPS_GRAD), Some(Vec3::new(1.0, 2.0, 0.0)));

        let sphere = AnalyticShape::sphere();
        let q = Vec3::new(0.8, 0.0, 0.0);
        let p = pull_to_surface(&sphere, &[q])[0].unwrap();
        assert!((p - Vec3::new(0.4, 0.0, 0.0)).norm() < 1e-15);

        let q = Vec3::new(0.3, -0.1, 0.2);
        assert_eq!(pull_point(q, 0.0, Vec3::new(0.0, 1.0, 0.0), EPS_GRAD), Some(q));
        assert_eq!(pull_point(q, 0.5, Vec3::ZERO, EPS_GRAD), None);
    }

    #[test]
    fn adaptive_weight_values() {
        assert_eq!(adaptive_weight(0.0, 10.0), 1.0);
        assert!((adaptive_weight(0.1, 10.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((adaptive_weight(0.1, 10.0) - 0.367879).abs() < 1e-6);
        let mut prev = 1.0;
        for k in 1..100 {
            let w = adaptive_weight(k as f64 * 0.01, 10.0);
            assert!(w < prev);
            prev = w;
        }
    }

    #[test]
    fn alignment_term_cases() {
        let z = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(projection_term(z, z, 0.0, 10.0, EPS_GRAD), Some(0.0));
        assert_eq!(projection_term(z, -z, 0.0, 10.0, EPS_GRAD), Some(0.0));
        assert_eq!(projection_term(z, Vec3::new(1.0, 0.0, 0.0), 0.0, 10.0, EPS_GRAD), Some(1.0));
        let q = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(orthogonality_term(z, q, Vec3::ZERO, EPS_GRAD), Some(0.0));
        assert_eq!(orthogonality_term(-z, q, Vec3::ZERO, EPS_GRAD), Some(0.0));
        assert_eq!(orthogonality_term(Vec3::new(0.0, 1.0, 0.0), q, Vec3::ZERO, EPS_GRAD), Some(1.0));
        assert_eq!(orthogonality_term(z, q, q, EPS_GRAD), None);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { alpha2: -1.0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { lambda: 0.0, ..LossWeights::default() }.validate().is_err());
    }
}
