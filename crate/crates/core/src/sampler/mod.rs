//! Off-surface training queries around a point cloud.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Neighbor rank used for the per-point scale, clamped to `N - 1`.
    pub k: usize,
    /// Fraction of the final batch drawn uniformly in the far-field box.
    pub uniform_fraction: f64,
    pub uniform_half_extent: f64,
    /// Scale used when a point has no distinct neighbor.
    pub fallback_sigma: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 50,
            uniform_fraction: 0.1,
            uniform_half_extent: 0.55,
            fallback_sigma: 0.01,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.uniform_fraction) {
            return Err(Error::InvalidArgument("uniform_fraction must lie in [0, 1)".into()));
        }
        if !(self.uniform_half_extent > 0.0 && self.fallback_sigma > 0.0) {
            return Err(Error::InvalidArgument("sampler extents must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryKind {
    /// Drawn from the Gaussian around its anchor.
    Near,
    /// Drawn uniformly in the far-field box; its anchor is its nearest point.
    Far,
}

/// Queries with their anchors and cached nearest cloud points.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub queries: Vec<Vec3>,
    pub anchor_index: Vec<usize>,
    pub kind: Vec<QueryKind>,
    /// Scale of the anchor's Gaussian (`σ` of the anchor point).
    pub sigma: Vec<f64>,
    pub nearest_index: Vec<usize>,
    pub nearest_point: Vec<Vec3>,
    pub nearest_distance: Vec<f64>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Rows `rows` of this batch, in the given order.
    pub fn select(&self, rows: &[usize]) -> QueryBatch {
        QueryBatch {
            queries: rows.iter().map(|&r| self.queries[r]).collect(),
            anchor_index: rows.iter().map(|&r| self.anchor_index[r]).collect(),
            kind: rows.iter().map(|&r| self.kind[r]).collect(),
            sigma: rows.iter().map(|&r| self.sigma[r]).collect(),
            nearest_index: rows.iter().map(|&r| self.nearest_index[r]).collect(),
            nearest_point: rows.iter().map(|&r| self.nearest_point[r]).collect(),
            nearest_distance: rows.iter().map(|&r| self.nearest_distance[r]).collect(),
        }
    }

    /// Build a batch from explicit query positions; anchors are the
    /// nearest cloud points.
    pub fn from_queries(cloud: &PointCloud, queries: Vec<Vec3>) -> Result<QueryBatch> {
        if queries.is_empty() {
            return Err(Error::EmptyInput("no queries".into()));
        }
        let n = queries.len();
        let mut b = QueryBatch {
            anchor_index: Vec::with_capacity(n),
            kind: vec![QueryKind::Far; n],
            sigma: vec![0.0; n],
            nearest_index: Vec::with_capacity(n),
            nearest_point: Vec::with_capacity(n),
            nearest_distance: Vec::with_capacity(n),
            queries,
        };
        for &q in &b.queries {
            let (p, i, d) = cloud.nearest(q);
            b.anchor_index.push(i);
            b.nearest_index.push(i);
            b.nearest_point.push(p);
            b.nearest_distance.push(d);
        }
        Ok(b)
    }
}

/// `σ_i`: distance from each point to its `k`-th nearest other point.
pub fn adaptive_scales(cloud: &PointCloud, k: usize, fallback: f64) -> Vec<f64> {
    let n = cloud.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![fallback; n];
    }
    cloud
        .points()
        .iter()
        .map(|&p| {
            // The point itself comes back first at distance zero.
            let nn = cloud.index().k_nearest(p, k + 1);
            let s = nn.last().map_or(0.0, |&(_, d2)| d2.sqrt());
            if s > 0.0 {
                s
            } else {
                fallback
            }
        })
        .collect()
}

/// `per_point` Gaussian queries around every cloud point plus the far-field
/// share, with default settings.
pub fn sample_queries(cloud: &PointCloud, per_point: usize, seed: u64) -> Result<QueryBatch> {
    let scales = adaptive_scales(cloud, SamplerConfig::default().k, SamplerConfig::default().fallback_sigma);
    sample_queries_with(cloud, &scales, per_point, &SamplerConfig::default(), seed)
}

/// Sampling with precomputed per-point scales. Each near query is
/// `p_i + σ_i/√3 · n` with `n` standard normal, so the root-mean-square
/// offset from the anchor equals `σ_i`.
pub fn sample_queries_with(
    cloud: &PointCloud,
    scales: &[f64],
    per_point: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<QueryBatch> {
    cfg.validate()?;
    if per_point == 0 {
        return Err(Error::InvalidArgument("per_point must be at least 1".into()));
    }
    if scales.len() != cloud.len() {
        return Err(Error::Shape(format!("{} scales for {} points", scales.len(), cloud.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let near = cloud.len() * per_point;
    let far = (near as f64 * cfg.uniform_fraction / (1.0 - cfg.uniform_fraction)).floor() as usize;

    let mut queries = Vec::with_capacity(near + far);
    let mut anchors = Vec::with_capacity(near + far);
    let mut kind = Vec::with_capacity(near + far);
    let mut sigma = Vec::with_capacity(near + far);
    for (i, &p) in cloud.points().iter().enumerate() {
        let s = scales[i] / 3f64.sqrt();
        for _ in 0..per_point {
            let n = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            queries.push(p + n * s);
            anchors.push(i);
            kind.push(QueryKind::Near);
            sigma.push(scales[i]);
        }
    }
    let h = cfg.uniform_half_extent;
    for _ in 0..far {
        queries.push(Vec3::new(rng.random_range(-h..h), rng.random_range(-h..h), rng.random_range(-h..h)));
        kind.push(QueryKind::Far);
    }

    let mut batch = QueryBatch::from_queries(cloud, queries)?;
    for (slot, a) in batch.anchor_index.iter_mut().zip(anchors) {
        *slot = a;
    }
    for (i, k) in kind.into_iter().enumerate() {
        batch.kind[i] = k;
        batch.sigma[i] = if k == QueryKind::Near { sigma[i] } else { scales[batch.anchor_index[i]] };
    }
    Ok(batch)
}
