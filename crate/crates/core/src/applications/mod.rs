//! Uses of a fitted field beyond meshing: unoriented normals and
//! upsampling by pulling queries onto the surface.

use std::fmt;

use crate::field::DistanceField;
use crate::geometry::{PointCloud, Vec3};
use crate::losses::{pull_point, EPS_GRAD};
use crate::metrics;
use crate::parallel;
use crate::sampler::{adaptive_scales, sample_queries_with, SamplerConfig};
use crate::{Error, Result};

/// Gradient norms below this are flagged instead of normalized.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;

/// Normalized field gradients at the cloud points. Orientation is
/// meaningless; degenerate entries hold the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UnorientedNormals {
    pub normals: Vec<Vec3>,
    pub degenerate: Vec<bool>,
}

impl UnorientedNormals {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }

    /// Indices and normals of the non-degenerate entries.
    pub fn valid(&self) -> impl Iterator<Item = (usize, Vec3)> + '_ {
        self.normals
            .iter()
            .zip(&self.degenerate)
            .enumerate()
            .filter(|(_, (_, &d))| !d)
            .map(|(i, (&n, _))| (i, n))
    }

    /// Points and normals to write out, skipping flagged entries.
    pub fn emitted(&self, cloud: &PointCloud) -> (Vec<Vec3>, Vec<Vec3>) {
        self.valid().map(|(i, n)| (cloud.points()[i], n)).unzip()
    }

    /// Unoriented angle RMSE in degrees against index-aligned reference
    /// normals, over non-degenerate entries only.
    pub fn rmse_against(&self, reference: &[Vec3]) -> Result<f64> {
        if reference.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} reference normals for {} estimates",
                reference.len(),
                self.len()
            )));
        }
        let (pred, gt): (Vec<Vec3>, Vec<Vec3>) = self.valid().map(|(i, n)| (n, reference[i])).unzip();
        metrics::rmse_unoriented(&pred, &gt)
    }
}

/// `∇f(p) / ‖∇f(p)‖` at every cloud point.
pub fn estimate_normals(field: &impl DistanceField, cloud: &PointCloud) -> UnorientedNormals {
    let grads = parallel::map_chunks(cloud.points(), 0, |c| {
        field
            .distances_and_gradients(c)
            .into_iter()
            .map(|(_, g)| g.normalized(DEGENERATE_GRADIENT))
            .collect()
    });
    UnorientedNormals {
        degenerate: grads.iter().map(Option::is_none).collect(),
        normals: grads.into_iter().map(|g| g.unwrap_or_default()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsampleConfig {
    /// Output size is `factor` times the input size.
    pub factor: usize,
    /// Queries with `f(q) ≥ beta` are discarded, so `0` keeps nothing.
    pub beta: f64,
    pub max_rounds: usize,
    /// Pull iterations per kept query.
    pub pull_steps: usize,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        UpsampleConfig {
            factor: 4,
            beta: 0.05,
            max_rounds: 10,
            pull_steps: 1,
        }
    }
}

impl UpsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::InvalidArgument("upsampling factor must be at least 1".into()));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        if self.max_rounds == 0 || self.pull_steps == 0 {
            return Err(Error::InvalidArgument(
                "max_rounds and pull_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A successful upsampling run.
#[derive(Debug, Clone)]
pub struct Upsampled {
    pub cloud: PointCloud,
    pub rounds: usize,
    /// Mean `f(u)` over the output.
    pub mean_residual: f64,
}

/// The retry cap ran out before enough queries passed the filter.
#[derive(Debug, Clone)]
pub struct UpsampleShortfall {
    pub gathered: Vec<Vec3>,
    pub target: usize,
    pub rounds: usize,
}

impl fmt::Display for UpsampleShortfall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gathered {} of {} points after {} rounds; loosen beta or raise the round cap",
            self.gathered.len(),
            self.target,
            self.rounds
        )
    }
}

impl std::error::Error for UpsampleShortfall {}

/// Either invalid input or a shortfall with partial output.
#[derive(Debug)]
pub enum UpsampleError {
    Invalid(Error),
    Shortfall(UpsampleShortfall),
}

impl fmt::Display for UpsampleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpsampleError::Invalid(e) => e.fmt(f),
            UpsampleError::Shortfall(s) => s.fmt(f),
        }
    }
}

impl std::error::Error for UpsampleError {}

impl From<Error> for UpsampleError {
    fn from(e: Error) -> Self {
        UpsampleError::Invalid(e)
    }
}

fn round_seed(seed: u64, round: usize) -> u64 {
    seed.wrapping_add((round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn pull(field: &impl DistanceField, q: Vec3, f: f64, g: Vec3, steps: usize) -> Option<Vec3> {
    let mut p = pull_point(q, f, g, EPS_GRAD)?;
    for _ in 1..steps {
        let (f, g) = field.distances_and_gradients(&[p])[0];
        p = pull_point(p, f, g, EPS_GRAD)?;
    }
    p.is_finite().then_some(p)
}

/// Gaussian queries around the cloud, filtered by `f(q) < beta` and pulled
/// onto the zero level set, until `factor × N` points are gathered.
pub fn upsample(
    field: &impl DistanceField,
    cloud: &PointCloud,
    cfg: &UpsampleConfig,
    seed: u64,
) -> Result<Upsampled, UpsampleError> {
    cfg.validate()?;
    let sampler = SamplerConfig {
        uniform_fraction: 0.0,
        ..SamplerConfig::default()
    };
    let scales = adaptive_scales(cloud, sampler.k, sampler.fallback_sigma);
    let target = cloud.len() * cfg.factor;
    let mut out = Vec::with_capacity(target);
    let mut rounds = 0;
    while out.len() < target && rounds < cfg.max_rounds {
        let batch = sample_queries_with(cloud, &scales, cfg.factor, &sampler, round_seed(seed, rounds))?;
        rounds += 1;
        let pulled: Vec<Option<Vec3>> = parallel::map_chunks(&batch.queries, 0, |qs| {
            field
                .distances_and_gradients(qs)
                .into_iter()
                .zip(qs)
                .map(|((f, g), &q)| {
                    if f < cfg.beta {
                        pull(field, q, f, g, cfg.pull_steps)
                    } else {
                        None
                    }
                })
                .collect()
        });
        out.extend(pulled.into_iter().flatten().take(target - out.len()));
    }
    if out.len() < target {
        return Err(UpsampleError::Shortfall(UpsampleShortfall {
            gathered: out,
            target,
            rounds,
        }));
    }
    let residual = field.distances(&out);
    let mean_residual = residual.iter().sum::<f64>() / residual.len() as f64;
    Ok(Upsampled {
        cloud: PointCloud::new(out)?.with_normalization(cloud.normalization()),
        rounds,
        mean_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(UpsampleConfig::default().validate().is_ok());
        for bad in [
            UpsampleConfig { factor: 0, ..Default::default() },
            UpsampleConfig { beta: -1.0, ..Default::default() },
            UpsampleConfig { beta: f64::NAN, ..Default::default() },
            UpsampleConfig { max_rounds: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let inf = UpsampleConfig { beta: f64::INFINITY, ..Default::default() };
        assert!(inf.validate().is_ok());
    }

    #[test]
    fn round_seeds_differ() {
        assert_ne!(round_seed(3, 0), round_seed(3, 1));
        assert_eq!(round_seed(3, 0), 3);
    }
}
