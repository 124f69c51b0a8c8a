//! Optimization loop fitting one field to one point cloud.

mod config;

use std::fmt::{self, Write as _};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Optimizer, TrainConfig};

use crate::diffengine::{parameter_gradients, Graph, Precision};
use crate::error::{Error, Result};
use crate::field::{DistanceField, FieldCheckpoint, TrainingMetadata, UdfField};
use crate::geometry::{PointCloud, Vec3};
use crate::losses::{self, alignment_term, LossBreakdown, SkipCounts};
use crate::sampler::{adaptive_scales, sample_queries_with, QueryBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub breakdown: LossBreakdown,
    pub skips: SkipCounts,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub entries: Vec<TraceEntry>,
    pub trace_every: usize,
    pub iterations_completed: usize,
    /// Skip counters summed over every step, recorded or not.
    pub skipped: SkipCounts,
    pub wall_clock_seconds: f64,
    /// Where the final checkpoint was written, if it was.
    pub checkpoint: Option<String>,
}

impl TrainTrace {
    pub const HEADER: &'static str =
        "iteration\tcd\tproj\tdist\torth\ttotal\tskipped_query\tskipped_projection\tskipped_coincident";

    /// Tab-separated table, one row per recorded iteration.
    pub fn to_delimited(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for e in &self.entries {
            let b = &e.breakdown;
            writeln!(
                s,
                "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}\t{}\t{}",
                e.iteration,
                b.cd,
                b.proj,
                b.dist,
                b.orth,
                b.total,
                e.skips.degenerate_query,
                e.skips.degenerate_projection,
                e.skips.coincident
            )
            .unwrap();
        }
        s
    }

    /// Mean total loss over recorded rows within `window` iterations
    /// centred on `iteration`.
    pub fn smoothed_total(&self, iteration: usize, window: usize) -> Option<f64> {
        let lo = iteration.saturating_sub(window / 2);
        let hi = iteration + window / 2;
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.iteration >= lo && e.iteration <= hi)
            .map(|e| e.breakdown.total)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Training stopped on a non-finite value; carries the last parameters
/// that produced a finite loss.
#[derive(Debug)]
pub struct FitAborted {
    pub error: Error,
    pub last_good: UdfField,
    pub trace: TrainTrace,
}

impl fmt::Display for FitAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "training aborted after {} iterations: {}",
            self.trace.iterations_completed, self.error
        )
    }
}

impl std::error::Error for FitAborted {}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Stepwise trainer; [`fit`] drives it to completion.
pub struct Trainer<'a> {
    cloud: &'a PointCloud,
    cfg: TrainConfig,
    field: UdfField,
    last_good: UdfField,
    scales: Vec<f64>,
    queries: Option<QueryBatch>,
    rng: ChaCha8Rng,
    adam: Adam,
    iteration: usize,
    trace: TrainTrace,
    started: Stopwatch,
}

fn round_params(p: &mut [f64]) {
    for v in p {
        *v = *v as f32 as f64;
    }
}

impl<'a> Trainer<'a> {
    pub fn new(cloud: &'a PointCloud, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut field = UdfField::init(cfg.architecture, cfg.seed)?;
        if cfg.precision == Precision::Single {
            let mut p = field.params();
            round_params(&mut p);
            field.set_params(&p)?;
        }
        let scales = adaptive_scales(cloud, cfg.sampler.k, cfg.sampler.fallback_sigma);
        let n = field.param_count();
        Ok(Trainer {
            cloud,
            field: field.clone(),
            last_good: field,
            scales,
            queries: None,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d),
            adam: Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
            iteration: 0,
            trace: TrainTrace {
                trace_every: cfg.trace_every,
                ..TrainTrace::default()
            },
            started: Stopwatch::start(),
            cfg,
        })
    }

    pub fn field(&self) -> &UdfField {
        &self.field
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    fn refresh_queries(&mut self) -> Result<()> {
        let round = (self.iteration / self.cfg.resample_every) as u64;
        let seed = self.cfg.seed.wrapping_add(round.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.queries = Some(sample_queries_with(
            self.cloud,
            &self.scales,
            self.cfg.queries_per_point,
            &self.cfg.sampler,
            seed,
        )?);
        Ok(())
    }

    /// One optimization step. A numeric failure leaves the field at its
    /// last finite state.
    pub fn step(&mut self) -> Result<LossBreakdown> {
        if self.queries.is_none() || self.iteration.is_multiple_of(self.cfg.resample_every) {
            self.refresh_queries()?;
        }
        let queries = self.queries.as_ref().expect("queries sampled");
        let b = self.cfg.batch_size.min(queries.len());
        let rows = index::sample(&mut self.rng, queries.len(), b).into_vec();
        let batch = queries.select(&rows);
        let n = self.cloud.len();
        let s = self.cfg.dist_subsample.min(n);
        let dist_pts: Vec<Vec3> = if s == n {
            self.cloud.points().to_vec()
        } else {
            index::sample(&mut self.rng, n, s)
                .into_iter()
                .map(|i| self.cloud.points()[i])
                .collect()
        };

        let mut g = Graph::with_precision(self.cfg.precision);
        let bound = self.field.bind(&mut g);
        let out = losses::loss_total(&mut g, &bound, &batch, self.cloud, &dist_pts, &self.cfg.loss_options())?;
        if !out.breakdown.total.is_finite() {
            return Err(Error::Numeric {
                node: out.nodes.total.index(),
                op: "loss_total",
                message: format!("non-finite loss at iteration {}", self.iteration),
            });
        }
        let grads = parameter_gradients(&g, out.nodes.total, None)?.wrt_params;
        drop(g);

        let mut params = self.field.params();
        match self.cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads) {
                    *p -= self.cfg.step_size * g;
                }
            }
            Optimizer::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                let a = &mut self.adam;
                a.t += 1;
                let c1 = 1.0 - B1.powi(a.t);
                let c2 = 1.0 - B2.powi(a.t);
                for k in 0..params.len() {
                    a.m[k] = B1 * a.m[k] + (1.0 - B1) * grads[k];
                    a.v[k] = B2 * a.v[k] + (1.0 - B2) * grads[k] * grads[k];
                    let mh = a.m[k] / c1;
                    let vh = a.v[k] / c2;
                    params[k] -= self.cfg.step_size * mh / (vh.sqrt() + EPS);
                }
            }
        }
        if self.cfg.precision == Precision::Single {
            round_params(&mut params);
        }
        if let Some(k) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric {
                node: 0,
                op: "update",
                message: format!("parameter {k} became non-finite at iteration {}", self.iteration),
            });
        }
        // The loss just computed belongs to the parameters before the update.
        self.last_good = self.field.clone();
        self.field.set_params(&params)?;

        self.trace.skipped.add(&out.skips);
        let it = self.iteration;
        self.iteration += 1;
        self.trace.iterations_completed = self.iteration;
        if it.is_multiple_of(self.cfg.trace_every) || self.is_done() {
            self.trace.entries.push(TraceEntry {
                iteration: it,
                breakdown: out.breakdown,
                skips: out.skips,
            });
        }
        self.trace.wall_clock_seconds = self.started.seconds();
        Ok(out.breakdown)
    }

    pub fn finish(self) -> (UdfField, TrainTrace) {
        (self.field, self.trace)
    }

    fn abort(self, error: Error) -> FitAborted {
        FitAborted {
            error,
            last_good: self.last_good,
            trace: self.trace,
        }
    }
}

/// Elapsed wall-clock time; always zero on `wasm32`, which has no clock
/// in `std`.
#[derive(Debug, Clone, Copy)]
struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Stopwatch {
    fn start() -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.start.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

/// Fit a field to a normalized cloud.
#[allow(clippy::result_large_err)]
pub fn fit(cloud: &PointCloud, cfg: &TrainConfig) -> std::result::Result<(UdfField, TrainTrace), FitAborted> {
    fit_with_progress(cloud, cfg, |_, _| {})
}

/// [`fit`], calling `progress(iteration, breakdown)` after every step.
#[allow(clippy::result_large_err)]
pub fn fit_with_progress(
    cloud: &PointCloud,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> std::result::Result<(UdfField, TrainTrace), FitAborted> {
    let mut trainer = match Trainer::new(cloud, cfg.clone()) {
        Ok(t) => t,
        Err(error) => {
            return Err(FitAborted {
                error,
                last_good: UdfField::init(cfg.architecture, cfg.seed)
                    .unwrap_or_else(|_| UdfField::init_sized(cfg.seed, 1, 2).expect("minimal field")),
                trace: TrainTrace::default(),
            })
        }
    };
    while !trainer.is_done() {
        match trainer.step() {
            Ok(b) => progress(trainer.iteration() - 1, &b),
            Err(e) => return Err(trainer.abort(e)),
        }
    }
    Ok(trainer.finish())
}

/// Package a fitted field for saving.
pub fn checkpoint_of(field: UdfField, cloud: &PointCloud, cfg: &TrainConfig, iterations: usize) -> FieldCheckpoint {
    FieldCheckpoint::new(
        field,
        cloud.normalization(),
        TrainingMetadata {
            iterations: iterations as u64,
            alpha1: cfg.weights.alpha1,
            alpha2: cfg.weights.alpha2,
            alpha3: cfg.weights.alpha3,
            lambda: cfg.weights.lambda,
            seed: cfg.seed,
            extra: vec![("config".into(), cfg.to_text())],
        },
    )
}

/// `|cos∠(∇f(q), ∇f(q̂))|` statistics over near-surface queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Parallelism {
    /// Queries with `f(q)` below the band that were examined.
    pub near_count: usize,
    /// Fraction of them with `|cos| > threshold`; `None` if there were none.
    pub fraction: Option<f64>,
    /// Ten equal-width bins of `|cos|` over `[0, 1]`.
    pub histogram: [usize; 10],
    pub band: f64,
    pub threshold: f64,
}

pub fn gradient_parallelism(field: &impl DistanceField, queries: &[Vec3], band: f64, threshold: f64) -> Parallelism {
    let fg = field.distances_and_gradients(queries);
    let mut near = Vec::new();
    let mut hats = Vec::new();
    for (i, &(f, g)) in fg.iter().enumerate() {
        if f < band {
            if let Some(h) = losses::pull_point(queries[i], f, g, losses::EPS_GRAD) {
                near.push(g);
                hats.push(h);
            }
        }
    }
    let gh = field.distances_and_gradients(&hats);
    let mut histogram = [0usize; 10];
    let mut count = 0;
    let mut hits = 0;
    for (g, (_, h)) in near.iter().zip(&gh) {
        if let Some(t) = alignment_term(*g, *h, losses::EPS_GRAD) {
            let c = 1.0 - t;
            histogram[((c * 10.0) as usize).min(9)] += 1;
            count += 1;
            if c > threshold {
                hits += 1;
            }
        }
    }
    Parallelism {
        near_count: count,
        fraction: (count > 0).then(|| hits as f64 / count as f64),
        histogram,
        band,
        threshold,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport {
    pub curves: Vec<TraceEntry>,
    pub skipped: SkipCounts,
    pub parallelism: Parallelism,
}

impl DiagnosticsReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# loss curves").unwrap();
        let trace = TrainTrace {
            entries: self.curves.clone(),
            ..TrainTrace::default()
        };
        s.push_str(&trace.to_delimited());
        writeln!(s, "# skipped queries").unwrap();
        writeln!(
            s,
            "degenerate_query\t{}\ndegenerate_projection\t{}\ncoincident\t{}",
            self.skipped.degenerate_query, self.skipped.degenerate_projection, self.skipped.coincident
        )
        .unwrap();
        let p = &self.parallelism;
        writeln!(s, "# gradient parallelism, |f(q)| < {}", p.band).unwrap();
        writeln!(s, "near_queries\t{}", p.near_count).unwrap();
        match p.fraction {
            Some(f) => writeln!(s, "fraction_above_{}\t{f:.6}", p.threshold).unwrap(),
            None => writeln!(s, "fraction_above_{}\tn/a", p.threshold).unwrap(),
        }
        writeln!(s, "bin_lo\tbin_hi\tcount").unwrap();
        for (i, c) in p.histogram.iter().enumerate() {
            writeln!(s, "{:.1}\t{:.1}\t{c}", i as f64 / 10.0, (i + 1) as f64 / 10.0).unwrap();
        }
        s
    }
}

/// Loss curves, skip totals and the near-surface gradient-parallelism
/// histogram of a fitted field, probed with fresh queries around `cloud`.
pub fn training_diagnostics(
    trace: &TrainTrace,
    field: &impl DistanceField,
    cloud: &PointCloud,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let scales = adaptive_scales(cloud, 50, 0.01);
    let probes = sample_queries_with(cloud, &scales, 1, &Default::default(), seed)?;
    Ok(DiagnosticsReport {
        curves: trace.entries.clone(),
        skipped: trace.skipped,
        parallelism: gradient_parallelism(field, &probes.queries, 0.02, 0.95),
    })
}
