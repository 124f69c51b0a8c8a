//! Flat `key = value` training configuration.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::diffengine::Precision;
use crate::error::{Error, Result};
use crate::field::{Activation, Architecture, OutputTransform};
use crate::geometry::ChamferNorm;
use crate::losses::{LossOptions, LossWeights, EPS_GRAD};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub step_size: f64,
    pub optimizer: Optimizer,
    pub weights: LossWeights,
    pub queries_per_point: usize,
    /// Queries per optimization step.
    pub batch_size: usize,
    pub resample_every: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Surface points per step for the distance loss.
    pub dist_subsample: usize,
    pub architecture: Architecture,
    pub full_chain_projection: bool,
    pub differentiate_gamma: bool,
    pub adaptive_weighting: bool,
    pub chamfer_norm: ChamferNorm,
    pub eps_grad: f64,
    /// Record one trace row every this many iterations (the last iteration
    /// is always recorded).
    pub trace_every: usize,
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 40_000,
            step_size: 1e-3,
            optimizer: Optimizer::Adam,
            weights: LossWeights::default(),
            queries_per_point: 10,
            batch_size: 5000,
            resample_every: 1000,
            seed: 0,
            precision: Precision::Double,
            dist_subsample: 5000,
            architecture: Architecture::default(),
            full_chain_projection: false,
            differentiate_gamma: false,
            adaptive_weighting: true,
            chamfer_norm: ChamferNorm::Unsquared,
            eps_grad: EPS_GRAD,
            trace_every: 10,
            sampler: SamplerConfig::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "iterations",
    "step_size",
    "optimizer",
    "alpha1",
    "alpha2",
    "alpha3",
    "lambda",
    "queries_per_point",
    "batch_size",
    "resample_every",
    "seed",
    "precision",
    "dist_subsample",
    "width",
    "depth",
    "skip_at",
    "activation",
    "softplus_beta",
    "output",
    "encoding_frequencies",
    "full_chain_projection",
    "differentiate_gamma",
    "adaptive_weighting",
    "chamfer",
    "eps_grad",
    "trace_every",
    "neighbor_k",
    "uniform_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{value}' for key '{key}'"))),
    }
}

impl TrainConfig {
    /// Desk-scale settings used by the fixtures and the acceptance suite:
    /// a narrow network and small batches so a fit runs in minutes on one
    /// core.
    pub fn fixture() -> Self {
        let mut arch = Architecture::new(64, 4);
        arch.skip_at = Some(2);
        TrainConfig {
            iterations: 20_000,
            queries_per_point: 10,
            batch_size: 512,
            dist_subsample: 512,
            architecture: arch,
            ..TrainConfig::default()
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn loss_options(&self) -> LossOptions {
        LossOptions {
            weights: self.weights,
            eps_grad: self.eps_grad,
            full_chain_projection: self.full_chain_projection,
            differentiate_gamma: self.differentiate_gamma,
            adaptive_weighting: self.adaptive_weighting,
            chamfer_norm: self.chamfer_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.queries_per_point < 1 || self.batch_size < 1 || self.resample_every < 1 {
            return bad("queries_per_point, batch_size and resample_every must be at least 1");
        }
        if self.dist_subsample < 1 || self.trace_every < 1 {
            return bad("dist_subsample and trace_every must be at least 1");
        }
        if !(self.eps_grad >= 0.0) {
            return bad("eps_grad must be non-negative");
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.architecture.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.sampler.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "iterations" => self.iterations = parse(key, v)?,
            "step_size" => self.step_size = parse(key, v)?,
            "optimizer" => {
                self.optimizer = match v {
                    "adam" => Optimizer::Adam,
                    "sgd" => Optimizer::Sgd,
                    _ => return Err(Error::Config(format!("optimizer must be adam or sgd, got '{v}'"))),
                }
            }
            "alpha1" => self.weights.alpha1 = parse(key, v)?,
            "alpha2" => self.weights.alpha2 = parse(key, v)?,
            "alpha3" => self.weights.alpha3 = parse(key, v)?,
            "lambda" => self.weights.lambda = parse(key, v)?,
            "queries_per_point" => self.queries_per_point = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "resample_every" => self.resample_every = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "precision" => {
                self.precision = match v {
                    "double" => Precision::Double,
                    "single" => Precision::Single,
                    _ => return Err(Error::Config(format!("precision must be double or single, got '{v}'"))),
                }
            }
            "dist_subsample" => self.dist_subsample = parse(key, v)?,
            "width" => self.architecture.width = parse(key, v)?,
            "depth" => self.architecture.depth = parse(key, v)?,
            "skip_at" => {
                self.architecture.skip_at = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "activation" => {
                self.architecture.activation = match v {
                    "relu" => Activation::Relu,
                    "softplus" => Activation::Softplus {
                        beta: match self.architecture.activation {
                            Activation::Softplus { beta } => beta,
                            Activation::Relu => 100.0,
                        },
                    },
                    _ => return Err(Error::Config(format!("activation must be relu or softplus, got '{v}'"))),
                }
            }
            "softplus_beta" => {
                let beta = parse(key, v)?;
                if let Activation::Softplus { beta: b } = &mut self.architecture.activation {
                    *b = beta;
                } else {
                    self.architecture.activation = Activation::Softplus { beta };
                }
            }
            "output" => {
                self.architecture.output = match v {
                    "abs" => OutputTransform::Abs,
                    "square" => OutputTransform::Square,
                    _ => return Err(Error::Config(format!("output must be abs or square, got '{v}'"))),
                }
            }
            "encoding_frequencies" => self.architecture.encoding_frequencies = parse(key, v)?,
            "full_chain_projection" => self.full_chain_projection = parse_bool(key, v)?,
            "differentiate_gamma" => self.differentiate_gamma = parse_bool(key, v)?,
            "adaptive_weighting" => self.adaptive_weighting = parse_bool(key, v)?,
            "chamfer" => {
                self.chamfer_norm = match v {
                    "unsquared" => ChamferNorm::Unsquared,
                    "squared" => ChamferNorm::Squared,
                    _ => return Err(Error::Config(format!("chamfer must be unsquared or squared, got '{v}'"))),
                }
            }
            "eps_grad" => self.eps_grad = parse(key, v)?,
            "trace_every" => self.trace_every = parse(key, v)?,
            "neighbor_k" => self.sampler.k = parse(key, v)?,
            "uniform_fraction" => self.sampler.uniform_fraction = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Apply every assignment of a config file on top of `self`. Blank
    /// lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Every key with its current value, in a fixed order; parsing the
    /// result with [`TrainConfig::from_text`] gives back `self`.
    pub fn to_text(&self) -> String {
        let a = &self.architecture;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("iterations", self.iterations.to_string());
        kv("step_size", format!("{:?}", self.step_size));
        kv(
            "optimizer",
            match self.optimizer {
                Optimizer::Adam => "adam",
                Optimizer::Sgd => "sgd",
            }
            .into(),
        );
        kv("alpha1", format!("{:?}", self.weights.alpha1));
        kv("alpha2", format!("{:?}", self.weights.alpha2));
        kv("alpha3", format!("{:?}", self.weights.alpha3));
        kv("lambda", format!("{:?}", self.weights.lambda));
        kv("queries_per_point", self.queries_per_point.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("resample_every", self.resample_every.to_string());
        kv("seed", self.seed.to_string());
        kv(
            "precision",
            match self.precision {
                Precision::Double => "double",
                Precision::Single => "single",
            }
            .into(),
        );
        kv("dist_subsample", self.dist_subsample.to_string());
        kv("width", a.width.to_string());
        kv("depth", a.depth.to_string());
        kv("skip_at", a.skip_at.map_or("none".into(), |s| s.to_string()));
        match a.activation {
            Activation::Relu => kv("activation", "relu".into()),
            Activation::Softplus { beta } => {
                kv("activation", "softplus".into());
                kv("softplus_beta", format!("{beta:?}"));
            }
        }
        kv(
            "output",
            match a.output {
                OutputTransform::Abs => "abs",
                OutputTransform::Square => "square",
            }
            .into(),
        );
        kv("encoding_frequencies", a.encoding_frequencies.to_string());
        kv("full_chain_projection", self.full_chain_projection.to_string());
        kv("differentiate_gamma", self.differentiate_gamma.to_string());
        kv("adaptive_weighting", self.adaptive_weighting.to_string());
        kv(
            "chamfer",
            match self.chamfer_norm {
                ChamferNorm::Unsquared => "unsquared",
                ChamferNorm::Squared => "squared",
            }
            .into(),
        );
        kv("eps_grad", format!("{:?}", self.eps_grad));
        kv("trace_every", self.trace_every.to_string());
        kv("neighbor_k", self.sampler.k.to_string());
        kv("uniform_fraction", format!("{:?}", self.sampler.uniform_fraction));
        s
    }
}
