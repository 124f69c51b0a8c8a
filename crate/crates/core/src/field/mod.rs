//! The unsigned distance network `f: R³ → R≥0`.

mod checkpoint;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FieldCheckpoint, TrainingMetadata};

use crate::diffengine::{Dual, FieldNodes, FieldRecorder, Graph, Matrix, NodeId, Precision};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Softplus { beta: f64 },
}

/// Map from the network's raw scalar to a non-negative distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    Abs,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub width: usize,
    /// Number of affine layers, output head included.
    pub depth: usize,
    /// Layer whose input is the previous activation concatenated with the
    /// (encoded) query.
    pub skip_at: Option<usize>,
    pub activation: Activation,
    pub output: OutputTransform,
    /// Number of sin/cos frequency bands prepended to the raw query; 0 disables.
    pub encoding_frequencies: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            width: 256,
            depth: 8,
            skip_at: Some(4),
            activation: Activation::Relu,
            output: OutputTransform::Abs,
            encoding_frequencies: 0,
        }
    }
}

impl Architecture {
    pub fn new(width: usize, depth: usize) -> Self {
        Architecture {
            width,
            depth,
            skip_at: (depth > 2).then_some(depth / 2),
            ..Architecture::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 1 {
            return Err(Error::InvalidArgument("width must be at least 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::InvalidArgument("depth must be at least 2".into()));
        }
        if let Some(s) = self.skip_at {
            if s == 0 || s >= self.depth {
                return Err(Error::InvalidArgument(format!(
                    "skip_at {s} must name a layer in 1..{}",
                    self.depth
                )));
            }
        }
        if let Activation::Softplus { beta } = self.activation {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidArgument("softplus beta must be positive".into()));
            }
        }
        Ok(())
    }

    /// Width of the encoded query fed to layer 0 (and to the skip layer).
    pub fn input_dim(&self) -> usize {
        3 + 6 * self.encoding_frequencies
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let mut fan_in = if i == 0 { self.input_dim() } else { self.width };
                if self.skip_at == Some(i) {
                    fan_in += self.input_dim();
                }
                let fan_out = if i + 1 == self.depth { 1 } else { self.width };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `fan_out × fan_in`
    w: Matrix,
    /// `1 × fan_out`
    b: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UdfField {
    arch: Architecture,
    layers: Vec<Layer>,
}

const EVAL_CHUNK: usize = 2048;

impl UdfField {
    /// Seeded uniform fan-in initialization: every weight and bias of a
    /// layer is drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound));
                let b = Matrix::from_fn(1, fan_out, |_, _| rng.random_range(-bound..bound));
                Layer { w, b }
            })
            .collect();
        Ok(UdfField { arch, layers })
    }

    /// `init` with the default architecture at the given size.
    pub fn init_sized(seed: u64, width: usize, depth: usize) -> Result<Self> {
        Self::init(Architecture::new(width, depth), seed)
    }

    pub fn from_params(arch: Architecture, params: &[f64]) -> Result<Self> {
        let mut field = UdfField::init(arch, 0)?;
        field.set_params(params)?;
        Ok(field)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat parameters: each layer's weights (row-major) then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a field with {}",
                params.len(),
                self.param_count()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for m in [&mut l.w, &mut l.b] {
                let n = m.len();
                m.as_mut_slice().copy_from_slice(&params[k..k + n]);
                k += n;
            }
        }
        Ok(())
    }

    /// Register the parameters as leaves of `g`, in flat order.
    pub fn bind(&self, g: &mut Graph) -> BoundField<'_> {
        let params = self
            .layers
            .iter()
            .map(|l| (g.param(l.w.clone()), g.param(l.b.clone())))
            .collect();
        BoundField {
            field: self,
            params,
        }
    }

    pub fn eval(&self, q: Vec3) -> f64 {
        self.eval_batch(&[q])[0]
    }

    pub fn gradient(&self, q: Vec3) -> Vec3 {
        self.eval_with_gradient_batch(&[q])[0].1
    }

    pub fn eval_batch(&self, qs: &[Vec3]) -> Vec<f64> {
        let mut out = Vec::with_capacity(qs.len());
        for chunk in qs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g);
            let x = g.constant(points_to_matrix(chunk));
            let f = bound.record(&mut g, x, false);
            out.extend_from_slice(g.value(f.value).as_slice());
        }
        out
    }

    pub fn eval_with_gradient_batch(&self, qs: &[Vec3]) -> Vec<(f64, Vec3)> {
        let mut out = Vec::with_capacity(qs.len());
        for chunk in qs.chunks(EVAL_CHUNK) {
            let mut g = Graph::new();
            let bound = self.bind(&mut g);
            let x = g.constant(points_to_matrix(chunk));
            let f = bound.record(&mut g, x, true);
            let v = g.value(f.value);
            let gr = g.value(f.gradient.unwrap());
            for i in 0..chunk.len() {
                out.push((v.get(i, 0), Vec3::new(gr.get(i, 0), gr.get(i, 1), gr.get(i, 2))));
            }
        }
        out
    }
}

/// A field whose parameters are leaves of a particular graph.
pub struct BoundField<'a> {
    field: &'a UdfField,
    params: Vec<(NodeId, NodeId)>,
}

impl BoundField<'_> {
    fn activate(&self, g: &mut Graph, h: Dual) -> Dual {
        match self.field.arch.activation {
            Activation::Relu => g.dual_relu(h),
            Activation::Softplus { beta } => g.dual_softplus(h, beta),
        }
    }

    fn encode(&self, g: &mut Graph, x: Dual) -> Dual {
        let mut enc = x;
        for k in 0..self.field.arch.encoding_frequencies {
            let scaled = g.dual_scale(x, (1u64 << k) as f64 * PI);
            let s = g.dual_sin(scaled);
            let c = g.dual_cos(scaled);
            enc = g.dual_concat(enc, s);
            enc = g.dual_concat(enc, c);
        }
        enc
    }
}

impl FieldRecorder for BoundField<'_> {
    fn record(&self, g: &mut Graph, x: NodeId, with_gradient: bool) -> FieldNodes {
        let input = g.dual_input(x, with_gradient);
        let enc = self.encode(g, input);
        let arch = &self.field.arch;
        let mut h = enc;
        for (i, &(w, b)) in self.params.iter().enumerate() {
            if arch.skip_at == Some(i) {
                h = g.dual_concat(h, enc);
            }
            h = g.dual_affine(h, w, b);
            if i + 1 < arch.depth {
                h = self.activate(g, h);
            }
        }
        let out = match arch.output {
            OutputTransform::Abs => g.dual_abs(h),
            OutputTransform::Square => g.dual_square(h),
        };
        FieldNodes {
            value: out.value,
            gradient: with_gradient.then(|| g.gradient_of(out)),
        }
    }
}

pub fn points_to_matrix(points: &[Vec3]) -> Matrix {
    Matrix::from_fn(points.len(), 3, |i, j| points[i][j])
}

pub fn matrix_to_points(m: &Matrix) -> Vec<Vec3> {
    assert_eq!(m.cols(), 3, "expected an n×3 matrix");
    (0..m.rows())
        .map(|i| Vec3::new(m.get(i, 0), m.get(i, 1), m.get(i, 2)))
        .collect()
}

/// Numeric evaluation interface shared by the network and analytic oracles.
pub trait DistanceField: Sync {
    fn distances(&self, qs: &[Vec3]) -> Vec<f64>;
    fn distances_and_gradients(&self, qs: &[Vec3]) -> Vec<(f64, Vec3)>;
}

impl DistanceField for UdfField {
    fn distances(&self, qs: &[Vec3]) -> Vec<f64> {
        self.eval_batch(qs)
    }

    fn distances_and_gradients(&self, qs: &[Vec3]) -> Vec<(f64, Vec3)> {
        self.eval_with_gradient_batch(qs)
    }
}

impl<T: DistanceField + ?Sized> DistanceField for &T {
    fn distances(&self, qs: &[Vec3]) -> Vec<f64> {
        (**self).distances(qs)
    }

    fn distances_and_gradients(&self, qs: &[Vec3]) -> Vec<(f64, Vec3)> {
        (**self).distances_and_gradients(qs)
    }
}

/// Builds a graph in the requested precision; kept here so callers don't
/// need to reach into the engine for the common case.
pub fn new_graph(precision: Precision) -> Graph {
    Graph::with_precision(precision)
}
