//! Forward-mode tangents recorded as ordinary graph nodes.
//!
//! A [`Dual`] pairs an `n×k` value node with an optional `3n×k` tangent
//! node holding `∂value/∂x_d` for the three input coordinates in row block
//! `d`. Because tangents are built from differentiable primitives, a single
//! reverse pass over an objective that uses `∇f(q)` yields exact parameter
//! gradients of that objective.

use super::graph::{Graph, NodeId};
use super::matrix::Matrix;
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct Dual {
    pub value: NodeId,
    pub tangent: Option<NodeId>,
}

/// Nodes produced by recording a distance field on a batch of queries.
#[derive(Debug, Clone, Copy)]
pub struct FieldNodes {
    /// `n×1` distances.
    pub value: NodeId,
    /// `n×3` input gradients, present when requested.
    pub gradient: Option<NodeId>,
}

/// Something that can write `f(x)` (and optionally `∇ₓf(x)`) into a graph.
pub trait FieldRecorder {
    fn record(&self, g: &mut Graph, x: NodeId, with_gradient: bool) -> FieldNodes;
}

impl<T: FieldRecorder + ?Sized> FieldRecorder for &T {
    fn record(&self, g: &mut Graph, x: NodeId, with_gradient: bool) -> FieldNodes {
        (**self).record(g, x, with_gradient)
    }
}

/// `∇ₓf` at every row of `x`, itself a graph node so objectives built on it
/// stay differentiable with respect to the field's parameters.
pub fn input_gradient(g: &mut Graph, field: &impl FieldRecorder, x: NodeId) -> NodeId {
    field
        .record(g, x, true)
        .gradient
        .expect("field recorder ignored with_gradient")
}

/// Parameter (and optionally input) gradients of a scalar objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub wrt_params: Vec<f64>,
    pub wrt_inputs: Option<Matrix>,
}

/// Exact reverse accumulation of `∂objective/∂θ`; `inputs` optionally names
/// a leaf whose adjoint is reported as well.
pub fn parameter_gradients(
    g: &Graph,
    objective: NodeId,
    inputs: Option<NodeId>,
) -> Result<GradReport> {
    let adj = g.backward(objective)?;
    let wrt_inputs = inputs.map(|x| {
        adj.of(x)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(g.value(x).rows(), g.value(x).cols()))
    });
    Ok(GradReport {
        wrt_params: adj.into_param_gradients(),
        wrt_inputs,
    })
}

impl Graph {
    /// Seed a dual for an `n×3` input: the tangent is the identity in each
    /// row block.
    pub fn dual_input(&mut self, x: NodeId, with_tangent: bool) -> Dual {
        let tangent = with_tangent.then(|| {
            let n = self.value(x).rows();
            let seed = Matrix::from_fn(3 * n, 3, |r, c| if r / n.max(1) == c { 1.0 } else { 0.0 });
            self.constant(seed)
        });
        Dual { value: x, tangent }
    }

    /// `x·Wᵀ + b`; the tangent only sees the linear part.
    pub fn dual_affine(&mut self, d: Dual, w: NodeId, b: NodeId) -> Dual {
        let lin = self.matmul_t(d.value, w);
        let value = self.add_bias(lin, b);
        let tangent = d.tangent.map(|t| self.matmul_t(t, w));
        Dual { value, tangent }
    }

    pub fn dual_relu(&mut self, d: Dual) -> Dual {
        let value = self.relu(d.value);
        let tangent = d.tangent.map(|t| self.mask_positive(t, d.value));
        Dual { value, tangent }
    }

    pub fn dual_abs(&mut self, d: Dual) -> Dual {
        let value = self.abs(d.value);
        let tangent = d.tangent.map(|t| self.mul_sign(t, d.value));
        Dual { value, tangent }
    }

    /// Elementwise map with a differentiable derivative node `dv`.
    fn dual_chain(&mut self, value: NodeId, tangent: Option<NodeId>, dv: impl FnOnce(&mut Graph) -> NodeId) -> Dual {
        let tangent = tangent.map(|t| {
            let deriv = dv(self);
            let tiled = self.tile(deriv, 3);
            self.mul(t, tiled)
        });
        Dual { value, tangent }
    }

    pub fn dual_softplus(&mut self, d: Dual, beta: f64) -> Dual {
        let value = self.softplus(d.value, beta);
        self.dual_chain(value, d.tangent, |g| {
            let z = g.scale(d.value, beta);
            g.sigmoid(z)
        })
    }

    pub fn dual_square(&mut self, d: Dual) -> Dual {
        let value = self.square(d.value);
        self.dual_chain(value, d.tangent, |g| g.scale(d.value, 2.0))
    }

    pub fn dual_sin(&mut self, d: Dual) -> Dual {
        let value = self.sin(d.value);
        self.dual_chain(value, d.tangent, |g| g.cos(d.value))
    }

    pub fn dual_cos(&mut self, d: Dual) -> Dual {
        let value = self.cos(d.value);
        self.dual_chain(value, d.tangent, |g| {
            let s = g.sin(d.value);
            g.scale(s, -1.0)
        })
    }

    pub fn dual_scale(&mut self, d: Dual, c: f64) -> Dual {
        Dual {
            value: self.scale(d.value, c),
            tangent: d.tangent.map(|t| self.scale(t, c)),
        }
    }

    pub fn dual_add_scalar(&mut self, d: Dual, c: f64) -> Dual {
        Dual {
            value: self.add_scalar(d.value, c),
            tangent: d.tangent,
        }
    }

    pub fn dual_add(&mut self, a: Dual, b: Dual) -> Dual {
        Dual {
            value: self.add(a.value, b.value),
            tangent: match (a.tangent, b.tangent) {
                (Some(x), Some(y)) => Some(self.add(x, y)),
                _ => None,
            },
        }
    }

    pub fn dual_sub(&mut self, a: Dual, b: Dual) -> Dual {
        Dual {
            value: self.sub(a.value, b.value),
            tangent: match (a.tangent, b.tangent) {
                (Some(x), Some(y)) => Some(self.sub(x, y)),
                _ => None,
            },
        }
    }

    /// `a ⊙ 1[by > 0]` with `by` treated as a constant selector.
    pub fn dual_mask_positive(&mut self, a: Dual, by: NodeId) -> Dual {
        Dual {
            value: self.mask_positive(a.value, by),
            tangent: a.tangent.map(|t| self.mask_positive(t, by)),
        }
    }

    pub fn dual_concat(&mut self, a: Dual, b: Dual) -> Dual {
        Dual {
            value: self.concat_cols(a.value, b.value),
            tangent: match (a.tangent, b.tangent) {
                (Some(x), Some(y)) => Some(self.concat_cols(x, y)),
                _ => None,
            },
        }
    }

    /// Right-multiply by a constant `m×k` selector/mixing matrix: `x·Sᵀ`.
    pub fn dual_linear_const(&mut self, d: Dual, s: Matrix) -> Dual {
        let s = self.constant(s);
        Dual {
            value: self.matmul_t(d.value, s),
            tangent: d.tangent.map(|t| self.matmul_t(t, s)),
        }
    }

    /// Row-wise Euclidean norm. Rows with a zero norm get a zero tangent.
    pub fn dual_row_norm(&mut self, d: Dual) -> Dual {
        let value = self.row_norm(d.value);
        let tangent = d.tangent.map(|t| {
            let inv = self.safe_recip(value);
            let unit = self.mul_col(d.value, inv);
            let tiled = self.tile(unit, 3);
            self.row_dot(tiled, t)
        });
        Dual { value, tangent }
    }

    /// `n×1` dual → `n×3` gradient node.
    pub fn gradient_of(&mut self, d: Dual) -> NodeId {
        let t = d.tangent.expect("dual has no tangent");
        assert_eq!(self.value(t).cols(), 1, "gradient_of expects a scalar field");
        self.blocks_to_cols(t, 3)
    }
}
