use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Recorded primitive. Inputs always precede the node that uses them.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { param_offset: Option<usize> },
    /// `a · wᵀ`
    MatMulT(NodeId, NodeId),
    /// `a + b` with `b` a `1×m` row broadcast over rows.
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    /// `a ⊙ 1[by > 0]`, `by` tiled over row blocks of `a`; no derivative into `by`.
    MaskPositive(NodeId, NodeId),
    /// `a ⊙ sign(by)`, `by` tiled over row blocks of `a`; no derivative into `by`.
    MulSign(NodeId, NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId, f64),
    Square(NodeId),
    Recip(NodeId),
    /// `1/x`, with value and derivative 0 where `x == 0`.
    SafeRecip(NodeId),
    /// Euclidean norm of every row, `n×k → n×1`.
    RowNorm(NodeId),
    /// Row-wise dot product, `n×k, n×k → n×1`.
    RowDot(NodeId, NodeId),
    /// `a_ij · s_i` with `s` an `n×1` column.
    MulCol(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    /// Stack `times` copies of `a` vertically.
    Tile(NodeId, usize),
    /// `(blocks·n)×1 → n×blocks`, block `d` becoming column `d`.
    BlocksToCols(NodeId, usize),
    Gather(NodeId, Vec<usize>),
    Mean(NodeId),
    StopGradient,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMulT(..) => "matmul_t",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::MaskPositive(..) => "mask_positive",
            Op::MulSign(..) => "mul_sign",
            Op::Abs(..) => "abs",
            Op::Exp(..) => "exp",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::Recip(..) => "recip",
            Op::SafeRecip(..) => "safe_recip",
            Op::RowNorm(..) => "row_norm",
            Op::RowDot(..) => "row_dot",
            Op::MulCol(..) => "mul_col",
            Op::ConcatCols(..) => "concat_cols",
            Op::Tile(..) => "tile",
            Op::BlocksToCols(..) => "blocks_to_cols",
            Op::Gather(..) => "gather",
            Op::Mean(..) => "mean",
            Op::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Activation kinks (relu, abs, sign at exactly zero) take derivative 0.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softplus(v: f64, beta: f64) -> f64 {
    let z = beta * v;
    if z > 30.0 {
        v
    } else {
        z.exp().ln_1p() / beta
    }
}

/// Precision of recorded values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    Double,
    /// Every recorded value and adjoint is rounded to `f32`.
    Single,
}

/// Append-only record of batched matrix operations. Values are computed
/// eagerly as nodes are pushed; [`Graph::backward`] runs reverse
/// accumulation from a scalar node.
///
/// A graph is confined to one thread while it is being built.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_count: usize,
    precision: Precision,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Graph {
            precision,
            ..Graph::default()
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total number of scalar parameters registered with [`Graph::param`].
    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, mut value: Matrix) -> NodeId {
        if self.precision == Precision::Single {
            value.round_to_f32();
        }
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// A leaf with no parameter slot (its adjoint is still available).
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Leaf { param_offset: None }, value)
    }

    /// A trainable leaf; its entries occupy the next `value.len()` slots of
    /// the flat parameter vector.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        let offset = self.param_count;
        self.param_count += value.len();
        self.push(
            Op::Leaf {
                param_offset: Some(offset),
            },
            value,
        )
    }

    pub fn matmul_t(&mut self, a: NodeId, w: NodeId) -> NodeId {
        let (n, k) = self.v(a).shape();
        let (m, k2) = self.v(w).shape();
        assert_eq!(k, k2, "matmul_t inner dimension");
        let mut out = Matrix::zeros(n, m);
        gemm(
            n,
            k,
            m,
            self.v(a).as_slice(),
            false,
            self.v(w).as_slice(),
            true,
            out.as_mut_slice(),
        );
        self.push(Op::MatMulT(a, w), out)
    }

    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.v(a);
        let bv = self.v(b);
        assert_eq!((1, av.cols()), bv.shape(), "bias shape");
        let out = Matrix::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) + bv.get(0, j));
        self.push(Op::AddBias(a, b), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.v(a).zip_map(self.v(b), |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.v(a).zip_map(self.v(b), |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.v(a).zip_map(self.v(b), |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.v(a).map(|x| x * c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.v(a).map(|x| x + c);
        self.push(Op::AddScalar(a), out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a), out)
    }

    fn tiled_map(&self, a: NodeId, by: NodeId, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let av = self.v(a);
        let bv = self.v(by);
        assert_eq!(av.cols(), bv.cols(), "tiled op column mismatch");
        assert!(
            bv.rows() > 0 && av.rows().is_multiple_of(bv.rows()),
            "tiled op row mismatch"
        );
        let r = bv.rows();
        Matrix::from_fn(av.rows(), av.cols(), |i, j| f(av.get(i, j), bv.get(i % r, j)))
    }

    pub fn mask_positive(&mut self, a: NodeId, by: NodeId) -> NodeId {
        let out = self.tiled_map(a, by, |x, m| if m > 0.0 { x } else { 0.0 });
        self.push(Op::MaskPositive(a, by), out)
    }

    pub fn mul_sign(&mut self, a: NodeId, by: NodeId) -> NodeId {
        let out = self.tiled_map(a, by, |x, s| x * sign(s));
        self.push(Op::MulSign(a, by), out)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(f64::abs);
        self.push(Op::Abs(a), out)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(f64::exp);
        self.push(Op::Exp(a), out)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(f64::sin);
        self.push(Op::Sin(a), out)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(f64::cos);
        self.push(Op::Cos(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out)
    }

    pub fn softplus(&mut self, a: NodeId, beta: f64) -> NodeId {
        let out = self.v(a).map(|x| softplus(x, beta));
        self.push(Op::Softplus(a, beta), out)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(|x| x * x);
        self.push(Op::Square(a), out)
    }

    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(|x| 1.0 / x);
        self.push(Op::Recip(a), out)
    }

    pub fn safe_recip(&mut self, a: NodeId) -> NodeId {
        let out = self.v(a).map(|x| if x == 0.0 { 0.0 } else { 1.0 / x });
        self.push(Op::SafeRecip(a), out)
    }

    pub fn row_norm(&mut self, a: NodeId) -> NodeId {
        let av = self.v(a);
        let out = Matrix::from_fn(av.rows(), 1, |i, _| {
            av.row(i).iter().map(|x| x * x).sum::<f64>().sqrt()
        });
        self.push(Op::RowNorm(a), out)
    }

    pub fn row_dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.v(a), self.v(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape mismatch");
        let out = Matrix::from_fn(av.rows(), 1, |i, _| {
            av.row(i).iter().zip(bv.row(i)).map(|(x, y)| x * y).sum()
        });
        self.push(Op::RowDot(a, b), out)
    }

    pub fn mul_col(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let (av, sv) = (self.v(a), self.v(s));
        assert_eq!(sv.shape(), (av.rows(), 1), "mul_col expects an n×1 column");
        let out = Matrix::from_fn(av.rows(), av.cols(), |i, j| av.get(i, j) * sv.get(i, 0));
        self.push(Op::MulCol(a, s), out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.v(a), self.v(b));
        assert_eq!(av.rows(), bv.rows(), "concat_cols row mismatch");
        let ca = av.cols();
        let out = Matrix::from_fn(av.rows(), ca + bv.cols(), |i, j| {
            if j < ca {
                av.get(i, j)
            } else {
                bv.get(i, j - ca)
            }
        });
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn tile(&mut self, a: NodeId, times: usize) -> NodeId {
        let av = self.v(a);
        let r = av.rows();
        let out = Matrix::from_fn(r * times, av.cols(), |i, j| av.get(i % r, j));
        self.push(Op::Tile(a, times), out)
    }

    pub fn blocks_to_cols(&mut self, a: NodeId, blocks: usize) -> NodeId {
        let av = self.v(a);
        assert_eq!(av.cols(), 1, "blocks_to_cols expects a column");
        assert_eq!(av.rows() % blocks, 0, "blocks_to_cols row count");
        let n = av.rows() / blocks;
        let out = Matrix::from_fn(n, blocks, |i, d| av.get(d * n + i, 0));
        self.push(Op::BlocksToCols(a, blocks), out)
    }

    pub fn gather(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let av = self.v(a);
        let out = Matrix::from_fn(rows.len(), av.cols(), |i, j| av.get(rows[i], j));
        self.push(Op::Gather(a, rows), out)
    }

    /// Mean of all entries as a `1×1` node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.v(a);
        let out = Matrix::scalar(av.as_slice().iter().sum::<f64>() / av.len() as f64);
        self.push(Op::Mean(a), out)
    }

    /// Identity on values, zero derivative. Applying it twice is the same
    /// as applying it once.
    pub fn stop_gradient(&mut self, a: NodeId) -> NodeId {
        if let Op::StopGradient = self.nodes[a.0].op {
            return a;
        }
        let out = self.v(a).clone();
        self.push(Op::StopGradient, out)
    }

    /// Reverse accumulation from the scalar `objective`.
    pub fn backward(&self, objective: NodeId) -> Result<Adjoints> {
        let obj = self.v(objective);
        assert_eq!(obj.shape(), (1, 1), "objective must be a 1×1 node");
        if !obj.item().is_finite() {
            return Err(Error::Numeric {
                node: objective.0,
                op: self.nodes[objective.0].op.name(),
                message: format!("objective value {}", obj.item()),
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; objective.0 + 1];
        adj[objective.0] = Some(Matrix::scalar(1.0));
        let mut params = vec![0.0; self.param_count];
        let single = self.precision == Precision::Single;

        for idx in (0..=objective.0).rev() {
            let Some(mut dy) = adj[idx].take() else {
                continue;
            };
            if single {
                dy.round_to_f32();
            }
            let node = &self.nodes[idx];
            if !dy.is_finite() {
                return Err(Error::Numeric {
                    node: idx,
                    op: node.op.name(),
                    message: "non-finite adjoint".into(),
                });
            }
            let y = &node.value;
            let give = |adj: &mut Vec<Option<Matrix>>, to: NodeId, g: Matrix| match &mut adj
                [to.0]
            {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Leaf { param_offset } => {
                    if let Some(off) = *param_offset {
                        for (k, g) in dy.as_slice().iter().enumerate() {
                            params[off + k] += g;
                        }
                    }
                    adj[idx] = Some(dy);
                }
                Op::MatMulT(a, w) => {
                    let av = self.v(*a);
                    let wv = self.v(*w);
                    let (n, k) = av.shape();
                    let m = wv.rows();
                    let mut da = Matrix::zeros(n, k);
                    gemm(n, m, k, dy.as_slice(), false, wv.as_slice(), false, da.as_mut_slice());
                    let mut dw = Matrix::zeros(m, k);
                    gemm(m, n, k, dy.as_slice(), true, av.as_slice(), false, dw.as_mut_slice());
                    give(&mut adj, *a, da);
                    give(&mut adj, *w, dw);
                }
                Op::AddBias(a, b) => {
                    let mut db = Matrix::zeros(1, dy.cols());
                    for i in 0..dy.rows() {
                        for j in 0..dy.cols() {
                            db.as_mut_slice()[j] += dy.get(i, j);
                        }
                    }
                    give(&mut adj, *b, db);
                    give(&mut adj, *a, dy);
                }
                Op::Add(a, b) => {
                    give(&mut adj, *a, dy.clone());
                    give(&mut adj, *b, dy);
                }
                Op::Sub(a, b) => {
                    give(&mut adj, *b, dy.map(|v| -v));
                    give(&mut adj, *a, dy);
                }
                Op::Mul(a, b) => {
                    let da = dy.zip_map(self.v(*b), |g, x| g * x);
                    let db = dy.zip_map(self.v(*a), |g, x| g * x);
                    give(&mut adj, *a, da);
                    give(&mut adj, *b, db);
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    give(&mut adj, *a, dy.map(|g| g * c));
                }
                Op::AddScalar(a) => give(&mut adj, *a, dy),
                Op::StopGradient => {}
                Op::Relu(a) => {
                    let da = dy.zip_map(self.v(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    give(&mut adj, *a, da);
                }
                Op::MaskPositive(a, by) => {
                    let bv = self.v(*by);
                    let r = bv.rows();
                    let da = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| {
                        if bv.get(i % r, j) > 0.0 {
                            dy.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    give(&mut adj, *a, da);
                }
                Op::MulSign(a, by) => {
                    let bv = self.v(*by);
                    let r = bv.rows();
                    let da = Matrix::from_fn(dy.rows(), dy.cols(), |i, j| {
                        dy.get(i, j) * sign(bv.get(i % r, j))
                    });
                    give(&mut adj, *a, da);
                }
                Op::Abs(a) => {
                    let da = dy.zip_map(self.v(*a), |g, x| g * sign(x));
                    give(&mut adj, *a, da);
                }
                Op::Exp(a) => {
                    let da = dy.zip_map(y, |g, e| g * e);
                    give(&mut adj, *a, da);
                }
                Op::Sin(a) => {
                    let da = dy.zip_map(self.v(*a), |g, x| g * x.cos());
                    give(&mut adj, *a, da);
                }
                Op::Cos(a) => {
                    let da = dy.zip_map(self.v(*a), |g, x| -g * x.sin());
                    give(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = dy.zip_map(y, |g, s| g * s * (1.0 - s));
                    give(&mut adj, *a, da);
                }
                Op::Softplus(a, beta) => {
                    let beta = *beta;
                    let da = dy.zip_map(self.v(*a), |g, x| g * sigmoid(beta * x));
                    give(&mut adj, *a, da);
                }
                Op::Square(a) => {
                    let da = dy.zip_map(self.v(*a), |g, x| 2.0 * g * x);
                    give(&mut adj, *a, da);
                }
                Op::Recip(a) | Op::SafeRecip(a) => {
                    let da = dy.zip_map(y, |g, r| -g * r * r);
                    give(&mut adj, *a, da);
                }
                Op::RowNorm(a) => {
                    let av = self.v(*a);
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| {
                        let n = y.get(i, 0);
                        if n > 0.0 {
                            dy.get(i, 0) * av.get(i, j) / n
                        } else {
                            0.0
                        }
                    });
                    give(&mut adj, *a, da);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.v(*a), self.v(*b));
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| dy.get(i, 0) * bv.get(i, j));
                    let db = Matrix::from_fn(av.rows(), av.cols(), |i, j| dy.get(i, 0) * av.get(i, j));
                    give(&mut adj, *a, da);
                    give(&mut adj, *b, db);
                }
                Op::MulCol(a, s) => {
                    let (av, sv) = (self.v(*a), self.v(*s));
                    let da = Matrix::from_fn(av.rows(), av.cols(), |i, j| dy.get(i, j) * sv.get(i, 0));
                    let ds = Matrix::from_fn(av.rows(), 1, |i, _| {
                        dy.row(i).iter().zip(av.row(i)).map(|(g, x)| g * x).sum()
                    });
                    give(&mut adj, *a, da);
                    give(&mut adj, *s, ds);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.v(*a).cols();
                    let cb = self.v(*b).cols();
                    let da = Matrix::from_fn(dy.rows(), ca, |i, j| dy.get(i, j));
                    let db = Matrix::from_fn(dy.rows(), cb, |i, j| dy.get(i, ca + j));
                    give(&mut adj, *a, da);
                    give(&mut adj, *b, db);
                }
                Op::Tile(a, times) => {
                    let r = self.v(*a).rows();
                    let mut da = Matrix::zeros(r, dy.cols());
                    for t in 0..*times {
                        for i in 0..r {
                            for j in 0..dy.cols() {
                                let v = da.get(i, j) + dy.get(t * r + i, j);
                                da.set(i, j, v);
                            }
                        }
                    }
                    give(&mut adj, *a, da);
                }
                Op::BlocksToCols(a, blocks) => {
                    let n = dy.rows();
                    let da = Matrix::from_fn(n * blocks, 1, |r, _| dy.get(r % n, r / n));
                    give(&mut adj, *a, da);
                }
                Op::Gather(a, rows) => {
                    let av = self.v(*a);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for (k, &r) in rows.iter().enumerate() {
                        for j in 0..av.cols() {
                            let v = da.get(r, j) + dy.get(k, j);
                            da.set(r, j, v);
                        }
                    }
                    give(&mut adj, *a, da);
                }
                Op::Mean(a) => {
                    let av = self.v(*a);
                    let g = dy.item() / av.len() as f64;
                    give(&mut adj, *a, Matrix::from_vec(av.rows(), av.cols(), vec![g; av.len()]));
                }
            }
        }
        if let Some(k) = params.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                node: objective.0,
                op: "leaf",
                message: format!("non-finite gradient for parameter {k}"),
            });
        }
        Ok(Adjoints { adj, params })
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<Option<Matrix>>,
    params: Vec<f64>,
}

impl Adjoints {
    /// Flat `∂objective/∂θ` in parameter registration order.
    pub fn param_gradients(&self) -> &[f64] {
        &self.params
    }

    pub fn into_param_gradients(self) -> Vec<f64> {
        self.params
    }

    /// Adjoint of a leaf node, if the objective depends on it.
    pub fn of(&self, leaf: NodeId) -> Option<&Matrix> {
        self.adj.get(leaf.0).and_then(|m| m.as_ref())
    }
}
