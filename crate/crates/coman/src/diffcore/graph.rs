//! Define-by-run reverse-mode differentiation.
//!
//! A `Graph` owns a flat arena of nodes; values are computed eagerly as
//! nodes are appended, so node inputs always have smaller ids and the
//! arena order is already topological. `backward` walks ids in reverse
//! once, accumulating adjoints.
//!
//! The graph is rebuilt per minibatch. Tensors are plain values; nothing
//! here is shared or interior-mutable.

use crate::activations::{self, ActEval, ConvexBase, Curvature};
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Per-column curvature assignment for monotone activations.
#[derive(Debug, Clone)]
pub enum KindSpec {
    Uniform(Curvature),
    PerColumn(Vec<Curvature>),
}

impl KindSpec {
    fn kind_at(&self, col: usize) -> Curvature {
        match self {
            KindSpec::Uniform(k) => *k,
            KindSpec::PerColumn(v) => v[col],
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    SumAll(NodeId),
    MeanAll(NodeId),
    SumRows(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    Abs(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Elu(NodeId, f64),
    Softplus(NodeId),
    ClampUnit(NodeId, f64),
    BroadcastTo(NodeId),
    Reshape(NodeId),
    Gather(NodeId, Vec<usize>),
    /// Shaped monotone activation; CLU bases read their two shape
    /// parameters from scalar nodes so gradients reach them.
    MonoAct {
        x: NodeId,
        base: ConvexBase,
        params: Option<(NodeId, NodeId)>,
        kinds: KindSpec,
    },
    /// max(|x|, floor): keeps a trainable scale parameter positive.
    AbsFloor(NodeId, f64),
    /// min(max(|a|, floor), cap / b): clamps the product of two positive
    /// parameters from above, elementwise against a scalar b.
    ProdClamp {
        raw: NodeId,
        other: NodeId,
        floor: f64,
        cap: f64,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    adjoint: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Summary returned by `backward`.
#[derive(Debug, Clone, Copy)]
pub struct BackwardInfo {
    /// Nodes whose adjoint was propagated; each reachable node is
    /// visited exactly once.
    pub visited: usize,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            adjoint: None,
        });
        id
    }

    /// Leaf node holding an input, parameter, or constant.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of a node after `backward`; zeros if the node does not
    /// influence the loss.
    pub fn adjoint(&self, id: NodeId) -> Tensor {
        match &self.nodes[id.0].adjoint {
            Some(t) => t.clone(),
            None => Tensor::zeros(self.nodes[id.0].value.shape()),
        }
    }

    // ---- op constructors ---------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_zip(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_zip(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).broadcast_zip(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), v))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(Op::ConcatCols(a, b), v))
    }

    /// Concatenate several matrices column-wise, left to right.
    pub fn concat_all(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.concat_cols(acc, p)?;
        }
        Ok(acc)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a).slice_cols(start, end)?;
        Ok(self.push(Op::SliceCols(a, start, end), v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(Op::MeanAll(a), v)
    }

    pub fn sum_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).sum_rows();
        self.push(Op::SumRows(a), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::AddScalar(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(activations::sigmoid);
        self.push(Op::Sigmoid(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), v)
    }

    /// Natural log; errors on non-positive entries rather than emitting
    /// NaN into the graph.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::InvalidParam(
                "log requires strictly positive inputs".into(),
            ));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log(a), v))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { alpha * x });
        self.push(Op::LeakyRelu(a, alpha), v)
    }

    pub fn elu(&mut self, a: NodeId, alpha: f64) -> NodeId {
        let v = self.value(a).map(|x| activations::elu(x, alpha));
        self.push(Op::Elu(a, alpha), v)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(activations::softplus);
        self.push(Op::Softplus(a), v)
    }

    /// Clamp into [eps, 1 - eps]; gradient passes only strictly inside.
    pub fn clamp_unit(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = self.value(a).map(|x| x.max(eps).min(1.0 - eps));
        self.push(Op::ClampUnit(a, eps), v)
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).broadcast_to(shape)?;
        Ok(self.push(Op::BroadcastTo(a), v))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a).reshaped(shape)?;
        Ok(self.push(Op::Reshape(a), v))
    }

    /// Select rows of a table by index; out-of-range indices are a caller
    /// bug, not an embedding miss (vocabularies reserve row 0 for that).
    pub fn gather(&mut self, table: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        let t = self.value(table);
        if t.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: t.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        let mut out = Tensor::zeros(&[indices.len(), d]);
        for (r, &ix) in indices.iter().enumerate() {
            if ix >= rows {
                return Err(Error::SizeMismatch {
                    op: "gather",
                    shape: t.shape().to_vec(),
                    expected: rows,
                    got: ix,
                });
            }
            out.data_mut()[r * d..(r + 1) * d]
                .copy_from_slice(&t.data()[ix * d..(ix + 1) * d]);
        }
        Ok(self.push(Op::Gather(table, indices), out))
    }

    /// Shaped monotone activation over every element; `params` supplies the
    /// scalar shape-parameter nodes for the CLU base.
    pub fn mono_act(
        &mut self,
        x: NodeId,
        base: ConvexBase,
        params: Option<(NodeId, NodeId)>,
        kinds: KindSpec,
    ) -> Result<NodeId> {
        let (w0, w1) = self.mono_params(base, params)?;
        if let KindSpec::PerColumn(v) = &kinds {
            let cols = self.value(x).cols();
            if v.len() != cols {
                return Err(Error::WidthMismatch {
                    what: "activation kinds",
                    expected: cols,
                    got: v.len(),
                });
            }
        }
        let xt = self.value(x);
        let cols = xt.cols();
        let mut out = Tensor::zeros(xt.shape());
        for (i, &xv) in xt.data().iter().enumerate() {
            let k = kinds.kind_at(i % cols);
            out.data_mut()[i] = activations::shaped_eval(base, k, xv, w0, w1).y;
        }
        Ok(self.push(
            Op::MonoAct {
                x,
                base,
                params,
                kinds,
            },
            out,
        ))
    }

    fn mono_params(
        &self,
        base: ConvexBase,
        params: Option<(NodeId, NodeId)>,
    ) -> Result<(f64, f64)> {
        match (base, params) {
            (ConvexBase::Clu, Some((a, b))) => Ok((self.value(a).item(), self.value(b).item())),
            (ConvexBase::Clu, None) => Err(Error::InvalidParam(
                "clu activation requires shape parameter nodes".into(),
            )),
            (_, _) => Ok((1.0, 1.0)),
        }
    }

    pub fn abs_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.value(a).map(|x| x.abs().max(floor));
        self.push(Op::AbsFloor(a, floor), v)
    }

    /// Effective second CLU parameter: |raw| floored, then clamped so the
    /// product with the (already positive) first parameter stays <= cap.
    pub fn prod_clamp(&mut self, raw: NodeId, other: NodeId, floor: f64, cap: f64) -> NodeId {
        let b = self.value(other).item();
        let v = self.value(raw).map(|x| x.abs().max(floor).min(cap / b));
        self.push(
            Op::ProdClamp {
                raw,
                other,
                floor,
                cap,
            },
            v,
        )
    }

    // ---- backward ----------------------------------------------------------

    pub fn backward(&mut self, loss: NodeId) -> Result<BackwardInfo> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        for n in &mut self.nodes {
            n.adjoint = None;
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        let mut visited = 0usize;
        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            visited += 1;
            self.propagate(id, &g, &mut adj)?;
            self.nodes[id].adjoint = Some(g);
        }
        Ok(BackwardInfo { visited })
    }

    fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        match &mut adj[id.0] {
            Some(t) => t.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                Self::accumulate(adj, *a, g.reduce_to_shape(self.value(*a).shape()));
                Self::accumulate(adj, *b, g.reduce_to_shape(self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                Self::accumulate(adj, *a, g.reduce_to_shape(self.value(*a).shape()));
                let mut gb = g.clone();
                gb.scale_in_place(-1.0);
                Self::accumulate(adj, *b, gb.reduce_to_shape(self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let ga = g.broadcast_zip(self.value(*b), "mul", |x, y| x * y)?;
                let gb = g.broadcast_zip(self.value(*a), "mul", |x, y| x * y)?;
                Self::accumulate(adj, *a, ga.reduce_to_shape(self.value(*a).shape()));
                Self::accumulate(adj, *b, gb.reduce_to_shape(self.value(*b).shape()));
            }
            Op::Matmul(a, b) => {
                let ga = g.matmul(&self.value(*b).transpose()?)?;
                let gb = self.value(*a).transpose()?.matmul(g)?;
                Self::accumulate(adj, *a, ga);
                Self::accumulate(adj, *b, gb);
            }
            Op::Transpose(a) => {
                Self::accumulate(adj, *a, g.transpose()?);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols();
                let cb = self.value(*b).cols();
                let ga = g.slice_cols(0, ca)?.reshaped(self.value(*a).shape().to_vec())?;
                let gb = g
                    .slice_cols(ca, ca + cb)?
                    .reshaped(self.value(*b).shape().to_vec())?;
                Self::accumulate(adj, *a, ga);
                Self::accumulate(adj, *b, gb);
            }
            Op::SliceCols(a, start, _end) => {
                let src = self.value(*a);
                let (n, c) = src.as_matrix();
                let w = g.cols();
                let mut ga = Tensor::zeros(src.shape());
                for i in 0..n {
                    for j in 0..w {
                        ga.data_mut()[i * c + start + j] = g.data()[i * w + j];
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::SumAll(a) => {
                Self::accumulate(adj, *a, Tensor::full(self.value(*a).shape(), g.item()));
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                Self::accumulate(adj, *a, Tensor::full(self.value(*a).shape(), g.item() / n));
            }
            Op::SumRows(a) => {
                let src = self.value(*a);
                let (n, c) = src.as_matrix();
                let mut ga = Tensor::zeros(src.shape());
                for i in 0..n {
                    for j in 0..c {
                        ga.data_mut()[i * c + j] = g.data()[i];
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::Scale(a, c) => {
                let mut ga = g.clone();
                ga.scale_in_place(*c);
                Self::accumulate(adj, *a, ga);
            }
            Op::AddScalar(a) => {
                Self::accumulate(adj, *a, g.clone());
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y))?;
                Self::accumulate(adj, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (n, c) = y.as_matrix();
                let mut ga = Tensor::zeros(y.shape());
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..c {
                        dot += g.data()[i * c + j] * y.data()[i * c + j];
                    }
                    for j in 0..c {
                        ga.data_mut()[i * c + j] =
                            y.data()[i * c + j] * (g.data()[i * c + j] - dot);
                    }
                }
                Self::accumulate(adj, *a, ga);
            }
            Op::Abs(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * sign(x))?;
                Self::accumulate(adj, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * y)?;
                Self::accumulate(adj, *a, ga);
            }
            Op::Log(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv / x)?;
                Self::accumulate(adj, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                Self::accumulate(adj, *a, ga);
            }
            Op::LeakyRelu(a, alpha) => {
                let al = *alpha;
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { al * gv })?;
                Self::accumulate(adj, *a, ga);
            }
            Op::Elu(a, alpha) => {
                let al = *alpha;
                let ga = g.zip_map(self.value(*a), |gv, x| {
                    if x >= 0.0 {
                        gv
                    } else {
                        gv * al * x.exp()
                    }
                })?;
                Self::accumulate(adj, *a, ga);
            }
            Op::Softplus(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| gv * activations::sigmoid(x))?;
                Self::accumulate(adj, *a, ga);
            }
            Op::ClampUnit(a, eps) => {
                let e = *eps;
                let ga = g.zip_map(self.value(*a), |gv, x| {
                    if x > e && x < 1.0 - e {
                        gv
                    } else {
                        0.0
                    }
                })?;
                Self::accumulate(adj, *a, ga);
            }
            Op::BroadcastTo(a) => {
                Self::accumulate(adj, *a, g.reduce_to_shape(self.value(*a).shape()));
            }
            Op::Reshape(a) => {
                Self::accumulate(adj, *a, g.reshaped(self.value(*a).shape().to_vec())?);
            }
            Op::Gather(table, indices) => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let mut gt = Tensor::zeros(t.shape());
                for (r, &ix) in indices.iter().enumerate() {
                    for j in 0..d {
                        gt.data_mut()[ix * d + j] += g.data()[r * d + j];
                    }
                }
                Self::accumulate(adj, *table, gt);
            }
            Op::MonoAct {
                x,
                base,
                params,
                kinds,
            } => {
                let (w0, w1) = self.mono_params(*base, *params)?;
                let xt = self.value(*x);
                let cols = xt.cols();
                let mut gx = Tensor::zeros(xt.shape());
                let (mut gw0, mut gw1) = (0.0, 0.0);
                for (i, &xv) in xt.data().iter().enumerate() {
                    let k = kinds.kind_at(i % cols);
                    let ActEval { dx, dw0, dw1, .. } =
                        activations::shaped_eval(*base, k, xv, w0, w1);
                    let gv = g.data()[i];
                    gx.data_mut()[i] = gv * dx;
                    gw0 += gv * dw0;
                    gw1 += gv * dw1;
                }
                Self::accumulate(adj, *x, gx);
                if let Some((p0, p1)) = params {
                    Self::accumulate(adj, *p0, Tensor::scalar(gw0));
                    Self::accumulate(adj, *p1, Tensor::scalar(gw1));
                }
            }
            Op::AbsFloor(a, floor) => {
                let f = *floor;
                let ga = g.zip_map(self.value(*a), |gv, x| {
                    if x.abs() > f {
                        gv * sign(x)
                    } else {
                        0.0
                    }
                })?;
                Self::accumulate(adj, *a, ga);
            }
            Op::ProdClamp {
                raw,
                other,
                floor,
                cap,
            } => {
                let b = self.value(*other).item();
                let limit = cap / b;
                let mut graw = Tensor::zeros(self.value(*raw).shape());
                let mut gother = 0.0;
                for (i, &x) in self.value(*raw).data().iter().enumerate() {
                    let floored = x.abs().max(*floor);
                    let gv = g.data()[i];
                    if floored <= limit {
                        graw.data_mut()[i] = if x.abs() > *floor { gv * sign(x) } else { 0.0 };
                    } else {
                        gother += gv * (-cap / (b * b));
                    }
                }
                Self::accumulate(adj, *raw, graw);
                Self::accumulate(adj, *other, Tensor::scalar(gother));
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
