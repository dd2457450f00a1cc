use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Tensor, TensorError};

/// Handle of a recorded node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise op is expanded against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Expand {
    Same,
    /// Right operand has the shape of one leading-batch row of the left.
    Rows,
    /// Right operand holds a single value.
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId, Expand),
    Sub(NodeId, NodeId, Expand),
    Mul(NodeId, NodeId, Expand),
    Neg(NodeId),
    Scale(NodeId, f64),
    Shift(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    LogSigmoid(NodeId),
    LogOneMinusSigmoid(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    Broadcast(NodeId, Expand),
    Concat(Vec<NodeId>, usize),
    Slice(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    Reshape(NodeId),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of primitive ops over [`Tensor`] values.
///
/// A graph is built for one forward pass and dropped afterwards; recording
/// order is always a valid evaluation order, so [`Graph::backward`] is a single
/// reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// A value recorded on a graph.
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({}, {:?})", self.id.0, self.shape())
    }
}

type Result<T> = std::result::Result<T, TensorError>;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf; gradients flow into it.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(Rc::new(value), Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Rc<Tensor>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = NodeId(nodes.len());
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { graph: self, id }
    }

    fn value_of(&self, id: NodeId) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id.0].value)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes.borrow()[id.0].needs_grad
    }

    fn record(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<Var<'_>> {
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite { op: op_name, index });
        }
        let needs_grad = inputs.iter().any(|&i| self.needs_grad(i));
        Ok(self.push(Rc::new(value), op, needs_grad))
    }

    /// Joins 2-D tensors along `axis` (0 = stack rows, 1 = join columns), or
    /// 1-D tensors end to end.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| self.value_of(p.id)).collect();
        let first = values.first().ok_or(TensorError::Shape {
            op: "concat",
            lhs: Vec::new(),
            rhs: Vec::new(),
        })?;
        let rank = first.rank();
        let shape_err = |t: &Tensor| TensorError::Shape {
            op: "concat",
            lhs: first.shape().to_vec(),
            rhs: t.shape().to_vec(),
        };
        let out = match (rank, axis) {
            (1, 0) | (2, 0) => {
                let mut data = Vec::new();
                let mut rows = 0;
                for v in &values {
                    if v.rank() != rank || (rank == 2 && v.shape()[1] != first.shape()[1]) {
                        return Err(shape_err(v));
                    }
                    rows += v.shape()[0];
                    data.extend_from_slice(v.data());
                }
                let mut shape = first.shape().to_vec();
                shape[0] = rows;
                Tensor::new(shape, data)?
            }
            (2, 1) => {
                let n = first.shape()[0];
                let mut width = 0;
                for v in &values {
                    if v.rank() != 2 || v.shape()[0] != n {
                        return Err(shape_err(v));
                    }
                    width += v.shape()[1];
                }
                let mut data = Vec::with_capacity(n * width);
                for i in 0..n {
                    for v in &values {
                        data.extend_from_slice(v.row(i));
                    }
                }
                Tensor::matrix(n, width, data)?
            }
            _ => {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: vec![axis],
                })
            }
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        self.record("concat", out, Op::Concat(ids.clone(), axis), &ids)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id.0].value;
        if root_value.len() != 1 || root_value.rank() > 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[root.id.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));

        for idx in (0..=root.id.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &node.value;
            let val = |id: NodeId| -> &Tensor { &nodes[id.0].value };
            let wants = |id: NodeId| nodes[id.0].needs_grad;
            let send = |id: NodeId, contribution: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !wants(id) {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            };

            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b, e) => {
                    if wants(*b) {
                        send(*b, reduce_expand(&g, *e, val(*b).shape()), &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Sub(a, b, e) => {
                    if wants(*b) {
                        let r = reduce_expand(&g, *e, val(*b).shape());
                        send(*b, r.map(|v| -v), &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Mul(a, b, e) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*b) {
                        let prod = zip_expand(&g, av, Expand::Same, |gi, ai| gi * ai);
                        send(*b, reduce_expand(&prod, *e, bv.shape()), &mut grads);
                    }
                    if wants(*a) {
                        send(*a, zip_expand(&g, bv, *e, |gi, bi| gi * bi), &mut grads);
                    }
                }
                Op::Neg(a) => send(*a, g.map(|v| -v), &mut grads),
                Op::Scale(a, c) => {
                    let c = *c;
                    send(*a, g.map(|v| v * c), &mut grads)
                }
                Op::Shift(a) => send(*a, g, &mut grads),
                Op::Exp(a) => send(*a, zip_expand(&g, out, Expand::Same, |gi, y| gi * y), &mut grads),
                Op::Log(a) => send(*a, zip_expand(&g, val(*a), Expand::Same, |gi, x| gi / x), &mut grads),
                Op::Tanh(a) => send(
                    *a,
                    zip_expand(&g, out, Expand::Same, |gi, y| gi * (1.0 - y * y)),
                    &mut grads,
                ),
                Op::Sigmoid(a) => send(
                    *a,
                    zip_expand(&g, out, Expand::Same, |gi, y| gi * y * (1.0 - y)),
                    &mut grads,
                ),
                Op::Softplus(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| gi * sigmoid(x)),
                    &mut grads,
                ),
                Op::LogSigmoid(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| gi * sigmoid(-x)),
                    &mut grads,
                ),
                Op::LogOneMinusSigmoid(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| -gi * sigmoid(x)),
                    &mut grads,
                ),
                Op::Relu(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| if x > 0.0 { gi } else { 0.0 }),
                    &mut grads,
                ),
                Op::Abs(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| {
                        if x > 0.0 {
                            gi
                        } else if x < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    }),
                    &mut grads,
                ),
                Op::Square(a) => send(
                    *a,
                    zip_expand(&g, val(*a), Expand::Same, |gi, x| 2.0 * x * gi),
                    &mut grads,
                ),
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(
                        *a,
                        zip_expand(&g, val(*a), Expand::Same, |gi, x| {
                            if (lo..=hi).contains(&x) {
                                gi
                            } else {
                                0.0
                            }
                        }),
                        &mut grads,
                    )
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k) = (av.shape()[0], av.shape()[1]);
                    let n = bv.shape()[1];
                    if wants(*a) {
                        // dA = G · Bᵀ
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), (n as isize, 1), bv.data(), (1, n as isize), &mut da);
                        send(*a, Tensor::matrix(m, k, da).expect("shape"), &mut grads);
                    }
                    if wants(*b) {
                        // dB = Aᵀ · G
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, av.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db);
                        send(*b, Tensor::matrix(k, n, db).expect("shape"), &mut grads);
                    }
                }
                Op::Sum(a) => {
                    let s = g.item();
                    send(*a, Tensor::full(val(*a).shape().to_vec(), s), &mut grads)
                }
                Op::Mean(a) => {
                    let av = val(*a);
                    let s = g.item() / av.len() as f64;
                    send(*a, Tensor::full(av.shape().to_vec(), s), &mut grads)
                }
                Op::SumRows(a) => {
                    let av = val(*a);
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let mut d = Vec::with_capacity(n * k);
                    for &gi in g.data() {
                        d.extend(std::iter::repeat_n(gi, k));
                    }
                    send(*a, Tensor::matrix(n, k, d).expect("shape"), &mut grads)
                }
                Op::Broadcast(a, e) => {
                    let r = reduce_expand(&g, *e, val(*a).shape());
                    send(*a, r, &mut grads)
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pv = val(p);
                        if *axis == 0 {
                            let len = pv.len();
                            if wants(p) {
                                let d = g.data()[offset..offset + len].to_vec();
                                send(p, Tensor::new(pv.shape().to_vec(), d).expect("shape"), &mut grads);
                            }
                            offset += len;
                        } else {
                            let (n, w) = (pv.shape()[0], pv.shape()[1]);
                            let total = g.shape()[1];
                            if wants(p) {
                                let mut d = Vec::with_capacity(n * w);
                                for i in 0..n {
                                    d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + w]);
                                }
                                send(p, Tensor::matrix(n, w, d).expect("shape"), &mut grads);
                            }
                            offset += w;
                        }
                    }
                }
                Op::Slice(a, start, _end) => {
                    let av = val(*a);
                    let stride = av.cols();
                    let mut d = vec![0.0; av.len()];
                    d[start * stride..start * stride + g.len()].copy_from_slice(g.data());
                    send(*a, Tensor::new(av.shape().to_vec(), d).expect("shape"), &mut grads)
                }
                Op::SliceCols(a, start, end) => {
                    let av = val(*a);
                    let (n, k) = (av.shape()[0], av.shape()[1]);
                    let w = end - start;
                    let mut d = vec![0.0; n * k];
                    for i in 0..n {
                        d[i * k + start..i * k + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                    }
                    send(*a, Tensor::matrix(n, k, d).expect("shape"), &mut grads)
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    send(*a, g.reshape(shape).expect("same size"), &mut grads)
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Result of [`Graph::backward`]: ∂root/∂v for every leaf. Intermediate
/// gradients are released during the sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`; zero when the root does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: NodeId) -> Tensor {
        match self.grads.get(id.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }

    pub fn is_reached(&self, var: Var<'_>) -> bool {
        matches!(self.grads.get(var.id.0), Some(Some(_)))
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Tensor {
        (*self.graph.value_of(self.id)).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id.0].value.shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id.0].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.needs_grad(self.id)
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(self) -> Var<'g> {
        let value = self.graph.value_of(self.id);
        self.graph.push(value, Op::Leaf, false)
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let out = self.graph.value_of(self.id).map(f);
        self.graph.record(name, out, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'g>,
        name: &'static str,
        make: fn(NodeId, NodeId, Expand) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'g>> {
        let (a, b) = (self.graph.value_of(self.id), self.graph.value_of(other.id));
        let e = expand_kind(name, a.shape(), b.shape())?;
        let out = zip_expand(&a, &b, e, f);
        self.graph.record(name, out, make(self.id, other.id, e), &[self.id, other.id])
    }

    /// Elementwise sum; `other` may be a single row of `self` or a scalar.
    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, "mul", Op::Mul, |x, y| x * y)
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.unary("neg", Op::Neg(self.id), |x| -x)
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        self.unary("scale", Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Result<Var<'g>> {
        self.unary("add_scalar", Op::Shift(self.id), |x| x + c)
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(self) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        if let Some((i, x)) = v.data().iter().enumerate().find(|(_, &x)| x <= 0.0 || x.is_nan()) {
            return Err(TensorError::Domain {
                op: "log",
                detail: format!("entry {i} = {x}"),
            });
        }
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn tanh(self) -> Result<Var<'g>> {
        self.unary("tanh", Op::Tanh(self.id), fast_tanh)
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn softplus(self) -> Result<Var<'g>> {
        self.unary("softplus", Op::Softplus(self.id), softplus)
    }

    /// log σ(x) = −softplus(−x).
    pub fn log_sigmoid(self) -> Result<Var<'g>> {
        self.unary("log_sigmoid", Op::LogSigmoid(self.id), |x| -softplus(-x))
    }

    /// log(1 − σ(x)) = −softplus(x).
    pub fn log1m_sigmoid(self) -> Result<Var<'g>> {
        self.unary("log1m_sigmoid", Op::LogOneMinusSigmoid(self.id), |x| -softplus(x))
    }

    pub fn relu(self) -> Result<Var<'g>> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.unary("abs", Op::Abs(self.id), f64::abs)
    }

    pub fn square(self) -> Result<Var<'g>> {
        self.unary("square", Op::Square(self.id), |x| x * x)
    }

    /// Clamps into `[lo, hi]`; gradient is the identity inside the range and
    /// zero outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'g>> {
        self.unary("clamp", Op::Clamp(self.id, lo, hi), |x| x.clamp(lo, hi))
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        let (a, b) = (self.graph.value_of(self.id), self.graph.value_of(other.id));
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), (k as isize, 1), b.data(), (n as isize, 1), &mut c);
        let out = Tensor::matrix(m, n, c)?;
        self.graph
            .record("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        self.graph
            .record("sum", Tensor::scalar(v.sum()), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        if v.is_empty() {
            return Err(TensorError::Shape {
                op: "mean",
                lhs: v.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        self.graph
            .record("mean", Tensor::scalar(v.mean()), Op::Mean(self.id), &[self.id])
    }

    /// `[n, k] → [n]`, summing each row.
    pub fn sum_rows(self) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        if v.rank() != 2 {
            return Err(TensorError::Shape {
                op: "sum_rows",
                lhs: v.shape().to_vec(),
                rhs: Vec::new(),
            });
        }
        let out: Vec<f64> = (0..v.shape()[0]).map(|i| v.row(i).iter().sum()).collect();
        self.graph
            .record("sum_rows", Tensor::vector(out), Op::SumRows(self.id), &[self.id])
    }

    /// Expands a scalar, or one leading-batch row, to `shape`.
    pub fn broadcast_to(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        let e = expand_kind("broadcast", shape, v.shape())?;
        let base = Tensor::zeros(shape.to_vec());
        let out = zip_expand(&base, &v, e, |_, y| y);
        self.graph
            .record("broadcast", out, Op::Broadcast(self.id, e), &[self.id])
    }

    /// Leading-axis slice `[start, end)` of a vector or matrix.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        if v.rank() == 0 || start > end || end > v.shape()[0] {
            return Err(TensorError::Shape {
                op: "slice",
                lhs: v.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let stride = v.cols();
        let mut shape = v.shape().to_vec();
        shape[0] = end - start;
        let out = Tensor::new(shape, v.data()[start * stride..end * stride].to_vec())?;
        self.graph
            .record("slice", out, Op::Slice(self.id, start, end), &[self.id])
    }

    /// Column slice `[start, end)` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>> {
        let v = self.graph.value_of(self.id);
        if v.rank() != 2 || start > end || end > v.shape()[1] {
            return Err(TensorError::Shape {
                op: "slice",
                lhs: v.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let (n, k) = (v.shape()[0], v.shape()[1]);
        let mut d = Vec::with_capacity(n * (end - start));
        for i in 0..n {
            d.extend_from_slice(&v.data()[i * k + start..i * k + end]);
        }
        let out = Tensor::matrix(n, end - start, d)?;
        self.graph
            .record("slice", out, Op::SliceCols(self.id, start, end), &[self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let v = (*self.graph.value_of(self.id)).clone();
        let out = v.reshape(shape.to_vec())?;
        self.graph.record("reshape", out, Op::Reshape(self.id), &[self.id])
    }
}

fn expand_kind(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Expand> {
    if lhs == rhs {
        Ok(Expand::Same)
    } else if rhs.len() <= 1 && rhs.iter().product::<usize>() == 1 {
        Ok(Expand::Scalar)
    } else if !lhs.is_empty() && &lhs[1..] == rhs {
        Ok(Expand::Rows)
    } else {
        Err(TensorError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        })
    }
}

/// Elementwise `f(a, b)` with `b` expanded against `a`; output has `a`'s shape.
fn zip_expand(a: &Tensor, b: &Tensor, e: Expand, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (ad, bd) = (a.data(), b.data());
    let data: Vec<f64> = match e {
        Expand::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        Expand::Scalar => {
            let y = bd[0];
            ad.iter().map(|&x| f(x, y)).collect()
        }
        Expand::Rows => {
            let w = bd.len();
            ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % w])).collect()
        }
    };
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

/// Adjoint of the expansion: sums `g` back down to `shape`.
fn reduce_expand(g: &Tensor, e: Expand, shape: &[usize]) -> Tensor {
    match e {
        Expand::Same => g.clone(),
        Expand::Scalar => Tensor::full(shape.to_vec(), g.sum()),
        Expand::Rows => {
            let w: usize = shape.iter().product();
            let mut acc = vec![0.0; w];
            for (i, &v) in g.data().iter().enumerate() {
                acc[i % w] += v;
            }
            Tensor::new(shape.to_vec(), acc).expect("row shape")
        }
    }
}

/// `c = a · b` for an `[m, k]` by `[k, n]` product with arbitrary strides on
/// the inputs and a dense row-major output.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.fill(0.0);
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a` ([m, k]) and
    // `b` ([k, n]) and `c` is a dense row-major [m, n] buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `tanh` through a single `exp`. Near zero the libm routine is kept, since
/// `1 - 2/(e^{2x}+1)` loses relative precision there.
fn fast_tanh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.25 {
        return x.tanh();
    }
    if a > 20.0 {
        return x.signum();
    }
    let t = 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
    t.copysign(x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
