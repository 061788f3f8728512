//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every node stores its forward
//! value; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every node, leaves included, so the same machinery yields
//! parameter gradients and input gradients.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Binary elementwise ops broadcast their right operand
/// over rows (`[1, c]`), columns (`[r, 1]`) or everything (`[1]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    Tanh,
    Sigmoid,
    Exp,
    Log,
    /// Row-wise softmax with max subtraction.
    Softmax,
    /// Row-wise fused log-softmax.
    LogSoftmax,
    /// `log σ(x)` computed as `min(x, 0) − log1p(e^{−|x|})`.
    LogSigmoid,
    Square,
    Sum,
    Mean,
    /// Per-row sum, `[r, c] → [r, 1]`.
    SumCols,
    /// Column-wise concatenation of any number of matrices with equal rows.
    Concat,
    /// Column range `[start, end)`.
    Slice { start: usize, end: usize },
    /// Per-row flattened outer product, `[r, a] ⊗ [r, b] → [r, a·b]`.
    Outer,
    StopGradient,
    /// Identity forward; backward multiplies the upstream gradient by `−λ`.
    GradReversal(f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Relu => "relu",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::LogSigmoid => "log_sigmoid",
            Op::Square => "square",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::SumCols => "sum_cols",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Outer => "outer",
            Op::StopGradient => "stop_gradient",
            Op::GradReversal(_) => "grad_reversal",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Values substituted for stop-gradient outputs, in creation order.
    pinned: Option<Vec<Tensor>>,
    stops_seen: usize,
}

/// Accumulated gradients of one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root w.r.t. `id`, or `None` when no path reaches it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient w.r.t. `id`, zero-filled when unreachable from the root.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]),
        }
    }
}

fn bcast_ok(lhs: (usize, usize), rhs: (usize, usize)) -> bool {
    (rhs.0 == lhs.0 || rhs.0 == 1) && (rhs.1 == lhs.1 || rhs.1 == 1)
}

fn bcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (r, c) = a.dims2();
    let (br, bc) = b.dims2();
    let bd = b.data();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let bi = if br == 1 { 0 } else { i };
        for j in 0..c {
            let bj = if bc == 1 { 0 } else { j };
            out.push(f(a.data()[i * c + j], bd[bi * bc + bj]));
        }
    }
    Tensor::new(a.shape(), out).expect("broadcast output shape")
}

/// Sums a full-shape gradient down to a broadcast operand's shape.
fn reduce_to(grad: &Tensor, target_shape: &[usize], target_dims: (usize, usize)) -> Tensor {
    let (r, c) = grad.dims2();
    let (tr, tc) = target_dims;
    if tr == r && tc == c {
        return Tensor::new(target_shape, grad.data().to_vec()).expect("same size");
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        let ti = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let tj = if tc == 1 { 0 } else { j };
            out[ti * tc + tj] += grad.data()[i * c + j];
        }
    }
    Tensor::new(target_shape, out).expect("reduced shape")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - libm::log1p(libm::exp(-x.abs()))
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut s = 0.0;
        for &v in row {
            let e = libm::exp(v - m);
            s += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= s;
        }
    }
    Tensor::new(x.shape(), out).expect("softmax shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = x.dims2();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(x.shape(), out).expect("log_softmax shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose `k`-th stop-gradient node outputs `pinned[k]` instead of
    /// its input. Finite-difference checks use this to hold detached
    /// quantities at their base values while parameters are perturbed.
    pub fn with_pinned_stops(pinned: Vec<Tensor>) -> Self {
        Graph { nodes: Vec::new(), pinned: Some(pinned), stops_seen: 0 }
    }

    /// Outputs of every stop-gradient node, in creation order.
    pub fn stop_values(&self) -> Vec<Tensor> {
        self.nodes.iter().filter(|n| n.op == Op::StopGradient).map(|n| n.value.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a data or parameter leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, inputs: Vec::new(), value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        for id in ids {
            if id.0 >= self.nodes.len() {
                return Err(Error::UnknownNode(id.0));
            }
        }
        Ok(())
    }

    fn arity(op: &Op, n: usize) -> Result<()> {
        let ok = match op {
            Op::Leaf => false,
            Op::MatMul | Op::Add | Op::Sub | Op::Mul | Op::Outer => n == 2,
            Op::Concat => n >= 1,
            _ => n == 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(alloc::format!("{} cannot take {} inputs", op.name(), n)))
        }
    }

    /// Appends a node computing `op` over `inputs` and returns its id.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        self.check(inputs)?;
        Self::arity(&op, inputs.len())?;
        let mut value = self.forward(&op, inputs)?;
        if op == Op::StopGradient {
            if let Some(p) = self.pinned.as_ref().and_then(|p| p.get(self.stops_seen)) {
                if p.shape() != value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "pinned stop_gradient",
                        lhs: p.shape().to_vec(),
                        rhs: value.shape().to_vec(),
                    });
                }
                value = p.clone();
            }
            self.stops_seen += 1;
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node { op, inputs: inputs.to_vec(), value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn forward(&self, op: &Op, inputs: &[NodeId]) -> Result<Tensor> {
        let x = self.value(inputs[0]);
        let mismatch = |name: &'static str, a: &Tensor, b: &Tensor| Error::ShapeMismatch {
            op: name,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        Ok(match *op {
            Op::Leaf => unreachable!("leaf nodes are created via Graph::leaf"),
            Op::MatMul => x.matmul(self.value(inputs[1]))?,
            Op::Add | Op::Sub | Op::Mul => {
                let y = self.value(inputs[1]);
                if !bcast_ok(x.dims2(), y.dims2()) {
                    return Err(mismatch(op.name(), x, y));
                }
                match op {
                    Op::Add => bcast_zip(x, y, |a, b| a + b),
                    Op::Sub => bcast_zip(x, y, |a, b| a - b),
                    _ => bcast_zip(x, y, |a, b| a * b),
                }
            }
            Op::Scale(k) => x.map(|v| k * v),
            Op::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Tanh => x.map(libm::tanh),
            Op::Sigmoid => x.map(sigmoid),
            Op::Exp => x.map(libm::exp),
            Op::Log => {
                if let Some(&v) = x.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain { op: "log", value: v });
                }
                x.map(libm::log)
            }
            Op::Softmax => softmax_rows(x),
            Op::LogSoftmax => log_softmax_rows(x),
            Op::LogSigmoid => x.map(log_sigmoid),
            Op::Square => x.map(|v| v * v),
            Op::Sum => Tensor::scalar(x.sum()),
            Op::Mean => Tensor::scalar(x.sum() / x.len() as f64),
            Op::SumCols => {
                let (r, _) = x.dims2();
                Tensor::matrix(r, 1, (0..r).map(|i| x.row(i).iter().sum()).collect())
            }
            Op::Concat => {
                let rows = x.rows();
                let mut cols = 0;
                for &id in inputs {
                    let t = self.value(id);
                    if t.rows() != rows {
                        return Err(mismatch("concat", x, t));
                    }
                    cols += t.cols();
                }
                let mut out = Vec::with_capacity(rows * cols);
                for i in 0..rows {
                    for &id in inputs {
                        out.extend_from_slice(self.value(id).row(i));
                    }
                }
                Tensor::matrix(rows, cols, out)
            }
            Op::Slice { start, end } => {
                let (r, c) = x.dims2();
                if start >= end || end > c {
                    return Err(Error::invalid(alloc::format!(
                        "slice [{start}, {end}) out of range for {c} columns"
                    )));
                }
                let mut out = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    out.extend_from_slice(&x.row(i)[start..end]);
                }
                Tensor::matrix(r, end - start, out)
            }
            Op::Outer => {
                let y = self.value(inputs[1]);
                let (r, a) = x.dims2();
                let (r2, b) = y.dims2();
                if r != r2 {
                    return Err(mismatch("outer", x, y));
                }
                let mut out = Vec::with_capacity(r * a * b);
                for i in 0..r {
                    for &u in x.row(i) {
                        out.extend(y.row(i).iter().map(|&v| u * v));
                    }
                }
                Tensor::matrix(r, a * b, out)
            }
            Op::StopGradient | Op::GradReversal(_) => x.clone(),
        })
    }

    /// Reverse pass from a scalar `root`. The root's own gradient is 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        self.check(&[root])?;
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions = self.local_grads(node, &g);
            grads[idx] = Some(g);
            for (input, contrib) in node.inputs.iter().zip(contributions) {
                let Some(contrib) = contrib else { continue };
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
        let ins = &node.inputs;
        let y = &node.value;
        match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let ga = g.matmul(&b.transpose()).expect("matmul grad");
                let gb = a.transpose().matmul(g).expect("matmul grad");
                vec![
                    Some(ga.reshape(a.shape()).expect("shape")),
                    Some(gb.reshape(b.shape()).expect("shape")),
                ]
            }
            Op::Add | Op::Sub => {
                let b = self.value(ins[1]);
                let gb = reduce_to(g, b.shape(), b.dims2());
                let gb = if matches!(node.op, Op::Sub) { gb.map(|v| -v) } else { gb };
                vec![Some(g.clone()), Some(gb)]
            }
            Op::Mul => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let ga = bcast_zip(g, b, |gv, bv| gv * bv);
                let full = g.zip_map(a, |gv, av| gv * av);
                vec![Some(ga), Some(reduce_to(&full, b.shape(), b.dims2()))]
            }
            Op::Scale(k) => vec![Some(g.map(|v| k * v))],
            Op::Relu => {
                let x = self.value(ins[0]);
                vec![Some(g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }))]
            }
            Op::Tanh => vec![Some(g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv)))],
            Op::Sigmoid => vec![Some(g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv)))],
            Op::Exp => vec![Some(g.zip_map(y, |gv, yv| gv * yv))],
            Op::Log => {
                let x = self.value(ins[0]);
                vec![Some(g.zip_map(x, |gv, xv| gv / xv))]
            }
            Op::Softmax => {
                let (r, c) = y.dims2();
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                vec![Some(Tensor::new(y.shape(), out).expect("shape"))]
            }
            Op::LogSoftmax => {
                let (r, c) = y.dims2();
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let gs: f64 = gr.iter().sum();
                    out.extend(yr.iter().zip(gr).map(|(&yv, &gv)| gv - libm::exp(yv) * gs));
                }
                vec![Some(Tensor::new(y.shape(), out).expect("shape"))]
            }
            Op::LogSigmoid => {
                let x = self.value(ins[0]);
                vec![Some(g.zip_map(x, |gv, xv| gv * sigmoid(-xv)))]
            }
            Op::Square => {
                let x = self.value(ins[0]);
                vec![Some(g.zip_map(x, |gv, xv| 2.0 * xv * gv))]
            }
            Op::Sum => {
                let x = self.value(ins[0]);
                vec![Some(Tensor::full(x.shape(), g.item()))]
            }
            Op::Mean => {
                let x = self.value(ins[0]);
                vec![Some(Tensor::full(x.shape(), g.item() / x.len() as f64))]
            }
            Op::SumCols => {
                let x = self.value(ins[0]);
                let (r, c) = x.dims2();
                let mut out = Vec::with_capacity(r * c);
                for i in 0..r {
                    out.extend(core::iter::repeat_n(g.data()[i], c));
                }
                vec![Some(Tensor::new(x.shape(), out).expect("shape"))]
            }
            Op::Concat => {
                let rows = y.rows();
                let mut offset = 0;
                let mut parts = Vec::with_capacity(ins.len());
                for &id in ins {
                    let t = self.value(id);
                    let c = t.cols();
                    let mut out = Vec::with_capacity(rows * c);
                    for i in 0..rows {
                        out.extend_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    parts.push(Some(Tensor::new(t.shape(), out).expect("shape")));
                }
                parts
            }
            Op::Slice { start, end } => {
                let x = self.value(ins[0]);
                let (r, c) = x.dims2();
                let mut out = vec![0.0; r * c];
                let w = end - start;
                for i in 0..r {
                    out[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                vec![Some(Tensor::new(x.shape(), out).expect("shape"))]
            }
            Op::Outer => {
                let a = self.value(ins[0]);
                let b = self.value(ins[1]);
                let (r, na) = a.dims2();
                let nb = b.cols();
                let mut ga = vec![0.0; r * na];
                let mut gb = vec![0.0; r * nb];
                for i in 0..r {
                    let grow = g.row(i);
                    let (arow, brow) = (a.row(i), b.row(i));
                    for p in 0..na {
                        for q in 0..nb {
                            let gv = grow[p * nb + q];
                            ga[i * na + p] += gv * brow[q];
                            gb[i * nb + q] += gv * arow[p];
                        }
                    }
                }
                vec![
                    Some(Tensor::new(a.shape(), ga).expect("shape")),
                    Some(Tensor::new(b.shape(), gb).expect("shape")),
                ]
            }
            Op::StopGradient => vec![None],
            Op::GradReversal(lambda) => vec![Some(g.map(|v| -lambda * v))],
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.apply(Op::Scale(k), &[a])
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Tanh, &[a])
    }
    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softmax, &[a])
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::LogSoftmax, &[a])
    }
    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::LogSigmoid, &[a])
    }
    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[a])
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Mean, &[a])
    }
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::SumCols, &[a])
    }
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Concat, parts)
    }
    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { start, end }, &[a])
    }
    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Outer, &[a, b])
    }
    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::StopGradient, &[a])
    }
    pub fn grad_reversal(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        self.apply(Op::GradReversal(lambda), &[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0; 3]));
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grad_reversal_is_identity_forward_and_negates_backward() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.3, -1.7, 2.5]));
        let r = g.grad_reversal(x, 0.7).unwrap();
        assert_eq!(g.value(r), g.value(x));
        let s = g.square(r).unwrap();
        let root = g.sum(s).unwrap();
        let grads = g.backward(root).unwrap();
        let up = grads.wrt(r);
        let gx = grads.wrt(x);
        for (a, b) in gx.data().iter().zip(up.data()) {
            assert_eq!(*a, -0.7 * b);
        }
    }

    #[test]
    fn stop_gradient_blocks() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = g.stop_gradient(x).unwrap();
        let q = g.square(s).unwrap();
        let root = g.sum(q).unwrap();
        let grads = g.backward(root).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn sum_and_mean_square_grads() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let root = g.sum(x).unwrap();
        assert_eq!(g.backward(root).unwrap().wrt(x).data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let s = g.square(x).unwrap();
        let root = g.mean(s).unwrap();
        assert_eq!(g.backward(root).unwrap().wrt(x).data(), &[1.0, 2.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn log_of_nonpositive_is_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
        let c = g.leaf(Tensor::matrix(3, 2, vec![0.0; 6]));
        assert!(matches!(g.add(a, c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn overflow_is_non_finite_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1000.0]));
        assert!(matches!(g.exp(x), Err(Error::NonFinite("exp"))));
    }
}
