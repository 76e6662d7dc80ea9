//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value; nodes only reference
//! earlier nodes, so the tape is topologically ordered by construction and
//! backward is a single reverse sweep.

use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::linalg::{least_squares_factored, Cholesky};
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// Elementwise add; the right operand may be a `[1, n]` row broadcast over rows.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Reshape(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    LeastSquares {
        design: NodeId,
        target: NodeId,
        chol: Box<Cholesky>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    tracked: bool,
}

/// Recorded operation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Leaf nodes created for each parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Binding {
    nodes: Vec<NodeId>,
    names: Vec<String>,
}

impl Binding {
    pub fn node(&self, i: usize) -> NodeId {
        self.nodes[i]
    }

    pub fn get(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name).map(|i| self.nodes[i])
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }
}

/// Gradients of a scalar with respect to every tracked node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `node`; zeros when the loss does not depend on it.
    pub fn of(&self, node: NodeId) -> Tensor {
        match &self.grads[node.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[node.0]),
        }
    }

    /// Gradients keyed like the store the binding was made from.
    pub fn for_binding(&self, binding: &Binding) -> ParameterStore {
        let mut out = ParameterStore::new();
        for (name, &node) in binding.names.iter().zip(&binding.nodes) {
            out.insert(name.clone(), self.of(node))
                .expect("binding names are unique");
        }
        out
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, tracked: bool) -> NodeId {
        self.nodes.push(Node { op, value, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf treated as constant by backward.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Creates one variable leaf per parameter.
    pub fn bind(&mut self, store: &ParameterStore) -> Binding {
        let nodes = store.tensors().iter().map(|t| self.variable(t.clone())).collect();
        Binding {
            nodes,
            names: store.names().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::MatMul(a, b), v, t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let v = if va.len() == vb.len() {
            va.add(vb)?
        } else if vb.rows() == 1 && va.cols() == vb.len() {
            let c = va.cols();
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(c) {
                for (x, y) in row.iter_mut().zip(vb.data()) {
                    *x += y;
                }
            }
            out
        } else {
            return Err(Error::Dimension(format!(
                "add {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        };
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Add(a, b), v, t))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Sub(a, b), v, t))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::Dimension(format!(
                "mul {:?} * {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let v = Tensor::from_parts(va.shape().to_vec(), data);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Op::Mul(a, b), v, t))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        let t = self.tracked(a);
        self.push(Op::Scale(a, c), v, t)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let t = self.tracked(a);
        self.push(Op::Relu(a), v, t)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let t = self.tracked(a);
        self.push(Op::Tanh(a), v, t)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let t = self.tracked(a);
        self.push(Op::Square(a), v, t)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(Op::Sum(a), v, t)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).mean());
        let t = self.tracked(a);
        self.push(Op::Mean(a), v, t)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).clone().reshape(shape)?;
        let t = self.tracked(a);
        Ok(self.push(Op::Reshape(a), v, t))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let t = self.tracked(a);
        self.push(Op::Transpose(a), v, t)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::vstack(&refs)?;
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), v, t))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::from_parts(vec![rows, cols], data),
            t,
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = self.value(a);
        if start > end || end > va.rows() {
            return Err(Error::Dimension(format!(
                "row slice {start}..{end} of {:?}",
                va.shape()
            )));
        }
        let v = va.slice_rows(start, end);
        let t = self.tracked(a);
        Ok(self.push(Op::SliceRows(a, start), v, t))
    }

    /// Ridge least-squares solve `(GᵀG + ridge·I)⁻¹ GᵀF`, differentiable in
    /// both the design `G` and the targets `F`.
    pub fn least_squares(&mut self, design: NodeId, target: NodeId, ridge: f64) -> Result<NodeId> {
        let (v, chol) = least_squares_factored(self.value(design), self.value(target), ridge)?;
        let t = self.tracked(design) || self.tracked(target);
        Ok(self.push(
            Op::LeastSquares {
                design,
                target,
                chol: Box::new(chol),
            },
            v,
            t,
        ))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (m, k, nn) = (va.rows(), va.cols(), vb.cols());
                    if self.tracked(*a) {
                        let mut da = vec![0.0; m * k];
                        gemm(m, nn, k, g.data(), false, vb.data(), true, &mut da, 0.0);
                        accumulate(&mut grads, *a, Tensor::from_parts(va.shape().to_vec(), da));
                    }
                    if self.tracked(*b) {
                        let mut db = vec![0.0; k * nn];
                        gemm(k, m, nn, va.data(), true, g.data(), false, &mut db, 0.0);
                        accumulate(&mut grads, *b, Tensor::from_parts(vb.shape().to_vec(), db));
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(*b) {
                        let vb = self.value(*b);
                        let gb = if vb.len() == g.len() {
                            g.clone().reshape(vb.shape())?
                        } else {
                            let c = vb.len();
                            let mut s = vec![0.0; c];
                            for row in g.data().chunks(c) {
                                for (x, y) in s.iter_mut().zip(row) {
                                    *x += y;
                                }
                            }
                            Tensor::from_parts(vb.shape().to_vec(), s)
                        };
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.tracked(*a) {
                        let shape = self.value(*a).shape().to_vec();
                        accumulate(&mut grads, *a, g.reshape(&shape)?);
                    }
                }
                Op::Sub(a, b) => {
                    if self.tracked(*b) {
                        let shape = self.value(*b).shape().to_vec();
                        accumulate(&mut grads, *b, g.scale(-1.0).reshape(&shape)?);
                    }
                    if self.tracked(*a) {
                        let shape = self.value(*a).shape().to_vec();
                        accumulate(&mut grads, *a, g.reshape(&shape)?);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.tracked(*a) {
                        let d = g.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, Tensor::from_parts(va.shape().to_vec(), d));
                    }
                    if self.tracked(*b) {
                        let d = g.data().iter().zip(va.data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, Tensor::from_parts(vb.shape().to_vec(), d));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::Relu(a) => {
                    let va = self.value(*a);
                    let d = g
                        .data()
                        .iter()
                        .zip(va.data())
                        .map(|(x, y)| if *y > 0.0 { *x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(va.shape().to_vec(), d));
                }
                Op::Tanh(a) => {
                    let d = g
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(x, y)| x * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(node.value.shape().to_vec(), d));
                }
                Op::Square(a) => {
                    let va = self.value(*a);
                    let d = g.data().iter().zip(va.data()).map(|(x, y)| 2.0 * x * y).collect();
                    accumulate(&mut grads, *a, Tensor::from_parts(va.shape().to_vec(), d));
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, Tensor::full(&shape, g.data()[0]));
                }
                Op::Mean(a) => {
                    let va = self.value(*a);
                    let n = va.len().max(1) as f64;
                    accumulate(&mut grads, *a, Tensor::full(va.shape(), g.data()[0] / n));
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    accumulate(&mut grads, *a, g.reshape(&shape)?);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        if self.tracked(*p) {
                            let shape = self.value(*p).shape().to_vec();
                            accumulate(&mut grads, *p, g.slice_rows(row, row + r).reshape(&shape)?);
                        }
                        row += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let rows = g.rows();
                    let mut col = 0;
                    for p in parts {
                        let vp = self.value(*p);
                        let c = vp.cols();
                        if self.tracked(*p) {
                            let mut d = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                d.extend_from_slice(&g.data()[r * total + col..r * total + col + c]);
                            }
                            accumulate(&mut grads, *p, Tensor::from_parts(vp.shape().to_vec(), d));
                        }
                        col += c;
                    }
                }
                Op::SliceRows(a, start) => {
                    let va = self.value(*a);
                    let c = va.cols();
                    let mut d = vec![0.0; va.len()];
                    d[start * c..start * c + g.len()].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, Tensor::from_parts(va.shape().to_vec(), d));
                }
                Op::LeastSquares {
                    design,
                    target,
                    chol,
                } => {
                    // α = M⁻¹GᵀF with M = GᵀG + ridge·I, w = M⁻¹ ᾱ, R = F − Gα:
                    // Ḡ = R wᵀ − G w αᵀ, F̄ = G w.
                    let gm = self.value(*design);
                    let alpha = &node.value;
                    let w = chol.solve(&g.clone().reshape(alpha.shape())?);
                    let gw = gm.matmul(&w)?;
                    if self.tracked(*design) {
                        let resid = self.value(*target).sub(&gm.matmul(alpha)?)?;
                        let (m, k, d) = (gm.rows(), gm.cols(), alpha.cols());
                        let mut dg = vec![0.0; m * k];
                        gemm(m, d, k, resid.data(), false, w.data(), true, &mut dg, 0.0);
                        let neg_gw = gw.scale(-1.0);
                        gemm(m, d, k, neg_gw.data(), false, alpha.data(), true, &mut dg, 1.0);
                        accumulate(&mut grads, *design, Tensor::from_parts(gm.shape().to_vec(), dg));
                    }
                    if self.tracked(*target) {
                        let shape = self.value(*target).shape().to_vec();
                        accumulate(&mut grads, *target, gw.reshape(&shape)?);
                    }
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (x, y) in existing.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::scalar(3.0));
        let l = g.square(w);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.of(w).data(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::zeros(&[2]));
        let l = g.square(w);
        assert!(matches!(g.backward(l), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::scalar(2.0));
        let unused = g.variable(Tensor::zeros(&[3, 2]));
        let l = g.square(w);
        let grads = g.backward(l).unwrap();
        let z = grads.of(unused);
        assert_eq!(z.shape(), &[3, 2]);
        assert!(z.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shared_node_accumulates() {
        // L = sum(x * x) via mul of a node with itself.
        let mut g = Graph::new();
        let x = g.variable(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.of(x).data(), &[2.0, -4.0, 1.0]);
    }
}
