use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::{DenseArray, GradError};

/// Handle to a node in one [`Graph`]. Handles from one graph are meaningless
/// in another.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable leaf. Gradients are reported per `ParamId`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    /// Elementwise sum. The right operand may also be a `[1, n]` row that is
    /// broadcast over the rows of an `[m, n]` left operand.
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    ScalarMul(f64),
    Matmul,
    Tanh,
    Relu,
    Sum,
    Mean,
    Square,
    /// Concatenation of 1-D arrays (axis 0) or 2-D arrays along axis 0 or 1.
    Concat {
        axis: usize,
    },
    /// Half-open range `[start, end)` of the last axis.
    Slice {
        start: usize,
        end: usize,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::ScalarMul(_) => "scalar_mul",
            Primitive::Matmul => "matmul",
            Primitive::Tanh => "tanh",
            Primitive::Relu => "relu",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::Square => "square",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
        }
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Param(ParamId),
    Constant,
    Op(Primitive),
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseArray,
    origin: Origin,
    parents: Vec<NodeId>,
    tracked: bool,
}

/// Tape of primitive applications in creation order.
///
/// A node is *tracked* when at least one of its inputs is tracked; params are
/// the tracked leaves. Untracked (detached) nodes keep their value but record
/// no parents, so nothing upstream of them can receive gradient.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Number of tracked nodes on the tape.
    pub fn recorded_len(&self) -> usize {
        self.nodes.iter().filter(|n| n.tracked).count()
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    pub fn is_tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    pub fn param(&mut self, id: ParamId, value: DenseArray) -> NodeId {
        self.push(Node {
            value,
            origin: Origin::Param(id),
            parents: Vec::new(),
            tracked: true,
        })
    }

    pub fn constant(&mut self, value: DenseArray) -> NodeId {
        self.push(Node {
            value,
            origin: Origin::Constant,
            parents: Vec::new(),
            tracked: false,
        })
    }

    /// Copy of `id`'s value with no gradient path back to it.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Applies `op` to `inputs`, records it when any input is tracked, and
    /// returns the new node.
    pub fn apply(&mut self, op: Primitive, inputs: &[NodeId]) -> Result<NodeId, GradError> {
        let value = {
            let vals: Vec<&DenseArray> = inputs.iter().map(|&i| &self.nodes[i.0].value).collect();
            forward(op, &vals)?
        };
        if !value.is_finite() {
            return Err(GradError::NonFinite { op: op.name() });
        }
        let tracked = inputs.iter().any(|&i| self.nodes[i.0].tracked);
        let node = if tracked {
            Node {
                value,
                origin: Origin::Op(op),
                parents: inputs.to_vec(),
                tracked: true,
            }
        } else {
            Node {
                value,
                origin: Origin::Constant,
                parents: Vec::new(),
                tracked: false,
            }
        };
        Ok(self.push(node))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId, GradError> {
        self.apply(Primitive::ScalarMul(s), &[a])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Matmul, &[a, b])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Relu, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Mean, &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        self.apply(Primitive::Square, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId, GradError> {
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId, GradError> {
        self.apply(Primitive::Slice { start, end }, &[a])
    }

    /// Count of tracked nodes that `loss` depends on.
    pub fn live_size(&self, loss: NodeId) -> usize {
        let mut seen = vec![false; loss.0 + 1];
        let mut stack = vec![loss];
        let mut count = 0;
        while let Some(id) = stack.pop() {
            if seen[id.0] || !self.nodes[id.0].tracked {
                continue;
            }
            seen[id.0] = true;
            count += 1;
            stack.extend(self.nodes[id.0].parents.iter().copied().filter(|p| p.0 < id.0));
        }
        count
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every param registered on this graph appears in the result; params the
    /// loss does not reach get zero arrays.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GradError> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(GradError::NotScalar {
                shape: loss_value.shape().to_vec(),
            });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(p) = node.parents.iter().find(|p| p.0 >= i) {
                return Err(GradError::Cycle { node: i, parent: p.0 });
            }
        }

        let mut grads: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].tracked {
            grads[loss.0] = Some(DenseArray::filled(loss_value.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Origin::Op(op) = node.origin {
                let parent_vals: Vec<&DenseArray> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                let adjoints = adjoint(op, &parent_vals, &node.value, &g);
                for (p, adj) in node.parents.iter().zip(adjoints) {
                    if !self.nodes[p.0].tracked {
                        continue;
                    }
                    match &mut grads[p.0] {
                        Some(acc) => acc.add_assign(&adj),
                        slot => *slot = Some(adj),
                    }
                }
            }
            grads[i] = Some(g);
        }

        let mut params: BTreeMap<ParamId, DenseArray> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Origin::Param(pid) = node.origin {
                let g = grads[i]
                    .clone()
                    .unwrap_or_else(|| DenseArray::zeros(node.value.shape()));
                match params.get_mut(&pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        params.insert(pid, g);
                    }
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    #[cfg(test)]
    pub(crate) fn corrupt_parent_for_test(&mut self, node: NodeId, parent: NodeId) {
        self.nodes[node.0].parents.push(parent);
    }
}

/// Result of [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    params: BTreeMap<ParamId, DenseArray>,
    nodes: Vec<Option<DenseArray>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&DenseArray> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &BTreeMap<ParamId, DenseArray> {
        &self.params
    }

    /// Gradient of the loss w.r.t. an intermediate node, if it was reached.
    pub fn node(&self, id: NodeId) -> Option<&DenseArray> {
        self.nodes.get(id.0).and_then(|g| g.as_ref())
    }

    /// Param gradients in `ParamId` order, consuming the result.
    pub fn into_param_vec(self) -> Vec<DenseArray> {
        self.params.into_values().collect()
    }
}

fn expect_arity(op: Primitive, inputs: &[&DenseArray], n: usize) -> Result<(), GradError> {
    if inputs.len() != n {
        return Err(GradError::Arity {
            op: op.name(),
            expected: n,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn mismatch(op: Primitive, a: &DenseArray, b: &DenseArray) -> GradError {
    GradError::ShapeMismatch {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn is_row_broadcast(a: &DenseArray, b: &DenseArray) -> bool {
    a.shape().len() == 2 && b.shape() == [1, a.shape()[1]] && a.shape()[0] > 1
}

fn forward(op: Primitive, inputs: &[&DenseArray]) -> Result<DenseArray, GradError> {
    match op {
        Primitive::Add => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                Ok(a.zip(b, |x, y| x + y))
            } else if is_row_broadcast(a, b) {
                let cols = a.cols();
                let mut out = a.clone();
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    *v += b.data()[i % cols];
                }
                Ok(out)
            } else {
                Err(mismatch(op, a, b))
            }
        }
        Primitive::Sub | Primitive::Mul => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a, b));
            }
            Ok(if op == Primitive::Sub {
                a.zip(b, |x, y| x - y)
            } else {
                a.zip(b, |x, y| x * y)
            })
        }
        Primitive::ScalarMul(s) => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(|x| x * s))
        }
        Primitive::Matmul => {
            expect_arity(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(op, a, b));
            }
            Ok(a.matmul2(b))
        }
        Primitive::Tanh => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(libm::tanh))
        }
        Primitive::Relu => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(|x| if x > 0.0 { x } else { 0.0 }))
        }
        Primitive::Square => {
            expect_arity(op, inputs, 1)?;
            Ok(inputs[0].map(|x| x * x))
        }
        Primitive::Sum => {
            expect_arity(op, inputs, 1)?;
            Ok(DenseArray::scalar(inputs[0].data().iter().sum()))
        }
        Primitive::Mean => {
            expect_arity(op, inputs, 1)?;
            let a = inputs[0];
            Ok(DenseArray::scalar(a.data().iter().sum::<f64>() / a.len() as f64))
        }
        Primitive::Concat { axis } => concat_forward(op, axis, inputs),
        Primitive::Slice { start, end } => {
            expect_arity(op, inputs, 1)?;
            let a = inputs[0];
            let cols = a.cols();
            if start >= end || end > cols {
                return Err(GradError::BadSlice { start, end, len: cols });
            }
            let width = end - start;
            let mut data = Vec::with_capacity(a.rows() * width);
            for r in 0..a.rows() {
                data.extend_from_slice(&a.row_slice(r)[start..end]);
            }
            let mut shape = a.shape().to_vec();
            *shape.last_mut().unwrap() = width;
            DenseArray::new(shape, data)
        }
    }
}

fn concat_forward(op: Primitive, axis: usize, inputs: &[&DenseArray]) -> Result<DenseArray, GradError> {
    let Some(first) = inputs.first() else {
        return Err(GradError::Arity {
            op: op.name(),
            expected: 1,
            got: 0,
        });
    };
    let ndim = first.shape().len();
    if ndim > 2 || axis >= ndim {
        return Err(GradError::InvalidShape {
            shape: first.shape().to_vec(),
        });
    }
    for b in &inputs[1..] {
        let ok = b.shape().len() == ndim && (0..ndim).all(|d| d == axis || b.shape()[d] == first.shape()[d]);
        if !ok {
            return Err(mismatch(op, first, b));
        }
    }
    if ndim == 1 || axis == 0 {
        let data: Vec<f64> = inputs.iter().flat_map(|a| a.data().iter().copied()).collect();
        let mut shape = first.shape().to_vec();
        shape[0] = inputs.iter().map(|a| a.shape()[0]).sum();
        return DenseArray::new(shape, data);
    }
    let rows = first.shape()[0];
    let total_cols: usize = inputs.iter().map(|a| a.shape()[1]).sum();
    let mut data = Vec::with_capacity(rows * total_cols);
    for r in 0..rows {
        for a in inputs {
            data.extend_from_slice(a.row_slice(r));
        }
    }
    DenseArray::new(vec![rows, total_cols], data)
}

/// Vector-Jacobian products of `op` for each input, given the upstream
/// gradient `g` and the forward output `out`.
fn adjoint(op: Primitive, inputs: &[&DenseArray], out: &DenseArray, g: &DenseArray) -> Vec<DenseArray> {
    match op {
        Primitive::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                vec![g.clone(), g.clone()]
            } else {
                let cols = a.cols();
                let mut gb = DenseArray::zeros(b.shape());
                for (i, v) in g.data().iter().enumerate() {
                    gb.data_mut()[i % cols] += v;
                }
                vec![g.clone(), gb]
            }
        }
        Primitive::Sub => vec![g.clone(), g.map(|x| -x)],
        Primitive::Mul => vec![g.zip(inputs[1], |gi, b| gi * b), g.zip(inputs[0], |gi, a| gi * a)],
        Primitive::ScalarMul(s) => vec![g.map(|x| x * s)],
        Primitive::Matmul => {
            let (a, b) = (inputs[0], inputs[1]);
            vec![g.matmul2(&b.transpose2()), a.transpose2().matmul2(g)]
        }
        Primitive::Tanh => vec![g.zip(out, |gi, y| gi * (1.0 - y * y))],
        Primitive::Relu => vec![g.zip(inputs[0], |gi, x| if x > 0.0 { gi } else { 0.0 })],
        Primitive::Square => vec![g.zip(inputs[0], |gi, x| 2.0 * gi * x)],
        Primitive::Sum => vec![DenseArray::filled(inputs[0].shape(), g.data()[0])],
        Primitive::Mean => {
            let n = inputs[0].len() as f64;
            vec![DenseArray::filled(inputs[0].shape(), g.data()[0] / n)]
        }
        Primitive::Concat { axis } => {
            let ndim = inputs[0].shape().len();
            let mut parts = Vec::with_capacity(inputs.len());
            if ndim == 1 || axis == 0 {
                let mut offset = 0;
                for a in inputs {
                    let n = a.len();
                    parts.push(
                        DenseArray::new(a.shape().to_vec(), g.data()[offset..offset + n].to_vec())
                            .expect("adjoint shape"),
                    );
                    offset += n;
                }
            } else {
                let mut col = 0;
                for a in inputs {
                    let w = a.shape()[1];
                    let mut data = Vec::with_capacity(a.len());
                    for r in 0..a.shape()[0] {
                        data.extend_from_slice(&g.row_slice(r)[col..col + w]);
                    }
                    parts.push(DenseArray::new(a.shape().to_vec(), data).expect("adjoint shape"));
                    col += w;
                }
            }
            parts
        }
        Primitive::Slice { start, end } => {
            let a = inputs[0];
            let mut ga = DenseArray::zeros(a.shape());
            let cols = a.cols();
            let width = end - start;
            for r in 0..a.rows() {
                ga.data_mut()[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * width..(r + 1) * width]);
            }
            vec![ga]
        }
    }
}
