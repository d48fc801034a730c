use super::Tensor;
use crate::error::{ensure, Error, Result};

/// Index of a node in a [`Graph`]. Inputs of a node always have smaller ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    TransposeLast(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    MaskRows { mask: NodeId, rows: NodeId },
    Reshape(NodeId),
    Sum { input: NodeId, axis: usize },
    Mean { input: NodeId, axis: usize },
    SumAll(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat { inputs: Vec<NodeId>, axis: usize },
    Slice { input: NodeId, axis: usize, start: usize },
    Entropy(NodeId),
    CrossEntropy { logits: NodeId, labels: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::TransposeLast(..) => "transpose",
            Op::Gather { .. } => "gather",
            Op::MaskRows { .. } => "mask_rows",
            Op::Reshape(..) => "reshape",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::SumAll(..) => "sum_all",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Entropy(..) => "entropy",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::MatMul(a, b)
            | Op::BatchMatMul(a, b) => vec![*a, *b],
            Op::MaskRows { mask, rows } => vec![*mask, *rows],
            Op::Scale(a, _)
            | Op::TransposeLast(a)
            | Op::Reshape(a)
            | Op::SumAll(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Entropy(a) => vec![*a],
            Op::Gather { table, .. } => vec![*table],
            Op::Sum { input, .. } | Op::Mean { input, .. } | Op::Slice { input, .. } => {
                vec![*input]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    trainable: bool,
    needs_grad: bool,
}

/// Append-only computation graph. Built fresh for every optimisation step.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the trainable leaves of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but errors for ids that were not trainable leaves.
    pub fn wrt(&self, id: NodeId) -> Result<&Tensor> {
        self.get(id)
            .ok_or_else(|| Error::contract(format!("no gradient recorded for node {}", id.0)))
    }
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// C(m,n) = A(m,k) B(k,n)
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// C(m,n) += A(m,k) B(n,k)^T
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// C(m,n) += A(k,m)^T B(k,n)
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    if cols == 0 {
        return out;
    }
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Entropy floor inside the logarithm.
pub(crate) const ENTROPY_EPS: f64 = 1e-12;

/// Tolerance for the probability-simplex check of [`Graph::entropy`].
const SIMPLEX_TOL: f64 = 1e-6;

fn add_into(slot: &mut Option<Vec<f64>>, contrib: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
        None => *slot = Some(contrib.to_vec()),
    }
}

fn add_into_owned(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(&contrib) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        let id = self.nodes.len();
        if let Some(bad) = value.data().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: id,
                op: op.name(),
                detail: format!("forward produced {bad}"),
            });
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            trainable: false,
            needs_grad,
        });
        Ok(NodeId(id))
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            trainable: false,
            needs_grad: false,
        });
        NodeId(id)
    }

    /// A trainable leaf; [`backward`](Self::backward) reports its gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            trainable: true,
            needs_grad: true,
        });
        NodeId(id)
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "{op}: shape mismatch {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        self.push(op, value)
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let mut value = self.value(a).clone();
        value.map_in_place(f);
        self.push(op, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "add")?;
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "sub")?;
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape(a, b, "mul")?;
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        ensure!(factor.is_finite(), "scale: non-finite factor");
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    /// Adds a vector along the last axis of `x` (bias broadcast).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let cols = *self.shape(x).last().unwrap_or(&1);
        ensure!(
            self.value(bias).numel() == cols,
            "add_bias: bias of {} values for last axis {}",
            self.value(bias).numel(),
            cols
        );
        let mut value = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_mut(cols.max(1)) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.push(Op::AddBias(x, bias), value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    /// Batched product of rank-3 tensors: (B,m,k) x (B,k,n) -> (B,m,n).
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        ensure!(
            sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
            "batch_matmul: incompatible shapes {sa:?} x {sb:?}"
        );
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for s in 0..bs {
            mm(
                &da[s * m * k..(s + 1) * m * k],
                &db[s * k * n..(s + 1) * k * n],
                m,
                k,
                n,
                &mut out[s * m * n..(s + 1) * m * n],
            );
        }
        self.push(Op::BatchMatMul(a, b), Tensor::from_parts(vec![bs, m, n], out))
    }

    /// Swaps the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        ensure!(
            shape.len() == 2 || shape.len() == 3,
            "transpose: rank {} unsupported",
            shape.len()
        );
        let r = shape.len();
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let batches = if r == 3 { shape[0] } else { 1 };
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for s in 0..batches {
            let off = s * rows * cols;
            for i in 0..rows {
                for j in 0..cols {
                    out[off + j * rows + i] = src[off + i * cols + j];
                }
            }
        }
        let mut new_shape = shape.clone();
        new_shape.swap(r - 2, r - 1);
        self.push(Op::TransposeLast(a), Tensor::from_parts(new_shape, out))
    }

    /// Embedding lookup: rows `ids` of a (V, d) table, giving (len(ids), d).
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let shape = self.shape(table);
        ensure!(shape.len() == 2, "gather_rows: table must be rank 2");
        let (vocab, dim) = (shape[0], shape[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::contract(format!(
                "gather_rows: id {bad} out of range for table of {vocab} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in ids {
            out.extend_from_slice(&src[i * dim..(i + 1) * dim]);
        }
        let value = Tensor::from_parts(vec![ids.len(), dim], out);
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            value,
        )
    }

    /// Word masking at the embedding layer: given masks (S, n) and rows (n, d)
    /// returns (S, n, d) with `out[s, i, :] = mask[s, i] * rows[i, :]`.
    pub fn mask_rows(&mut self, mask: NodeId, rows: NodeId) -> Result<NodeId> {
        let (sm, sr) = (self.shape(mask), self.shape(rows));
        ensure!(
            sm.len() == 2 && sr.len() == 2 && sm[1] == sr[0],
            "mask_rows: mask {sm:?} does not match rows {sr:?}"
        );
        let (samples, n, dim) = (sm[0], sm[1], sr[1]);
        let (m, x) = (self.value(mask).data(), self.value(rows).data());
        let mut out = Vec::with_capacity(samples * n * dim);
        for s in 0..samples {
            for i in 0..n {
                let w = m[s * n + i];
                out.extend(x[i * dim..(i + 1) * dim].iter().map(|v| w * v));
            }
        }
        let value = Tensor::from_parts(vec![samples, n, dim], out);
        self.push(Op::MaskRows { mask, rows }, value)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        ensure!(
            numel == self.value(a).numel(),
            "reshape: {:?} to {:?}",
            self.shape(a),
            shape
        );
        let value = Tensor::from_parts(shape.to_vec(), self.value(a).data().to_vec());
        self.push(Op::Reshape(a), value)
    }

    fn reduce_axis(&self, a: NodeId, axis: usize) -> Result<(Vec<usize>, Vec<f64>, usize)> {
        let shape = self.shape(a);
        ensure!(
            axis < shape.len(),
            "reduce: axis {axis} out of range for {shape:?}"
        );
        let (outer, len, inner) = axis_extents(shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut new_shape = shape.to_vec();
        new_shape.remove(axis);
        Ok((new_shape, out, len))
    }

    /// Sum over one axis, removing it.
    pub fn sum(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (shape, out, _) = self.reduce_axis(a, axis)?;
        self.push(Op::Sum { input: a, axis }, Tensor::from_parts(shape, out))
    }

    /// Mean over one axis, removing it.
    pub fn mean(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (shape, mut out, len) = self.reduce_axis(a, axis)?;
        ensure!(len > 0, "mean over empty axis");
        for v in &mut out {
            *v /= len as f64;
        }
        self.push(Op::Mean { input: a, axis }, Tensor::from_parts(shape, out))
    }

    /// Sum of every element, as a rank-0 scalar.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let total = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::from_parts(Vec::new(), vec![total]))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Log(a), f64::ln)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// Softmax over the last axis (max-subtracted).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let cols = *v.shape().last().unwrap_or(&1);
        let out = softmax_rows(v.data(), cols);
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(Op::Softmax(a), value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        ensure!(!inputs.is_empty(), "concat: no inputs");
        let first = self.shape(inputs[0]).to_vec();
        ensure!(axis < first.len(), "concat: axis {axis} out of range");
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id);
            ensure!(
                s.len() == first.len()
                    && s.iter()
                        .zip(&first)
                        .enumerate()
                        .all(|(k, (x, y))| k == axis || x == y),
                "concat: shape {s:?} incompatible with {first:?} on axis {axis}"
            );
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let len = self.shape(id)[axis];
                let src = self.value(id).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Tensor::from_parts(shape, out),
        )
    }

    /// Indices `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        ensure!(
            axis < shape.len() && start <= end && end <= shape[axis],
            "slice: {start}..{end} on axis {axis} of {shape:?}"
        );
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(a).data();
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = width;
        self.push(
            Op::Slice {
                input: a,
                axis,
                start,
            },
            Tensor::from_parts(new_shape, out),
        )
    }

    /// Shannon entropy (natural log) of a probability vector, with 0 ln 0 = 0.
    pub fn entropy(&mut self, p: NodeId) -> Result<NodeId> {
        let v = self.value(p).data();
        ensure!(!v.is_empty(), "entropy of empty vector");
        ensure!(
            v.iter().all(|&x| x >= 0.0),
            "entropy: negative probability in {:?}",
            v
        );
        let total: f64 = v.iter().sum();
        ensure!(
            (total - 1.0).abs() <= SIMPLEX_TOL,
            "entropy: probabilities sum to {total}"
        );
        let h = -v.iter().map(|&x| x * x.max(ENTROPY_EPS).ln()).sum::<f64>();
        self.push(Op::Entropy(p), Tensor::from_parts(Vec::new(), vec![h]))
    }

    /// Mean cross-entropy of rows of `logits` (shape (B, C) or (C)) against
    /// integer labels, computed from max-subtracted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let shape = self.shape(logits);
        let classes = *shape.last().unwrap_or(&0);
        let rows = if shape.len() <= 1 { 1 } else { shape[0] };
        ensure!(
            shape.len() <= 2 && classes > 0,
            "cross_entropy: logits shape {shape:?}"
        );
        ensure!(
            labels.len() == rows,
            "cross_entropy: {} labels for {rows} rows",
            labels.len()
        );
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::contract(format!(
                "cross_entropy: label {bad} out of range for {classes} classes"
            )));
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        for (row, &y) in data.chunks(classes).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor::from_parts(Vec::new(), vec![total / rows as f64]);
        self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            value,
        )
    }

    /// Reverse pass from a scalar node. Returns gradients for every trainable
    /// leaf (zeros for leaves the loss does not depend on).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        ensure!(loss.0 < self.nodes.len(), "backward: unknown node {}", loss.0);
        ensure!(
            self.value(loss).is_scalar(),
            "backward: loss has shape {:?}, expected a scalar",
            self.shape(loss)
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for k in (0..=loss.0).rev() {
            let node = &self.nodes[k];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: k,
                    op: node.op.name(),
                    detail: format!("backward produced {bad}"),
                });
            }
            self.propagate(k, &g, &mut grads)?;
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        for (k, node) in self.nodes.iter().enumerate() {
            if !node.trainable {
                out.push(None);
                continue;
            }
            let data = grads
                .get_mut(k)
                .and_then(Option::take)
                .unwrap_or_else(|| vec![0.0; node.value.numel()]);
            if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: k,
                    op: "leaf",
                    detail: format!("gradient contains {bad}"),
                });
            }
            out.push(Some(Tensor::from_parts(node.value.shape().to_vec(), data)));
        }
        Ok(Gradients { grads: out })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, k: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[k];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [a, b] {
                    if self.wants(*id) {
                        add_into(&mut grads[id.0], g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    add_into_owned(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], g.iter().zip(vb).map(|(x, y)| x * y).collect());
                }
                if self.wants(*b) {
                    add_into_owned(&mut grads[b.0], g.iter().zip(va).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], g.iter().map(|v| v * c).collect());
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.wants(*b) {
                    let cols = self.value(*b).numel();
                    let mut gb = vec![0.0; cols];
                    for row in g.chunks(cols.max(1)) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    add_into_owned(&mut grads[b.0], gb);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, kk, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * kk];
                    mm_nt(g, self.value(*b).data(), m, n, kk, &mut ga);
                    add_into_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; kk * n];
                    mm_tn(self.value(*a).data(), g, kk, m, n, &mut gb);
                    add_into_owned(&mut grads[b.0], gb);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (bs, m, kk, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let mut ga = vec![0.0; bs * m * kk];
                    for s in 0..bs {
                        mm_nt(
                            &g[s * m * n..(s + 1) * m * n],
                            &db[s * kk * n..(s + 1) * kk * n],
                            m,
                            n,
                            kk,
                            &mut ga[s * m * kk..(s + 1) * m * kk],
                        );
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; bs * kk * n];
                    for s in 0..bs {
                        mm_tn(
                            &da[s * m * kk..(s + 1) * m * kk],
                            &g[s * m * n..(s + 1) * m * n],
                            kk,
                            m,
                            n,
                            &mut gb[s * kk * n..(s + 1) * kk * n],
                        );
                    }
                    add_into_owned(&mut grads[b.0], gb);
                }
            }
            Op::TransposeLast(a) => {
                if self.wants(*a) {
                    // gradient of a transpose is the transpose of the gradient
                    let shape = out.shape();
                    let r = shape.len();
                    let (rows, cols) = (shape[r - 2], shape[r - 1]);
                    let batches = if r == 3 { shape[0] } else { 1 };
                    let mut ga = vec![0.0; g.len()];
                    for s in 0..batches {
                        let off = s * rows * cols;
                        for i in 0..rows {
                            for j in 0..cols {
                                ga[off + j * rows + i] = g[off + i * cols + j];
                            }
                        }
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let dim = self.shape(*table)[1];
                    let mut gt = vec![0.0; self.value(*table).numel()];
                    for (r, &i) in ids.iter().enumerate() {
                        for (acc, v) in gt[i * dim..(i + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                            *acc += v;
                        }
                    }
                    add_into_owned(&mut grads[table.0], gt);
                }
            }
            Op::MaskRows { mask, rows } => {
                let sm = self.shape(*mask);
                let (samples, n) = (sm[0], sm[1]);
                let dim = self.shape(*rows)[1];
                let (m, x) = (self.value(*mask).data(), self.value(*rows).data());
                if self.wants(*mask) {
                    let mut gm = vec![0.0; samples * n];
                    for s in 0..samples {
                        for i in 0..n {
                            let base = (s * n + i) * dim;
                            gm[s * n + i] = g[base..base + dim]
                                .iter()
                                .zip(&x[i * dim..(i + 1) * dim])
                                .map(|(a, b)| a * b)
                                .sum();
                        }
                    }
                    add_into_owned(&mut grads[mask.0], gm);
                }
                if self.wants(*rows) {
                    let mut gx = vec![0.0; n * dim];
                    for s in 0..samples {
                        for i in 0..n {
                            let w = m[s * n + i];
                            let base = (s * n + i) * dim;
                            for (acc, v) in gx[i * dim..(i + 1) * dim].iter_mut().zip(&g[base..base + dim]) {
                                *acc += w * v;
                            }
                        }
                    }
                    add_into_owned(&mut grads[rows.0], gx);
                }
            }
            Op::Reshape(a) => {
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
            }
            Op::Sum { input, axis } | Op::Mean { input, axis } => {
                if self.wants(*input) {
                    let (outer, len, inner) = axis_extents(self.shape(*input), *axis);
                    let factor = if matches!(node.op, Op::Mean { .. }) {
                        1.0 / len as f64
                    } else {
                        1.0
                    };
                    let mut gi = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        for kx in 0..len {
                            let base = (o * len + kx) * inner;
                            for i in 0..inner {
                                gi[base + i] = g[o * inner + i] * factor;
                            }
                        }
                    }
                    add_into_owned(&mut grads[input.0], gi);
                }
            }
            Op::SumAll(a) => {
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], vec![g[0]; self.value(*a).numel()]);
                }
            }
            Op::Exp(a) => {
                if self.wants(*a) {
                    add_into_owned(&mut grads[a.0], g.iter().zip(out.data()).map(|(x, y)| x * y).collect());
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    let va = self.value(*a).data();
                    add_into_owned(&mut grads[a.0], g.iter().zip(va).map(|(x, y)| x / y).collect());
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let va = self.value(*a).data();
                    add_into_owned(
                        &mut grads[a.0],
                        g.iter().zip(va).map(|(x, y)| if *y > 0.0 { *x } else { 0.0 }).collect(),
                    );
                }
            }
            Op::Abs(a) => {
                if self.wants(*a) {
                    let va = self.value(*a).data();
                    add_into_owned(
                        &mut grads[a.0],
                        g.iter()
                            .zip(va)
                            .map(|(x, y)| {
                                if *y > 0.0 {
                                    *x
                                } else if *y < 0.0 {
                                    -*x
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    );
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    add_into_owned(
                        &mut grads[a.0],
                        g.iter().zip(out.data()).map(|(x, s)| x * s * (1.0 - s)).collect(),
                    );
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let cols = *out.shape().last().unwrap_or(&1);
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), dst) in g.chunks(cols).zip(out.data().chunks(cols)).zip(ga.chunks_mut(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((d, x), y) in dst.iter_mut().zip(gr).zip(yr) {
                            *d = y * (x - dot);
                        }
                    }
                    add_into_owned(&mut grads[a.0], ga);
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_extents(out.shape(), *axis);
                let mut offset = 0;
                for id in inputs {
                    let len = self.shape(*id)[*axis];
                    if self.wants(*id) {
                        let mut gi = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gi.extend_from_slice(&g[start..start + len * inner]);
                        }
                        add_into_owned(&mut grads[id.0], gi);
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                if self.wants(*input) {
                    let (outer, len, inner) = axis_extents(self.shape(*input), *axis);
                    let width = out.shape()[*axis];
                    let mut gi = vec![0.0; outer * len * inner];
                    for o in 0..outer {
                        let dst = (o * len + start) * inner;
                        gi[dst..dst + width * inner]
                            .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                    }
                    add_into_owned(&mut grads[input.0], gi);
                }
            }
            Op::Entropy(p) => {
                if self.wants(*p) {
                    let vp = self.value(*p).data();
                    let gp = vp
                        .iter()
                        .map(|&x| {
                            let d = if x > ENTROPY_EPS {
                                -(x.ln() + 1.0)
                            } else {
                                -ENTROPY_EPS.ln()
                            };
                            g[0] * d
                        })
                        .collect();
                    add_into_owned(&mut grads[p.0], gp);
                }
            }
            Op::CrossEntropy { logits, labels } => {
                if self.wants(*logits) {
                    let classes = *self.shape(*logits).last().unwrap_or(&1);
                    let data = self.value(*logits).data();
                    let rows = labels.len() as f64;
                    let mut gl = softmax_rows(data, classes);
                    for (row, &y) in gl.chunks_mut(classes).zip(labels) {
                        row[y] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= g[0] / rows;
                        }
                    }
                    add_into_owned(&mut grads[logits.0], gl);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0).unwrap());
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, 2.0, 3.0]));
        let c = g.constant(Tensor::scalar(5.0).unwrap());
        let grads = g.backward(c).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_contract_error() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn log_of_zero_is_numeric_error_naming_node() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 0.0]));
        match g.log(x).unwrap_err() {
            Error::Numeric { node, op, .. } => {
                assert_eq!(node, 1);
                assert_eq!(op, "log");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entropy_values() {
        let mut g = Graph::new();
        let u = g.constant(t(&[4], &[0.25; 4]));
        let h = g.entropy(u).unwrap();
        assert!((g.value(h).item().unwrap() - 4f64.ln()).abs() < 1e-12);
        let one_hot = g.constant(t(&[3], &[0.0, 1.0, 0.0]));
        let h = g.entropy(one_hot).unwrap();
        assert_eq!(g.value(h).item().unwrap(), 0.0);
        let half = g.constant(t(&[2], &[0.5, 0.5]));
        let h = g.entropy(half).unwrap();
        assert!((g.value(h).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_off_simplex() {
        let mut g = Graph::new();
        let neg = g.constant(t(&[2], &[-0.1, 1.1]));
        assert!(matches!(g.entropy(neg), Err(Error::Contract(_))));
        let short = g.constant(t(&[2], &[0.5, 0.49]));
        assert!(matches!(g.entropy(short), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let l = g.constant(t(&[2], &[0.3, 0.3]));
        let ce = g.cross_entropy(l, &[1]).unwrap();
        assert!((g.value(ce).item().unwrap() - 2f64.ln()).abs() < 1e-12);
        let l = g.constant(t(&[2], &[20.0, 0.0]));
        let ce = g.cross_entropy(l, &[0]).unwrap();
        let v = g.value(ce).item().unwrap();
        assert!((v - 2.061153622e-9).abs() < 1e-15, "{v}");
        assert!(matches!(g.cross_entropy(l, &[2]), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1000.0, 999.0, -5.0, 0.0, 0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        for row in g.value(s).rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn unused_param_gets_zero_and_constants_none() {
        let mut g = Graph::new();
        let a = g.param(t(&[2], &[1.0, 2.0]));
        let b = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let m = g.mul(a, c).unwrap();
        let s = g.sum_all(m).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0, 0.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn gather_out_of_range() {
        let mut g = Graph::new();
        let table = g.param(Tensor::zeros(&[3, 2]));
        assert!(g.gather_rows(table, &[0, 3]).is_err());
    }
}
