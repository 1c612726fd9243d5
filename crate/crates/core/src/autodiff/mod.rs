//! Dense tensors with a record-on-forward tape for reverse-mode differentiation.
//!
//! Every primitive evaluates its forward value immediately and appends a node
//! to the [`Tape`]. [`Tape::backward`] consumes the tape and returns the
//! gradient of a scalar output with respect to every recorded node.

mod checkpoint;
mod gradcheck;
pub mod spectral;
mod tensor;

use std::sync::Arc;

use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use tensor::Tensor;

use tensor::axis_split;

/// Negative-side slope of [`Tape::leaky_relu`].
pub const LEAKY_SLOPE: f64 = 0.01;

/// Variance floor inside [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: non-finite value")]
    NonFinite { op: &'static str },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("{op}: index {index} out of range {bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    LeakyRelu(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, axis: usize, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    MeanPool { x: Var, axis: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Dot(Var, Var),
    Sum(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Mse(Var, Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize },
    Select { x: Var, idx: Vec<usize> },
    NeighborMean { x: Var, neighbors: Arc<Vec<Vec<usize>>> },
    CircConv(Var, Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive applications.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &'static str, shapes: &[&[usize]]) -> AutodiffError {
    AutodiffError::Shape { op, shapes: shapes.iter().map(|s| s.to_vec()).collect() }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (parameter or attributed feature).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                for (o, &y) in row.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, &[self.shape(a), self.shape(b)]));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    fn row_broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        match (sa.last(), sb) {
            (Some(&n), [m]) if n == *m => Ok(n),
            _ => Err(shape_err(op, &[sa, sb])),
        }
    }

    /// `a + b` with the vector `b` broadcast over the last axis of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.row_broadcast_check("add_row", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x += bv[i % n];
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::AddRow(a, b), rg))
    }

    /// `a * b` with the vector `b` broadcast over the last axis of `a`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.row_broadcast_check("mul_row", a, b)?;
        let bv = self.value(b).data().to_vec();
        let mut v = self.value(a).clone();
        for (i, x) in v.data_mut().iter_mut().enumerate() {
            *x *= bv[i % n];
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MulRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Scale(a, c), rg))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { LEAKY_SLOPE * x });
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::LeakyRelu(a), rg))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(a).len() {
            return Err(shape_err(op, &[self.shape(a)]));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("softmax", a, axis)?;
        let x = self.value(a);
        if !x.is_finite() {
            return Err(AutodiffError::NonFinite { op: "softmax" });
        }
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let xs = x.data();
        let mut out = vec![0.0; xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let max = (0..len).map(|k| xs[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (xs[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Softmax { x: a, axis }, rg))
    }

    /// Standardises `a` along `axis` (zero mean, unit variance); no affine part.
    pub fn layer_norm(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.layer_norm_eps(a, axis, LAYER_NORM_EPS)
    }

    /// [`Tape::layer_norm`] with an explicit variance floor.
    pub fn layer_norm_eps(&mut self, a: Var, axis: usize, eps: f64) -> Result<Var> {
        self.check_axis("layer_norm", a, axis)?;
        if !(eps > 0.0) {
            return Err(AutodiffError::NonFinite { op: "layer_norm (eps must be > 0)" });
        }
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        let xs = x.data();
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mean = (0..len).map(|k| xs[idx(k)]).sum::<f64>() / len as f64;
                let var = (0..len).map(|k| (xs[idx(k)] - mean).powi(2)).sum::<f64>() / len as f64;
                let s = 1.0 / (var + eps).sqrt();
                for k in 0..len {
                    out[idx(k)] = (xs[idx(k)] - mean) * s;
                }
                inv_std.push(s);
            }
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::LayerNorm { x: a, axis, inv_std }, rg))
    }

    /// Rows of the rank-2 `table` selected by `ids`.
    pub fn embedding_gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(shape_err("embedding_gather", &[st]));
        }
        let (rows, d) = (st[0], st[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(AutodiffError::Index { op: "embedding_gather", index: id, bound: rows });
            }
            out.extend_from_slice(tv.row(id));
        }
        let v = Tensor::new(vec![ids.len(), d], out)?;
        let rg = self.rg(&[table]);
        Ok(self.push(v, Op::Gather { table, ids: ids.to_vec() }, rg))
    }

    /// Mean over `axis`; the axis is removed from the output shape.
    pub fn mean_pool(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis("mean_pool", a, axis)?;
        let x = self.value(a);
        let (outer, len, inner) = axis_split(x.shape(), axis);
        if len == 0 {
            return Err(shape_err("mean_pool", &[x.shape()]));
        }
        let xs = x.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xs[(o * len + k) * inner + i];
                }
            }
        }
        for v in out.iter_mut() {
            *v /= len as f64;
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::new(shape, out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::MeanPool { x: a, axis }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat", &[]))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", &[&base]));
        }
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                let shapes: Vec<&[usize]> = parts.iter().map(|p| self.shape(*p)).collect();
                return Err(shape_err("concat", &shapes));
            }
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let total: usize = parts.iter().map(|p| self.shape(*p)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(*p).data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, out)?;
        let rg = self.rg(parts);
        Ok(self.push(v, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    /// Stacks equal-length vectors into a `[n, d]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let d = rows.first().map(|r| self.shape(*r).to_vec()).unwrap_or_default();
        if d.len() != 1 {
            return Err(shape_err("stack", &[&d]));
        }
        let flat = self.concat(rows, 0)?;
        self.reshape(flat, &[rows.len(), d[0]])
    }

    /// Sum of the element-wise product of two same-shape tensors; scalar output.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s: f64 = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).sum();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Exp(a), rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.is_finite() {
            return Err(AutodiffError::NonFinite { op: "log" });
        }
        let v = x.map(f64::ln);
        if !v.is_finite() {
            return Err(AutodiffError::NonFinite { op: "log" });
        }
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Log(a), rg))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::abs);
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Abs(a), rg))
    }

    /// Mean squared error over all elements; scalar output.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len().max(1) as f64;
        let s: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), rg))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits` (`[n, C]`, or `[C]` for one row); scalar output.
    pub fn cross_entropy_loss(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let (n, c) = match *s {
            [c] => (1, c),
            [n, c] => (n, c),
            _ => return Err(shape_err("cross_entropy_loss", &[s])),
        };
        if targets.len() != n || c == 0 {
            return Err(shape_err("cross_entropy_loss", &[s, &[targets.len()]]));
        }
        let x = self.value(logits);
        if !x.is_finite() {
            return Err(AutodiffError::NonFinite { op: "cross_entropy_loss" });
        }
        let xs = x.data();
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &xs[r * c..(r + 1) * c];
            let t = targets[r];
            if t >= c {
                return Err(AutodiffError::Index { op: "cross_entropy_loss", index: t, bound: c });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for k in 0..c {
                probs[r * c + k] = (row[k] - lse).exp();
            }
            loss += lse - row[t];
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss / n as f64),
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", &[s]));
        }
        let v = transposed(self.value(a));
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshaped(shape).map_err(|_| shape_err("reshape", &[self.shape(a), shape]))?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || start > end || end > s[1] {
            return Err(shape_err("slice_cols", &[s, &[start, end]]));
        }
        let (rows, cols) = (s[0], s[1]);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&x[r * cols + start..r * cols + end]);
        }
        let v = Tensor::new(vec![rows, end - start], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SliceCols { x: a, start }, rg))
    }

    /// Flat (row-major) element selection; output is a vector.
    pub fn select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= x.len() {
                return Err(AutodiffError::Index { op: "select", index: i, bound: x.len() });
            }
            out.push(x[i]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::vector(out), Op::Select { x: a, idx: idx.to_vec() }, rg))
    }

    /// Row `i` of the output is the mean of rows `neighbors[i]` of `a`
    /// (`[n, d]`), or zeros when node `i` has no neighbors.
    pub fn neighbor_mean(&mut self, a: Var, neighbors: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 || s[0] != neighbors.len() {
            return Err(shape_err("neighbor_mean", &[s, &[neighbors.len()]]));
        }
        let (n, d) = (s[0], s[1]);
        let x = self.value(a);
        let mut out = vec![0.0; n * d];
        for (i, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let row = &mut out[i * d..(i + 1) * d];
            for &j in nbrs {
                if j >= n {
                    return Err(AutodiffError::Index { op: "neighbor_mean", index: j, bound: n });
                }
                for (o, v) in row.iter_mut().zip(x.row(j)) {
                    *o += v;
                }
            }
            let k = nbrs.len() as f64;
            row.iter_mut().for_each(|o| *o /= k);
        }
        let v = Tensor::new(vec![n, d], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::NeighborMean { x: a, neighbors }, rg))
    }

    /// Circular convolution of two equal-length vectors.
    pub fn circular_conv(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 1 || sa != sb {
            return Err(shape_err("circular_conv", &[sa, sb]));
        }
        let out = spectral::circular_convolution(self.value(a).data(), self.value(b).data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::vector(out), Op::CircConv(a, b), rg))
    }

    /// Divides each row of a rank-2 tensor (or a whole vector) by its l2 norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let cols = *s.last().ok_or_else(|| shape_err("l2_normalize_rows", &[&s]))?;
        let x = self.value(a);
        let mut out = x.clone();
        let mut norms = Vec::new();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(AutodiffError::NonFinite { op: "l2_normalize_rows" });
            }
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::L2NormalizeRows { x: a, norms }, rg))
    }

    /// Reverse pass from the scalar `loss`; the tape is consumed.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NotScalar(self.shape(loss).to_vec()));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let (ad, bd) = (av.data(), bv.data());
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gd[i * n + j] * bd[p * n + j];
                            }
                            ga[i * k + p] = s;
                        }
                    }
                    acc(*a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let x = ad[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * gd[i * n + j];
                            }
                        }
                    }
                    acc(*b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::AddRow(a, b) => {
                let n = self.shape(*b)[0];
                let mut gb = vec![0.0; n];
                for (i, v) in gd.iter().enumerate() {
                    gb[i % n] += v;
                }
                acc(*a, g.clone());
                acc(*b, Tensor::vector(gb));
            }
            Op::MulRow(a, b) => {
                let bv = self.value(*b).data();
                let av = self.value(*a).data();
                let n = bv.len();
                let mut ga = g.clone();
                let mut gb = vec![0.0; n];
                for (i, x) in ga.data_mut().iter_mut().enumerate() {
                    gb[i % n] += *x * av[i];
                    *x *= bv[i % n];
                }
                acc(*a, ga);
                acc(*b, Tensor::vector(gb));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::LeakyRelu(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { LEAKY_SLOPE * gv })),
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dotp: f64 = (0..len).map(|k| gd[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            gx[idx(k)] = y[idx(k)] * (gd[idx(k)] - dotp);
                        }
                    }
                }
                acc(*x, Tensor::new(node.value.shape().to_vec(), gx).unwrap());
            }
            Op::LayerNorm { x, axis, inv_std } => {
                let y = node.value.data();
                let (outer, len, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let s = inv_std[o * inner + i];
                        let mg = (0..len).map(|k| gd[idx(k)]).sum::<f64>() / len as f64;
                        let mgy = (0..len).map(|k| gd[idx(k)] * y[idx(k)]).sum::<f64>() / len as f64;
                        for k in 0..len {
                            gx[idx(k)] = s * (gd[idx(k)] - mg - y[idx(k)] * mgy);
                        }
                    }
                }
                acc(*x, Tensor::new(node.value.shape().to_vec(), gx).unwrap());
            }
            Op::Gather { table, ids } => {
                let st = self.shape(*table).to_vec();
                let d = st[1];
                let mut gt = Tensor::zeros(&st);
                let gtd = gt.data_mut();
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        gtd[id * d + c] += gd[r * d + c];
                    }
                }
                acc(*table, gt);
            }
            Op::MeanPool { x, axis } => {
                let s = self.shape(*x).to_vec();
                let (outer, len, inner) = axis_split(&s, *axis);
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            gx[(o * len + k) * inner + i] = gd[o * inner + i] / len as f64;
                        }
                    }
                }
                acc(*x, Tensor::new(s, gx).unwrap());
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let s = self.shape(*p).to_vec();
                    let len = s[*axis];
                    let mut gp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        gp.extend_from_slice(&gd[start..start + len * inner]);
                    }
                    offset += len;
                    acc(*p, Tensor::new(s, gp).unwrap());
                }
            }
            Op::Dot(a, b) => {
                let s = gd[0];
                acc(*a, self.value(*b).map(|y| y * s));
                acc(*b, self.value(*a).map(|y| y * s));
            }
            Op::Sum(a) => acc(*a, Tensor::filled(self.shape(*a), gd[0])),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Log(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv / x)),
            Op::Abs(a) => acc(*a, g.zip_map(self.value(*a), |gv, x| gv * sign(x))),
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let scale = 2.0 * gd[0] / pv.len().max(1) as f64;
                let gp = pv.zip_map(tv, |a, b| scale * (a - b));
                acc(*t, gp.map(|x| -x));
                acc(*p, gp);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let n = targets.len();
                let c = probs.len() / n;
                let scale = gd[0] / n as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gl[r * c + t] -= 1.0;
                }
                gl.iter_mut().for_each(|v| *v *= scale);
                acc(*logits, Tensor::new(self.shape(*logits).to_vec(), gl).unwrap());
            }
            Op::Transpose(a) => acc(*a, transposed(g)),
            Op::Reshape(a) => acc(*a, g.reshaped(self.shape(*a)).unwrap()),
            Op::SliceCols { x, start } => {
                let s = self.shape(*x).to_vec();
                let (rows, cols) = (s[0], s[1]);
                let w = node.value.shape()[1];
                let mut gx = Tensor::zeros(&s);
                let gxd = gx.data_mut();
                for r in 0..rows {
                    gxd[r * cols + start..r * cols + start + w].copy_from_slice(&gd[r * w..(r + 1) * w]);
                }
                acc(*x, gx);
            }
            Op::Select { x, idx } => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let gxd = gx.data_mut();
                for (k, &i) in idx.iter().enumerate() {
                    gxd[i] += gd[k];
                }
                acc(*x, gx);
            }
            Op::NeighborMean { x, neighbors } => {
                let s = self.shape(*x).to_vec();
                let d = s[1];
                let mut gx = Tensor::zeros(&s);
                let gxd = gx.data_mut();
                for (i, nbrs) in neighbors.iter().enumerate() {
                    let k = nbrs.len() as f64;
                    for &j in nbrs {
                        for c in 0..d {
                            gxd[j * d + c] += gd[i * d + c] / k;
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::CircConv(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, Tensor::vector(spectral::circular_correlation(gd, bv)));
                acc(*b, Tensor::vector(spectral::circular_correlation(gd, av)));
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = node.value.data();
                let cols = y.len() / norms.len();
                let mut gx = vec![0.0; y.len()];
                for (r, norm) in norms.iter().enumerate() {
                    let span = r * cols..(r + 1) * cols;
                    let yg: f64 = y[span.clone()].iter().zip(&gd[span.clone()]).map(|(a, b)| a * b).sum();
                    for k in span {
                        gx[k] = (gd[k] - y[k] * yg) / norm;
                    }
                }
                acc(*x, Tensor::new(self.shape(*x).to_vec(), gx).unwrap());
            }
        }
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

fn transposed(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let d = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = d[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).unwrap()
}
