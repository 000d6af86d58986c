//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes in topological order and return [`TensorId`] handles;
//! [`Tape::backward`] walks the tape in reverse and accumulates gradients
//! into every node that requires them. Running backward twice without
//! zeroing doubles each gradient (accumulation semantics).
//!
//! The op set is deliberately small: exactly what relational graph
//! convolution, the score functions, and the losses need.

#![allow(clippy::needless_range_loop)] // index math mirrors the written rules
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Pointwise nonlinearity applied after aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

/// Elementwise binary op selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

enum Op {
    Leaf,
    /// out = a @ b
    Matmul { a: usize, b: usize },
    /// out = a @ b^T
    MatmulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    /// out = c * a, constant c
    Scale { a: usize, c: f64 },
    /// out[i][j] = a[i][j] * factors[i], constant factors
    ScaleRows { a: usize, factors: Vec<f64> },
    /// out[i][j] = a[i][j] * s[i], differentiable in both
    RowScale { a: usize, s: usize },
    /// row-wise circular correlation, out[k] = sum_i a[i] * b[(i+k) % d]
    CircularCorr { a: usize, b: usize },
    Tanh { a: usize },
    Relu { a: usize },
    /// mask entries are 0 or 1/(1-p), fixed at forward time
    Dropout { a: usize, mask: Vec<f64> },
    /// out[i] = a[indices[i]]
    GatherRows { a: usize, indices: Vec<usize> },
    /// out[indices[i]] += a[i], accumulated in index order
    ScatterAddRows { a: usize, indices: Vec<usize> },
    /// scalar sum of all elements
    Sum { a: usize },
    /// out = [1 x d] column means over rows
    MeanRows { a: usize },
    /// rows of the inputs stacked in order
    ConcatRows { parts: Vec<usize> },
    /// mean binary cross entropy against pre-smoothed constant targets
    BceWithLogits { logits: usize, targets: Vec<f64> },
    /// mean softmax cross entropy against constant class ids
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize> },
    /// out[i][v] = -|| q[i] - h[v] ||, L1 or L2
    TranseScores { q: usize, h: usize, l2: bool },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Records a forward pass and computes reverse-mode gradients.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> TensorId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Inserts a leaf. `requires_grad` marks it as a differentiable parameter.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Leaf that participates in gradients.
    pub fn param(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (da, db) = (va.data(), vb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = da[i * k + p];
                let row = &db[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * row[j];
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            rg,
            Op::Matmul { a: a.0, b: b.0 },
        ))
    }

    /// `a @ b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "matmul_nt",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
        let mut out = vec![0.0; m * n];
        let (da, db) = (va.data(), vb.data());
        for i in 0..m {
            let arow = &da[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &db[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for p in 0..k {
                    acc += arow[p] * brow[p];
                }
                out[i * n + j] = acc;
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            rg,
            Op::MatmulNT { a: a.0, b: b.0 },
        ))
    }

    /// Pointwise add/sub/mul. Shapes must match exactly, except that either
    /// side may be a scalar.
    pub fn elementwise(&mut self, op: ElementwiseOp, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        let scalar_a = va.is_scalar();
        let scalar_b = vb.is_scalar();
        if !scalar_a && !scalar_b && va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: match op {
                    ElementwiseOp::Add => "add",
                    ElementwiseOp::Sub => "sub",
                    ElementwiseOp::Mul => "mul",
                },
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let shape = if scalar_a { vb.shape() } else { va.shape() }.to_vec();
        let n = if scalar_a { vb.len() } else { va.len() };
        let f = |x: f64, y: f64| match op {
            ElementwiseOp::Add => x + y,
            ElementwiseOp::Sub => x - y,
            ElementwiseOp::Mul => x * y,
        };
        let (da, db) = (va.data(), vb.data());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = if scalar_a { da[0] } else { da[i] };
            let y = if scalar_b { db[0] } else { db[i] };
            out.push(f(x, y));
        }
        let rg = self.requires(a) || self.requires(b);
        let opnode = match op {
            ElementwiseOp::Add => Op::Add { a: a.0, b: b.0 },
            ElementwiseOp::Sub => Op::Sub { a: a.0, b: b.0 },
            ElementwiseOp::Mul => Op::Mul { a: a.0, b: b.0 },
        };
        Ok(self.push(Tensor::new(shape, out)?, rg, opnode))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let va = self.value(a);
        let out: Vec<f64> = va.data().iter().map(|x| c * x).collect();
        let t = Tensor::new(va.shape().to_vec(), out).expect("same shape");
        let rg = self.requires(a);
        self.push(t, rg, Op::Scale { a: a.0, c })
    }

    /// Multiplies each row by a fixed, non-differentiable factor.
    pub fn scale_rows(&mut self, a: TensorId, factors: &[f64]) -> Result<TensorId> {
        let va = self.value(a);
        let rows = va.rows();
        if va.shape().len() != 2 || factors.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                lhs: va.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let cols = va.cols();
        let mut out = va.data().to_vec();
        for i in 0..rows {
            for v in &mut out[i * cols..(i + 1) * cols] {
                *v *= factors[i];
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            rg,
            Op::ScaleRows {
                a: a.0,
                factors: factors.to_vec(),
            },
        ))
    }

    /// Multiplies row `i` of `a` by the scalar `s[i]`; differentiable in both.
    /// `s` must have shape `[rows]` or `[rows, 1]`.
    pub fn row_scale(&mut self, a: TensorId, s: TensorId) -> Result<TensorId> {
        let (va, vs) = (self.value(a), self.value(s));
        let rows = va.rows();
        if va.shape().len() != 2 || vs.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "row_scale",
                lhs: va.shape().to_vec(),
                rhs: vs.shape().to_vec(),
            });
        }
        let cols = va.cols();
        let mut out = va.data().to_vec();
        for i in 0..rows {
            let f = vs.data()[i];
            for v in &mut out[i * cols..(i + 1) * cols] {
                *v *= f;
            }
        }
        let rg = self.requires(a) || self.requires(s);
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            rg,
            Op::RowScale { a: a.0, s: s.0 },
        ))
    }

    /// Circular correlation `a ⋆ b` applied row-wise over the last dimension:
    /// `out[k] = Σ_i a[i] · b[(i+k) mod d]`. The direct O(d²) sum is the
    /// definition; no FFT path exists.
    pub fn circular_correlation(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() || va.shape().is_empty() {
            return Err(Error::ShapeMismatch {
                op: "circular_correlation",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let d = *va.shape().last().unwrap();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "circular_correlation requires length >= 1".into(),
            ));
        }
        let rows = va.len() / d;
        let mut out = vec![0.0; va.len()];
        let (da, db) = (va.data(), vb.data());
        for r in 0..rows {
            let ar = &da[r * d..(r + 1) * d];
            let br = &db[r * d..(r + 1) * d];
            let orow = &mut out[r * d..(r + 1) * d];
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += ar[i] * br[(i + k) % d];
                }
                orow[k] = acc;
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            Tensor::new(va.shape().to_vec(), out)?,
            rg,
            Op::CircularCorr { a: a.0, b: b.0 },
        ))
    }

    pub fn activation(&mut self, kind: Activation, a: TensorId) -> TensorId {
        match kind {
            Activation::Identity => a,
            Activation::Tanh => {
                let va = self.value(a);
                let out: Vec<f64> = va.data().iter().map(|x| x.tanh()).collect();
                let t = Tensor::new(va.shape().to_vec(), out).expect("same shape");
                let rg = self.requires(a);
                self.push(t, rg, Op::Tanh { a: a.0 })
            }
            Activation::Relu => {
                let va = self.value(a);
                let out: Vec<f64> = va.data().iter().map(|x| x.max(0.0)).collect();
                let t = Tensor::new(va.shape().to_vec(), out).expect("same shape");
                let rg = self.requires(a);
                self.push(t, rg, Op::Relu { a: a.0 })
            }
        }
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; in eval mode
    /// (or at `p == 0`) this is the identity.
    pub fn dropout(
        &mut self,
        a: TensorId,
        p: f64,
        rng: &mut ChaCha8Rng,
        training: bool,
    ) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let va = self.value(a);
        let mask: Vec<f64> = (0..va.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = va.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(va.shape().to_vec(), out)?;
        let rg = self.requires(a);
        Ok(self.push(t, rg, Op::Dropout { a: a.0, mask }))
    }

    /// `out[i] = a[indices[i]]` over rows of a 2-D tensor.
    pub fn gather_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let va = self.value(a);
        if va.shape().len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "gather_rows expects a matrix, got shape {:?}",
                va.shape()
            )));
        }
        let (rows, cols) = (va.rows(), va.cols());
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&va.data()[i * cols..(i + 1) * cols]);
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![indices.len(), cols], out)?,
            rg,
            Op::GatherRows {
                a: a.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `out[indices[i]] += a[i]` into a zeroed `out_rows x cols` matrix.
    /// Accumulation runs in input-row order, so the reduction is
    /// deterministic.
    pub fn scatter_add_rows(
        &mut self,
        a: TensorId,
        indices: &[usize],
        out_rows: usize,
    ) -> Result<TensorId> {
        let va = self.value(a);
        if va.shape().len() != 2 || va.rows() != indices.len() {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: va.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= out_rows) {
            return Err(Error::InvalidArgument(format!(
                "scatter_add_rows index {bad} out of range for {out_rows} rows"
            )));
        }
        let cols = va.cols();
        let mut out = vec![0.0; out_rows * cols];
        for (i, &tgt) in indices.iter().enumerate() {
            let src = &va.data()[i * cols..(i + 1) * cols];
            let dst = &mut out[tgt * cols..(tgt + 1) * cols];
            for j in 0..cols {
                dst[j] += src[j];
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![out_rows, cols], out)?,
            rg,
            Op::ScatterAddRows {
                a: a.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.requires(a);
        self.push(Tensor::scalar(s), rg, Op::Sum { a: a.0 })
    }

    /// Column means over rows, returned as a `1 x d` matrix.
    pub fn mean_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let va = self.value(a);
        if va.shape().len() != 2 || va.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "mean_rows expects a non-empty matrix, got shape {:?}",
                va.shape()
            )));
        }
        let (rows, cols) = (va.rows(), va.cols());
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j] += va.data()[i * cols + j];
            }
        }
        for v in &mut out {
            *v /= rows as f64;
        }
        let rg = self.requires(a);
        Ok(self.push(
            Tensor::new(vec![1, cols], out)?,
            rg,
            Op::MeanRows { a: a.0 },
        ))
    }

    /// Stacks the rows of the given matrices in order.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows of nothing".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().len() != 2 || v.cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            rows += v.rows();
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Tensor::new(vec![rows, cols], out)?,
            rg,
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.0).collect(),
            },
        ))
    }

    /// Mean binary cross entropy over all elements with label smoothing.
    ///
    /// Targets in {0,1} are smoothed per row as `y' = (1-eps)*y + eps/n`
    /// where `n` is the number of columns (the candidate dimension), then
    /// the loss `y'*softplus(-l) + (1-y')*softplus(l)` is averaged over
    /// every element. Uses the log-sum-exp form throughout.
    pub fn bce_with_label_smoothing(
        &mut self,
        logits: TensorId,
        targets: &[f64],
        eps: f64,
    ) -> Result<TensorId> {
        let vl = self.value(logits);
        if targets.len() != vl.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_label_smoothing",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::InvalidArgument(format!(
                "label smoothing must be in [0, 1), got {eps}"
            )));
        }
        if !vl.iter_finite() {
            return Err(Error::NonFinite("logits passed to bce".into()));
        }
        let n_cols = *vl.shape().last().unwrap_or(&vl.len());
        let smoothed: Vec<f64> = targets
            .iter()
            .map(|y| (1.0 - eps) * y + eps / n_cols as f64)
            .collect();
        let total = vl.len() as f64;
        let mut loss = 0.0;
        for (&l, &y) in vl.data().iter().zip(&smoothed) {
            // softplus(l) - y*l, with softplus(x) = max(x,0) + ln(1+exp(-|x|))
            loss += l.max(0.0) + (-l.abs()).exp().ln_1p() - y * l;
        }
        loss /= total;
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::BceWithLogits {
                logits: logits.0,
                targets: smoothed,
            },
        ))
    }

    /// Mean softmax cross entropy of `n x c` logits against class ids.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let vl = self.value(logits);
        if vl.shape().len() != 2 || vl.rows() != labels.len() || labels.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let c = vl.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = vl.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
        }
        loss /= labels.len() as f64;
        let rg = self.requires(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::SoftmaxCrossEntropy {
                logits: logits.0,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Translational scores of every query against every candidate row:
    /// `out[i][v] = -||q[i] - h[v]||` under the L1 or L2 norm.
    pub fn transe_scores(&mut self, q: TensorId, h: TensorId, l2: bool) -> Result<TensorId> {
        let (vq, vh) = (self.value(q), self.value(h));
        if vq.shape().len() != 2 || vh.shape().len() != 2 || vq.cols() != vh.cols() {
            return Err(Error::ShapeMismatch {
                op: "transe_scores",
                lhs: vq.shape().to_vec(),
                rhs: vh.shape().to_vec(),
            });
        }
        let (b, d, n) = (vq.rows(), vq.cols(), vh.rows());
        let mut out = vec![0.0; b * n];
        for i in 0..b {
            let qi = vq.row(i);
            for v in 0..n {
                let hv = vh.row(v);
                let mut acc = 0.0;
                if l2 {
                    for j in 0..d {
                        let diff = qi[j] - hv[j];
                        acc += diff * diff;
                    }
                    acc = acc.sqrt();
                } else {
                    for j in 0..d {
                        acc += (qi[j] - hv[j]).abs();
                    }
                }
                out[i * n + v] = -acc;
            }
        }
        let rg = self.requires(q) || self.requires(h);
        Ok(self.push(
            Tensor::new(vec![b, n], out)?,
            rg,
            Op::TranseScores {
                q: q.0,
                h: h.0,
                l2,
            },
        ))
    }

    /// Accumulates d(loss)/d(node) into every node that requires gradients.
    /// `loss` must be a scalar. Each call uses fresh adjoint buffers and adds
    /// the result into persistent `grad` accumulators, so calling twice
    /// doubles every gradient.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::new(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        )?);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (j, contrib) in self.backward_op(i, &g) {
                match &mut adj[j] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
            let node = &mut self.nodes[i];
            node.grad
                .get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()))
                .add_assign(&g);
        }
        Ok(())
    }

    /// Gradient contributions of node `i`'s inputs given its adjoint `g`.
    fn backward_op(&self, i: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
        let mut contribs: Vec<(usize, Tensor)> = Vec::new();
        let mut emit = |j: usize, t: Tensor| {
            if self.nodes[j].requires_grad {
                contribs.push((j, t));
            }
        };
        let val = |j: usize| &self.nodes[j].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                // a.grad += g @ b^T ; b.grad += a^T @ g
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[*a].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i2 * n + j] * vb.data()[p * n + j];
                            }
                            ga[i2 * k + p] = acc;
                        }
                    }
                    emit(*a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.nodes[*b].requires_grad {
                    let mut gb = vec![0.0; k * n];
                    for p in 0..k {
                        for i2 in 0..m {
                            let aip = va.data()[i2 * k + p];
                            for j in 0..n {
                                gb[p * n + j] += aip * g.data()[i2 * n + j];
                            }
                        }
                    }
                    emit(*b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::MatmulNT { a, b } => {
                // out = a @ b^T : a.grad += g @ b ; b.grad += g^T @ a
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                if self.nodes[*a].requires_grad {
                    let mut ga = vec![0.0; m * k];
                    for i2 in 0..m {
                        for j in 0..n {
                            let gij = g.data()[i2 * n + j];
                            for p in 0..k {
                                ga[i2 * k + p] += gij * vb.data()[j * k + p];
                            }
                        }
                    }
                    emit(*a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.nodes[*b].requires_grad {
                    let mut gb = vec![0.0; n * k];
                    for j in 0..n {
                        for i2 in 0..m {
                            let gij = g.data()[i2 * n + j];
                            for p in 0..k {
                                gb[j * k + p] += gij * va.data()[i2 * k + p];
                            }
                        }
                    }
                    emit(*b, Tensor::new(vec![n, k], gb).unwrap());
                }
            }
            Op::Add { a, b } => {
                emit(*a, reduce_to_shape(g, val(*a).shape()));
                emit(*b, reduce_to_shape(g, val(*b).shape()));
            }
            Op::Sub { a, b } => {
                emit(*a, reduce_to_shape(g, val(*a).shape()));
                let neg: Vec<f64> = g.data().iter().map(|x| -x).collect();
                let neg = Tensor::new(g.shape().to_vec(), neg).unwrap();
                emit(*b, reduce_to_shape(&neg, val(*b).shape()));
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[*a].requires_grad {
                    let prod = broadcast_mul(g, vb);
                    emit(*a, reduce_to_shape(&prod, va.shape()));
                }
                if self.nodes[*b].requires_grad {
                    let prod = broadcast_mul(g, va);
                    emit(*b, reduce_to_shape(&prod, vb.shape()));
                }
            }
            Op::Scale { a, c } => {
                let ga: Vec<f64> = g.data().iter().map(|x| c * x).collect();
                emit(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::ScaleRows { a, factors } => {
                let cols = g.cols();
                let mut ga = g.data().to_vec();
                for (i2, f) in factors.iter().enumerate() {
                    for v in &mut ga[i2 * cols..(i2 + 1) * cols] {
                        *v *= f;
                    }
                }
                emit(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::RowScale { a, s } => {
                let (va, vs) = (val(*a), val(*s));
                let (rows, cols) = (va.rows(), va.cols());
                if self.nodes[*a].requires_grad {
                    let mut ga = g.data().to_vec();
                    for i2 in 0..rows {
                        let f = vs.data()[i2];
                        for v in &mut ga[i2 * cols..(i2 + 1) * cols] {
                            *v *= f;
                        }
                    }
                    emit(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                }
                if self.nodes[*s].requires_grad {
                    let mut gs = vec![0.0; rows];
                    for i2 in 0..rows {
                        let mut acc = 0.0;
                        for j in 0..cols {
                            acc += g.data()[i2 * cols + j] * va.data()[i2 * cols + j];
                        }
                        gs[i2] = acc;
                    }
                    emit(*s, Tensor::new(vs.shape().to_vec(), gs).unwrap());
                }
            }
            Op::CircularCorr { a, b } => {
                // out[k] = Σ_i a[i]·b[(i+k)%d] per row, so
                // a.grad[i] += Σ_k g[k]·b[(i+k)%d]
                // b.grad[(i+k)%d] += g[k]·a[i]
                let (va, vb) = (val(*a), val(*b));
                let d = *va.shape().last().unwrap();
                let rows = va.len() / d;
                let need_a = self.nodes[*a].requires_grad;
                let need_b = self.nodes[*b].requires_grad;
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for r in 0..rows {
                    let off = r * d;
                    for k in 0..d {
                        let gk = g.data()[off + k];
                        for i2 in 0..d {
                            let rot = off + (i2 + k) % d;
                            if need_a {
                                ga[off + i2] += gk * vb.data()[rot];
                            }
                            if need_b {
                                gb[rot] += gk * va.data()[off + i2];
                            }
                        }
                    }
                }
                if need_a {
                    emit(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                }
                if need_b {
                    emit(*b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
                }
            }
            Op::Tanh { a } => {
                let out = &self.nodes[i].value;
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gi, y)| gi * (1.0 - y * y))
                    .collect();
                emit(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::Relu { a } => {
                let va = val(*a);
                let ga: Vec<f64> = g
                    .data()
                    .iter()
                    .zip(va.data())
                    .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                    .collect();
                emit(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::Dropout { a, mask } => {
                let ga: Vec<f64> = g.data().iter().zip(mask).map(|(gi, m)| gi * m).collect();
                emit(*a, Tensor::new(g.shape().to_vec(), ga).unwrap());
            }
            Op::GatherRows { a, indices } => {
                let va = val(*a);
                let cols = va.cols();
                let mut ga = vec![0.0; va.len()];
                for (i2, &src) in indices.iter().enumerate() {
                    for j in 0..cols {
                        ga[src * cols + j] += g.data()[i2 * cols + j];
                    }
                }
                emit(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
            }
            Op::ScatterAddRows { a, indices } => {
                let va = val(*a);
                let cols = va.cols();
                let mut ga = Vec::with_capacity(va.len());
                for &tgt in indices {
                    ga.extend_from_slice(&g.data()[tgt * cols..(tgt + 1) * cols]);
                }
                emit(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
            }
            Op::Sum { a } => {
                let va = val(*a);
                let gv = g.scalar_value();
                emit(
                    *a,
                    Tensor::new(va.shape().to_vec(), vec![gv; va.len()]).unwrap(),
                );
            }
            Op::MeanRows { a } => {
                let va = val(*a);
                let (rows, cols) = (va.rows(), va.cols());
                let inv = 1.0 / rows as f64;
                let mut ga = Vec::with_capacity(va.len());
                for _ in 0..rows {
                    ga.extend(g.data().iter().map(|x| x * inv));
                }
                let _ = cols;
                emit(*a, Tensor::new(va.shape().to_vec(), ga).unwrap());
            }
            Op::ConcatRows { parts } => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let vp = val(p);
                    let take = vp.rows() * cols;
                    if self.nodes[p].requires_grad {
                        let slice = g.data()[offset..offset + take].to_vec();
                        emit(p, Tensor::new(vp.shape().to_vec(), slice).unwrap());
                    }
                    offset += take;
                }
            }
            Op::BceWithLogits { logits, targets } => {
                let vl = val(*logits);
                let gv = g.scalar_value() / vl.len() as f64;
                let ga: Vec<f64> = vl
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(l, y)| gv * (sigmoid(*l) - y))
                    .collect();
                emit(*logits, Tensor::new(vl.shape().to_vec(), ga).unwrap());
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let vl = val(*logits);
                let (rows, cols) = (vl.rows(), vl.cols());
                let gv = g.scalar_value() / rows as f64;
                let mut ga = vec![0.0; vl.len()];
                for (i2, &label) in labels.iter().enumerate() {
                    let row = vl.row(i2);
                    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let denom: f64 = row.iter().map(|&x| (x - max).exp()).sum();
                    for j in 0..cols {
                        let p = (row[j] - max).exp() / denom;
                        let ind = if j == label { 1.0 } else { 0.0 };
                        ga[i2 * cols + j] = gv * (p - ind);
                    }
                }
                emit(*logits, Tensor::new(vl.shape().to_vec(), ga).unwrap());
            }
            Op::TranseScores { q, h, l2 } => {
                let (vq, vh) = (val(*q), val(*h));
                let (b, d, n) = (vq.rows(), vq.cols(), vh.rows());
                let need_q = self.nodes[*q].requires_grad;
                let need_h = self.nodes[*h].requires_grad;
                let mut gq = vec![0.0; vq.len()];
                let mut gh = vec![0.0; vh.len()];
                for i2 in 0..b {
                    let qi = vq.row(i2);
                    for v in 0..n {
                        let gout = g.data()[i2 * n + v];
                        if gout == 0.0 {
                            continue;
                        }
                        let hv = vh.row(v);
                        if *l2 {
                            let norm = -self.nodes[i].value.data()[i2 * n + v];
                            if norm == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                let unit = (qi[j] - hv[j]) / norm;
                                if need_q {
                                    gq[i2 * d + j] -= gout * unit;
                                }
                                if need_h {
                                    gh[v * d + j] += gout * unit;
                                }
                            }
                        } else {
                            for j in 0..d {
                                let s = sign(qi[j] - hv[j]);
                                if need_q {
                                    gq[i2 * d + j] -= gout * s;
                                }
                                if need_h {
                                    gh[v * d + j] += gout * s;
                                }
                            }
                        }
                    }
                }
                if need_q {
                    emit(*q, Tensor::new(vq.shape().to_vec(), gq).unwrap());
                }
                if need_h {
                    emit(*h, Tensor::new(vh.shape().to_vec(), gh).unwrap());
                }
            }
        }
        contribs
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

/// Sums `g` down to `shape` when the target was a broadcast scalar;
/// otherwise shapes already agree.
fn reduce_to_shape(g: &Tensor, shape: &[usize]) -> Tensor {
    let target_len: usize = shape.iter().product();
    if target_len == g.len() {
        Tensor::new(shape.to_vec(), g.data().to_vec()).unwrap()
    } else {
        debug_assert_eq!(target_len, 1);
        Tensor::new(shape.to_vec(), vec![g.data().iter().sum()]).unwrap()
    }
}

/// `g * v` where either operand may be a broadcast scalar; result takes the
/// larger shape.
fn broadcast_mul(g: &Tensor, v: &Tensor) -> Tensor {
    if v.is_scalar() {
        let c = v.scalar_value();
        let data: Vec<f64> = g.data().iter().map(|x| c * x).collect();
        Tensor::new(g.shape().to_vec(), data).unwrap()
    } else {
        debug_assert_eq!(g.len(), v.len());
        let data: Vec<f64> = g.data().iter().zip(v.data()).map(|(a, b)| a * b).collect();
        Tensor::new(g.shape().to_vec(), data).unwrap()
    }
}
