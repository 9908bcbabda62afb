//! The autodiff tape. Recording an op evaluates it eagerly and remembers the
//! inputs (plus whatever activations the backward rule needs); `backward`
//! walks the tape once in reverse topological order, which for an
//! append-only tape is simply reverse insertion order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{matmul_raw, sigmoid_raw, softmax_lanes, transpose_raw, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

struct Node {
    value: Tensor,
    grad: Option<Vec<Real>>,
    requires_grad: bool,
    op: Op,
}

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    AddBias { a: NodeId, bias: NodeId },
    Mul { a: NodeId, b: NodeId },
    ScaleBy { v: NodeId, s: NodeId },
    Affine { a: NodeId, mul: Real },
    Relu { a: NodeId },
    Tanh { a: NodeId },
    Sigmoid { a: NodeId },
    Softmax { a: NodeId, axis: usize },
    LayerNorm { a: NodeId, gain: NodeId, bias: NodeId, xhat: Vec<Real>, inv_std: Vec<Real> },
    Concat { parts: Vec<NodeId>, axis: usize },
    SliceCols { a: NodeId, start: usize, len: usize },
    GatherRows { a: NodeId, rows: Vec<usize> },
    MaxPoolRows { a: NodeId, argmax: Vec<usize> },
    Dropout { a: NodeId, mask: Vec<Real> },
    CrossEntropyRows {
        logits: NodeId,
        golds: Vec<usize>,
        mask: Vec<bool>,
        weights: Option<Vec<Real>>,
        probs: Vec<Real>,
    },
    Sum { a: NodeId },
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    stochastic: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// True once any training-mode dropout has been recorded; such a graph is
    /// not a deterministic function of its inputs and cannot be grad-checked.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// Input that never receives a gradient (data, masks, frozen tables).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, false, Op::Leaf)
    }

    /// Gradient-receiving input (parameters).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[Real]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite forward value");
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        id
    }

    fn push_op(&mut self, value: Tensor, inputs: &[NodeId], op: Op) -> NodeId {
        let requires = inputs.iter().any(|&i| self.requires(i));
        self.push(value, requires, op)
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// `a[m x k] * b[k x n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push_op(Tensor::matrix(m, n, data), &[a, b], Op::MatMul { a, b }))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("transpose")?;
        let data = transpose_raw(self.value(a).data(), r, c);
        Ok(self.push_op(Tensor::matrix(c, r, data), &[a], Op::Transpose { a }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data: Vec<Real> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_op(Tensor::new(shape, data), &[a, b], Op::Add { a, b }))
    }

    /// `a[r x c] + bias` broadcast over rows; bias is `[c]` or `[1 x c]`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("add_bias")?;
        let blen = self.value(bias).len();
        if blen != c {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let bdata = self.value(bias).data();
        let mut data = Vec::with_capacity(r * c);
        for row in self.value(a).data().chunks(c) {
            data.extend(row.iter().zip(bdata).map(|(x, b)| x + b));
        }
        Ok(self.push_op(Tensor::matrix(r, c, data), &[a, bias], Op::AddBias { a, bias }))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data: Vec<Real> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_op(Tensor::new(shape, data), &[a, b], Op::Mul { a, b }))
    }

    /// `s * v` where `s` is a single-element node.
    pub fn scale_by(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).len() != 1 {
            return Err(TensorError::BadRank {
                op: "scale_by",
                expected: 1,
                shape: self.value(s).shape().to_vec(),
            });
        }
        let sv = self.value(s).item();
        let data: Vec<Real> = self.value(v).data().iter().map(|x| x * sv).collect();
        let shape = self.value(v).shape().to_vec();
        Ok(self.push_op(Tensor::new(shape, data), &[v, s], Op::ScaleBy { v, s }))
    }

    /// Elementwise `a * mul + add` with constant coefficients.
    pub fn affine(&mut self, a: NodeId, mul: Real, add: Real) -> NodeId {
        let data: Vec<Real> = self.value(a).data().iter().map(|x| x * mul + add).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_op(Tensor::new(shape, data), &[a], Op::Affine { a, mul })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data: Vec<Real> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_op(Tensor::new(shape, data), &[a], Op::Relu { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data: Vec<Real> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_op(Tensor::new(shape, data), &[a], Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data: Vec<Real> = self.value(a).data().iter().map(|&x| sigmoid_raw(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push_op(Tensor::new(shape, data), &[a], Op::Sigmoid { a })
    }

    /// Stable softmax along `axis`; each lane sums to 1.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::BadAxis { op: "softmax", axis, shape });
        }
        let mut data = self.value(a).data().to_vec();
        if axis == shape.len() - 1 {
            softmax_lanes(&mut data, shape[axis]);
        } else {
            for (base, stride, len) in lanes(&shape, axis) {
                let mut lane: Vec<Real> = (0..len).map(|k| data[base + k * stride]).collect();
                softmax_lanes(&mut lane, len);
                for (k, v) in lane.into_iter().enumerate() {
                    data[base + k * stride] = v;
                }
            }
        }
        Ok(self.push_op(Tensor::new(shape, data), &[a], Op::Softmax { a, axis }))
    }

    /// Per-last-axis-vector normalization to mean 0 / variance 1, then
    /// `gain (.*) xhat + bias`. `gain` and `bias` have the last-axis length.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId, eps: Real) -> Result<NodeId> {
        let shape = self.value(a).shape().to_vec();
        let d = *shape.last().ok_or(TensorError::BadRank {
            op: "layer_norm",
            expected: 2,
            shape: shape.clone(),
        })?;
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let x = self.value(a).data();
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = Vec::with_capacity(x.len());
        let mut xhat = Vec::with_capacity(x.len());
        let mut inv_std = Vec::with_capacity(x.len() / d);
        for lane in x.chunks(d) {
            let mean = lane.iter().sum::<Real>() / d as Real;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / d as Real;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (k, v) in lane.iter().enumerate() {
                let xh = (v - mean) * inv;
                xhat.push(xh);
                out.push(g[k] * xh + b[k]);
            }
        }
        Ok(self.push_op(
            Tensor::new(self.value(a).shape().to_vec(), out),
            &[a, gain, bias],
            Op::LayerNorm { a, gain, bias, xhat, inv_std },
        ))
    }

    /// Concatenate same-rank tensors along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::BadAxis { op: "concat", axis, shape: first });
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        Ok(self.push_op(Tensor::new(shape, data), parts, Op::Concat { parts: parts.to_vec(), axis }))
    }

    /// Column slice `[.., start..start+len]` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("slice_cols")?;
        if start + len > c {
            return Err(TensorError::IndexOutOfRange { op: "slice_cols", index: start + len, len: c });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in self.value(a).data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push_op(Tensor::matrix(r, len, data), &[a], Op::SliceCols { a, start, len }))
    }

    /// Select rows of a matrix (rows may repeat); backward scatter-adds.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(TensorError::IndexOutOfRange { op: "gather_rows", index: row, len: r });
            }
            data.extend_from_slice(&self.value(a).data()[row * c..(row + 1) * c]);
        }
        Ok(self.push_op(
            Tensor::matrix(rows.len(), c, data),
            &[a],
            Op::GatherRows { a, rows: rows.to_vec() },
        ))
    }

    /// Elementwise max over consecutive groups of `group` rows:
    /// `[g*group x c] -> [g x c]`. Gradient flows to the argmax row only.
    pub fn max_pool_rows(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("max_pool_rows")?;
        if group == 0 || r % group != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "max_pool_rows",
                lhs: vec![r, c],
                rhs: vec![group],
            });
        }
        let groups = r / group;
        let x = self.value(a).data();
        let mut data = vec![Real::NEG_INFINITY; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for gi in 0..groups {
            for row in 0..group {
                let abs_row = gi * group + row;
                for col in 0..c {
                    let v = x[abs_row * c + col];
                    if v > data[gi * c + col] {
                        data[gi * c + col] = v;
                        argmax[gi * c + col] = abs_row;
                    }
                }
            }
        }
        Ok(self.push_op(
            Tensor::matrix(groups, c, data),
            &[a],
            Op::MaxPoolRows { a, argmax },
        ))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-rate)` so the
    /// expectation is unchanged; identity (and not recorded) when
    /// `training` is false.
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: Real,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::BadDropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        self.stochastic = true;
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mask: Vec<Real> = (0..self.value(a).len())
            .map(|_| if rng.gen::<Real>() < keep { scale } else { 0.0 })
            .collect();
        let data: Vec<Real> =
            self.value(a).data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push_op(Tensor::new(shape, data), &[a], Op::Dropout { a, mask }))
    }

    /// `-log softmax(logits)[gold]` for a single logit vector (`[c]` or `[1 x c]`).
    pub fn cross_entropy(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let classes = match self.value(logits).shape() {
            [c] => *c,
            [1, c] => *c,
            s => {
                return Err(TensorError::BadRank { op: "cross_entropy", expected: 1, shape: s.to_vec() })
            }
        };
        if gold >= classes {
            return Err(TensorError::LabelOutOfRange { label: gold, classes });
        }
        self.cross_entropy_rows_inner(logits, classes, &[gold], &[true], None)
    }

    /// Sum of per-row cross-entropies over unmasked rows of `logits[r x c]`,
    /// optionally weighted per gold class. Yields a `[1]` scalar.
    pub fn cross_entropy_rows(
        &mut self,
        logits: NodeId,
        golds: &[usize],
        mask: &[bool],
        class_weights: Option<&[Real]>,
    ) -> Result<NodeId> {
        let (r, c) = self.value(logits).dims2("cross_entropy_rows")?;
        assert_eq!(golds.len(), r, "gold labels per row");
        assert_eq!(mask.len(), r, "mask flag per row");
        for &gold in golds {
            if gold >= c {
                return Err(TensorError::LabelOutOfRange { label: gold, classes: c });
            }
        }
        self.cross_entropy_rows_inner(logits, c, golds, mask, class_weights)
    }

    fn cross_entropy_rows_inner(
        &mut self,
        logits: NodeId,
        classes: usize,
        golds: &[usize],
        mask: &[bool],
        class_weights: Option<&[Real]>,
    ) -> Result<NodeId> {
        if let Some(w) = class_weights {
            assert_eq!(w.len(), classes, "one weight per class");
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (row, lane) in x.chunks(classes).enumerate() {
            if !mask[row] {
                continue;
            }
            // log-sum-exp with max subtraction
            let max = lane.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let sum: Real = lane.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let w = class_weights.map_or(1.0, |w| w[golds[row]]);
            loss += w * (lse - lane[golds[row]]);
            for (k, v) in lane.iter().enumerate() {
                probs[row * classes + k] = (v - max).exp() / sum;
            }
        }
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[logits],
            Op::CrossEntropyRows {
                logits,
                golds: golds.to_vec(),
                mask: mask.to_vec(),
                weights: class_weights.map(|w| w.to_vec()),
                probs,
            },
        ))
    }

    /// Full reduction to a `[1]` scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: Real = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(total), &[a], Op::Sum { a })
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Accumulate `d loss / d node` into every gradient-requiring node
    /// reachable from `loss`, which must be a single-element tensor.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::BadRank {
                op: "backward",
                expected: 1,
                shape: self.value(loss).shape().to_vec(),
            });
        }
        if !self.value(loss).item().is_finite() {
            return Err(TensorError::NonFinite { context: "backward: loss".into() });
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![0.0; node.value.len()]);
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] = 1.0;
        } else {
            // Loss does not depend on any gradient-requiring leaf; nothing to do.
            return Ok(());
        }

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let grad = match self.nodes[i].grad.as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backward_step(i, &grad);
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, delta: &[Real]) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let g = self.nodes[id.0].grad.as_mut().expect("grad allocated");
        for (gv, dv) in g.iter_mut().zip(delta) {
            *gv += dv;
        }
    }

    fn backward_step(&mut self, i: usize, grad: &[Real]) {
        // Ops hold only ids and saved activations, so a borrow of the op can
        // be dropped before mutating gradients by extracting what's needed.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let (m, k) = self.value(a).dims2("matmul").unwrap();
                let n = self.value(b).shape()[1];
                if self.requires(a) {
                    let bt = transpose_raw(self.value(b).data(), k, n);
                    let da = matmul_raw(grad, &bt, m, n, k);
                    self.add_grad(a, &da);
                }
                if self.requires(b) {
                    let at = transpose_raw(self.value(a).data(), m, k);
                    let db = matmul_raw(&at, grad, k, m, n);
                    self.add_grad(b, &db);
                }
            }
            Op::Transpose { a } => {
                let a = *a;
                let (r, c) = self.value(a).dims2("transpose").unwrap();
                // grad has shape [c x r]; transpose back
                let da = transpose_raw(grad, c, r);
                self.add_grad(a, &da);
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.add_grad(a, grad);
                self.add_grad(b, grad);
            }
            Op::AddBias { a, bias } => {
                let (a, bias) = (*a, *bias);
                self.add_grad(a, grad);
                if self.requires(bias) {
                    let c = self.value(bias).len();
                    let mut db = vec![0.0; c];
                    for row in grad.chunks(c) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    self.add_grad(bias, &db);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if self.requires(a) {
                    let da: Vec<Real> =
                        grad.iter().zip(self.value(b).data()).map(|(g, y)| g * y).collect();
                    self.add_grad(a, &da);
                }
                if self.requires(b) {
                    let db: Vec<Real> =
                        grad.iter().zip(self.value(a).data()).map(|(g, x)| g * x).collect();
                    self.add_grad(b, &db);
                }
            }
            Op::ScaleBy { v, s } => {
                let (v, s) = (*v, *s);
                let sv = self.value(s).item();
                if self.requires(v) {
                    let dv: Vec<Real> = grad.iter().map(|g| g * sv).collect();
                    self.add_grad(v, &dv);
                }
                if self.requires(s) {
                    let ds: Real =
                        grad.iter().zip(self.value(v).data()).map(|(g, x)| g * x).sum();
                    self.add_grad(s, &[ds]);
                }
            }
            Op::Affine { a, mul } => {
                let (a, mul) = (*a, *mul);
                let da: Vec<Real> = grad.iter().map(|g| g * mul).collect();
                self.add_grad(a, &da);
            }
            Op::Relu { a } => {
                let a = *a;
                let da: Vec<Real> = grad
                    .iter()
                    .zip(self.value(a).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Tanh { a } => {
                let a = *a;
                let da: Vec<Real> = grad
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(g, &t)| g * (1.0 - t * t))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Sigmoid { a } => {
                let a = *a;
                let da: Vec<Real> = grad
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(g, &s)| g * s * (1.0 - s))
                    .collect();
                self.add_grad(a, &da);
            }
            Op::Softmax { a, axis } => {
                let (a, axis) = (*a, *axis);
                let shape = self.nodes[i].value.shape().to_vec();
                let p = self.nodes[i].value.data();
                let mut da = vec![0.0; p.len()];
                // ds = p (.*) (g - <g, p>) per lane
                for (base, stride, len) in lanes(&shape, axis) {
                    let dot: Real =
                        (0..len).map(|k| grad[base + k * stride] * p[base + k * stride]).sum();
                    for k in 0..len {
                        let idx = base + k * stride;
                        da[idx] = p[idx] * (grad[idx] - dot);
                    }
                }
                self.add_grad(a, &da);
            }
            Op::LayerNorm { a, gain, bias, xhat, inv_std } => {
                let (a, gain, bias) = (*a, *gain, *bias);
                let d = self.value(gain).len();
                let g = self.value(gain).data().to_vec();
                let xhat = xhat.clone();
                let inv_std = inv_std.clone();
                if self.requires(a) {
                    let mut da = vec![0.0; xhat.len()];
                    for (lane_idx, inv) in inv_std.iter().enumerate() {
                        let base = lane_idx * d;
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for k in 0..d {
                            let dxh = grad[base + k] * g[k];
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xhat[base + k];
                        }
                        mean_dxhat /= d as Real;
                        mean_dxhat_xhat /= d as Real;
                        for k in 0..d {
                            let dxh = grad[base + k] * g[k];
                            da[base + k] = inv * (dxh - mean_dxhat - xhat[base + k] * mean_dxhat_xhat);
                        }
                    }
                    self.add_grad(a, &da);
                }
                if self.requires(gain) {
                    let mut dg = vec![0.0; d];
                    for (lane, xh_lane) in grad.chunks(d).zip(xhat.chunks(d)) {
                        for k in 0..d {
                            dg[k] += lane[k] * xh_lane[k];
                        }
                    }
                    self.add_grad(gain, &dg);
                }
                if self.requires(bias) {
                    let mut db = vec![0.0; d];
                    for lane in grad.chunks(d) {
                        for k in 0..d {
                            db[k] += lane[k];
                        }
                    }
                    self.add_grad(bias, &db);
                }
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let out_shape = self.nodes[i].value.shape().to_vec();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let outer: usize = out_shape[..axis].iter().product();
                let mut offset_in_grad = 0;
                // Walk outer-major blocks in the same order forward wrote them.
                let blocks: Vec<usize> =
                    parts.iter().map(|&p| self.value(p).shape()[axis] * inner).collect();
                let mut deltas: Vec<Vec<Real>> =
                    parts.iter().map(|&p| vec![0.0; self.value(p).len()]).collect();
                for o in 0..outer {
                    for (pi, &block) in blocks.iter().enumerate() {
                        deltas[pi][o * block..(o + 1) * block]
                            .copy_from_slice(&grad[offset_in_grad..offset_in_grad + block]);
                        offset_in_grad += block;
                    }
                }
                for (pi, &p) in parts.iter().enumerate() {
                    self.add_grad(p, &deltas[pi]);
                }
            }
            Op::SliceCols { a, start, len } => {
                let (a, start, len) = (*a, *start, *len);
                let (r, c) = self.value(a).dims2("slice_cols").unwrap();
                let mut da = vec![0.0; r * c];
                for row in 0..r {
                    for k in 0..len {
                        da[row * c + start + k] = grad[row * len + k];
                    }
                }
                self.add_grad(a, &da);
            }
            Op::GatherRows { a, rows } => {
                let a = *a;
                let rows = rows.clone();
                let (r, c) = self.value(a).dims2("gather_rows").unwrap();
                let mut da = vec![0.0; r * c];
                for (out_row, &src_row) in rows.iter().enumerate() {
                    for k in 0..c {
                        da[src_row * c + k] += grad[out_row * c + k];
                    }
                }
                self.add_grad(a, &da);
            }
            Op::MaxPoolRows { a, argmax, .. } => {
                let a = *a;
                let argmax = argmax.clone();
                let (_, c) = self.value(a).dims2("max_pool_rows").unwrap();
                let mut da = vec![0.0; self.value(a).len()];
                for (out_idx, &src_row) in argmax.iter().enumerate() {
                    let col = out_idx % c;
                    da[src_row * c + col] += grad[out_idx];
                }
                self.add_grad(a, &da);
            }
            Op::Dropout { a, mask } => {
                let a = *a;
                let da: Vec<Real> = grad.iter().zip(mask).map(|(g, m)| g * m).collect();
                self.add_grad(a, &da);
            }
            Op::CrossEntropyRows { logits, golds, mask, weights, probs } => {
                let logits = *logits;
                let golds = golds.clone();
                let mask = mask.clone();
                let weights = weights.clone();
                let probs = probs.clone();
                let classes = probs.len() / golds.len().max(1);
                let g0 = grad[0];
                let mut da = vec![0.0; probs.len()];
                for row in 0..golds.len() {
                    if !mask[row] {
                        continue;
                    }
                    let w = weights.as_ref().map_or(1.0, |w| w[golds[row]]);
                    for k in 0..classes {
                        let idx = row * classes + k;
                        let onehot = if k == golds[row] { 1.0 } else { 0.0 };
                        da[idx] = g0 * w * (probs[idx] - onehot);
                    }
                }
                self.add_grad(logits, &da);
            }
            Op::Sum { a } => {
                let a = *a;
                let da = vec![grad[0]; self.value(a).len()];
                self.add_grad(a, &da);
            }
        }
    }
}

/// (base, stride, len) triples addressing every lane along `axis`.
fn lanes(shape: &[usize], axis: usize) -> Vec<(usize, usize, usize)> {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = Vec::with_capacity(outer * stride);
    for o in 0..outer {
        for inner in 0..stride {
            out.push((o * len * stride + inner, stride, len));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn softmax_symmetry() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_no_overflow() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1000.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        let out = g.value(s).data();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(out[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let s = g.softmax(x, 1).unwrap();
        let z: Vec<f64> = vec![1.0, 2.0, 3.0];
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        for (got, want) in g.value(s).data().iter().zip(z.iter().map(|v| v.exp() / denom)) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_axis0() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 3.0]));
        let s = g.softmax(x, 0).unwrap();
        let out = g.value(s).data();
        // columns sum to 1
        assert!((out[0] + out[2] - 1.0).abs() < 1e-12);
        assert!((out[1] + out[3] - 1.0).abs() < 1e-12);
        assert_eq!(out[0], 0.5); // column 0 is [0, 0]
    }

    #[test]
    fn relu_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn layer_norm_two_points() {
        // x=[1,3], gain=1, bias=0: mean 2, population std 1 -> [-1, 1]
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 3.0]));
        let gain = g.constant(Tensor::row(vec![1.0, 1.0]));
        let bias = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        let out = g.value(y).data();
        assert!((out[0] + 1.0).abs() < 1e-6);
        assert!((out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_constant_vector() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![5.0, 5.0, 5.0]));
        let gain = g.constant(Tensor::row(vec![1.0; 3]));
        let bias = g.constant(Tensor::row(vec![0.0; 3]));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in g.value(y).data() {
            assert!(v.abs() < 1e-9, "zero variance absorbed by eps, got {v}");
        }
    }

    #[test]
    fn concat_shape_mismatch_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.constant(Tensor::matrix(3, 2, vec![0.0; 6]));
        let err = g.concat(&[a, b], 1).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"), "{err}");
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = g.constant(Tensor::matrix(2, 2, vec![0.0; 4]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1e6, -1e6]));
        let l = g.cross_entropy(x, 0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let l = g.cross_entropy(x, 1).unwrap();
        assert!((g.value(l).item() - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let logits = vec![0.3, -1.2, 2.0, 0.7, -0.5];
        let gold = 3;
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(logits.clone()));
        let l = g.cross_entropy(x, gold).unwrap();
        let denom: f64 = logits.iter().map(|v| v.exp()).sum();
        let want = -(logits[gold].exp() / denom).ln();
        assert!((g.value(l).item() - want).abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        assert!(matches!(
            g.cross_entropy(x, 2),
            Err(TensorError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = g.dropout(x, 0.5, false, &mut rng()).unwrap();
        assert_eq!(x, y); // not even a new node
        assert!(!g.is_stochastic());
    }

    #[test]
    fn dropout_expectation_monte_carlo() {
        // mean over 1e5 seeded trials of dropout([1], 0.5, train) within [0.98, 1.02]
        let mut rng = rng();
        let mut total = 0.0;
        let trials = 100_000;
        for _ in 0..trials {
            let mut g = Graph::new();
            let x = g.constant(Tensor::row(vec![1.0]));
            let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
            total += g.value(y).item();
        }
        let mean = total / trials as f64;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn backward_through_sum_mul() {
        // f(x) = sum(x .* x); df/dx = 2x
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, -2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let mut g = Graph::new();
        let t = g.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = g.gather_rows(t, &[1, 1, 2]).unwrap();
        let loss = g.sum(picked);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(t).unwrap(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn concat_axis1_roundtrip_grads() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]));
        let b = g.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]));
        let cat = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(cat).data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(cat);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(g.grad(b).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn max_pool_rows_routes_gradient_to_argmax() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::matrix(4, 2, vec![1.0, 9.0, 3.0, 2.0, 0.0, 1.0, 5.0, 0.0]));
        let pooled = g.max_pool_rows(a, 2).unwrap();
        assert_eq!(g.value(pooled).data(), &[3.0, 9.0, 5.0, 1.0]);
        let loss = g.sum(pooled);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::row(vec![0.3, -0.7, 1.1]));
            let w = g.constant(Tensor::matrix(3, 3, (0..9).map(|i| (i as f64) * 0.17 - 0.5).collect()));
            let y = g.matmul(x, w).unwrap();
            let s = g.softmax(y, 1).unwrap();
            let t = g.tanh(s);
            g.value(t).data().to_vec()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
