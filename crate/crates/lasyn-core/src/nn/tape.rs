use super::scalar::{log_sum_exp, Scalar};
use super::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Src {
    /// Leaf node. `trainable` leaves receive gradients; const leaves do not,
    /// so a frozen parameter bound as a const has a gradient of exactly zero.
    Leaf { trainable: bool },
    Op(Op),
}

#[derive(Debug, Clone)]
enum Op {
    Matmul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    AddBias { x: NodeId, bias: NodeId },
    Silu { a: NodeId },
    Tanh { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Embed { table: NodeId, indices: Vec<usize> },
    ConcatCols { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize, len: usize },
    SliceCols { a: NodeId, start: usize, len: usize },
    PadRows { a: NodeId, left: usize, right: usize },
    Upsample2 { a: NodeId },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    PairwiseAdd { a: NodeId, b: NodeId },
    Conv1d(Conv1dOp),
    CrossEntropyMean { logits: NodeId, targets: Vec<usize> },
    TransducerNll(TransducerOp),
}

#[derive(Debug, Clone)]
struct Conv1dOp {
    x: NodeId,
    w: NodeId,
    bias: NodeId,
    kernel: usize,
    stride: usize,
    pad_left: usize,
}

#[derive(Debug, Clone)]
struct TransducerOp {
    logits: NodeId,
    time_len: usize,
    targets: Vec<usize>,
    blank: usize,
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    src: Src,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape. Values are computed eagerly as ops are pushed;
/// `backward` walks the list in reverse.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Grads<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    /// Gradient of the loss w.r.t. the given node; zeros if the node did not
    /// participate or does not require gradients.
    pub fn get(&self, id: NodeId, shape: &[usize]) -> Tensor<F> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get_ref(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(256) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor<F>, src: Src) -> NodeId {
        let requires_grad = match &src {
            Src::Leaf { trainable } => *trainable,
            Src::Op(op) => self.op_inputs(op).iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node { value, src, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn op_inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::PairwiseAdd { a, b } => vec![*a, *b],
            Op::Transpose { a }
            | Op::Scale { a, .. }
            | Op::Silu { a }
            | Op::Tanh { a }
            | Op::SoftmaxRows { a }
            | Op::SliceRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::PadRows { a, .. }
            | Op::Upsample2 { a }
            | Op::MeanAll { a }
            | Op::SumAll { a } => vec![*a],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embed { table, .. } => vec![*table],
            Op::ConcatCols { parts } => parts.clone(),
            Op::Conv1d(c) => vec![c.x, c.w, c.bias],
            Op::CrossEntropyMean { logits, .. } => vec![*logits],
            Op::TransducerNll(t) => vec![t.logits],
        }
    }

    // ---- leaves ----

    pub fn leaf(&mut self, value: Tensor<F>, trainable: bool) -> NodeId {
        self.push(value, Src::Leaf { trainable })
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.leaf(value, false)
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Src::Op(Op::Matmul { a, b }))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out[(j, i)] = t[(i, j)];
            }
        }
        self.push(out, Src::Op(Op::Transpose { a }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let f = F::from_f64(c);
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x * f).collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Scale { a, c }))
    }

    /// Broadcast-add a rank-1 bias over every row of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (tx, tb) = (self.value(x), self.value(bias));
        let cols = tx.cols();
        assert_eq!(tb.len(), cols, "bias length mismatch");
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            for (j, &b) in tb.data().iter().enumerate() {
                data.push(tx.row(r)[j] + b);
            }
        }
        let v = Tensor::from_vec(tx.shape(), data);
        self.push(v, Src::Op(Op::AddBias { x, bias }))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .map(|&x| {
                let s = F::ONE / (F::ONE + (-x).exp());
                x * s
            })
            .collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Silu { a }))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.tanh()).collect();
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::Tanh { a }))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let (r, c) = (ta.rows(), ta.cols());
        let mut data = Vec::with_capacity(ta.len());
        for i in 0..r {
            let row = ta.row(i);
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let mut denom = F::ZERO;
            let mut exps = Vec::with_capacity(c);
            for &v in row {
                let e = (v - mx).exp();
                denom += e;
                exps.push(e);
            }
            for e in exps {
                data.push(e / denom);
            }
        }
        let v = Tensor::from_vec(ta.shape(), data);
        self.push(v, Src::Op(Op::SoftmaxRows { a }))
    }

    /// Per-row normalization: `y = (x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let c = tx.cols();
        assert_eq!(tg.len(), c);
        assert_eq!(tb.len(), c);
        let epsf = F::from_f64(eps);
        let nc = F::from_f64(c as f64);
        let mut data = Vec::with_capacity(tx.len());
        for r in 0..tx.rows() {
            let row = tx.row(r);
            let mean = row.iter().copied().sum::<F>() / nc;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nc;
            let inv = F::ONE / (var + epsf).sqrt();
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mean) * inv * tg.data()[j] + tb.data()[j]);
            }
        }
        let v = Tensor::from_vec(tx.shape(), data);
        self.push(v, Src::Op(Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Gather rows of `table` by index; the embedding lookup.
    pub fn embed(&mut self, table: NodeId, indices: &[usize]) -> NodeId {
        let tt = self.value(table);
        let c = tt.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(tt.row(i));
        }
        let v = Tensor::from_vec(&[indices.len(), c], data);
        self.push(
            v,
            Src::Op(Op::Embed { table, indices: indices.to_vec() }),
        )
    }

    /// Concatenate along columns; all parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::from_vec(&[rows, total], data);
        self.push(v, Src::Op(Op::ConcatCols { parts: parts.to_vec() }))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let ta = self.value(a);
        let c = ta.cols();
        let data = ta.data()[start * c..(start + len) * c].to_vec();
        let v = Tensor::from_vec(&[len, c], data);
        self.push(v, Src::Op(Op::SliceRows { a, start, len }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let ta = self.value(a);
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row(r)[start..start + len]);
        }
        let v = Tensor::from_vec(&[ta.rows(), len], data);
        self.push(v, Src::Op(Op::SliceCols { a, start, len }))
    }

    /// Zero-pad rows at the top and bottom (time padding).
    pub fn pad_rows(&mut self, a: NodeId, left: usize, right: usize) -> NodeId {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = vec![F::ZERO; (ta.rows() + left + right) * c];
        data[left * c..(left + ta.rows()) * c].copy_from_slice(ta.data());
        let v = Tensor::from_vec(&[ta.rows() + left + right, c], data);
        self.push(v, Src::Op(Op::PadRows { a, left, right }))
    }

    /// Nearest-neighbor 2x upsampling along rows.
    pub fn upsample2(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = Vec::with_capacity(ta.len() * 2);
        for r in 0..ta.rows() {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(ta.row(r));
        }
        let v = Tensor::from_vec(&[ta.rows() * 2, c], data);
        self.push(v, Src::Op(Op::Upsample2 { a }))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let n = F::from_f64(ta.len() as f64);
        let v = Tensor::scalar(ta.data().iter().copied().sum::<F>() / n);
        self.push(v, Src::Op(Op::MeanAll { a }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let v = Tensor::scalar(ta.data().iter().copied().sum::<F>());
        self.push(v, Src::Op(Op::SumAll { a }))
    }

    /// Outer broadcast add: `a: [t, j]`, `b: [u, j]` -> `[t*u, j]` where
    /// `out[t*U + u] = a[t] + b[u]`. Used to build the transducer joint grid.
    pub fn pairwise_add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols(), tb.cols(), "pairwise_add width mismatch");
        let j = ta.cols();
        let mut data = Vec::with_capacity(ta.rows() * tb.rows() * j);
        for t in 0..ta.rows() {
            let ra = ta.row(t);
            for u in 0..tb.rows() {
                let rb = tb.row(u);
                for k in 0..j {
                    data.push(ra[k] + rb[k]);
                }
            }
        }
        let v = Tensor::from_vec(&[ta.rows() * tb.rows(), j], data);
        self.push(v, Src::Op(Op::PairwiseAdd { a, b }))
    }

    /// 1-D convolution over time. `x: [T, c_in]`, `w: [k*c_in, c_out]`,
    /// `bias: [c_out]`. Output rows: `(T + pad_left + pad_right - k)/stride + 1`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        bias: NodeId,
        kernel: usize,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> NodeId {
        let tx = self.value(x);
        let tw = self.value(w);
        let c_in = tx.cols();
        assert_eq!(tw.rows(), kernel * c_in, "conv1d weight rows");
        let c_out = tw.cols();
        let t_in = tx.rows();
        let padded = t_in + pad_left + pad_right;
        assert!(padded >= kernel, "conv1d input shorter than kernel");
        let t_out = (padded - kernel) / stride + 1;
        let col = im2col(tx, kernel, stride, pad_left, t_out);
        let mut out = col.matmul(tw);
        let tb = self.value(bias);
        assert_eq!(tb.len(), c_out);
        for r in 0..t_out {
            for (j, &b) in tb.data().iter().enumerate() {
                out[(r, j)] += b;
            }
        }
        self.push(
            out,
            Src::Op(Op::Conv1d(Conv1dOp { x, w, bias, kernel, stride, pad_left })),
        )
    }

    /// Mean negative log-likelihood over rows of logits given target indices.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let tl = self.value(logits);
        assert_eq!(tl.rows(), targets.len(), "cross_entropy_mean row/target count");
        let mut total = F::ZERO;
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row(r);
            let mut mx = row[0];
            for &v in row {
                mx = mx.maximum(v);
            }
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
            total += lse - row[t];
        }
        let v = Tensor::scalar(total / F::from_f64(targets.len() as f64));
        self.push(
            v,
            Src::Op(Op::CrossEntropyMean { logits, targets: targets.to_vec() }),
        )
    }

    /// Transducer negative log-likelihood over a `T x (U+1)` lattice.
    ///
    /// `logits` has `T*(U+1)` rows (row `t*(U+1) + u`) and `V` columns; the
    /// op applies log-softmax internally and sums all monotone alignments by
    /// the forward recursion.
    pub fn transducer_nll(
        &mut self,
        logits: NodeId,
        time_len: usize,
        targets: &[usize],
        blank: usize,
    ) -> NodeId {
        let tl = self.value(logits);
        let u_len = targets.len();
        assert_eq!(tl.rows(), time_len * (u_len + 1), "transducer lattice rows");
        assert!(time_len >= 1, "transducer requires T >= 1");
        let log_probs = row_log_softmax(tl);
        let nll = transducer_forward(&log_probs, time_len, targets, blank);
        self.push(
            Tensor::scalar(nll),
            Src::Op(Op::TransducerNll(TransducerOp {
                logits,
                time_len,
                targets: targets.to_vec(),
                blank,
            })),
        )
    }

    // ---- backward ----

    pub fn backward(&self, loss: NodeId) -> Grads<F> {
        assert_eq!(self.value(loss).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::ONE));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let op = match &self.nodes[idx].src {
                Src::Leaf { .. } => continue,
                Src::Op(op) => op.clone(),
            };
            let gy = grads[idx].take().unwrap();
            self.backprop_op(&op, idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Grads { grads }
    }

    fn accum(&self, grads: &mut [Option<Tensor<F>>], id: NodeId, delta: Tensor<F>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_op(&self, op: &Op, out_idx: usize, gy: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        match op {
            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    // dA = dY * B^T
                    let (m, n, k) = (ta.rows(), tb.cols(), ta.cols());
                    let mut bt = Tensor::zeros(&[n, k]);
                    for i in 0..k {
                        for j in 0..n {
                            bt[(j, i)] = tb[(i, j)];
                        }
                    }
                    let mut da = Tensor::zeros(&[m, k]);
                    F::gemm(m, n, k, gy.data(), bt.data(), da.data_mut());
                    self.accum(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T * dY
                    let (m, n, k) = (ta.rows(), tb.cols(), ta.cols());
                    let mut at = Tensor::zeros(&[k, m]);
                    for i in 0..m {
                        for j in 0..k {
                            at[(j, i)] = ta[(i, j)];
                        }
                    }
                    let mut db = Tensor::zeros(&[k, n]);
                    F::gemm(k, m, n, at.data(), gy.data(), db.data_mut());
                    self.accum(grads, *b, db);
                }
            }
            Op::Transpose { a } => {
                let ta = self.value(*a);
                let (r, c) = (ta.rows(), ta.cols());
                let mut da = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..c {
                        da[(i, j)] = gy[(j, i)];
                    }
                }
                self.accum(grads, *a, da);
            }
            Op::Add { a, b } => {
                self.accum(grads, *a, gy.clone());
                self.accum(grads, *b, gy.clone());
            }
            Op::Sub { a, b } => {
                self.accum(grads, *a, gy.clone());
                let neg = gy.map(|v| -v);
                self.accum(grads, *b, neg);
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].requires_grad {
                    let tb = self.value(*b);
                    let da = Tensor::from_vec(
                        gy.shape(),
                        gy.data().iter().zip(tb.data()).map(|(&g, &v)| g * v).collect(),
                    );
                    self.accum(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let ta = self.value(*a);
                    let db = Tensor::from_vec(
                        gy.shape(),
                        gy.data().iter().zip(ta.data()).map(|(&g, &v)| g * v).collect(),
                    );
                    self.accum(grads, *b, db);
                }
            }
            Op::Scale { a, c } => {
                let f = F::from_f64(*c);
                let da = gy.map(|v| v * f);
                self.accum(grads, *a, da);
            }
            Op::AddBias { x, bias } => {
                self.accum(grads, *x, gy.clone());
                if self.nodes[bias.0].requires_grad {
                    let c = gy.cols();
                    let mut db = Tensor::zeros(&[c]);
                    for r in 0..gy.rows() {
                        for j in 0..c {
                            db.data_mut()[j] += gy.row(r)[j];
                        }
                    }
                    self.accum(grads, *bias, db);
                }
            }
            Op::Silu { a } => {
                let ta = self.value(*a);
                let da = Tensor::from_vec(
                    gy.shape(),
                    gy.data()
                        .iter()
                        .zip(ta.data())
                        .map(|(&g, &x)| {
                            let s = F::ONE / (F::ONE + (-x).exp());
                            g * (s * (F::ONE + x * (F::ONE - s)))
                        })
                        .collect(),
                );
                self.accum(grads, *a, da);
            }
            Op::Tanh { a } => {
                let ty = &self.nodes[out_idx].value;
                let da = Tensor::from_vec(
                    gy.shape(),
                    gy.data()
                        .iter()
                        .zip(ty.data())
                        .map(|(&g, &y)| g * (F::ONE - y * y))
                        .collect(),
                );
                self.accum(grads, *a, da);
            }
            Op::SoftmaxRows { a } => {
                let ty = &self.nodes[out_idx].value;
                let (r, c) = (ty.rows(), ty.cols());
                let mut da = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let yrow = ty.row(i);
                    let grow = &gy.data()[i * c..(i + 1) * c];
                    let dot = yrow.iter().zip(grow).map(|(&y, &g)| y * g).sum::<F>();
                    for j in 0..c {
                        da[(i, j)] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accum(grads, *a, da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = self.value(*x);
                let tg = self.value(*gain);
                let (r, c) = (tx.rows(), tx.cols());
                let nc = F::from_f64(c as f64);
                let epsf = F::from_f64(*eps);
                let mut dx = Tensor::zeros(&[r, c]);
                let mut dg = Tensor::zeros(&[c]);
                let mut db = Tensor::zeros(&[c]);
                for i in 0..r {
                    let row = tx.row(i);
                    let mean = row.iter().copied().sum::<F>() / nc;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / nc;
                    let inv = F::ONE / (var + epsf).sqrt();
                    let grow = &gy.data()[i * c..(i + 1) * c];
                    let mut sum_gd = F::ZERO;
                    let mut sum_gdx = F::ZERO;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let gd = grow[j] * tg.data()[j];
                        sum_gd += gd;
                        sum_gdx += gd * xhat;
                        dg.data_mut()[j] += grow[j] * xhat;
                        db.data_mut()[j] += grow[j];
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * inv;
                        let gd = grow[j] * tg.data()[j];
                        dx[(i, j)] = inv * (gd - sum_gd / nc - xhat * sum_gdx / nc);
                    }
                }
                self.accum(grads, *x, dx);
                if self.nodes[gain.0].requires_grad {
                    self.accum(grads, *gain, dg);
                }
                if self.nodes[bias.0].requires_grad {
                    self.accum(grads, *bias, db);
                }
            }
            Op::Embed { table, indices } => {
                if self.nodes[table.0].requires_grad {
                    let tt = self.value(*table);
                    let c = tt.cols();
                    let mut dt = Tensor::zeros(&[tt.rows(), c]);
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..c {
                            dt[(i, j)] += gy[(r, j)];
                        }
                    }
                    self.accum(grads, *table, dt);
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.nodes[p.0].requires_grad {
                        let mut dp = Tensor::zeros(&[gy.rows(), pc]);
                        for r in 0..gy.rows() {
                            for j in 0..pc {
                                dp[(r, j)] = gy[(r, offset + j)];
                            }
                        }
                        self.accum(grads, p, dp);
                    }
                    offset += pc;
                }
            }
            Op::SliceRows { a, start, len } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut da = Tensor::zeros(&[ta.rows(), c]);
                da.data_mut()[start * c..(start + len) * c].copy_from_slice(gy.data());
                self.accum(grads, *a, da);
            }
            Op::SliceCols { a, start, len } => {
                let ta = self.value(*a);
                let mut da = Tensor::zeros(&[ta.rows(), ta.cols()]);
                for r in 0..ta.rows() {
                    for j in 0..*len {
                        da[(r, start + j)] = gy[(r, j)];
                    }
                }
                self.accum(grads, *a, da);
            }
            Op::PadRows { a, left, right } => {
                let ta = self.value(*a);
                let c = ta.cols();
                debug_assert_eq!(gy.rows(), ta.rows() + left + right);
                let da = Tensor::from_vec(
                    &[ta.rows(), c],
                    gy.data()[left * c..(left + ta.rows()) * c].to_vec(),
                );
                self.accum(grads, *a, da);
            }
            Op::Upsample2 { a } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut da = Tensor::zeros(&[ta.rows(), c]);
                for r in 0..ta.rows() {
                    for j in 0..c {
                        da[(r, j)] = gy[(2 * r, j)] + gy[(2 * r + 1, j)];
                    }
                }
                self.accum(grads, *a, da);
            }
            Op::MeanAll { a } => {
                let ta = self.value(*a);
                let g = gy.item() / F::from_f64(ta.len() as f64);
                self.accum(grads, *a, Tensor::filled(ta.shape(), g));
            }
            Op::SumAll { a } => {
                let ta = self.value(*a);
                self.accum(grads, *a, Tensor::filled(ta.shape(), gy.item()));
            }
            Op::PairwiseAdd { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (t, u, j) = (ta.rows(), tb.rows(), ta.cols());
                if self.nodes[a.0].requires_grad {
                    let mut da = Tensor::zeros(&[t, j]);
                    for ti in 0..t {
                        for ui in 0..u {
                            let row = gy.row(ti * u + ui);
                            for k in 0..j {
                                da[(ti, k)] += row[k];
                            }
                        }
                    }
                    self.accum(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = Tensor::zeros(&[u, j]);
                    for ti in 0..t {
                        for ui in 0..u {
                            let row = gy.row(ti * u + ui);
                            for k in 0..j {
                                db[(ui, k)] += row[k];
                            }
                        }
                    }
                    self.accum(grads, *b, db);
                }
            }
            Op::Conv1d(cv) => {
                let tx = self.value(cv.x);
                let tw = self.value(cv.w);
                let (c_in, c_out) = (tx.cols(), tw.cols());
                let t_out = gy.rows();
                let col = im2col(tx, cv.kernel, cv.stride, cv.pad_left, t_out);
                if self.nodes[cv.w.0].requires_grad {
                    // dW = col^T * dY
                    let kc = cv.kernel * c_in;
                    let mut colt = Tensor::zeros(&[kc, t_out]);
                    for i in 0..t_out {
                        for j in 0..kc {
                            colt[(j, i)] = col[(i, j)];
                        }
                    }
                    let mut dw = Tensor::zeros(&[kc, c_out]);
                    F::gemm(kc, t_out, c_out, colt.data(), gy.data(), dw.data_mut());
                    self.accum(grads, cv.w, dw);
                }
                if self.nodes[cv.bias.0].requires_grad {
                    let mut db = Tensor::zeros(&[c_out]);
                    for r in 0..t_out {
                        for j in 0..c_out {
                            db.data_mut()[j] += gy[(r, j)];
                        }
                    }
                    self.accum(grads, cv.bias, db);
                }
                if self.nodes[cv.x.0].requires_grad {
                    // dCol = dY * W^T, then scatter back through im2col.
                    let kc = cv.kernel * c_in;
                    let mut wt = Tensor::zeros(&[c_out, kc]);
                    for i in 0..kc {
                        for j in 0..c_out {
                            wt[(j, i)] = tw[(i, j)];
                        }
                    }
                    let mut dcol = Tensor::zeros(&[t_out, kc]);
                    F::gemm(t_out, c_out, kc, gy.data(), wt.data(), dcol.data_mut());
                    let mut dx = Tensor::zeros(&[tx.rows(), c_in]);
                    for o in 0..t_out {
                        for k in 0..cv.kernel {
                            let src = (o * cv.stride + k) as isize - cv.pad_left as isize;
                            if src < 0 || src as usize >= tx.rows() {
                                continue;
                            }
                            let src = src as usize;
                            for ch in 0..c_in {
                                dx[(src, ch)] += dcol[(o, k * c_in + ch)];
                            }
                        }
                    }
                    self.accum(grads, cv.x, dx);
                }
            }
            Op::CrossEntropyMean { logits, targets } => {
                let tl = self.value(*logits);
                let (r, c) = (tl.rows(), tl.cols());
                let gscale = gy.item() / F::from_f64(r as f64);
                let mut dl = Tensor::zeros(&[r, c]);
                for (i, &t) in targets.iter().enumerate() {
                    let row = tl.row(i);
                    let mut mx = row[0];
                    for &v in row {
                        mx = mx.maximum(v);
                    }
                    let denom = row.iter().map(|&v| (v - mx).exp()).sum::<F>();
                    for j in 0..c {
                        let p = (row[j] - mx).exp() / denom;
                        let indicator = if j == t { F::ONE } else { F::ZERO };
                        dl[(i, j)] = (p - indicator) * gscale;
                    }
                }
                self.accum(grads, *logits, dl);
            }
            Op::TransducerNll(t) => {
                let tl = self.value(t.logits);
                let dl = transducer_backward(tl, t.time_len, &t.targets, t.blank, gy.item());
                self.accum(grads, t.logits, dl);
            }
        }
    }
}

fn im2col<F: Scalar>(x: &Tensor<F>, kernel: usize, stride: usize, pad_left: usize, t_out: usize) -> Tensor<F> {
    let c_in = x.cols();
    let mut col = Tensor::zeros(&[t_out, kernel * c_in]);
    for o in 0..t_out {
        for k in 0..kernel {
            let src = (o * stride + k) as isize - pad_left as isize;
            if src < 0 || src as usize >= x.rows() {
                continue;
            }
            let src = src as usize;
            for ch in 0..c_in {
                col[(o, k * c_in + ch)] = x[(src, ch)];
            }
        }
    }
    col
}

fn row_log_softmax<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let (r, c) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = logits.row(i);
        let mut mx = row[0];
        for &v in row {
            mx = mx.maximum(v);
        }
        let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
        for j in 0..c {
            out[(i, j)] = row[j] - lse;
        }
    }
    out
}

/// Forward (alpha) recursion over the `T x (U+1)` lattice; returns the NLL.
pub(crate) fn transducer_forward<F: Scalar>(
    log_probs: &Tensor<F>,
    time_len: usize,
    targets: &[usize],
    blank: usize,
) -> F {
    let u_len = targets.len();
    let width = u_len + 1;
    let neg_inf = F::from_f64(f64::NEG_INFINITY);
    let lp = |t: usize, u: usize, k: usize| log_probs[(t * width + u, k)];
    let mut alpha = vec![neg_inf; time_len * width];
    alpha[0] = F::ZERO;
    for t in 0..time_len {
        for u in 0..width {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = neg_inf;
            if t > 0 {
                acc = log_sum_exp(acc, alpha[(t - 1) * width + u] + lp(t - 1, u, blank));
            }
            if u > 0 {
                acc = log_sum_exp(acc, alpha[t * width + u - 1] + lp(t, u - 1, targets[u - 1]));
            }
            alpha[t * width + u] = acc;
        }
    }
    -(alpha[(time_len - 1) * width + u_len] + lp(time_len - 1, u_len, blank))
}

/// Analytic gradient of the transducer NLL w.r.t. the raw logits, using the
/// alpha/beta occupancy recursion followed by the log-softmax Jacobian.
fn transducer_backward<F: Scalar>(
    logits: &Tensor<F>,
    time_len: usize,
    targets: &[usize],
    blank: usize,
    upstream: F,
) -> Tensor<F> {
    let u_len = targets.len();
    let width = u_len + 1;
    let vocab = logits.cols();
    let neg_inf = F::from_f64(f64::NEG_INFINITY);
    let log_probs = row_log_softmax(logits);
    let lp = |t: usize, u: usize, k: usize| log_probs[(t * width + u, k)];

    let mut alpha = vec![neg_inf; time_len * width];
    alpha[0] = F::ZERO;
    for t in 0..time_len {
        for u in 0..width {
            if t == 0 && u == 0 {
                continue;
            }
            let mut acc = neg_inf;
            if t > 0 {
                acc = log_sum_exp(acc, alpha[(t - 1) * width + u] + lp(t - 1, u, blank));
            }
            if u > 0 {
                acc = log_sum_exp(acc, alpha[t * width + u - 1] + lp(t, u - 1, targets[u - 1]));
            }
            alpha[t * width + u] = acc;
        }
    }
    let mut beta = vec![neg_inf; time_len * width];
    beta[(time_len - 1) * width + u_len] = lp(time_len - 1, u_len, blank);
    for t in (0..time_len).rev() {
        for u in (0..width).rev() {
            if t == time_len - 1 && u == u_len {
                continue;
            }
            let mut acc = neg_inf;
            if t + 1 < time_len {
                acc = log_sum_exp(acc, beta[(t + 1) * width + u] + lp(t, u, blank));
            }
            if u < u_len {
                acc = log_sum_exp(acc, beta[t * width + u + 1] + lp(t, u, targets[u]));
            }
            beta[t * width + u] = acc;
        }
    }
    let log_z = beta[0];

    // d(-logZ)/d(log p(k|t,u)) as sparse occupancy terms, then through the
    // log-softmax Jacobian: dL/dlogit_k = g_k - p_k * sum_j g_j.
    let mut dlogits = Tensor::zeros(&[time_len * width, vocab]);
    for t in 0..time_len {
        for u in 0..width {
            let row = t * width + u;
            let mut g = vec![F::ZERO; vocab];
            // blank transition: (t,u) -> (t+1,u), or the final exit.
            let blank_path = if t + 1 < time_len {
                Some(alpha[row] + lp(t, u, blank) + beta[(t + 1) * width + u])
            } else if u == u_len {
                Some(alpha[row] + lp(t, u, blank))
            } else {
                None
            };
            if let Some(lpb) = blank_path {
                g[blank] = g[blank] - (lpb - log_z).exp();
            }
            // label transition: (t,u) -> (t,u+1).
            if u < u_len {
                let k = targets[u];
                let lpl = alpha[row] + lp(t, u, k) + beta[t * width + u + 1];
                g[k] = g[k] - (lpl - log_z).exp();
            }
            let gsum = g.iter().copied().sum::<F>();
            let lrow = logits.row(row);
            let mut mx = lrow[0];
            for &v in lrow {
                mx = mx.maximum(v);
            }
            let denom = lrow.iter().map(|&v| (v - mx).exp()).sum::<F>();
            for k in 0..vocab {
                let p = (lrow[k] - mx).exp() / denom;
                dlogits[(row, k)] = (g[k] - p * gsum) * upstream;
            }
        }
    }
    dlogits
}
