//! Tape-recorded reverse-mode differentiation.
//!
//! Ops execute eagerly and append a record to the tape; [`Tape::backward`]
//! replays the records in reverse, accumulating gradients additively into
//! every tensor that (transitively) depends on a `requires_grad` leaf.
//! A tape is consumed by the backward sweep.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a specific [`Tape`].
///
/// A `Var` is only meaningful on the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Cached geometry of a conv2d invocation.
#[derive(Clone, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Conv2d { input: Var, kernels: Var, dims: ConvDims },
    /// Adds bias[c] to every spatial location of channel c.
    ChannelBias { input: Var, bias: Var },
    /// Adds bias[j] to column j of every row of a [B, K] matrix.
    RowBias { input: Var, bias: Var },
    Relu { input: Var },
    MaxPool2d { input: Var, argmax: Vec<usize> },
    GlobalAvgPool { input: Var, spatial: usize },
    SoftmaxT { input: Var, t: f64 },
    /// Mean over rows of weighted soft-target cross-entropy, each row with
    /// its own softmax temperature.
    CeRows { logits: Var, targets: Vec<f64>, temps: Vec<f64>, weights: Vec<f64> },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, c: f64 },
    AddScalar { input: Var },
    Sum { input: Var },
    Pick { input: Var, index: usize },
}

struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Ordered record of executed primitives with their backward rules.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-`Var` gradients produced by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the given var, if it was computed.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an input tensor. Gradients flow into it iff `requires_grad`.
    pub fn leaf(&mut self, tensor: &Tensor, requires_grad: bool) -> Var {
        let mut t = tensor.clone().with_requires_grad(requires_grad);
        t.set_grad(None);
        self.push_node(t, Op::Leaf, requires_grad)
    }

    /// Register a constant (never receives gradient).
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.leaf(tensor, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].tensor
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_node(&mut self, tensor: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            tensor.data().iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let id = self.nodes.len();
        self.nodes.push(Node { tensor, op, needs_grad });
        Var(id)
    }

    fn push_op(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        // Tensor::new enforces the finite-output invariant for every op.
        let tensor = Tensor::new(shape, data)
            .unwrap_or_else(|e| panic!("op produced invalid tensor: {e}"));
        self.push_node(tensor, op, needs)
    }

    // ── forward primitives ──────────────────────────────────────────────

    /// 2-D matrix product `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul shapes {sa:?} x {sb:?} incompatible"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_raw(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push_op(vec![m, n], out, Op::MatMul { a, b }, &[a, b]))
    }

    /// Cross-correlation of `input` ([C,H,W] or [B,C,H,W]) with `kernels`
    /// [C_out, C_in, KH, KW].
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        let k_shape = self.value(kernels).shape().to_vec();
        if k_shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d kernels must be 4-D, got {k_shape:?}"
            )));
        }
        let (batched, batch, c_in, h, w) = match in_shape.len() {
            3 => (false, 1, in_shape[0], in_shape[1], in_shape[2]),
            4 => (true, in_shape[0], in_shape[1], in_shape[2], in_shape[3]),
            _ => {
                return Err(Error::Dimension(format!(
                    "conv2d input must be 3-D or 4-D, got {in_shape:?}"
                )))
            }
        };
        let (c_out, kc, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc != c_in {
            return Err(Error::Dimension(format!(
                "conv2d channel mismatch: input {c_in}, kernels {kc}"
            )));
        }
        if stride == 0 {
            return Err(Error::Validation("conv2d stride must be >= 1".into()));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let h_out = (h + 2 * padding - kh) / stride + 1;
        let w_out = (w + 2 * padding - kw) / stride + 1;
        let dims = ConvDims { batch, c_in, h, w, c_out, kh, kw, h_out, w_out, stride, padding };

        let mut out = vec![0.0; batch * c_out * h_out * w_out];
        conv2d_forward(self.value(input).data(), self.value(kernels).data(), &mut out, &dims);

        let shape = if batched {
            vec![batch, c_out, h_out, w_out]
        } else {
            vec![c_out, h_out, w_out]
        };
        Ok(self.push_op(shape, out, Op::Conv2d { input, kernels, dims }, &[input, kernels]))
    }

    /// Per-channel bias add over spatial maps ([..,C,H,W] + bias[C]).
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        let b_len = self.value(bias).numel();
        let (c, spatial) = match in_shape.len() {
            3 => (in_shape[0], in_shape[1] * in_shape[2]),
            4 => (in_shape[1], in_shape[2] * in_shape[3]),
            _ => {
                return Err(Error::Dimension(format!(
                    "channel_bias input must be 3-D or 4-D, got {in_shape:?}"
                )))
            }
        };
        if b_len != c {
            return Err(Error::Dimension(format!(
                "channel_bias: {c} channels vs bias length {b_len}"
            )));
        }
        let bias_data = self.value(bias).data().to_vec();
        let mut out = self.value(input).data().to_vec();
        for chunk in out.chunks_mut(c * spatial) {
            for (ch, plane) in chunk.chunks_mut(spatial).enumerate() {
                let b = bias_data[ch];
                for v in plane.iter_mut() {
                    *v += b;
                }
            }
        }
        Ok(self.push_op(in_shape, out, Op::ChannelBias { input, bias }, &[input, bias]))
    }

    /// Row-broadcast bias add ([B,K] + bias[K]).
    pub fn row_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        let b_len = self.value(bias).numel();
        if in_shape.len() != 2 || in_shape[1] != b_len {
            return Err(Error::Dimension(format!(
                "row_bias: input {in_shape:?} vs bias length {b_len}"
            )));
        }
        let bias_data = self.value(bias).data().to_vec();
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(b_len) {
            for (v, b) in row.iter_mut().zip(&bias_data) {
                *v += b;
            }
        }
        Ok(self.push_op(in_shape, out, Op::RowBias { input, bias }, &[input, bias]))
    }

    /// Elementwise max(x, 0). The subgradient at exactly 0 is 0.
    pub fn relu(&mut self, input: Var) -> Var {
        let shape = self.value(input).shape().to_vec();
        let out: Vec<f64> = self.value(input).data().iter().map(|&v| v.max(0.0)).collect();
        self.push_op(shape, out, Op::Relu { input }, &[input])
    }

    /// Non-overlapping max pooling with window `size` (stride == size).
    /// Ties resolve to the lowest flat index.
    pub fn max_pool2d(&mut self, input: Var, size: usize) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        if size == 0 {
            return Err(Error::Validation("pool size must be >= 1".into()));
        }
        let (batched, batch, c, h, w) = match in_shape.len() {
            3 => (false, 1, in_shape[0], in_shape[1], in_shape[2]),
            4 => (true, in_shape[0], in_shape[1], in_shape[2], in_shape[3]),
            _ => {
                return Err(Error::Dimension(format!(
                    "max_pool2d input must be 3-D or 4-D, got {in_shape:?}"
                )))
            }
        };
        let (ho, wo) = (h / size, w / size);
        if ho == 0 || wo == 0 {
            return Err(Error::Dimension(format!(
                "pool window {size} larger than input {h}x{w}"
            )));
        }
        let data = self.value(input).data();
        let mut out = vec![0.0; batch * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        let mut oi = 0;
        for bc in 0..batch * c {
            let plane = bc * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_at = 0usize;
                    for dh in 0..size {
                        let row = plane + (oh * size + dh) * w + ow * size;
                        for dw in 0..size {
                            let v = data[row + dw];
                            if v > best {
                                best = v;
                                best_at = row + dw;
                            }
                        }
                    }
                    out[oi] = best;
                    argmax[oi] = best_at;
                    oi += 1;
                }
            }
        }
        let shape = if batched { vec![batch, c, ho, wo] } else { vec![c, ho, wo] };
        Ok(self.push_op(shape, out, Op::MaxPool2d { input, argmax }, &[input]))
    }

    /// Mean over the spatial dimensions: [B,C,H,W] -> [B,C] (or [C,H,W] -> [C]).
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let in_shape = self.value(input).shape().to_vec();
        let (shape, spatial) = match in_shape.len() {
            3 => (vec![in_shape[0]], in_shape[1] * in_shape[2]),
            4 => (vec![in_shape[0], in_shape[1]], in_shape[2] * in_shape[3]),
            _ => {
                return Err(Error::Dimension(format!(
                    "global_avg_pool input must be 3-D or 4-D, got {in_shape:?}"
                )))
            }
        };
        let out: Vec<f64> = self
            .value(input)
            .data()
            .chunks(spatial)
            .map(|p| p.iter().sum::<f64>() / spatial as f64)
            .collect();
        Ok(self.push_op(shape, out, Op::GlobalAvgPool { input, spatial }, &[input]))
    }

    /// Temperature-scaled softmax over the last axis of a [K] or [B,K] tensor.
    ///
    /// Computed with max-subtraction, which is exact thanks to shift
    /// invariance and prevents overflow for large logits.
    pub fn softmax_t(&mut self, input: Var, t: f64) -> Result<Var> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
        }
        let shape = self.value(input).shape().to_vec();
        let k = *shape.last().unwrap();
        if k < 1 {
            return Err(Error::Dimension("softmax over empty axis".into()));
        }
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(k) {
            softmax_row(row, t);
        }
        Ok(self.push_op(shape, out, Op::SoftmaxT { input, t }, &[input]))
    }

    /// Soft-target cross-entropy averaged over the batch:
    /// `-(1/B) * sum_i sum_j targets[i,j] * log softmax(logits[i]/T)[j]`.
    ///
    /// Gradient flows to `logits` only.
    pub fn cross_entropy_soft(&mut self, logits: Var, targets: &Tensor, t: f64) -> Result<Var> {
        let rows = match self.value(logits).shape() {
            [_k] => 1,
            [b, _k] => *b,
            s => {
                return Err(Error::Dimension(format!(
                    "cross_entropy_soft logits must be [K] or [B,K], got {s:?}"
                )))
            }
        };
        self.cross_entropy_rows(logits, targets, &vec![t; rows], &vec![1.0; rows])
    }

    /// General per-row form: each row has its own temperature and loss weight;
    /// the result is `(1/B) * sum_i weights[i] * CE_i`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &Tensor,
        temps: &[f64],
        weights: &[f64],
    ) -> Result<Var> {
        let l_shape = self.value(logits).shape().to_vec();
        let (b, k) = match l_shape.as_slice() {
            [k] => (1, *k),
            [b, k] => (*b, *k),
            _ => {
                return Err(Error::Dimension(format!(
                    "cross_entropy logits must be [K] or [B,K], got {l_shape:?}"
                )))
            }
        };
        if k < 2 {
            return Err(Error::Dimension(format!("need K >= 2 classes, got {k}")));
        }
        if targets.numel() != b * k {
            return Err(Error::Dimension(format!(
                "targets shape {:?} does not match logits {l_shape:?}",
                targets.shape()
            )));
        }
        if temps.len() != b || weights.len() != b {
            return Err(Error::Dimension(format!(
                "temps/weights length {}/{} vs batch {b}",
                temps.len(),
                weights.len()
            )));
        }
        if let Some(bad) = temps.iter().find(|&&t| !(t > 0.0)) {
            return Err(Error::Domain(format!("temperature must be > 0, got {bad}")));
        }
        for (i, row) in targets.data().chunks(k).enumerate() {
            if row.iter().any(|&y| y < 0.0) {
                return Err(Error::Validation(format!("target row {i} has negative entries")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "target row {i} sums to {s}, not a probability vector"
                )));
            }
        }

        let logits_data = self.value(logits).data();
        let mut total = 0.0;
        for i in 0..b {
            let z = &logits_data[i * k..(i + 1) * k];
            let y = &targets.data()[i * k..(i + 1) * k];
            total += weights[i] * ce_row(z, y, temps[i]);
        }
        total /= b as f64;

        let op = Op::CeRows {
            logits,
            targets: targets.data().to_vec(),
            temps: temps.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push_op(vec![1], vec![total], op, &[logits]))
    }

    /// Elementwise add of equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Error::Dimension(format!("add shapes {sa:?} vs {sb:?}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push_op(sa, out, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa != sb {
            return Err(Error::Dimension(format!("mul shapes {sa:?} vs {sb:?}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push_op(sa, out, Op::Mul { a, b }, &[a, b]))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, input: Var, c: f64) -> Var {
        let shape = self.value(input).shape().to_vec();
        let out: Vec<f64> = self.value(input).data().iter().map(|v| v * c).collect();
        self.push_op(shape, out, Op::Scale { input, c }, &[input])
    }

    /// Add a constant to every entry.
    pub fn add_scalar(&mut self, input: Var, c: f64) -> Var {
        let shape = self.value(input).shape().to_vec();
        let out: Vec<f64> = self.value(input).data().iter().map(|v| v + c).collect();
        self.push_op(shape, out, Op::AddScalar { input }, &[input])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().sum();
        self.push_op(vec![1], vec![s], Op::Sum { input }, &[input])
    }

    /// Extract a single entry (by flat index) as a scalar.
    pub fn pick(&mut self, input: Var, index: usize) -> Result<Var> {
        if index >= self.value(input).numel() {
            return Err(Error::Dimension(format!(
                "pick index {index} out of range for {} elements",
                self.value(input).numel()
            )));
        }
        let v = self.value(input).data()[index];
        Ok(self.push_op(vec![1], vec![v], Op::Pick { input, index }, &[input]))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes the tape and returns the
    /// accumulated gradient for every var on a path from a `requires_grad`
    /// leaf to the loss.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        if self.nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..n).rev() {
            let Some(gout) = grads[i].take() else { continue };
            // Re-stash: callers may read intermediate grads (e.g. feature maps).
            let op = self.nodes[i].op.clone();
            match &op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = {
                        let s = self.nodes[a.0].tensor.shape();
                        (s[0], s[1])
                    };
                    let nn = self.nodes[b.0].tensor.shape()[1];
                    if self.nodes[a.0].needs_grad {
                        let bd = self.nodes[b.0].tensor.data();
                        let mut da = vec![0.0; m * k];
                        // dA[i,p] = sum_j gout[i,j] * B[p,j]
                        for r in 0..m {
                            let go = &gout[r * nn..(r + 1) * nn];
                            for p in 0..k {
                                da[r * k + p] = dot(go, &bd[p * nn..(p + 1) * nn]);
                            }
                        }
                        accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.nodes[a.0].tensor.data();
                        let mut db = vec![0.0; k * nn];
                        // dB[p,j] = sum_i A[i,p] * gout[i,j]
                        for r in 0..m {
                            let go = &gout[r * nn..(r + 1) * nn];
                            for p in 0..k {
                                let w = ad[r * k + p];
                                let dbr = &mut db[p * nn..(p + 1) * nn];
                                for j in 0..nn {
                                    dbr[j] += w * go[j];
                                }
                            }
                        }
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Conv2d { input, kernels, dims } => {
                    if self.nodes[input.0].needs_grad {
                        let mut din = vec![0.0; self.nodes[input.0].tensor.numel()];
                        conv2d_backward_input(&gout, self.nodes[kernels.0].tensor.data(), &mut din, dims);
                        accumulate(&mut grads, *input, din);
                    }
                    if self.nodes[kernels.0].needs_grad {
                        let mut dker = vec![0.0; self.nodes[kernels.0].tensor.numel()];
                        conv2d_backward_kernels(&gout, self.nodes[input.0].tensor.data(), &mut dker, dims);
                        accumulate(&mut grads, *kernels, dker);
                    }
                }
                Op::ChannelBias { input, bias } => {
                    if self.nodes[input.0].needs_grad {
                        accumulate(&mut grads, *input, gout.clone());
                    }
                    if self.nodes[bias.0].needs_grad {
                        let c = self.nodes[bias.0].tensor.numel();
                        let s = self.nodes[input.0].tensor.shape();
                        let sp = s[s.len() - 1] * s[s.len() - 2];
                        let mut db = vec![0.0; c];
                        for chunk in gout.chunks(c * sp) {
                            for (ch, plane) in chunk.chunks(sp).enumerate() {
                                db[ch] += plane.iter().sum::<f64>();
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                }
                Op::RowBias { input, bias } => {
                    if self.nodes[input.0].needs_grad {
                        accumulate(&mut grads, *input, gout.clone());
                    }
                    if self.nodes[bias.0].needs_grad {
                        let k = self.nodes[bias.0].tensor.numel();
                        let mut db = vec![0.0; k];
                        for row in gout.chunks(k) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += g;
                            }
                        }
                        accumulate(&mut grads, *bias, db);
                    }
                }
                Op::Relu { input } => {
                    if self.nodes[input.0].needs_grad {
                        let x = self.nodes[input.0].tensor.data();
                        let din: Vec<f64> = gout
                            .iter()
                            .zip(x)
                            .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::MaxPool2d { input, argmax } => {
                    if self.nodes[input.0].needs_grad {
                        let mut din = vec![0.0; self.nodes[input.0].tensor.numel()];
                        for (g, &at) in gout.iter().zip(argmax) {
                            din[at] += g;
                        }
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::GlobalAvgPool { input, spatial } => {
                    if self.nodes[input.0].needs_grad {
                        let inv = 1.0 / *spatial as f64;
                        let mut din = vec![0.0; self.nodes[input.0].tensor.numel()];
                        for (chunk, g) in din.chunks_mut(*spatial).zip(&gout) {
                            let gv = g * inv;
                            for v in chunk.iter_mut() {
                                *v += gv;
                            }
                        }
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::SoftmaxT { input, t } => {
                    if self.nodes[input.0].needs_grad {
                        let p = self.nodes[i].tensor.data();
                        let k = *self.nodes[i].tensor.shape().last().unwrap();
                        let mut din = vec![0.0; p.len()];
                        for (row, (prow, grow)) in p.chunks(k).zip(gout.chunks(k)).enumerate() {
                            let dot: f64 = prow.iter().zip(grow).map(|(pv, gv)| pv * gv).sum();
                            for j in 0..k {
                                din[row * k + j] = prow[j] * (grow[j] - dot) / t;
                            }
                        }
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::CeRows { logits, targets, temps, weights } => {
                    if self.nodes[logits.0].needs_grad {
                        let z = self.nodes[logits.0].tensor.data();
                        let b = temps.len();
                        let k = z.len() / b;
                        let g = gout[0];
                        let mut din = vec![0.0; z.len()];
                        for r in 0..b {
                            let zr = &z[r * k..(r + 1) * k];
                            let yr = &targets[r * k..(r + 1) * k];
                            let ysum: f64 = yr.iter().sum();
                            let mut p = zr.to_vec();
                            softmax_row(&mut p, temps[r]);
                            let c = g * weights[r] / (b as f64 * temps[r]);
                            for j in 0..k {
                                din[r * k + j] = c * (p[j] * ysum - yr[j]);
                            }
                        }
                        accumulate(&mut grads, *logits, din);
                    }
                }
                Op::Add { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        accumulate(&mut grads, *a, gout.clone());
                    }
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut grads, *b, gout.clone());
                    }
                }
                Op::Mul { a, b } => {
                    if self.nodes[a.0].needs_grad {
                        let bd = self.nodes[b.0].tensor.data();
                        let da: Vec<f64> = gout.iter().zip(bd).map(|(g, v)| g * v).collect();
                        accumulate(&mut grads, *a, da);
                    }
                    if self.nodes[b.0].needs_grad {
                        let ad = self.nodes[a.0].tensor.data();
                        let db: Vec<f64> = gout.iter().zip(ad).map(|(g, v)| g * v).collect();
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Scale { input, c } => {
                    if self.nodes[input.0].needs_grad {
                        let din: Vec<f64> = gout.iter().map(|g| g * c).collect();
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::AddScalar { input } => {
                    if self.nodes[input.0].needs_grad {
                        accumulate(&mut grads, *input, gout.clone());
                    }
                }
                Op::Sum { input } => {
                    if self.nodes[input.0].needs_grad {
                        let din = vec![gout[0]; self.nodes[input.0].tensor.numel()];
                        accumulate(&mut grads, *input, din);
                    }
                }
                Op::Pick { input, index } => {
                    if self.nodes[input.0].needs_grad {
                        let mut din = vec![0.0; self.nodes[input.0].tensor.numel()];
                        din[*index] = gout[0];
                        accumulate(&mut grads, *input, din);
                    }
                }
            }
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, contribution: Vec<f64>) {
    let slot = &mut grads[var.0];
    match slot {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contribution) {
                *e += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes; the summation order is fixed by construction.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// Softmax with temperature over one row, in place, with max-subtraction.
pub(crate) fn softmax_row(row: &mut [f64], t: f64) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - m) / t).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Soft-target cross-entropy of one row at temperature `t`, via log-sum-exp.
/// Terms with zero target weight contribute exactly zero.
fn ce_row(z: &[f64], y: &[f64], t: f64) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = z.iter().map(|&v| ((v - m) / t).exp()).sum::<f64>().ln();
    let mut loss = 0.0;
    for (zj, yj) in z.iter().zip(y) {
        if *yj > 0.0 {
            loss -= yj * ((zj - m) / t - lse);
        }
    }
    loss
}

/// C[m,n] += A[m,k] * B[k,n], C zero-initialized by the caller.
fn matmul_raw(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
}

/// Valid output-column window for a given kernel column: all `ow` such that
/// `ow*stride + kw - padding` lands inside `[0, w)`. Returns (1, 0) when the
/// window is empty.
fn ow_window(kw: usize, w: usize, w_out: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = if kw >= padding { 0 } else { (padding - kw + stride - 1) / stride };
    let hi_raw = (w as isize - 1 + padding as isize - kw as isize) / stride as isize;
    let hi = hi_raw.min(w_out as isize - 1);
    if hi < lo as isize {
        (1, 0)
    } else {
        (lo, hi as usize)
    }
}

struct ConvGeometry {
    /// Per-kw output-column windows.
    col: Vec<(usize, usize)>,
    /// Per-kh output-row windows.
    row: Vec<(usize, usize)>,
}

impl ConvGeometry {
    fn new(d: &ConvDims) -> Self {
        let col = (0..d.kw)
            .map(|kw| ow_window(kw, d.w, d.w_out, d.stride, d.padding))
            .collect();
        let row = (0..d.kh)
            .map(|kh| ow_window(kh, d.h, d.h_out, d.stride, d.padding))
            .collect();
        Self { col, row }
    }
}

fn conv2d_forward(input: &[f64], kernels: &[f64], out: &mut [f64], d: &ConvDims) {
    let geom = ConvGeometry::new(d);
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    // Output-stationary: each output row is written in one pass while the
    // needed input rows stream from cache.
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let out_base = (b * d.c_out + co) * out_plane;
            for oh in 0..d.h_out {
                let out_row = &mut out[out_base + oh * d.w_out..out_base + (oh + 1) * d.w_out];
                for ci in 0..d.c_in {
                    let in_base = (b * d.c_in + ci) * in_plane;
                    let k_base = ((co * d.c_in + ci) * d.kh) * d.kw;
                    for kh in 0..d.kh {
                        let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        let in_row = &input[in_base + ih as usize * d.w..in_base + (ih as usize + 1) * d.w];
                        for kw in 0..d.kw {
                            let (lo, hi) = geom.col[kw];
                            if lo > hi {
                                continue;
                            }
                            let wv = kernels[k_base + kh * d.kw + kw];
                            if wv == 0.0 {
                                continue;
                            }
                            if d.stride == 1 {
                                let shift = lo + kw - d.padding;
                                let src = &in_row[shift..shift + (hi - lo + 1)];
                                let dst = &mut out_row[lo..hi + 1];
                                for (o, s) in dst.iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            } else {
                                for ow in lo..=hi {
                                    let iw = ow * d.stride + kw - d.padding;
                                    out_row[ow] += wv * in_row[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_input(gout: &[f64], kernels: &[f64], din: &mut [f64], d: &ConvDims) {
    let geom = ConvGeometry::new(d);
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    if d.stride == 1 {
        // Input-stationary: each input-gradient row is finished in one pass.
        for b in 0..d.batch {
            for ci in 0..d.c_in {
                let in_base = (b * d.c_in + ci) * in_plane;
                for ih in 0..d.h {
                    let din_row = &mut din[in_base + ih * d.w..in_base + (ih + 1) * d.w];
                    for co in 0..d.c_out {
                        let out_base = (b * d.c_out + co) * out_plane;
                        let k_base = ((co * d.c_in + ci) * d.kh) * d.kw;
                        for kh in 0..d.kh {
                            let oh = ih as isize + d.padding as isize - kh as isize;
                            if oh < 0 || oh >= d.h_out as isize {
                                continue;
                            }
                            let gout_row = &gout
                                [out_base + oh as usize * d.w_out..out_base + (oh as usize + 1) * d.w_out];
                            for kw in 0..d.kw {
                                let (lo, hi) = geom.col[kw];
                                if lo > hi {
                                    continue;
                                }
                                let wv = kernels[k_base + kh * d.kw + kw];
                                if wv == 0.0 {
                                    continue;
                                }
                                let shift = lo + kw - d.padding;
                                let src = &gout_row[lo..hi + 1];
                                let dst = &mut din_row[shift..shift + (hi - lo + 1)];
                                for (o, s) in dst.iter_mut().zip(src) {
                                    *o += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        return;
    }
    // Generic-stride fallback mirrors the forward geometry.
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let out_base = (b * d.c_out + co) * out_plane;
            for ci in 0..d.c_in {
                let in_base = (b * d.c_in + ci) * in_plane;
                let k_base = ((co * d.c_in + ci) * d.kh) * d.kw;
                for kh in 0..d.kh {
                    let (oh_lo, oh_hi) = geom.row[kh];
                    if oh_lo > oh_hi {
                        continue;
                    }
                    for oh in oh_lo..=oh_hi {
                        let ih = oh * d.stride + kh - d.padding;
                        let in_row = in_base + ih * d.w;
                        let out_row = out_base + oh * d.w_out;
                        for kw in 0..d.kw {
                            let (lo, hi) = geom.col[kw];
                            if lo > hi {
                                continue;
                            }
                            let wv = kernels[k_base + kh * d.kw + kw];
                            if wv == 0.0 {
                                continue;
                            }
                            for ow in lo..=hi {
                                let iw = ow * d.stride + kw - d.padding;
                                din[in_row + iw] += wv * gout[out_row + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_kernels(gout: &[f64], input: &[f64], dker: &mut [f64], d: &ConvDims) {
    let geom = ConvGeometry::new(d);
    let in_plane = d.h * d.w;
    let out_plane = d.h_out * d.w_out;
    // Gradient-row-stationary: each gout row is read once per (ci, kh, kw);
    // the kernel-gradient accumulator is small and cache-resident.
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let out_base = (b * d.c_out + co) * out_plane;
            for oh in 0..d.h_out {
                let gout_row = &gout[out_base + oh * d.w_out..out_base + (oh + 1) * d.w_out];
                for ci in 0..d.c_in {
                    let in_base = (b * d.c_in + ci) * in_plane;
                    let k_base = ((co * d.c_in + ci) * d.kh) * d.kw;
                    for kh in 0..d.kh {
                        let ih = (oh * d.stride + kh) as isize - d.padding as isize;
                        if ih < 0 || ih >= d.h as isize {
                            continue;
                        }
                        let in_row = &input[in_base + ih as usize * d.w..in_base + (ih as usize + 1) * d.w];
                        for kw in 0..d.kw {
                            let (lo, hi) = geom.col[kw];
                            if lo > hi {
                                continue;
                            }
                            let acc;
                            if d.stride == 1 {
                                let shift = lo + kw - d.padding;
                                acc = dot(&gout_row[lo..hi + 1], &in_row[shift..shift + (hi - lo + 1)]);
                            } else {
                                let mut s = 0.0;
                                for ow in lo..=hi {
                                    let iw = ow * d.stride + kw - d.padding;
                                    s += gout_row[ow] * in_row[iw];
                                }
                                acc = s;
                            }
                            dker[k_base + kh * d.kw + kw] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_passes_through() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]), false);
        let b = tape.leaf(&tensor(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let mut tape = Tape::new();
        let a = tape.leaf(&tensor(vec![1, 2], vec![1.0, 2.0]), false);
        let b = tape.leaf(&tensor(vec![2, 1], vec![3.0, 4.0]), false);
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(&Tensor::zeros(vec![2, 3]), false);
        let b = tape.leaf(&Tensor::zeros(vec![2, 3]), false);
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "got: {err}");
    }

    #[test]
    fn conv2d_scaling_kernel_doubles() {
        let mut tape = Tape::new();
        let input = tape.leaf(&Tensor::filled(vec![1, 3, 3], 1.0), false);
        let kernel = tape.leaf(&tensor(vec![1, 1, 1, 1], vec![2.0]), false);
        let out = tape.conv2d(input, kernel, 1, 0).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 3, 3]);
        assert!(tape.value(out).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_block_means_on_ramp() {
        let mut tape = Tape::new();
        let ramp: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let input = tape.leaf(&tensor(vec![1, 4, 4], ramp), false);
        let kernel = tape.leaf(&Tensor::filled(vec![1, 1, 2, 2], 0.25), false);
        let out = tape.conv2d(input, kernel, 2, 0).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 2, 2]);
        assert_eq!(tape.value(out).data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn conv2d_kernel_larger_than_padded_input_errors() {
        let mut tape = Tape::new();
        let input = tape.leaf(&Tensor::zeros(vec![1, 3, 3]), false);
        let kernel = tape.leaf(&Tensor::zeros(vec![1, 1, 5, 5]), false);
        assert!(tape.conv2d(input, kernel, 1, 0).is_err());
        // Padding makes it fit.
        let input = tape.leaf(&Tensor::zeros(vec![1, 3, 3]), false);
        let kernel = tape.leaf(&Tensor::zeros(vec![1, 1, 5, 5]), false);
        assert!(tape.conv2d(input, kernel, 1, 1).is_ok());
    }

    #[test]
    fn relu_clamps_and_zeroes_gradient_on_negatives() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![3], vec![-1.0, 0.0, 2.0]), true);
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(r);
        let grads = tape.backward(s).unwrap();
        // Tie at exactly zero passes zero.
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative_gives_zero_output_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![4], vec![-1.0, -2.0, -0.5, -3.0]), true);
        let r = tape.relu(x);
        assert!(tape.value(r).data().iter().all(|&v| v == 0.0));
        let s = tape.sum(r);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::zeros(vec![4]), false);
        for t in [0.5, 1.0, 7.0] {
            let p = tape.softmax_t(z, t).unwrap();
            for &v in tape.value(p).data() {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_closed_form_values() {
        let mut tape = Tape::new();
        let z = tape.leaf(&tensor(vec![2], vec![2.0, 0.0]), false);
        let p1 = tape.softmax_t(z, 1.0).unwrap();
        let e2 = 2.0f64.exp();
        assert!((tape.value(p1).data()[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((tape.value(p1).data()[0] - 0.88080).abs() < 1e-5);
        let p2 = tape.softmax_t(z, 2.0).unwrap();
        let e1 = 1.0f64.exp();
        assert!((tape.value(p2).data()[0] - e1 / (e1 + 1.0)).abs() < 1e-12);
        assert!((tape.value(p2).data()[1] - 0.26894).abs() < 1e-5);
    }

    #[test]
    fn softmax_rejects_nonpositive_temperature() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::zeros(vec![3]), false);
        assert!(tape.softmax_t(z, 0.0).is_err());
        assert!(tape.softmax_t(z, -1.0).is_err());
    }

    #[test]
    fn cross_entropy_matched_prediction_is_near_zero() {
        let mut tape = Tape::new();
        let z = tape.leaf(&tensor(vec![1, 2], vec![20.0, 0.0]), false);
        let y = tensor(vec![1, 2], vec![1.0, 0.0]);
        let loss = tape.cross_entropy_soft(z, &y, 1.0).unwrap();
        assert!(tape.value(loss).item().unwrap() < 1e-8);
    }

    #[test]
    fn cross_entropy_uniform_is_ln_k() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::zeros(vec![1, 4]), false);
        let y = Tensor::filled(vec![1, 4], 0.25);
        let loss = tape.cross_entropy_soft(z, &y, 1.0).unwrap();
        assert!((tape.value(loss).item().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_unnormalized_targets() {
        let mut tape = Tape::new();
        let z = tape.leaf(&Tensor::zeros(vec![1, 3]), false);
        let bad = tensor(vec![1, 3], vec![0.5, 0.2, 0.2]);
        assert!(tape.cross_entropy_soft(z, &bad, 1.0).is_err());
        let z2 = tape.leaf(&Tensor::zeros(vec![1, 3]), false);
        let mismatched = tensor(vec![1, 4], vec![0.25, 0.25, 0.25, 0.25]);
        assert!(tape.cross_entropy_soft(z2, &mismatched, 1.0).is_err());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]), true);
        let s = tape.sum(x);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_square_at_three_gives_six() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0), true);
        let sq = tape.mul(x, x).unwrap();
        let grads = tape.backward(sq).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(vec![3]), true);
        let r = tape.relu(x);
        assert!(tape.backward(r).is_err());
    }

    #[test]
    fn gradients_accumulate_when_a_tensor_feeds_two_consumers() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0), true);
        let a = tape.scale(x, 3.0);
        let b = tape.scale(x, 4.0);
        let s = tape.add(a, b).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[7.0]);
    }

    #[test]
    fn max_pool_ties_resolve_to_lowest_index() {
        let mut tape = Tape::new();
        let x = tape.leaf(&tensor(vec![1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]), true);
        let p = tape.max_pool2d(x, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[5.0]);
        let s = tape.sum(p);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
