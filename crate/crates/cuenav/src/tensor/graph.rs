//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] owns every intermediate activation of one forward pass. Ops
//! execute eagerly as nodes are created; [`Graph::backward`] walks the tape
//! in reverse creation order, which is a valid topological order by
//! construction. Parameter leaves remember their index in the originating
//! [`ParamStore`](super::params::ParamStore) so gradients can be accumulated
//! back after the pass.

use super::kernels::{self, ConvGeom};
use super::params::ParamStore;
use super::{same_shape, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Clamp applied to probabilities before a log inside the weighted BCE.
pub const WBCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<usize> },
    Conv2d { input: usize, weight: usize, bias: Option<usize>, geom: ConvGeom },
    Relu { input: usize },
    Sigmoid { input: usize },
    Add { a: usize, b: usize },
    ConcatChannels { inputs: Vec<usize> },
    UpsampleBilinear { input: usize, factor: usize },
    AvgPoolGlobal { input: usize },
    FullyConnected { input: usize, weight: usize, bias: Option<usize> },
    ScaleByWeights { inputs: Vec<usize>, weights: usize },
    Wbce { pred: usize, label: usize, beta: f64 },
    Mse { pred: usize, target: usize },
    Triplet { anchor: usize, positive: usize, negative: usize, margin: f64 },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op,
    requires_grad: bool,
    /// im2col patches kept from the forward pass for the weight gradient.
    cols: Option<Vec<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            cols: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// Leaf that participates in differentiation (for inputs under test).
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    /// Leaf bound to `store[idx]`; the value is copied in, and
    /// [`Graph::accumulate_param_grads`] adds the gradient back out.
    pub fn param(&mut self, store: &ParamStore<T>, idx: usize) -> NodeId {
        let p = store.get(idx);
        self.push(
            p.value.clone(),
            Op::Leaf { param: Some(idx) },
            p.trainable,
        )
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// Cross-correlation of `input [B,Cᵢ,H,W]` with `weight [Cₒ,Cᵢ,K,K]`.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (b, c_in, h_in, w_in) = self.value(input).dims4("conv2d")?;
        let ws = self.value(weight).shape().to_vec();
        let (c_out, wc_in, kh, kw) = match ws[..] {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => {
                return Err(TensorError::Rank {
                    op: "conv2d weight",
                    expected: 4,
                    got: ws,
                })
            }
        };
        if wc_in != c_in || kh != kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d: weight channels vs input channels",
                expected: vec![c_out, c_in, kh, kh],
                got: ws,
            });
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be >= 1".into(),
            });
        }
        if h_in + 2 * padding < kh || w_in + 2 * padding < kw {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!(
                    "kernel {}x{} does not fit padded input {}x{} (padding {})",
                    kh, kw, h_in, w_in, padding
                ),
            });
        }
        if let Some(bias) = bias {
            same_shape("conv2d bias", &[c_out], self.shape(bias))?;
        }
        let geom = ConvGeom {
            batch: b,
            c_in,
            h_in,
            w_in,
            c_out,
            kernel: kh,
            stride,
            padding,
            h_out: (h_in + 2 * padding - kh) / stride + 1,
            w_out: (w_in + 2 * padding - kw) / stride + 1,
        };
        let patch = geom.patch_len();
        let m = geom.out_positions();
        let mut cols = vec![T::ZERO; m * patch];
        kernels::im2col(self.value(input).data(), &geom, &mut cols);
        let mut rows = vec![T::ZERO; m * geom.c_out];
        kernels::gemm_bt(&cols, self.value(weight).data(), m, patch, geom.c_out, &mut rows);
        if let Some(bias) = bias {
            let bv = self.value(bias).data().to_vec();
            for row in rows.chunks_mut(geom.c_out) {
                for (o, &bb) in row.iter_mut().zip(&bv) {
                    *o += bb;
                }
            }
        }
        let mut out = Tensor::zeros(&[b, geom.c_out, geom.h_out, geom.w_out]);
        kernels::rows_to_nchw(&rows, &geom, out.data_mut());
        let requires = self.requires(input)
            || self.requires(weight)
            || bias.map_or(false, |bid| self.requires(bid));
        let id = self.push(
            out,
            Op::Conv2d {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
                geom,
            },
            requires,
        );
        self.nodes[id.0].cols = Some(cols);
        Ok(id)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.maximum(T::ZERO));
        let req = self.requires(input);
        self.push(value, Op::Relu { input: input.0 }, req)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(sigmoid_stable);
        let req = self.requires(input);
        self.push(value, Op::Sigmoid { input: input.0 }, req)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let mut value = self.value(a).clone();
        for (o, &v) in value.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += v;
        }
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, req))
    }

    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_channels",
                msg: "no inputs".into(),
            });
        }
        let (b0, _, h0, w0) = self.value(inputs[0]).dims4("concat_channels")?;
        let mut c_total = 0;
        for &id in inputs {
            let (b, c, h, w) = self.value(id).dims4("concat_channels")?;
            if (b, h, w) != (b0, h0, w0) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    expected: vec![b0, 0, h0, w0],
                    got: vec![b, c, h, w],
                });
            }
            c_total += c;
        }
        let mut out = Tensor::zeros(&[b0, c_total, h0, w0]);
        let plane = h0 * w0;
        {
            let od = out.data_mut();
            for bi in 0..b0 {
                let mut c_off = 0;
                for &id in inputs {
                    let c = self.nodes[id.0].value.shape()[1];
                    let src = self.nodes[id.0].value.data();
                    let src_b = &src[bi * c * plane..(bi + 1) * c * plane];
                    od[(bi * c_total + c_off) * plane..(bi * c_total + c_off + c) * plane]
                        .copy_from_slice(src_b);
                    c_off += c;
                }
            }
        }
        let req = inputs.iter().any(|&id| self.requires(id));
        Ok(self.push(
            out,
            Op::ConcatChannels {
                inputs: inputs.iter().map(|i| i.0).collect(),
            },
            req,
        ))
    }

    /// Bilinear upsampling by an integer factor (half-pixel sampling).
    pub fn upsample_bilinear(&mut self, input: NodeId, factor: usize) -> Result<NodeId> {
        if factor == 0 {
            return Err(TensorError::Invalid {
                op: "upsample_bilinear",
                msg: "factor must be >= 1".into(),
            });
        }
        let (b, c, h, w) = self.value(input).dims4("upsample_bilinear")?;
        let (ho, wo) = (h * factor, w * factor);
        let ytab = bilinear_axis(h, factor);
        let xtab = bilinear_axis(w, factor);
        let mut out = Tensor::zeros(&[b, c, ho, wo]);
        {
            let src = self.value(input).data();
            let dst = out.data_mut();
            for plane_idx in 0..b * c {
                let sp = &src[plane_idx * h * w..(plane_idx + 1) * h * w];
                let dp = &mut dst[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
                for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
                    let wy = T::from_f64(wy);
                    for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                        let wx = T::from_f64(wx);
                        let v00 = sp[y0 * w + x0];
                        let v01 = sp[y0 * w + x1];
                        let v10 = sp[y1 * w + x0];
                        let v11 = sp[y1 * w + x1];
                        let top = v00 + (v01 - v00) * wx;
                        let bot = v10 + (v11 - v10) * wx;
                        dp[oy * wo + ox] = top + (bot - top) * wy;
                    }
                }
            }
        }
        let req = self.requires(input);
        Ok(self.push(
            out,
            Op::UpsampleBilinear {
                input: input.0,
                factor,
            },
            req,
        ))
    }

    /// Mean over the spatial dimensions: `[B,C,H,W] -> [B,C]`.
    pub fn avg_pool_global(&mut self, input: NodeId) -> Result<NodeId> {
        let (b, c, h, w) = self.value(input).dims4("avg_pool_global")?;
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let mut out = Tensor::zeros(&[b, c]);
        {
            let src = self.value(input).data();
            let dst = out.data_mut();
            for (i, o) in dst.iter_mut().enumerate() {
                let plane = &src[i * h * w..(i + 1) * h * w];
                let mut s = T::ZERO;
                for &v in plane {
                    s += v;
                }
                *o = s * inv;
            }
        }
        let req = self.requires(input);
        Ok(self.push(out, Op::AvgPoolGlobal { input: input.0 }, req))
    }

    /// `input [B,F] · weight [O,F]ᵀ + bias [O]`.
    pub fn fully_connected(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let (b, f) = self.value(input).dims2("fully_connected")?;
        let (o, wf) = self.value(weight).dims2("fully_connected weight")?;
        if wf != f {
            return Err(TensorError::ShapeMismatch {
                op: "fully_connected: weight vs input features",
                expected: vec![o, f],
                got: vec![o, wf],
            });
        }
        if let Some(bid) = bias {
            same_shape("fully_connected bias", &[o], self.shape(bid))?;
        }
        let mut out = Tensor::zeros(&[b, o]);
        kernels::gemm_bt(
            self.value(input).data(),
            self.value(weight).data(),
            b,
            f,
            o,
            out.data_mut(),
        );
        if let Some(bid) = bias {
            let bv = self.value(bid).data().to_vec();
            for row in out.data_mut().chunks_mut(o) {
                for (x, &bb) in row.iter_mut().zip(&bv) {
                    *x += bb;
                }
            }
        }
        let req = self.requires(input)
            || self.requires(weight)
            || bias.map_or(false, |bid| self.requires(bid));
        Ok(self.push(
            out,
            Op::FullyConnected {
                input: input.0,
                weight: weight.0,
                bias: bias.map(|b| b.0),
            },
            req,
        ))
    }

    /// Weighted sum of equally shaped tensors with a learned weight vector:
    /// `out = Σₖ weights[k] · inputs[k]`.
    pub fn scale_by_learned_weights(
        &mut self,
        inputs: &[NodeId],
        weights: NodeId,
    ) -> Result<NodeId> {
        same_shape(
            "scale_by_learned_weights",
            &[inputs.len()],
            self.shape(weights),
        )?;
        if inputs.is_empty() {
            return Err(TensorError::Invalid {
                op: "scale_by_learned_weights",
                msg: "no inputs".into(),
            });
        }
        let shape = self.shape(inputs[0]).to_vec();
        for &id in inputs {
            same_shape("scale_by_learned_weights", &shape, self.shape(id))?;
        }
        let mut out = Tensor::zeros(&shape);
        for (k, &id) in inputs.iter().enumerate() {
            let wk = self.value(weights).data()[k];
            for (o, &v) in out.data_mut().iter_mut().zip(self.nodes[id.0].value.data()) {
                *o += wk * v;
            }
        }
        let req =
            inputs.iter().any(|&id| self.requires(id)) || self.requires(weights);
        Ok(self.push(
            out,
            Op::ScaleByWeights {
                inputs: inputs.iter().map(|i| i.0).collect(),
                weights: weights.0,
            },
            req,
        ))
    }

    // ── losses ──────────────────────────────────────────────────────────

    /// Weighted binary cross-entropy, summed over all pixels:
    /// `-β Σ_{label=1} ln p  - (1-β) Σ_{label=0} ln (1-p)`,
    /// with `p` clamped away from 0 and 1 before the log.
    pub fn wbce_loss(&mut self, pred: NodeId, label: NodeId, beta: f64) -> Result<NodeId> {
        same_shape("wbce_loss", self.shape(pred), self.shape(label))?;
        for &v in self.value(label).data() {
            let v = v.to_f64();
            if v != 0.0 && v != 1.0 {
                return Err(TensorError::NonBinaryLabel {
                    op: "wbce_loss",
                    value: v,
                });
            }
        }
        let lo = T::from_f64(WBCE_EPS);
        let hi = T::from_f64(1.0 - WBCE_EPS);
        let (bw, bn) = (T::from_f64(beta), T::from_f64(1.0 - beta));
        let mut loss = T::ZERO;
        for (&p, &y) in self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(label).data())
        {
            let pc = p.maximum(lo).minimum(hi);
            if y > T::from_f64(0.5) {
                loss -= bw * pc.ln();
            } else {
                loss -= bn * (T::ONE - pc).ln();
            }
        }
        let req = self.requires(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Wbce {
                pred: pred.0,
                label: label.0,
                beta,
            },
            req,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        same_shape("mse_loss", self.shape(pred), self.shape(target))?;
        let n = self.value(pred).numel();
        let mut s = T::ZERO;
        for (&a, &b) in self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
        {
            let d = a - b;
            s += d * d;
        }
        let loss = s * T::from_f64(1.0 / n as f64);
        let req = self.requires(pred) || self.requires(target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred: pred.0,
                target: target.0,
            },
            req,
        ))
    }

    /// Margin triplet loss on `[B,F]` feature rows, averaged over the batch:
    /// `mean_i max(‖aᵢ-pᵢ‖ - ‖aᵢ-nᵢ‖ + margin, 0)`.
    pub fn triplet_loss(
        &mut self,
        anchor: NodeId,
        positive: NodeId,
        negative: NodeId,
        margin: f64,
    ) -> Result<NodeId> {
        let shape = self.shape(anchor).to_vec();
        same_shape("triplet_loss", &shape, self.shape(positive))?;
        same_shape("triplet_loss", &shape, self.shape(negative))?;
        let (b, f) = self.value(anchor).dims2("triplet_loss")?;
        let mut loss = T::ZERO;
        for i in 0..b {
            let a = &self.value(anchor).data()[i * f..(i + 1) * f];
            let p = &self.value(positive).data()[i * f..(i + 1) * f];
            let n = &self.value(negative).data()[i * f..(i + 1) * f];
            let term = euclid(a, p) - euclid(a, n) + T::from_f64(margin);
            loss += term.maximum(T::ZERO);
        }
        loss *= T::from_f64(1.0 / b as f64);
        let req =
            self.requires(anchor) || self.requires(positive) || self.requires(negative);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Triplet {
                anchor: anchor.0,
                positive: positive.0,
                negative: negative.0,
                margin,
            },
            req,
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar `loss` node. Gradients accumulate on every
    /// node with `requires_grad`; others are skipped entirely.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        if !self.requires(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::ONE));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i);
        }
        Ok(())
    }

    /// Add parameter-leaf gradients into the store's accumulators.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for node in &self.nodes {
            if let (Op::Leaf { param: Some(idx) }, Some(grad)) = (&node.op, &node.grad) {
                store.accumulate_grad(*idx, grad);
            }
        }
    }

    fn add_grad(&mut self, node: usize, delta: &Tensor<T>) {
        if !self.nodes[node].requires_grad {
            return;
        }
        match &mut self.nodes[node].grad {
            Some(g) => {
                for (o, &v) in g.data_mut().iter_mut().zip(delta.data()) {
                    *o += v;
                }
            }
            None => self.nodes[node].grad = Some(delta.clone()),
        }
    }

    fn backprop_node(&mut self, i: usize) {
        let op = self.nodes[i].op.clone();
        let upstream = self.nodes[i].grad.clone().expect("grad present");
        match op {
            Op::Leaf { .. } => {}
            Op::Relu { input } => {
                let mut d = upstream;
                for (g, &x) in d.data_mut().iter_mut().zip(self.nodes[input].value.data()) {
                    if x <= T::ZERO {
                        *g = T::ZERO;
                    }
                }
                self.add_grad(input, &d);
            }
            Op::Sigmoid { input } => {
                let mut d = upstream;
                for (g, &y) in d.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                    *g *= y * (T::ONE - y);
                }
                self.add_grad(input, &d);
            }
            Op::Add { a, b } => {
                self.add_grad(a, &upstream);
                self.add_grad(b, &upstream);
            }
            Op::ConcatChannels { inputs } => {
                let (b0, c_total, h, w) = self.nodes[i].value.dims4("concat").unwrap();
                let plane = h * w;
                let mut c_off = 0;
                for id in inputs {
                    let c = self.nodes[id].value.shape()[1];
                    if self.nodes[id].requires_grad {
                        let mut d = Tensor::zeros(&[b0, c, h, w]);
                        for bi in 0..b0 {
                            let src = &upstream.data()[(bi * c_total + c_off) * plane
                                ..(bi * c_total + c_off + c) * plane];
                            d.data_mut()[bi * c * plane..(bi + 1) * c * plane]
                                .copy_from_slice(src);
                        }
                        self.add_grad(id, &d);
                    }
                    c_off += c;
                }
            }
            Op::UpsampleBilinear { input, factor } => {
                let (b, c, h, w) = self.nodes[input].value.dims4("upsample").unwrap();
                let (ho, wo) = (h * factor, w * factor);
                let ytab = bilinear_axis(h, factor);
                let xtab = bilinear_axis(w, factor);
                let mut d = Tensor::zeros(&[b, c, h, w]);
                {
                    let dd = d.data_mut();
                    for plane_idx in 0..b * c {
                        let up = &upstream.data()[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
                        let dp = &mut dd[plane_idx * h * w..(plane_idx + 1) * h * w];
                        for (oy, &(y0, y1, wy)) in ytab.iter().enumerate() {
                            let wy = T::from_f64(wy);
                            for (ox, &(x0, x1, wx)) in xtab.iter().enumerate() {
                                let wx = T::from_f64(wx);
                                let g = up[oy * wo + ox];
                                dp[y0 * w + x0] += g * (T::ONE - wy) * (T::ONE - wx);
                                dp[y0 * w + x1] += g * (T::ONE - wy) * wx;
                                dp[y1 * w + x0] += g * wy * (T::ONE - wx);
                                dp[y1 * w + x1] += g * wy * wx;
                            }
                        }
                    }
                }
                self.add_grad(input, &d);
            }
            Op::AvgPoolGlobal { input } => {
                let (b, c, h, w) = self.nodes[input].value.dims4("avg_pool").unwrap();
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut d = Tensor::zeros(&[b, c, h, w]);
                {
                    let dd = d.data_mut();
                    for (idx, &g) in upstream.data().iter().enumerate() {
                        let gv = g * inv;
                        for v in &mut dd[idx * h * w..(idx + 1) * h * w] {
                            *v = gv;
                        }
                    }
                }
                self.add_grad(input, &d);
            }
            Op::FullyConnected { input, weight, bias } => {
                let (b, f) = self.nodes[input].value.dims2("fc").unwrap();
                let o = self.nodes[weight].value.shape()[0];
                if self.nodes[input].requires_grad {
                    let mut d_in = Tensor::zeros(&[b, f]);
                    kernels::gemm(
                        upstream.data(),
                        self.nodes[weight].value.data(),
                        b,
                        o,
                        f,
                        d_in.data_mut(),
                    );
                    self.add_grad(input, &d_in);
                }
                if self.nodes[weight].requires_grad {
                    let mut d_w = Tensor::zeros(&[o, f]);
                    kernels::gemm_at_acc(
                        upstream.data(),
                        self.nodes[input].value.data(),
                        b,
                        o,
                        f,
                        d_w.data_mut(),
                    );
                    self.add_grad(weight, &d_w);
                }
                if let Some(bid) = bias {
                    if self.nodes[bid].requires_grad {
                        let mut d_b = Tensor::zeros(&[o]);
                        for row in upstream.data().chunks(o) {
                            for (g, &v) in d_b.data_mut().iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                        self.add_grad(bid, &d_b);
                    }
                }
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let m = geom.out_positions();
                let patch = geom.patch_len();
                let mut d_rows = vec![T::ZERO; m * geom.c_out];
                kernels::nchw_to_rows(upstream.data(), &geom, &mut d_rows);
                if self.nodes[weight].requires_grad {
                    let cols = self.nodes[i].cols.as_ref().expect("conv cols cached");
                    let mut d_w = Tensor::zeros(&[geom.c_out, geom.c_in, geom.kernel, geom.kernel]);
                    kernels::gemm_at_acc(&d_rows, cols, m, geom.c_out, patch, d_w.data_mut());
                    self.add_grad(weight, &d_w);
                }
                if let Some(bid) = bias {
                    if self.nodes[bid].requires_grad {
                        let mut d_b = Tensor::zeros(&[geom.c_out]);
                        for row in d_rows.chunks(geom.c_out) {
                            for (g, &v) in d_b.data_mut().iter_mut().zip(row) {
                                *g += v;
                            }
                        }
                        self.add_grad(bid, &d_b);
                    }
                }
                if self.nodes[input].requires_grad {
                    let mut d_cols = vec![T::ZERO; m * patch];
                    kernels::gemm(
                        &d_rows,
                        self.nodes[weight].value.data(),
                        m,
                        geom.c_out,
                        patch,
                        &mut d_cols,
                    );
                    let mut d_in =
                        Tensor::zeros(&[geom.batch, geom.c_in, geom.h_in, geom.w_in]);
                    kernels::col2im_acc(&d_cols, &geom, d_in.data_mut());
                    self.add_grad(input, &d_in);
                }
            }
            Op::ScaleByWeights { inputs, weights } => {
                let up = upstream.data();
                for (k, id) in inputs.iter().enumerate() {
                    let wk = self.nodes[weights].value.data()[k];
                    if self.nodes[*id].requires_grad {
                        let mut d = self.nodes[i].value.clone();
                        for (g, &u) in d.data_mut().iter_mut().zip(up) {
                            *g = wk * u;
                        }
                        self.add_grad(*id, &d);
                    }
                }
                if self.nodes[weights].requires_grad {
                    let mut d_w = Tensor::zeros(&[inputs.len()]);
                    for (k, id) in inputs.iter().enumerate() {
                        let mut s = T::ZERO;
                        for (&u, &x) in up.iter().zip(self.nodes[*id].value.data()) {
                            s += u * x;
                        }
                        d_w.data_mut()[k] = s;
                    }
                    self.add_grad(weights, &d_w);
                }
            }
            Op::Wbce { pred, label, beta } => {
                let up = upstream.item();
                let lo = T::from_f64(WBCE_EPS);
                let hi = T::from_f64(1.0 - WBCE_EPS);
                let (bw, bn) = (T::from_f64(beta), T::from_f64(1.0 - beta));
                let mut d = Tensor::zeros(self.nodes[pred].value.shape());
                for ((g, &p), &y) in d
                    .data_mut()
                    .iter_mut()
                    .zip(self.nodes[pred].value.data())
                    .zip(self.nodes[label].value.data())
                {
                    let pc = p.maximum(lo).minimum(hi);
                    *g = if y > T::from_f64(0.5) {
                        -up * bw / pc
                    } else {
                        up * bn / (T::ONE - pc)
                    };
                }
                self.add_grad(pred, &d);
            }
            Op::Mse { pred, target } => {
                let up = upstream.item();
                let n = self.nodes[pred].value.numel();
                let scale = up * T::from_f64(2.0 / n as f64);
                let mut d = Tensor::zeros(self.nodes[pred].value.shape());
                for ((g, &a), &b) in d
                    .data_mut()
                    .iter_mut()
                    .zip(self.nodes[pred].value.data())
                    .zip(self.nodes[target].value.data())
                {
                    *g = scale * (a - b);
                }
                if self.nodes[pred].requires_grad {
                    self.add_grad(pred, &d);
                }
                if self.nodes[target].requires_grad {
                    let neg = d.map(|v| -v);
                    self.add_grad(target, &neg);
                }
            }
            Op::Triplet { anchor, positive, negative, margin } => {
                let up = upstream.item();
                let (b, f) = self.nodes[anchor].value.dims2("triplet").unwrap();
                let scale = up * T::from_f64(1.0 / b as f64);
                let tiny = T::from_f64(1e-12);
                let mut d_a = Tensor::zeros(&[b, f]);
                let mut d_p = Tensor::zeros(&[b, f]);
                let mut d_n = Tensor::zeros(&[b, f]);
                for idx in 0..b {
                    let r = idx * f..(idx + 1) * f;
                    let a = &self.nodes[anchor].value.data()[r.clone()];
                    let p = &self.nodes[positive].value.data()[r.clone()];
                    let n = &self.nodes[negative].value.data()[r.clone()];
                    let d_ap = euclid(a, p);
                    let d_an = euclid(a, n);
                    if (d_ap - d_an + T::from_f64(margin)) <= T::ZERO {
                        continue;
                    }
                    let inv_ap = scale / d_ap.maximum(tiny);
                    let inv_an = scale / d_an.maximum(tiny);
                    let (da, dp, dn) = (
                        &mut d_a.data_mut()[r.clone()],
                        &mut d_p.data_mut()[r.clone()],
                        &mut d_n.data_mut()[r],
                    );
                    for j in 0..f {
                        let ap = a[j] - p[j];
                        let an = a[j] - n[j];
                        da[j] += ap * inv_ap - an * inv_an;
                        dp[j] -= ap * inv_ap;
                        dn[j] += an * inv_an;
                    }
                }
                self.add_grad(anchor, &d_a);
                self.add_grad(positive, &d_p);
                self.add_grad(negative, &d_n);
            }
        }
    }
}

fn sigmoid_stable<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// Per-axis source indices and interpolation weight for half-pixel bilinear
/// upsampling: output `o` samples source coordinate `(o + 0.5)/factor - 0.5`.
fn bilinear_axis(len_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len_in * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let clamped = src.max(0.0).min(len_in as f64 - 1.0);
            let i0 = clamped.floor() as usize;
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, clamped - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()));
        let w = g.constant(t(&[1, 1, 1, 1], vec![1.0]));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_zero_kernel_gives_zero_output() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 4, 4], (0..32).map(|v| v as f64 * 0.3 - 1.0).collect()));
        let w = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.shape(y), &[1, 3, 4, 4]);
    }

    #[test]
    fn conv_matches_direct_summation_oracle() {
        // Independent quadruple-loop cross-correlation.
        let mut rng_state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let (b, ci, co, h, w, k, stride, pad) = (2, 3, 4, 5, 5, 3, 2, 1);
        let x: Vec<f64> = (0..b * ci * h * w).map(|_| next()).collect();
        let wt: Vec<f64> = (0..co * ci * k * k).map(|_| next()).collect();
        let bias: Vec<f64> = (0..co).map(|_| next()).collect();

        let mut g = Graph::new();
        let xn = g.constant(t(&[b, ci, h, w], x.clone()));
        let wn = g.constant(t(&[co, ci, k, k], wt.clone()));
        let bn = g.constant(t(&[co], bias.clone()));
        let y = g.conv2d(xn, wn, Some(bn), stride, pad).unwrap();

        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        assert_eq!(g.shape(y), &[b, co, ho, wo]);
        for bi in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = bias[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let y_in = (oy * stride + ky) as isize - pad as isize;
                                    let x_in = (ox * stride + kx) as isize - pad as isize;
                                    if y_in >= 0
                                        && y_in < h as isize
                                        && x_in >= 0
                                        && x_in < w as isize
                                    {
                                        s += x[((bi * ci + c) * h + y_in as usize) * w
                                            + x_in as usize]
                                            * wt[((o * ci + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        let got = g.value(y).data()[((bi * co + o) * ho + oy) * wo + ox];
                        assert!(
                            (got - s).abs() < 1e-6,
                            "mismatch at {bi},{o},{oy},{ox}: {got} vs {s}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(&[2, 5, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 5, 3, 3]") && msg.contains("[2, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn global_avg_pool_of_constant_is_constant() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2, 3, 4, 4], 3.0));
        let y = g.avg_pool_global(x).unwrap();
        assert_eq!(g.shape(y), &[2, 3]);
        assert!(g.value(y).data().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 3, 3], (0..9).map(|v| v as f64).collect()));
        let y = g.upsample_bilinear(x, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn upsample_doubles_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 2, 4, 6], 1.5));
        let y = g.upsample_bilinear(x, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 8, 12]);
        // Interpolating a constant plane reproduces the constant.
        assert!(g.value(y).data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn concat_then_backward_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full(&[1, 1, 2, 2], 1.0), true);
        let b = g.leaf(Tensor::full(&[1, 2, 2, 2], 2.0), true);
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(c), &[1, 3, 2, 2]);
        let tgt = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let loss = g.mse_loss(c, tgt).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().shape(), &[1, 1, 2, 2]);
        assert_eq!(g.grad(b).unwrap().shape(), &[1, 2, 2, 2]);
    }

    #[test]
    fn scale_by_weights_one_hot_selects_input() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(t(&[1, 1, 2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let w = g.constant(t(&[2], vec![0.0, 1.0]));
        let y = g.scale_by_learned_weights(&[a, b], w).unwrap();
        assert_eq!(g.value(y).data(), g.value(b).data());
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g: Graph<f32> = Graph::new();
            let x = g.constant(Tensor::from_vec(&[1, 3, 8, 8], (0..192).map(|i| (i as f32 * 0.17).sin()).collect()).unwrap());
            let w = g.constant(Tensor::from_vec(&[4, 3, 3, 3], (0..108).map(|i| (i as f32 * 0.31).cos()).collect()).unwrap());
            let c = g.conv2d(x, w, None, 2, 1).unwrap();
            let r = g.relu(c);
            let s = g.sigmoid(r);
            g.value(s).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "bitwise identical forward passes");
    }
}
