//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] is an append-only arena of operation records. Node ids are
//! assigned in construction order, which is already a topological order, so
//! the backward pass is a single reverse sweep that visits each node exactly
//! once. Gradients are accumulated only along paths that reach a
//! differentiable leaf; everything else is skipped.

use super::kernels::{
    bilinear_backward, bilinear_forward, conv2d_backward_bias, conv2d_backward_input,
    conv2d_backward_kernel, conv2d_forward, Conv2dDims,
};
use super::{Tensor, TensorError, ONE_MINUS};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: VarId,
        k: VarId,
        b: Option<VarId>,
        dims: Conv2dDims,
    },
    Sigmoid(VarId),
    Tanh(VarId),
    Exp(VarId),
    Ln(VarId),
    /// Square root with a zero subgradient at the origin.
    SqrtK0(VarId),
    Recip(VarId),
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    AddScalar(VarId),
    MulScalar(VarId, f64),
    /// Broadcast multiply by a single-element node.
    MulScalarNode(VarId, VarId),
    /// Per-channel bias added to a rank-4 tensor.
    ChannelBias(VarId, VarId),
    ConcatChannels(Vec<VarId>),
    BilinearResize {
        x: VarId,
        src: (usize, usize, usize, usize),
    },
    SumAll(VarId),
    SumChannels(VarId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Place a tensor on the tape. It participates in differentiation when
    /// built with [`Tensor::with_grad`].
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        let needs = value.requires_grad();
        self.push(value, needs, Op::Leaf)
    }

    /// Leaf that never receives a gradient, regardless of the tensor flag.
    pub fn constant(&mut self, mut value: Tensor) -> VarId {
        value = Tensor {
            requires_grad: false,
            ..value
        };
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, shaped
    /// like the node value. `None` when no gradient reached the node.
    pub fn grad(&self, id: VarId) -> Option<Tensor> {
        self.grads[id.0].as_ref().map(|g| Tensor {
            shape: self.nodes[id.0].value.shape().to_vec(),
            data: g.clone(),
            requires_grad: false,
        })
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> VarId {
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        self.grads.push(None);
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn unary(
        &mut self,
        ctx: &'static str,
        x: VarId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<VarId, TensorError> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::with_ctx(ctx, xv.shape().to_vec(), data)?;
        Ok(self.push(value, self.needs(x), op))
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary(
            "sigmoid",
            x,
            |v| (1.0 / (1.0 + (-v).exp())).clamp(f64::MIN_POSITIVE, ONE_MINUS),
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary(
            "tanh",
            x,
            |v| v.tanh().clamp(-ONE_MINUS, ONE_MINUS),
            Op::Tanh(x),
        )
    }

    pub fn exp(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary("ln", x, f64::ln, Op::Ln(x))
    }

    /// Elementwise square root; the subgradient at 0 is defined as 0.
    pub fn sqrt0(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary("sqrt", x, f64::sqrt, Op::SqrtK0(x))
    }

    pub fn recip(&mut self, x: VarId) -> Result<VarId, TensorError> {
        self.unary("recip", x, |v| 1.0 / v, Op::Recip(x))
    }

    fn binary(
        &mut self,
        ctx: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TensorError::Shape {
                ctx,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::with_ctx(ctx, av.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, needs, op))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, x: VarId, c: f64) -> Result<VarId, TensorError> {
        self.unary("add_scalar", x, |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: VarId, c: f64) -> Result<VarId, TensorError> {
        self.unary("mul_scalar", x, |v| v * c, Op::MulScalar(x, c))
    }

    /// Multiply every entry of `x` by the single-element node `s`.
    pub fn mul_scalar_node(&mut self, x: VarId, s: VarId) -> Result<VarId, TensorError> {
        let sv = self.value(s);
        if sv.numel() != 1 {
            return Err(TensorError::Dim {
                ctx: "mul_scalar_node",
                dim: "scalar operand length",
                expected: 1,
                got: sv.numel(),
            });
        }
        let c = sv.data()[0];
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * c).collect();
        let value = Tensor::with_ctx("mul_scalar_node", xv.shape().to_vec(), data)?;
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(value, needs, Op::MulScalarNode(x, s)))
    }

    /// Add a per-channel bias (shape `[C]`) to a rank-4 tensor, broadcast
    /// over batch and space.
    pub fn add_channel_bias(&mut self, x: VarId, b: VarId) -> Result<VarId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4("add_channel_bias")?;
        let bv = self.value(b);
        if bv.shape() != [c] {
            return Err(TensorError::Dim {
                ctx: "add_channel_bias",
                dim: "bias length",
                expected: c,
                got: bv.numel(),
            });
        }
        let plane = h * w;
        let mut data = self.value(x).data().to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let bias = bv.data()[ci];
                let base = (ni * c + ci) * plane;
                for v in &mut data[base..base + plane] {
                    *v += bias;
                }
            }
        }
        let value = Tensor::with_ctx("add_channel_bias", vec![n, c, h, w], data)?;
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(value, needs, Op::ChannelBias(x, b)))
    }

    /// Concatenate rank-4 tensors along the channel axis, argument order
    /// preserved.
    pub fn concat_channels(&mut self, parts: &[VarId]) -> Result<VarId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::EmptyConcat);
        }
        let (n, _, h, w) = self.value(parts[0]).dims4("concat_channels")?;
        let mut ctotal = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(TensorError::Shape {
                    ctx: "concat_channels",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            ctotal += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * ctotal * plane);
        for ni in 0..n {
            for &p in parts {
                let pv = self.value(p);
                let pc = pv.shape()[1];
                let base = ni * pc * plane;
                data.extend_from_slice(&pv.data()[base..base + pc * plane]);
            }
        }
        let value = Tensor::with_ctx("concat_channels", vec![n, ctotal, h, w], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, needs, Op::ConcatChannels(parts.to_vec())))
    }

    /// `out[n,co] = bias[co] + sum_ci conv(x[n,ci], kernel[co,ci])`.
    pub fn conv2d(
        &mut self,
        x: VarId,
        kernel: VarId,
        bias: Option<VarId>,
        stride: usize,
        pad: usize,
    ) -> Result<VarId, TensorError> {
        let dims = Conv2dDims::resolve(
            self.value(x).shape(),
            self.value(kernel).shape(),
            bias.map(|b| self.value(b).numel()),
            stride,
            pad,
        )?;
        let data = conv2d_forward(
            self.value(x).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
            &dims,
        );
        let value = Tensor::with_ctx("conv2d", vec![dims.n, dims.cout, dims.oh, dims.ow], data)?;
        let needs =
            self.needs(x) || self.needs(kernel) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            value,
            needs,
            Op::Conv2d {
                x,
                k: kernel,
                b: bias,
                dims,
            },
        ))
    }

    /// Bilinear resample to `(oh, ow)`, align-corners-false convention.
    pub fn bilinear_resize(&mut self, x: VarId, oh: usize, ow: usize) -> Result<VarId, TensorError> {
        if oh == 0 || ow == 0 {
            return Err(TensorError::EmptyResize { h: oh, w: ow });
        }
        let (n, c, h, w) = self.value(x).dims4("bilinear_resize")?;
        if (oh, ow) == (h, w) {
            // Identity resize reproduces the input bit for bit.
            let value = self.value(x).clone();
            return Ok(self.push(
                value,
                self.needs(x),
                Op::BilinearResize {
                    x,
                    src: (n, c, h, w),
                },
            ));
        }
        let data = bilinear_forward(self.value(x).data(), n, c, h, w, oh, ow);
        let value = Tensor::with_ctx("bilinear_resize", vec![n, c, oh, ow], data)?;
        Ok(self.push(
            value,
            self.needs(x),
            Op::BilinearResize {
                x,
                src: (n, c, h, w),
            },
        ))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let mut acc = 0.0;
        for v in self.value(x).data() {
            acc += v;
        }
        let value = Tensor::with_ctx("sum_all", vec![1], vec![acc])?;
        Ok(self.push(value, self.needs(x), Op::SumAll(x)))
    }

    /// Reduce a rank-4 tensor over the channel axis to `[N,1,H,W]`.
    pub fn sum_channels(&mut self, x: VarId) -> Result<VarId, TensorError> {
        let (n, c, h, w) = self.value(x).dims4("sum_channels")?;
        let plane = h * w;
        let mut data = vec![0.0; n * plane];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * plane;
                let xd = self.value(x).data();
                for (o, v) in data[ni * plane..(ni + 1) * plane]
                    .iter_mut()
                    .zip(&xd[base..base + plane])
                {
                    *o += v;
                }
            }
        }
        let value = Tensor::with_ctx("sum_channels", vec![n, 1, h, w], data)?;
        Ok(self.push(value, self.needs(x), Op::SumChannels(x)))
    }

    /// Propagate gradients from a scalar loss node back to every
    /// differentiable leaf. Resets gradients from any previous call.
    pub fn backward(&mut self, loss: VarId) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy);
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn acc(&mut self, id: VarId, f: impl FnOnce(&mut [f64])) {
        if !self.needs(id) {
            return;
        }
        let numel = self.nodes[id.0].value.numel();
        let slot = self.grads[id.0].get_or_insert_with(|| vec![0.0; numel]);
        f(slot);
    }

    fn propagate(&mut self, i: usize, gy: &[f64]) {
        // Values are read before mutably borrowing gradient slots; clones of
        // input buffers are avoided except where borrow rules force a copy of
        // the node's own activation.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Sigmoid(x) => {
                let x = *x;
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        *g += gy[j] * y[j] * (1.0 - y[j]);
                    }
                });
            }
            Op::Tanh(x) => {
                let x = *x;
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        *g += gy[j] * (1.0 - y[j] * y[j]);
                    }
                });
            }
            Op::Exp(x) => {
                let x = *x;
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        *g += gy[j] * y[j];
                    }
                });
            }
            Op::Ln(x) => {
                let x = *x;
                let xd: Vec<f64> = self.nodes[x.0].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        *g += gy[j] / xd[j];
                    }
                });
            }
            Op::SqrtK0(x) => {
                let x = *x;
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        if y[j] > 0.0 {
                            *g += gy[j] * 0.5 / y[j];
                        }
                    }
                });
            }
            Op::Recip(x) => {
                let x = *x;
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.acc(x, |gx| {
                    for (j, g) in gx.iter_mut().enumerate() {
                        *g -= gy[j] * y[j] * y[j];
                    }
                });
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga| {
                    for (g, &v) in ga.iter_mut().zip(gy) {
                        *g += v;
                    }
                });
                self.acc(b, |gb| {
                    for (g, &v) in gb.iter_mut().zip(gy) {
                        *g += v;
                    }
                });
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.acc(a, |ga| {
                    for (g, &v) in ga.iter_mut().zip(gy) {
                        *g += v;
                    }
                });
                self.acc(b, |gb| {
                    for (g, &v) in gb.iter_mut().zip(gy) {
                        *g -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ad: Vec<f64> = self.nodes[a.0].value.data().to_vec();
                let bd: Vec<f64> = self.nodes[b.0].value.data().to_vec();
                self.acc(a, |ga| {
                    for (j, g) in ga.iter_mut().enumerate() {
                        *g += gy[j] * bd[j];
                    }
                });
                self.acc(b, |gb| {
                    for (j, g) in gb.iter_mut().enumerate() {
                        *g += gy[j] * ad[j];
                    }
                });
            }
            Op::AddScalar(x) => {
                let x = *x;
                self.acc(x, |gx| {
                    for (g, &v) in gx.iter_mut().zip(gy) {
                        *g += v;
                    }
                });
            }
            Op::MulScalar(x, c) => {
                let (x, c) = (*x, *c);
                self.acc(x, |gx| {
                    for (g, &v) in gx.iter_mut().zip(gy) {
                        *g += c * v;
                    }
                });
            }
            Op::MulScalarNode(x, s) => {
                let (x, s) = (*x, *s);
                let sv = self.nodes[s.0].value.data()[0];
                let xd: Vec<f64> = self.nodes[x.0].value.data().to_vec();
                self.acc(x, |gx| {
                    for (g, &v) in gx.iter_mut().zip(gy) {
                        *g += sv * v;
                    }
                });
                self.acc(s, |gs| {
                    let mut acc = 0.0;
                    for (j, &v) in gy.iter().enumerate() {
                        acc += v * xd[j];
                    }
                    gs[0] += acc;
                });
            }
            Op::ChannelBias(x, b) => {
                let (x, b) = (*x, *b);
                let (n, c, h, w) = self.nodes[i].value.dims4("channel_bias grad").unwrap();
                let plane = h * w;
                self.acc(x, |gx| {
                    for (g, &v) in gx.iter_mut().zip(gy) {
                        *g += v;
                    }
                });
                self.acc(b, |gb| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let mut acc = 0.0;
                            for &v in &gy[base..base + plane] {
                                acc += v;
                            }
                            gb[ci] += acc;
                        }
                    }
                });
            }
            Op::ConcatChannels(parts) => {
                let parts = parts.clone();
                let (n, ctotal, h, w) = self.nodes[i].value.dims4("concat grad").unwrap();
                let plane = h * w;
                let mut coff = 0;
                for &p in &parts {
                    let pc = self.nodes[p.0].value.shape()[1];
                    self.acc(p, |gp| {
                        for ni in 0..n {
                            let src = (ni * ctotal + coff) * plane;
                            let dst = ni * pc * plane;
                            for j in 0..pc * plane {
                                gp[dst + j] += gy[src + j];
                            }
                        }
                    });
                    coff += pc;
                }
            }
            Op::Conv2d { x, k, b, dims } => {
                let (x, k, b, dims) = (*x, *k, *b, *dims);
                let xd: Vec<f64> = self.nodes[x.0].value.data().to_vec();
                let kd: Vec<f64> = self.nodes[k.0].value.data().to_vec();
                self.acc(x, |gx| conv2d_backward_input(gy, &kd, &dims, gx));
                self.acc(k, |gk| conv2d_backward_kernel(&xd, gy, &dims, gk));
                if let Some(b) = b {
                    self.acc(b, |gb| conv2d_backward_bias(gy, &dims, gb));
                }
            }
            Op::BilinearResize { x, src } => {
                let (x, (n, c, h, w)) = (*x, *src);
                let (oh, ow) = {
                    let s = self.nodes[i].value.shape();
                    (s[2], s[3])
                };
                if (oh, ow) == (h, w) {
                    self.acc(x, |gx| {
                        for (g, &v) in gx.iter_mut().zip(gy) {
                            *g += v;
                        }
                    });
                } else {
                    self.acc(x, |gx| bilinear_backward(gy, n, c, h, w, oh, ow, gx));
                }
            }
            Op::SumAll(x) => {
                let x = *x;
                let g0 = gy[0];
                self.acc(x, |gx| {
                    for g in gx.iter_mut() {
                        *g += g0;
                    }
                });
            }
            Op::SumChannels(x) => {
                let x = *x;
                let (n, c, h, w) = self.nodes[x.0].value.dims4("sum_channels grad").unwrap();
                let plane = h * w;
                self.acc(x, |gx| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            for j in 0..plane {
                                gx[base + j] += gy[ni * plane + j];
                            }
                        }
                    }
                });
            }
        }
    }
}
