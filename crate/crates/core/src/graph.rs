//! Reverse-mode automatic differentiation tape.
//!
//! A `Graph` owns every tensor produced during one forward pass as an
//! append-only node list; `Var` is an index into it. Construction order is
//! the topological order (an op can only reference earlier nodes), so
//! `backward` is a single reverse sweep. Gradients accumulate additively,
//! which is what gives siamese parameter sharing its summed gradient.
//!
//! Graph construction and backward are single-threaded per instance;
//! parallelism belongs at the level of independent model instances.

use crate::kernels as k;
use crate::tensor::Tensor;
use crate::Elem;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Running-statistics momentum for batch normalization.
pub const BN_MOMENTUM: Elem = 0.1;

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        pad: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    AvgPool2 {
        input: Var,
    },
    Upsample2 {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<Elem>,
        inv_std: Vec<Elem>,
        train: bool,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    SpatialSoftmax {
        input: Var,
    },
    ChannelMax {
        input: Var,
        argmax: Vec<u32>,
    },
    ChannelAvg {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Div {
        a: Var,
        b: Var,
    },
    ConcatChannels {
        inputs: Vec<Var>,
    },
    GateMul {
        input: Var,
        gate: Var,
    },
    SumSpatial {
        input: Var,
    },
    MeanAll {
        input: Var,
    },
    SumAll {
        input: Var,
    },
    Affine {
        input: Var,
        mul: Elem,
    },
    BceWithLogits {
        logits: Var,
        target: Tensor,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` w.r.t. `v`, if any was accumulated.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, rg, op)
    }

    // -- convolution ---------------------------------------------------------

    /// Stride-1 cross-correlation. Kernel size comes from the weight shape;
    /// only the shape-preserving combinations (k=3, pad=1) and (k=1, pad=0)
    /// are accepted.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, pad: usize) -> Var {
        let (b, cin, h, w) = self.value(input).dims4();
        let ws = self.value(weight).shape().to_vec();
        assert_eq!(ws.len(), 4, "conv2d: weight must be rank 4, got {ws:?}");
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(kh, kw, "conv2d: kernel must be square, got {kh}x{kw}");
        let kk = kh;
        assert!(
            (kk == 3 && pad == 1) || (kk == 1 && pad == 0),
            "conv2d: unsupported kernel/pad combination k={kk} pad={pad}"
        );
        assert_eq!(
            wcin, cin,
            "conv2d: input has {cin} channels but weight expects {wcin}"
        );
        assert_eq!(
            self.value(bias).numel(),
            cout,
            "conv2d: bias has {} entries but weight has {cout} output channels",
            self.value(bias).numel()
        );
        let out = k::conv2d_forward(
            self.value(input).data(),
            (b, cin, h, w),
            self.value(weight).data(),
            self.value(bias).data(),
            (cout, kk),
            pad,
        );
        let ho = k::conv_out_size(h, kk, pad);
        let wo = k::conv_out_size(w, kk, pad);
        self.push_op(
            Tensor::new(vec![b, cout, ho, wo], out),
            &[input, weight, bias],
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            },
        )
    }

    // -- pooling / resampling ------------------------------------------------

    pub fn max_pool2(&mut self, input: Var) -> Var {
        let dims = self.value(input).dims4();
        let (out, argmax) = k::max_pool2_forward(self.value(input).data(), dims);
        let (b, c, h, w) = dims;
        self.push_op(
            Tensor::new(vec![b, c, h / 2, w / 2], out),
            &[input],
            Op::MaxPool2 { input, argmax },
        )
    }

    pub fn avg_pool2(&mut self, input: Var) -> Var {
        let dims = self.value(input).dims4();
        let out = k::avg_pool2_forward(self.value(input).data(), dims);
        let (b, c, h, w) = dims;
        self.push_op(
            Tensor::new(vec![b, c, h / 2, w / 2], out),
            &[input],
            Op::AvgPool2 { input },
        )
    }

    /// Bilinear 2x upsampling, align_corners = false.
    pub fn upsample_bilinear2(&mut self, input: Var) -> Var {
        let dims = self.value(input).dims4();
        let out = k::upsample2_forward(self.value(input).data(), dims);
        let (b, c, h, w) = dims;
        self.push_op(
            Tensor::new(vec![b, c, 2 * h, 2 * w], out),
            &[input],
            Op::Upsample2 { input },
        )
    }

    // -- normalization -------------------------------------------------------

    /// Batch normalization. In train mode normalizes with batch statistics
    /// and returns the updated running (mean, var) pair for the caller to
    /// store; in eval mode normalizes with the provided running statistics.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[Elem],
        running_var: &[Elem],
        train: bool,
    ) -> (Var, Option<(Vec<Elem>, Vec<Elem>)>) {
        let dims = self.value(input).dims4();
        let (b, c, h, w) = dims;
        assert_eq!(
            self.value(gamma).numel(),
            c,
            "batch_norm: gamma has {} entries for {c} channels",
            self.value(gamma).numel()
        );
        assert_eq!(
            self.value(beta).numel(),
            c,
            "batch_norm: beta has {} entries for {c} channels",
            self.value(beta).numel()
        );
        let fwd = if train {
            k::batch_norm_train(
                self.value(input).data(),
                dims,
                self.value(gamma).data(),
                self.value(beta).data(),
            )
        } else {
            k::batch_norm_eval(
                self.value(input).data(),
                dims,
                self.value(gamma).data(),
                self.value(beta).data(),
                running_mean,
                running_var,
            )
        };
        let updated = fwd.batch_var.as_ref().map(|var| {
            let n = (b * h * w) as Elem;
            // Unbiased variance feeds the running estimate.
            let correction = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let new_mean: Vec<Elem> = running_mean
                .iter()
                .zip(&fwd.mean)
                .map(|(&r, &m)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * m)
                .collect();
            let new_var: Vec<Elem> = running_var
                .iter()
                .zip(var)
                .map(|(&r, &v)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * v * correction)
                .collect();
            (new_mean, new_var)
        });
        let out = self.push_op(
            Tensor::new(vec![b, c, h, w], fwd.out),
            &[input, gamma, beta],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean: fwd.mean,
                inv_std: fwd.inv_std,
                train,
            },
        );
        (out, updated)
    }

    // -- activations ---------------------------------------------------------

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| x.max(0.0));
        self.push_op(out, &[input], Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(k::sigmoid);
        self.push_op(out, &[input], Op::Sigmoid { input })
    }

    /// Softmax over all spatial positions of a `[B,1,H,W]` map.
    pub fn spatial_softmax(&mut self, input: Var) -> Var {
        let (b, c, h, w) = self.value(input).dims4();
        assert_eq!(
            c, 1,
            "spatial_softmax: expected a single-channel map, got {c} channels"
        );
        let out = k::spatial_softmax_forward(self.value(input).data(), (b, h, w));
        self.push_op(
            Tensor::new(vec![b, 1, h, w], out),
            &[input],
            Op::SpatialSoftmax { input },
        )
    }

    // -- channel reductions ----------------------------------------------------

    pub fn channel_max(&mut self, input: Var) -> Var {
        let (b, c, h, w) = self.value(input).dims4();
        let (out, argmax) = k::channel_max_forward(self.value(input).data(), (b, c, h, w));
        self.push_op(
            Tensor::new(vec![b, 1, h, w], out),
            &[input],
            Op::ChannelMax { input, argmax },
        )
    }

    pub fn channel_avg(&mut self, input: Var) -> Var {
        let (b, c, h, w) = self.value(input).dims4();
        let out = k::channel_avg_forward(self.value(input).data(), (b, c, h, w));
        self.push_op(
            Tensor::new(vec![b, 1, h, w], out),
            &[input],
            Op::ChannelAvg { input },
        )
    }

    // -- elementwise -----------------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(Elem, Elem) -> Elem) -> Tensor {
        let ta = self.value(a);
        let tb = self.value(b);
        assert!(
            ta.same_shape(tb),
            "{name}: shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, "add", |x, y| x + y);
        self.push_op(t, &[a, b], Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, "sub", |x, y| x - y);
        self.push_op(t, &[a, b], Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, "mul", |x, y| x * y);
        self.push_op(t, &[a, b], Op::Mul { a, b })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, "div", |x, y| x / y);
        self.push_op(t, &[a, b], Op::Div { a, b })
    }

    /// Concatenates along the channel axis; batch and spatial dims must agree.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "concat_channels: no inputs");
        let (b, _, h, w) = self.value(inputs[0]).dims4();
        let mut c_total = 0;
        for &v in inputs {
            let (bi, ci, hi, wi) = self.value(v).dims4();
            assert!(
                bi == b && hi == h && wi == w,
                "concat_channels: incompatible shape {:?} vs [B={b},*,H={h},W={w}]",
                self.value(v).shape()
            );
            c_total += ci;
        }
        let plane = h * w;
        let mut data = vec![0.0 as Elem; b * c_total * plane];
        for bi in 0..b {
            let mut c_off = 0;
            for &v in inputs {
                let ci = self.value(v).shape()[1];
                let src = &self.value(v).data()[bi * ci * plane..][..ci * plane];
                data[(bi * c_total + c_off) * plane..][..ci * plane].copy_from_slice(src);
                c_off += ci;
            }
        }
        self.push_op(
            Tensor::new(vec![b, c_total, h, w], data),
            inputs,
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
        )
    }

    /// Broadcast-multiplies `[B,C,H,W]` by a single-channel gate `[B,1,H,W]`.
    pub fn gate_mul(&mut self, input: Var, gate: Var) -> Var {
        let (b, c, h, w) = self.value(input).dims4();
        let (gb, gc, gh, gw) = self.value(gate).dims4();
        assert!(
            gb == b && gc == 1 && gh == h && gw == w,
            "gate_mul: gate shape {:?} does not match input {:?}",
            self.value(gate).shape(),
            self.value(input).shape()
        );
        let plane = h * w;
        let mut data = vec![0.0 as Elem; b * c * plane];
        {
            let x = self.value(input).data();
            let g = self.value(gate).data();
            for bi in 0..b {
                let grow = &g[bi * plane..][..plane];
                for ci in 0..c {
                    let xr = &x[(bi * c + ci) * plane..][..plane];
                    let or = &mut data[(bi * c + ci) * plane..][..plane];
                    for i in 0..plane {
                        or[i] = xr[i] * grow[i];
                    }
                }
            }
        }
        self.push_op(
            Tensor::new(vec![b, c, h, w], data),
            &[input, gate],
            Op::GateMul { input, gate },
        )
    }

    // -- reductions --------------------------------------------------------------

    /// Sums over H and W: `[B,C,H,W]` → `[B,C]`.
    pub fn sum_spatial(&mut self, input: Var) -> Var {
        let (b, c, h, w) = self.value(input).dims4();
        let plane = h * w;
        let x = self.value(input).data();
        let mut data = vec![0.0 as Elem; b * c];
        for i in 0..b * c {
            let mut s = 0.0;
            for &v in &x[i * plane..][..plane] {
                s += v;
            }
            data[i] = s;
        }
        self.push_op(
            Tensor::new(vec![b, c], data),
            &[input],
            Op::SumSpatial { input },
        )
    }

    pub fn mean_all(&mut self, input: Var) -> Var {
        let n = self.value(input).numel();
        let s: Elem = self.value(input).data().iter().sum();
        self.push_op(
            Tensor::scalar(s / n as Elem),
            &[input],
            Op::MeanAll { input },
        )
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s: Elem = self.value(input).data().iter().sum();
        self.push_op(Tensor::scalar(s), &[input], Op::SumAll { input })
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, input: Var, mul: Elem, add: Elem) -> Var {
        let t = self.value(input).map(|x| mul * x + add);
        self.push_op(t, &[input], Op::Affine { input, mul })
    }

    /// Mean stable binary cross-entropy between logits and a constant target.
    pub fn bce_with_logits_mean(&mut self, logits: Var, target: Tensor) -> Var {
        let lt = self.value(logits);
        assert!(
            lt.same_shape(&target),
            "bce_with_logits: logits shape {:?} vs target {:?}",
            lt.shape(),
            target.shape()
        );
        let n = lt.numel();
        let mut s = 0.0;
        for (&z, &y) in lt.data().iter().zip(target.data()) {
            s += k::bce_logit(z, y);
        }
        self.push_op(
            Tensor::scalar(s / n as Elem),
            &[logits],
            Op::BceWithLogits { logits, target },
        )
    }

    // -- backward ------------------------------------------------------------

    /// Reverse sweep from a scalar loss. Populates gradients for every
    /// `requires_grad` node reachable from `loss`; repeated subgraph use
    /// accumulates additively. A graph can only be swept once.
    pub fn backward(&mut self, loss: Var) {
        assert!(
            !self.backward_done,
            "backward called twice on the same graph; build a fresh graph per pass"
        );
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.value(loss).shape()
        );
        self.backward_done = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            self.nodes[i].grad = Some(g);
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        // Allocates (or reuses) the gradient accumulator for `v`.
        macro_rules! acc {
            ($v:expr) => {{
                let shape = self.nodes[$v.0].value.shape().to_vec();
                grads[$v.0]
                    .get_or_insert_with(|| Tensor::zeros(shape))
                    .data_mut()
            }};
        }
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
            } => {
                let dims = self.value(*input).dims4();
                let ws = self.value(*weight).shape();
                let (cout, kk) = (ws[0], ws[2]);
                if wants(*input) {
                    k::conv2d_backward_input(
                        g.data(),
                        dims,
                        self.value(*weight).data(),
                        (cout, kk),
                        *pad,
                        acc!(*input),
                    );
                }
                if wants(*weight) || wants(*bias) {
                    let mut dw = vec![0.0 as Elem; self.value(*weight).numel()];
                    let mut db = vec![0.0 as Elem; cout];
                    k::conv2d_backward_params(
                        g.data(),
                        self.value(*input).data(),
                        dims,
                        (cout, kk),
                        *pad,
                        &mut dw,
                        &mut db,
                    );
                    if wants(*weight) {
                        let gw = acc!(*weight);
                        for (a, b) in gw.iter_mut().zip(&dw) {
                            *a += b;
                        }
                    }
                    if wants(*bias) {
                        let gb = acc!(*bias);
                        for (a, b) in gb.iter_mut().zip(&db) {
                            *a += b;
                        }
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if wants(*input) {
                    k::max_pool2_backward(g.data(), argmax, acc!(*input));
                }
            }
            Op::AvgPool2 { input } => {
                if wants(*input) {
                    let dims = self.value(*input).dims4();
                    k::avg_pool2_backward(g.data(), dims, acc!(*input));
                }
            }
            Op::Upsample2 { input } => {
                if wants(*input) {
                    let dims = self.value(*input).dims4();
                    k::upsample2_backward(g.data(), dims, acc!(*input));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => {
                let dims = self.value(*input).dims4();
                let c = dims.1;
                let mut dx = vec![0.0 as Elem; self.value(*input).numel()];
                let mut dgamma = vec![0.0 as Elem; c];
                let mut dbeta = vec![0.0 as Elem; c];
                k::batch_norm_backward(
                    g.data(),
                    self.value(*input).data(),
                    dims,
                    self.value(*gamma).data(),
                    mean,
                    inv_std,
                    *train,
                    &mut dx,
                    &mut dgamma,
                    &mut dbeta,
                );
                if wants(*input) {
                    let gi = acc!(*input);
                    for (a, b) in gi.iter_mut().zip(&dx) {
                        *a += b;
                    }
                }
                if wants(*gamma) {
                    let gg = acc!(*gamma);
                    for (a, b) in gg.iter_mut().zip(&dgamma) {
                        *a += b;
                    }
                }
                if wants(*beta) {
                    let gb = acc!(*beta);
                    for (a, b) in gb.iter_mut().zip(&dbeta) {
                        *a += b;
                    }
                }
            }
            Op::Relu { input } => {
                if wants(*input) {
                    let y = self.nodes[i].value.data();
                    let gi = acc!(*input);
                    for (j, &dy) in g.data().iter().enumerate() {
                        if y[j] > 0.0 {
                            gi[j] += dy;
                        }
                    }
                }
            }
            Op::Sigmoid { input } => {
                if wants(*input) {
                    let y = self.nodes[i].value.data();
                    let gi = acc!(*input);
                    for (j, &dy) in g.data().iter().enumerate() {
                        gi[j] += dy * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::SpatialSoftmax { input } => {
                if wants(*input) {
                    let (b, _, h, w) = self.value(*input).dims4();
                    k::spatial_softmax_backward(
                        g.data(),
                        self.nodes[i].value.data(),
                        (b, h, w),
                        acc!(*input),
                    );
                }
            }
            Op::ChannelMax { input, argmax } => {
                if wants(*input) {
                    let dims = self.value(*input).dims4();
                    k::channel_max_backward(g.data(), argmax, dims, acc!(*input));
                }
            }
            Op::ChannelAvg { input } => {
                if wants(*input) {
                    let dims = self.value(*input).dims4();
                    k::channel_avg_backward(g.data(), dims, acc!(*input));
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if wants(*v) {
                        let gv = acc!(*v);
                        for (x, dy) in gv.iter_mut().zip(g.data()) {
                            *x += dy;
                        }
                    }
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    let gv = acc!(*a);
                    for (x, dy) in gv.iter_mut().zip(g.data()) {
                        *x += dy;
                    }
                }
                if wants(*b) {
                    let gv = acc!(*b);
                    for (x, dy) in gv.iter_mut().zip(g.data()) {
                        *x -= dy;
                    }
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let bd = self.value(*b).data();
                    let gv = acc!(*a);
                    for j in 0..gv.len() {
                        gv[j] += g.data()[j] * bd[j];
                    }
                }
                if wants(*b) {
                    let ad = self.value(*a).data();
                    let gv = acc!(*b);
                    for j in 0..gv.len() {
                        gv[j] += g.data()[j] * ad[j];
                    }
                }
            }
            Op::Div { a, b } => {
                let bd = self.value(*b).data();
                if wants(*a) {
                    let gv = acc!(*a);
                    for j in 0..gv.len() {
                        gv[j] += g.data()[j] / bd[j];
                    }
                }
                if wants(*b) {
                    let y = self.nodes[i].value.data();
                    let gv = acc!(*b);
                    for j in 0..gv.len() {
                        gv[j] -= g.data()[j] * y[j] / bd[j];
                    }
                }
            }
            Op::ConcatChannels { inputs } => {
                let (b, c_total, h, w) = self.nodes[i].value.dims4();
                let plane = h * w;
                let mut c_off = 0;
                for &v in inputs {
                    let ci = self.value(v).shape()[1];
                    if wants(v) {
                        let gv = acc!(v);
                        for bi in 0..b {
                            let src = &g.data()[(bi * c_total + c_off) * plane..][..ci * plane];
                            let dst = &mut gv[bi * ci * plane..][..ci * plane];
                            for (x, dy) in dst.iter_mut().zip(src) {
                                *x += dy;
                            }
                        }
                    }
                    c_off += ci;
                }
            }
            Op::GateMul { input, gate } => {
                let (b, c, h, w) = self.value(*input).dims4();
                let plane = h * w;
                if wants(*input) {
                    let gd = self.value(*gate).data();
                    let gi = acc!(*input);
                    for bi in 0..b {
                        let grow = &gd[bi * plane..][..plane];
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            for j in 0..plane {
                                gi[base + j] += g.data()[base + j] * grow[j];
                            }
                        }
                    }
                }
                if wants(*gate) {
                    let xd = self.value(*input).data();
                    let gg = acc!(*gate);
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            let grow = &mut gg[bi * plane..][..plane];
                            for j in 0..plane {
                                grow[j] += g.data()[base + j] * xd[base + j];
                            }
                        }
                    }
                }
            }
            Op::SumSpatial { input } => {
                if wants(*input) {
                    let (b, c, h, w) = self.value(*input).dims4();
                    let plane = h * w;
                    let gi = acc!(*input);
                    for i2 in 0..b * c {
                        let dy = g.data()[i2];
                        for v in gi[i2 * plane..][..plane].iter_mut() {
                            *v += dy;
                        }
                    }
                }
            }
            Op::MeanAll { input } => {
                if wants(*input) {
                    let n = self.value(*input).numel();
                    let dy = g.item() / n as Elem;
                    let gi = acc!(*input);
                    for v in gi.iter_mut() {
                        *v += dy;
                    }
                }
            }
            Op::SumAll { input } => {
                if wants(*input) {
                    let dy = g.item();
                    let gi = acc!(*input);
                    for v in gi.iter_mut() {
                        *v += dy;
                    }
                }
            }
            Op::Affine { input, mul, .. } => {
                if wants(*input) {
                    let gi = acc!(*input);
                    for (x, dy) in gi.iter_mut().zip(g.data()) {
                        *x += mul * dy;
                    }
                }
            }
            Op::BceWithLogits { logits, target } => {
                if wants(*logits) {
                    let n = self.value(*logits).numel() as Elem;
                    let dy = g.item();
                    let z = self.value(*logits).data();
                    let gl = acc!(*logits);
                    for j in 0..gl.len() {
                        gl[j] += dy * (k::sigmoid(z[j]) - target.data()[j]) / n;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(b: usize, c: usize, h: usize, w: usize, data: Vec<Elem>) -> Tensor {
        Tensor::new(vec![b, c, h, w], data)
    }

    #[test]
    fn conv_all_ones_counts_window_overlap() {
        let mut g = Graph::new();
        let x = g.constant(t4(1, 1, 3, 3, vec![1.0; 9]));
        let w = g.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]), true);
        let b = g.leaf(Tensor::new(vec![1], vec![0.0]), true);
        let out = g.conv2d(x, w, b, 1);
        let v = g.value(out).data();
        assert_eq!(v[4], 9.0); // center sees the full window
        assert_eq!(v[0], 4.0); // corner sees a 2x2 overlap
        assert_eq!(v[1], 6.0); // edge sees 2x3
    }

    #[test]
    fn conv_identity_1x1_is_bit_exact() {
        let mut g = Graph::new();
        let data: Vec<Elem> = (0..18).map(|i| (i as Elem) * 0.37 - 2.1).collect();
        let x = g.constant(t4(1, 2, 3, 3, data.clone()));
        // Identity: each output channel copies its input channel.
        let w = g.constant(Tensor::new(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::new(vec![2], vec![0.0, 0.0]));
        let out = g.conv2d(x, w, b, 0);
        assert_eq!(g.value(out).data(), &data[..]);
    }

    #[test]
    #[should_panic(expected = "channels but weight expects")]
    fn conv_channel_mismatch_names_dimension() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros(vec![2, 2, 3, 3]));
        let b = g.constant(Tensor::zeros(vec![2]));
        let _ = g.conv2d(x, w, b, 1);
    }

    #[test]
    fn pool_single_window() {
        let mut g = Graph::new();
        let x = g.constant(t4(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mx = g.max_pool2(x);
        assert_eq!(g.value(mx).data(), &[4.0]);
        let av = g.avg_pool2(x);
        assert_eq!(g.value(av).data(), &[2.5]);
    }

    #[test]
    fn max_pool_of_constant_is_constant_and_ties_go_first() {
        let mut g = Graph::new();
        let x = g.leaf(t4(1, 1, 2, 2, vec![7.0; 4]), true);
        let mx = g.max_pool2(x);
        assert_eq!(g.value(mx).data(), &[7.0]);
        let s = g.sum_all(mx);
        g.backward(s);
        // Tie broken by first element in row-major order.
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "odd spatial dims")]
    fn pool_rejects_odd_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 1, 3, 3]));
        let _ = g.max_pool2(x);
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let mut g = Graph::new();
        let c = g.constant(t4(1, 1, 4, 4, vec![3.25; 16]));
        let up = g.upsample_bilinear2(c);
        assert!(g.value(up).data().iter().all(|&v| (v - 3.25).abs() < 1e-12));
        let p = g.constant(t4(1, 1, 1, 1, vec![5.0]));
        let up = g.upsample_bilinear2(p);
        assert_eq!(g.value(up).shape(), &[1, 1, 2, 2]);
        assert!(g.value(up).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_normalizes_and_shifts() {
        let mut g = Graph::new();
        let data: Vec<Elem> = (0..4 * 3 * 4 * 4).map(|i| ((i * 37) % 17) as Elem - 5.0).collect();
        let x = g.constant(t4(4, 3, 4, 4, data));
        let gamma = g.constant(Tensor::filled(vec![3], 1.0));
        let beta = g.constant(Tensor::zeros(vec![3]));
        let (out, updated) = g.batch_norm(x, gamma, beta, &[0.0; 3], &[1.0; 3], true);
        let v = g.value(out);
        let plane = 16;
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..4 {
                vals.extend_from_slice(&v.data()[(b * 3 + c) * plane..][..plane]);
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().map(|&x| x as f64).sum::<f64>() / n;
            let var: f64 = vals.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
        }
        // Running stats moved toward the batch statistics.
        let (rm, rv) = updated.unwrap();
        assert!(rm.iter().any(|&m| m != 0.0));
        assert!(rv.iter().all(|&v| v > 0.0));

        // gamma=2, beta=3 rescales the normalized output.
        let mut g2 = Graph::new();
        let x = g2.constant(t4(2, 1, 4, 4, (0..32).map(|i| i as Elem).collect()));
        let gamma = g2.constant(Tensor::filled(vec![1], 2.0));
        let beta = g2.constant(Tensor::filled(vec![1], 3.0));
        let (out, _) = g2.batch_norm(x, gamma, beta, &[0.0], &[1.0], true);
        let v = g2.value(out);
        let n = v.numel() as f64;
        let mean: f64 = v.data().iter().map(|&x| x as f64).sum::<f64>() / n;
        let var: f64 = v.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!((mean - 3.0).abs() < 1e-6);
        assert!((var.sqrt() - 2.0).abs() < 1e-3);
    }

    #[test]
    #[should_panic(expected = "larger batch")]
    fn batchnorm_train_rejects_single_element_per_channel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3, 1, 1]));
        let gamma = g.constant(Tensor::filled(vec![3], 1.0));
        let beta = g.constant(Tensor::zeros(vec![3]));
        let _ = g.batch_norm(x, gamma, beta, &[0.0; 3], &[1.0; 3], true);
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut g = Graph::new();
        let x = g.constant(t4(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let gamma = g.constant(Tensor::filled(vec![1], 1.0));
        let beta = g.constant(Tensor::zeros(vec![1]));
        let (out, updated) = g.batch_norm(x, gamma, beta, &[2.5], &[4.0], false);
        assert!(updated.is_none());
        let expect: Vec<Elem> = [1.0 as Elem, 2.0, 3.0, 4.0]
            .iter()
            .map(|&v| (v - 2.5) / (4.0 as Elem + crate::kernels::BN_EPS).sqrt())
            .collect();
        for (a, e) in g.value(out).data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn activation_values() {
        let mut g = Graph::new();
        let x = g.constant(t4(1, 1, 1, 3, vec![-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[1], 0.5);
        // Numerically stable far into saturation.
        let far = g.constant(t4(1, 1, 1, 2, vec![-500.0, 500.0]));
        let s = g.sigmoid(far);
        assert!(g.value(s).data()[0] >= 0.0 && g.value(s).data()[1] <= 1.0);
        assert!(g.value(s).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spatial_softmax_uniform_saturation_and_shift_invariance() {
        let mut g = Graph::new();
        let u = g.constant(t4(1, 1, 2, 2, vec![0.7; 4]));
        let s = g.spatial_softmax(u);
        assert!(g.value(s).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut spiked = vec![0.0 as Elem; 16];
        spiked[5] = 1000.0;
        let x = g.constant(t4(1, 1, 4, 4, spiked));
        let s = g.spatial_softmax(x);
        assert!((g.value(s).data()[5] - 1.0).abs() < 1e-12);

        // sum to 1 and shift invariance
        let vals: Vec<Elem> = (0..16).map(|i| ((i * 7) % 5) as Elem * 0.3 - 0.4).collect();
        let x1 = g.constant(t4(1, 1, 4, 4, vals.clone()));
        let s1 = g.spatial_softmax(x1);
        let sum: f64 = g.value(s1).data().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let shifted: Vec<Elem> = vals.iter().map(|&v| v + 11.5).collect();
        let x2 = g.constant(t4(1, 1, 4, 4, shifted));
        let s2 = g.spatial_softmax(x2);
        for (a, b) in g.value(s1).data().iter().zip(g.value(s2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "single-channel")]
    fn spatial_softmax_rejects_multichannel() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let _ = g.spatial_softmax(x);
    }

    #[test]
    fn channel_reduce_values() {
        let mut g = Graph::new();
        // One position, channels [1, 5, 3].
        let x = g.constant(t4(1, 3, 1, 1, vec![1.0, 5.0, 3.0]));
        let mx = g.channel_max(x);
        assert_eq!(g.value(mx).data(), &[5.0]);
        let av = g.channel_avg(x);
        assert_eq!(g.value(av).data(), &[3.0]);
        // C=1: both reductions are the identity.
        let one = g.constant(t4(1, 1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        let mx = g.channel_max(one);
        let av = g.channel_avg(one);
        assert_eq!(g.value(mx).data(), g.value(one).data());
        assert_eq!(g.value(av).data(), g.value(one).data());
    }

    #[test]
    fn elementwise_and_concat() {
        let mut g = Graph::new();
        let a = g.constant(t4(1, 1, 2, 2, vec![1.0, -2.0, 3.5, 0.0]));
        let d = g.sub(a, a);
        assert!(g.value(d).data().iter().all(|&v| v == 0.0));
        let c2 = g.constant(Tensor::zeros(vec![1, 2, 2, 2]));
        let c3 = g.constant(Tensor::zeros(vec![1, 3, 2, 2]));
        let cat = g.concat_channels(&[c2, c3]);
        assert_eq!(g.value(cat).shape(), &[1, 5, 2, 2]);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn elementwise_shape_mismatch_panics() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![1, 1, 2, 2]));
        let b = g.constant(Tensor::zeros(vec![1, 1, 2, 4]));
        let _ = g.add(a, b);
    }

    #[test]
    fn backward_shared_leaf_accumulates() {
        // y = w*x + w*x: dL/dw = 2*sum(x).
        let mut g = Graph::new();
        let w = g.leaf(Tensor::new(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]), true);
        let x = g.constant(Tensor::new(vec![1, 1, 1, 3], vec![0.5, 1.5, -1.0]));
        let p1 = g.mul(w, x);
        let p2 = g.mul(w, x);
        let y = g.add(p1, p2);
        let loss = g.sum_all(y);
        g.backward(loss);
        assert_eq!(g.grad(w).unwrap().data(), &[1.0, 3.0, -2.0]);
    }

    #[test]
    fn gradient_accumulation_doubles_shared_subgraph() {
        // f(w) = g(w) + g(w) with g a small op chain: grad must be exactly 2x.
        let chain = |g: &mut Graph, w: Var| {
            let r = g.relu(w);
            let s = g.affine(r, 1.3, 0.2);
            g.sum_all(s)
        };
        let data = Tensor::new(vec![1, 1, 1, 4], vec![0.3, 1.2, 2.0, 0.7]);
        let mut g1 = Graph::new();
        let w1 = g1.leaf(data.clone(), true);
        let l1 = chain(&mut g1, w1);
        g1.backward(l1);
        let single = g1.grad(w1).unwrap().clone();

        let mut g2 = Graph::new();
        let w2 = g2.leaf(data, true);
        let a = chain(&mut g2, w2);
        let b = chain(&mut g2, w2);
        let l2 = g2.add(a, b);
        g2.backward(l2);
        for (s, d) in single.data().iter().zip(g2.grad(w2).unwrap().data()) {
            assert_eq!(2.0 * s, *d);
        }
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]), true);
        g.backward(x);
    }

    #[test]
    #[should_panic(expected = "backward called twice")]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.0), true);
        let y = g.affine(x, 2.0, 0.0);
        g.backward(y);
        g.backward(y);
    }

    #[test]
    fn gate_mul_broadcasts_across_channels() {
        let mut g = Graph::new();
        let x = g.constant(t4(1, 2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let gate = g.constant(t4(1, 1, 1, 2, vec![0.5, 2.0]));
        let out = g.gate_mul(x, gate);
        assert_eq!(g.value(out).data(), &[0.5, 4.0, 1.5, 8.0]);
    }
}
