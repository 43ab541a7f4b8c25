use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        training: bool,
    },
    Relu {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    RowAffine {
        input: Var,
        scale: Vec<f32>,
    },
    SoftmaxT {
        input: Var,
        tau: f32,
    },
    Sum {
        input: Var,
    },
    /// Scalar whose gradient w.r.t. `input` was computed alongside its value.
    FusedScalar {
        input: Var,
        grad: Vec<f32>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Wengert list of executed ops. Values live in the tape; callers hold [`Var`]s.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    backward_done: bool,
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    t.ensure_finite(op)
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

    /// Drops every recorded node and gradient so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Autodiff(format!("var {} not on this tape", v.0)))
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Registers a leaf. It participates in backward iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.detach(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = if t.requires_grad() { t.detach() } else { t };
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass w.r.t. a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        p: Conv2dParams,
    ) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(weight)?;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        if x.rank() != 4 || w.rank() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?} and weight {:?} must be rank 4", x.shape(), w.shape()),
            ));
        }
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, cg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        if p.groups == 0 || p.stride == 0 {
            return Err(Error::InvalidArgument("conv2d groups and stride must be positive".into()));
        }
        if c % p.groups != 0 || o % p.groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("channels in={c} out={o} not divisible by groups={}", p.groups),
            ));
        }
        if cg != c / p.groups {
            return Err(Error::shape(
                "conv2d",
                format!("weight expects {cg} channels per group, input provides {}", c / p.groups),
            ));
        }
        if h + 2 * p.padding < kh || wd + 2 * p.padding < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {})", p.padding),
            ));
        }
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (wd + 2 * p.padding - kw) / p.stride + 1;
        if let Some(b) = bias {
            self.check_var(b)?;
            let bl = self.nodes[b.0].value.numel();
            if bl != o {
                return Err(Error::shape("conv2d", format!("bias has {bl} entries, expected {o}")));
            }
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            stride: p.stride,
            pad: p.padding,
            groups: p.groups,
            oh,
            ow,
        };
        let mut out = vec![0.0; n * o * oh * ow];
        kernels::conv2d_forward(
            &geom,
            x.data(),
            w.data(),
            bias.map(|b| self.nodes[b.0].value.data()),
            &mut out,
        );
        let out = Tensor::new(vec![n, o, oh, ow], out)?;
        check_finite(&out, "conv2d")?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Batch normalization over `[N, C, ...]`. In training mode the batch
    /// statistics normalize and `stats` is updated by EMA; otherwise `stats`
    /// normalizes.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats,
        training: bool,
    ) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(gamma)?;
        self.check_var(beta)?;
        let x = &self.nodes[input.0].value;
        if x.rank() < 2 {
            return Err(Error::shape("batch_norm", format!("input {:?} needs rank >= 2", x.shape())));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let inner: usize = x.shape()[2..].iter().product();
        let gl = self.nodes[gamma.0].value.numel();
        let bl = self.nodes[beta.0].value.numel();
        if gl != c || bl != c || stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                format!("{c} channels but gamma {gl}, beta {bl}, stats {}", stats.mean.len()),
            ));
        }
        let m = n * inner;
        let xd = x.data();
        let (mean, var): (Vec<f32>, Vec<f32>) = if training {
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * inner;
                    s += xd[off..off + inner].iter().map(|&v| v as f64).sum::<f64>();
                }
                let mu = s / m as f64;
                let mut s2 = 0.0f64;
                for b in 0..n {
                    let off = (b * c + ch) * inner;
                    s2 += xd[off..off + inner]
                        .iter()
                        .map(|&v| (v as f64 - mu).powi(2))
                        .sum::<f64>();
                }
                let biased = s2 / m as f64;
                mean[ch] = mu as f32;
                var[ch] = biased as f32;
                let unbiased = if m > 1 { s2 / (m - 1) as f64 } else { biased };
                stats.mean[ch] =
                    (1.0 - stats.momentum) * stats.mean[ch] + stats.momentum * mu as f32;
                stats.var[ch] =
                    (1.0 - stats.momentum) * stats.var[ch] + stats.momentum * unbiased as f32;
            }
            (mean, var)
        } else {
            (stats.mean.clone(), stats.var.clone())
        };
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + stats.eps).sqrt()).collect();
        let g = self.nodes[gamma.0].value.data();
        let bt = self.nodes[beta.0].value.data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut out = vec![0.0f32; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        check_finite(&out, "batch_norm")?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let x = &self.nodes[input.0].value;
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v.max(0.0)).collect(),
        )?;
        check_finite(&out, "relu")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Relu { input }, rg))
    }

    /// `input[N, in] · weight[in, out] + bias[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        self.check_var(input)?;
        self.check_var(weight)?;
        let x = &self.nodes[input.0].value;
        let w = &self.nodes[weight.0].value;
        if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
            return Err(Error::shape(
                "linear",
                format!("cannot multiply {:?} by {:?}", x.shape(), w.shape()),
            ));
        }
        let (n, k, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        let mut out = vec![0.0; n * m];
        if let Some(b) = bias {
            self.check_var(b)?;
            let bv = self.nodes[b.0].value.data();
            if bv.len() != m {
                return Err(Error::shape("linear", format!("bias has {} entries, expected {m}", bv.len())));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        kernels::gemm(n, k, m, x.data(), false, w.data(), false, 1.0, &mut out);
        let out = Tensor::new(vec![n, m], out)?;
        check_finite(&out, "linear")?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    /// `[N, C, ...] -> [N, C]` mean over all trailing axes.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let x = &self.nodes[input.0].value;
        if x.rank() < 3 {
            return Err(Error::shape("global_avg_pool", format!("input {:?} needs rank >= 3", x.shape())));
        }
        let (n, c) = (x.shape()[0], x.shape()[1]);
        let inner: usize = x.shape()[2..].iter().product();
        let out: Vec<f32> = x
            .data()
            .chunks(inner)
            .map(|s| (s.iter().map(|&v| v as f64).sum::<f64>() / inner as f64) as f32)
            .collect();
        let out = Tensor::new(vec![n, c], out)?;
        check_finite(&out, "global_avg_pool")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool { input }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect(),
        )?;
        check_finite(&out, "add")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let out = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect(),
        )?;
        check_finite(&out, "mul")?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    /// `out = x * scale + shift` with one `(scale, shift)` pair per row of the
    /// last axis. Both coefficients are constants; only `x` receives gradient.
    pub fn row_affine(&mut self, input: Var, scale: Vec<f32>, shift: Vec<f32>) -> Result<Var> {
        self.check_var(input)?;
        let x = &self.nodes[input.0].value;
        let row = *x.shape().last().unwrap_or(&1);
        let rows = x.numel().checked_div(row).unwrap_or(0);
        if scale.len() != rows || shift.len() != rows {
            return Err(Error::shape(
                "row_affine",
                format!("{rows} rows but {} scales / {} shifts", scale.len(), shift.len()),
            ));
        }
        let mut out = x.data().to_vec();
        for (r, chunk) in out.chunks_mut(row.max(1)).enumerate() {
            for v in chunk {
                *v = *v * scale[r] + shift[r];
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        check_finite(&out, "row_affine")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::RowAffine { input, scale }, rg))
    }

    /// Row-wise `softmax(x / tau)` over the last axis of a `[N, K]` tensor.
    pub fn softmax_t(&mut self, input: Var, tau: f32) -> Result<Var> {
        self.check_var(input)?;
        let x = &self.nodes[input.0].value;
        if x.rank() != 2 {
            return Err(Error::shape("softmax_t", format!("expected [N, K], got {:?}", x.shape())));
        }
        let k = x.shape()[1];
        let mut out = Vec::with_capacity(x.numel());
        for r in 0..x.shape()[0] {
            out.extend(softmax_row(&x.data()[r * k..(r + 1) * k], tau)?);
        }
        let out = Tensor::new(x.shape().to_vec(), out)?;
        check_finite(&out, "softmax_t")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::SoftmaxT { input, tau }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check_var(input)?;
        let s = self.nodes[input.0]
            .value
            .data()
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>() as f32;
        let out = Tensor::scalar(s);
        check_finite(&out, "sum")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Sum { input }, rg))
    }

    /// Records a scalar whose gradient w.r.t. `input` is supplied by the caller.
    /// Used by fused loss functions that are cheaper to differentiate in closed form.
    pub fn fused_scalar(&mut self, input: Var, value: f32, grad: Vec<f32>) -> Result<Var> {
        self.check_var(input)?;
        let n = self.nodes[input.0].value.numel();
        if grad.len() != n {
            return Err(Error::shape("fused_scalar", format!("gradient has {} entries, input {n}", grad.len())));
        }
        let out = Tensor::scalar(value);
        check_finite(&out, "fused_scalar")?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::FusedScalar { input, grad }, rg))
    }

    /// Reverse pass from a scalar `loss`. Fills gradients of every leaf that
    /// requires grad (zeros for leaves the loss does not depend on).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_var(loss)?;
        if self.backward_done {
            return Err(Error::Autodiff("backward called twice without reset".into()));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::Autodiff("loss is detached from every trainable leaf".into()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(dy);
                continue;
            }
            self.backprop_node(i, &dy);
        }
        for (node, g) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if node.requires_grad && matches!(node.op, Op::Leaf) && g.is_none() {
                *g = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&[Node], &mut [f32])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(&self.nodes, g);
    }

    fn backprop_node(&mut self, i: usize, dy: &[f32]) {
        // Temporarily move the op out so `self` can be borrowed mutably for accumulation.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let (input, weight) = (*input, *weight);
                let (wi, ww) = (self.wants(input), self.wants(weight));
                let bias_rg = bias.filter(|b| self.wants(*b));
                let mut di = wi.then(|| vec![0.0; self.nodes[input.0].value.numel()]);
                let mut dw = ww.then(|| vec![0.0; self.nodes[weight.0].value.numel()]);
                let mut db = bias_rg.map(|_| vec![0.0; geom.o]);
                kernels::conv2d_backward(
                    geom,
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    dy,
                    di.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = di {
                    self.accumulate(input, |_, g| add_into(g, &d));
                }
                if let Some(d) = dw {
                    self.accumulate(weight, |_, g| add_into(g, &d));
                }
                if let (Some(b), Some(d)) = (bias_rg, db) {
                    self.accumulate(b, |_, g| add_into(g, &d));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            } => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                let (n, c) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let m = (n * inner) as f32;
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * inner;
                        for j in off..off + inner {
                            dbeta[ch] += dy[j];
                            dgamma[ch] += dy[j] * xhat[j];
                        }
                    }
                }
                if self.wants(*input) {
                    let gv = self.nodes[gamma.0].value.data().to_vec();
                    let mut dx = vec![0.0f32; dy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * inner;
                            let k = gv[ch] * inv_std[ch];
                            for j in off..off + inner {
                                dx[j] = if *training {
                                    k * (dy[j] - dbeta[ch] / m - xhat[j] * dgamma[ch] / m)
                                } else {
                                    k * dy[j]
                                };
                            }
                        }
                    }
                    self.accumulate(*input, |_, g| add_into(g, &dx));
                }
                self.accumulate(*gamma, |_, g| add_into(g, &dgamma));
                self.accumulate(*beta, |_, g| add_into(g, &dbeta));
            }
            Op::Relu { input } => {
                self.accumulate(*input, |nodes, g| {
                    let x = nodes[input.0].value.data();
                    for ((gi, &xi), &d) in g.iter_mut().zip(x).zip(dy) {
                        if xi > 0.0 {
                            *gi += d;
                        }
                    }
                });
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.nodes[input.0].value.shape().to_vec();
                let (n, k) = (xs[0], xs[1]);
                let m = self.nodes[weight.0].value.shape()[1];
                self.accumulate(*input, |nodes, g| {
                    kernels::gemm(n, m, k, dy, false, nodes[weight.0].value.data(), true, 1.0, g);
                });
                self.accumulate(*weight, |nodes, g| {
                    kernels::gemm(k, n, m, nodes[input.0].value.data(), true, dy, false, 1.0, g);
                });
                if let Some(b) = bias {
                    self.accumulate(*b, |_, g| {
                        for row in dy.chunks(m) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::GlobalAvgPool { input } => {
                let numel = self.nodes[input.0].value.numel();
                let inner = numel / dy.len().max(1);
                self.accumulate(*input, |_, g| {
                    for (chunk, &d) in g.chunks_mut(inner).zip(dy) {
                        let v = d / inner as f32;
                        for gi in chunk {
                            *gi += v;
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                self.accumulate(*a, |_, g| add_into(g, dy));
                self.accumulate(*b, |_, g| add_into(g, dy));
            }
            Op::Mul { a, b } => {
                self.accumulate(*a, |nodes, g| {
                    for ((gi, &bv), &d) in g.iter_mut().zip(nodes[b.0].value.data()).zip(dy) {
                        *gi += d * bv;
                    }
                });
                self.accumulate(*b, |nodes, g| {
                    for ((gi, &av), &d) in g.iter_mut().zip(nodes[a.0].value.data()).zip(dy) {
                        *gi += d * av;
                    }
                });
            }
            Op::RowAffine { input, scale } => {
                let row = *self.nodes[input.0].value.shape().last().unwrap_or(&1);
                self.accumulate(*input, |_, g| {
                    for (r, (gc, dc)) in g.chunks_mut(row).zip(dy.chunks(row)).enumerate() {
                        for (gi, &d) in gc.iter_mut().zip(dc) {
                            *gi += d * scale[r];
                        }
                    }
                });
            }
            Op::SoftmaxT { input, tau } => {
                let y = self.nodes[i].value.data().to_vec();
                let k = self.nodes[i].value.shape()[1];
                self.accumulate(*input, |_, g| {
                    for ((gc, yc), dc) in g.chunks_mut(k).zip(y.chunks(k)).zip(dy.chunks(k)) {
                        let dot: f32 = yc.iter().zip(dc).map(|(a, b)| a * b).sum();
                        for ((gi, &yi), &d) in gc.iter_mut().zip(yc).zip(dc) {
                            *gi += yi * (d - dot) / tau;
                        }
                    }
                });
            }
            Op::Sum { input } => {
                let d = dy[0];
                self.accumulate(*input, |_, g| {
                    for gi in g {
                        *gi += d;
                    }
                });
            }
            Op::FusedScalar { input, grad } => {
                let d = dy[0];
                self.accumulate(*input, |_, g| {
                    for (gi, &v) in g.iter_mut().zip(grad) {
                        *gi += d * v;
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `softmax(x / tau)` for one row, max-subtracted.
pub fn softmax_row(x: &[f32], tau: f32) -> Result<Vec<f32>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f64> = x.iter().map(|&v| (((v - max) / tau) as f64).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.iter().map(|v| (v / s) as f32).collect())
}

/// Running statistics and hyper-parameters of one batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}
