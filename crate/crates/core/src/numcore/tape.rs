//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends one node holding its forward value plus whatever it needs
//! for the backward sweep. Nodes only reference earlier nodes, so the tape is
//! topologically ordered by construction.

use std::collections::HashMap;

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Linear { x: Var, w: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Depthwise { x: Var, k: Var, pad: usize },
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    GlobalAvgPool(Var),
    ConcatChannels(Var, Var),
    SliceChannels { x: Var, start: usize },
    ChannelAffine { x: Var, scale: Var, shift: Var },
    Gram(Var),
    BceWithLogits { logits: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of primitive applications for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to every differentiable leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_leaf.get(&v.0)
    }

    /// Removes and returns the gradient of `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.by_leaf.remove(&v.0)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operands have shapes {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let t = self.value(a).map(|x| x + offset);
        self.push(t, Op::Offset(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        self.push(t, Op::Abs(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(t, Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions differ: left has {k} columns, right has {k2} rows"),
            ));
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(&[m, n], data)?;
        Ok(self.push(t, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// Dense layer: `x[N×in] · w[out×in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, win) = self.value(w).dims2()?;
        if fin != win {
            return Err(Error::shape(
                "linear",
                format!("input has {fin} features but weight expects {win}"),
            ));
        }
        if self.value(b).len() != fout {
            return Err(Error::shape(
                "linear",
                format!("bias has {} entries, expected {fout}", self.value(b).len()),
            ));
        }
        let mut data = kernels::matmul_bt(self.value(x).data(), self.value(w).data(), n, fin, fout);
        let bias = self.value(b).data();
        for row in data.chunks_mut(fout) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let t = Tensor::new(&[n, fout], data)?;
        Ok(self.push(t, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// 2-d cross-correlation of `N×Cin×H×W` with a `Cout×Cin×k×k` kernel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, kcin, kh, kw) = self.value(w).dims4().map_err(|_| {
            Error::shape("conv2d", format!("kernel must be 4-d, got {:?}", self.shape(w)))
        })?;
        if kcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input channels: input has {cin}, kernel expects {kcin}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel size: expected odd square kernel, got {kh}×{kw}"),
            ));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kh {
            return Err(Error::shape(
                "conv2d",
                format!("height/width: padded input {}×{} smaller than kernel {kh}", h + 2 * pad, wd + 2 * pad),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if self.value(b).len() != cout {
            return Err(Error::shape(
                "conv2d",
                format!("output channels: bias has {} entries, kernel has {cout}", self.value(b).len()),
            ));
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad,
        };
        let data = kernels::conv2d_forward(self.value(x).data(), self.value(w).data(), self.value(b).data(), &geom);
        let t = Tensor::new(&[n, cout, geom.out_h(), geom.out_w()], data)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// Per-sample depthwise convolution with kernels `N×C×k×k`, stride one.
    pub fn depthwise_conv(&mut self, x: Var, kernels_var: Var, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (kn, kc, kh, kw) = self.value(kernels_var).dims4()?;
        if kn != n || kc != c {
            return Err(Error::shape(
                "depthwise_conv",
                format!("kernels are {kn}×{kc} per sample/channel, input is {n}×{c}"),
            ));
        }
        if kh != kw || h + 2 * pad < kh || w + 2 * pad < kh {
            return Err(Error::shape("depthwise_conv", format!("kernel size {kh}×{kw} incompatible with {h}×{w}")));
        }
        let data = kernels::depthwise_forward(self.value(x).data(), self.value(kernels_var).data(), n, c, h, w, kh, pad);
        let t = Tensor::new(&[n, c, h + 2 * pad - kh + 1, w + 2 * pad - kh + 1], data)?;
        Ok(self.push(t, Op::Depthwise { x, k: kernels_var, pad }, &[x, kernels_var]))
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h * w < 2 {
            return Err(Error::shape("instance_norm", "needs at least two spatial positions"));
        }
        let (y, inv_std) = kernels::instance_norm_forward(self.value(x).data(), n * c, h * w, eps);
        let t = Tensor::new(&[n, c, h, w], y)?;
        Ok(self.push(t, Op::InstanceNorm { x, inv_std }, &[x]))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = h * w;
        let data = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|p| p.iter().sum::<f64>() / hw as f64)
            .collect();
        let t = Tensor::new(&[n, c], data)?;
        Ok(self.push(t, Op::GlobalAvgPool(x), &[x]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("N,H,W differ: {n},{h},{w} vs {nb},{hb},{wb}"),
            ));
        }
        let hw = h * w;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            data.extend_from_slice(&da[s * ca * hw..(s + 1) * ca * hw]);
            data.extend_from_slice(&db[s * cb * hw..(s + 1) * cb * hw]);
        }
        let t = Tensor::new(&[n, ca + cb, h, w], data)?;
        Ok(self.push(t, Op::ConcatChannels(a, b), &[a, b]))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if len == 0 || start + len > c {
            return Err(Error::shape(
                "slice_channels",
                format!("channel range {start}..{} outside 0..{c}", start + len),
            ));
        }
        let hw = h * w;
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            data.extend_from_slice(&d[(s * c + start) * hw..(s * c + start + len) * hw]);
        }
        let t = Tensor::new(&[n, len, h, w], data)?;
        Ok(self.push(t, Op::SliceChannels { x, start }, &[x]))
    }

    /// `y[n,c,·] = x[n,c,·] · scale[n,c] + shift[n,c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        for (name, v) in [("scale", scale), ("shift", shift)] {
            if self.value(v).len() != n * c {
                return Err(Error::shape(
                    "channel_affine",
                    format!("{name} has {} entries, expected N·C = {}", self.value(v).len(), n * c),
                ));
            }
        }
        let hw = h * w;
        let (sc, sh) = (self.value(scale).data(), self.value(shift).data());
        let mut data = self.value(x).data().to_vec();
        for (p, plane) in data.chunks_mut(hw).enumerate() {
            for v in plane {
                *v = *v * sc[p] + sh[p];
            }
        }
        let t = Tensor::new(&[n, c, h, w], data)?;
        Ok(self.push(t, Op::ChannelAffine { x, scale, shift }, &[x, scale, shift]))
    }

    /// Per-sample `C×C` second-moment matrix `F Fᵀ / HW`.
    pub fn gram(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let data = kernels::gram_forward(self.value(x).data(), n, c, h * w);
        let t = Tensor::new(&[n, c, c], data)?;
        Ok(self.push(t, Op::Gram(x), &[x]))
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against fixed targets.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.len() != targets.len() {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} logits but {} targets", z.len(), targets.len()),
            ));
        }
        let data = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
            .collect();
        let t = Tensor::new(z.shape(), data)?;
        Ok(self.push(
            t,
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every leaf. Leaves that
    /// require a gradient but are unreachable get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, i, g, &mut grads, &mut out)?;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                out.by_leaf
                    .entry(i)
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contrib) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(
        &self,
        node: &Node,
        index: usize,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {
                out.by_leaf.insert(index, Tensor::new(node.value.shape(), g)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *b, g.iter().map(|x| -x).collect());
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let c = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    self.accumulate(grads, *a, c);
                }
                if self.needs(*b) {
                    let c = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    self.accumulate(grads, *b, c);
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.iter().map(|x| x * f).collect()),
            Op::Offset(a) | Op::Reshape(a) => self.accumulate(grads, *a, g),
            Op::Abs(a) => {
                let c = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else if *x < 0.0 { -g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, c);
            }
            Op::Relu(a) => {
                let c = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, c);
            }
            Op::Sigmoid(a) => {
                let c = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *a, c);
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::MatMul { a, b, m, k, n } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, kernels::matmul_bt(&g, val(*b), *m, *n, *k));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, kernels::matmul_at(val(*a), &g, *m, *k, *n));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = self.nodes[x.0].value.dims2()?;
                let fout = node.value.shape()[1];
                if self.needs(*x) {
                    self.accumulate(grads, *x, kernels::matmul(&g, val(*w), n, fout, fin));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, kernels::matmul_at(&g, val(*x), n, fout, fin));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; fout];
                    for row in g.chunks(fout) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                if self.needs(*x) {
                    self.accumulate(grads, *x, kernels::conv2d_grad_input(&g, val(*w), geom));
                }
                if self.needs(*w) || self.needs(*b) {
                    let (gw, gb) = kernels::conv2d_grad_params(&g, val(*x), geom);
                    self.accumulate(grads, *w, gw);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Depthwise { x, k, pad } => {
                let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
                let ks = self.nodes[k.0].value.shape()[2];
                let (gx, gk) = kernels::depthwise_backward(&g, val(*x), val(*k), n, c, h, w, ks, *pad);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *k, gk);
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, _, h, w) = node.value.dims4()?;
                let gx = kernels::instance_norm_backward(&g, node.value.data(), inv_std, h * w);
                self.accumulate(grads, *x, gx);
            }
            Op::GlobalAvgPool(x) => {
                let (_, _, h, w) = self.nodes[x.0].value.dims4()?;
                let hw = h * w;
                let mut gx = Vec::with_capacity(g.len() * hw);
                for &v in &g {
                    gx.extend(std::iter::repeat(v / hw as f64).take(hw));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ConcatChannels(a, b) => {
                let (n, ca, h, w) = self.nodes[a.0].value.dims4()?;
                let cb = self.nodes[b.0].value.shape()[1];
                let hw = h * w;
                let mut ga = Vec::with_capacity(n * ca * hw);
                let mut gb = Vec::with_capacity(n * cb * hw);
                for s in 0..n {
                    let base = s * (ca + cb) * hw;
                    ga.extend_from_slice(&g[base..base + ca * hw]);
                    gb.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::SliceChannels { x, start } => {
                let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut gx = vec![0.0; n * c * hw];
                for s in 0..n {
                    gx[(s * c + start) * hw..(s * c + start + len) * hw]
                        .copy_from_slice(&g[s * len * hw..(s + 1) * len * hw]);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::ChannelAffine { x, scale, shift } => {
                let (_, _, h, w) = node.value.dims4()?;
                let hw = h * w;
                let sc = val(*scale);
                if self.needs(*x) {
                    let mut gx = g.clone();
                    for (p, plane) in gx.chunks_mut(hw).enumerate() {
                        for v in plane {
                            *v *= sc[p];
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.needs(*scale) {
                    let gs = g
                        .chunks(hw)
                        .zip(val(*x).chunks(hw))
                        .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                        .collect();
                    self.accumulate(grads, *scale, gs);
                }
                if self.needs(*shift) {
                    self.accumulate(grads, *shift, g.chunks(hw).map(|p| p.iter().sum()).collect());
                }
            }
            Op::Gram(x) => {
                let (n, c, h, w) = self.nodes[x.0].value.dims4()?;
                self.accumulate(grads, *x, kernels::gram_backward(&g, val(*x), n, c, h * w));
            }
            Op::BceWithLogits { logits, targets } => {
                let c = g
                    .iter()
                    .zip(val(*logits))
                    .zip(targets)
                    .map(|((g, &z), y)| g * (sigmoid(z) - y))
                    .collect();
                self.accumulate(grads, *logits, c);
            }
        }
        Ok(())
    }
}
