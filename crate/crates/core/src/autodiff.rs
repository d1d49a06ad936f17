//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in execution order, so the tape is topologically sorted
//! by construction and `backward` is a single reverse sweep. Gradients
//! accumulate across calls until [`Tape::zero_grad`].

use crate::deform;
use crate::error::{shape_err, Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    Deconv2d { x: Var, w: Var, b: Var },
    DeformConv { x: Var, w: Var, offsets: Var, modulation: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy { x: Var, s: Var },
    Scale { x: Var, c: f64 },
    Shift { x: Var },
    Relu(Var),
    Sigmoid(Var),
    SumSquares(Var),
    SumAbs(Var),
    Mean(Var),
    Sum(Var),
    SliceChannels { x: Var, start: usize },
    Concat(Var, Var),
    MinMax { x: Var, eps: f64 },
    SpatialGrad(Var),
    AvgPool { x: Var, factor: usize },
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// How the smaller operand of a binary op is stretched over the larger one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    ScalarLeft,
    ScalarRight,
    ChannelLeft,
    ChannelRight,
}

fn broadcast_kind(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let numel = |s: &[usize]| s.iter().product::<usize>();
    if a == b {
        return Ok(Broadcast::Same);
    }
    if numel(a) == 1 {
        return Ok(Broadcast::ScalarLeft);
    }
    if numel(b) == 1 {
        return Ok(Broadcast::ScalarRight);
    }
    match (a, b) {
        ([1, ha, wa], [_, hb, wb]) if ha == hb && wa == wb => Ok(Broadcast::ChannelLeft),
        ([_, ha, wa], [1, hb, wb]) if ha == hb && wa == wb => Ok(Broadcast::ChannelRight),
        _ => Err(shape_err(op, format!("cannot broadcast {a:?} with {b:?}"))),
    }
}

/// Applies `f` elementwise after broadcasting; returns the output.
fn broadcast_apply(a: &Tensor, b: &Tensor, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let (ad, bd) = (a.data(), b.data());
    match kind {
        Broadcast::Same => a.zip_map(b, f).expect("same shape"),
        Broadcast::ScalarLeft => b.map(|v| f(ad[0], v)),
        Broadcast::ScalarRight => a.map(|v| f(v, bd[0])),
        Broadcast::ChannelLeft => {
            let plane = ad.len();
            Tensor::from_fn(b.shape(), |i| f(ad[i % plane], bd[i]))
        }
        Broadcast::ChannelRight => {
            let plane = bd.len();
            Tensor::from_fn(a.shape(), |i| f(ad[i], bd[i % plane]))
        }
    }
}

/// Sums a full-size gradient down to the shape of a broadcast operand.
fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g;
    }
    let n: usize = shape.iter().product();
    if n == 1 {
        return Tensor::new(shape, vec![g.sum()]).expect("scalar shape");
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(shape, out).expect("reduced shape")
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, or `None` if nothing has flowed into `v` yet.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Accumulated gradient, zeros if nothing has flowed into `v`.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = kernels::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Stride-2 transposed convolution with a `[C_in,C_out,2,2]` kernel.
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = kernels::deconv2d(self.value(x), self.value(w), self.value(b))?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Deconv2d { x, w, b }, rg))
    }

    pub fn deform_conv2d(&mut self, x: Var, w: Var, offsets: Var, modulation: Option<Var>) -> Result<Var> {
        let value = deform::deform_conv2d(
            self.value(x),
            self.value(w),
            self.value(offsets),
            modulation.map(|m| self.value(m)),
        )?;
        let mut inputs = vec![x, w, offsets];
        inputs.extend(modulation);
        let rg = self.any_grad(&inputs);
        Ok(self.push(value, Op::DeformConv { x, w, offsets, modulation }, rg))
    }

    /// Deformable convolution with identity modulation: pixels are moved, never reweighted.
    pub fn ema_redistribute(&mut self, x: Var, w: Var, offsets: Var) -> Result<Var> {
        self.deform_conv2d(x, w, offsets, None)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, make: fn(Var, Var) -> Op) -> Result<Var> {
        let kind = broadcast_kind(op, self.value(a).shape(), self.value(b).shape())?;
        let value = broadcast_apply(self.value(a), self.value(b), kind, f);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, make(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `s · x` for a one-element (typically learnable) `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let s_val = self.value(s).item()?;
        let value = self.value(x).map(|v| s_val * v);
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(value, Op::ScaleBy { x, s }, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Scale { x, c }, rg)
    }

    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Shift { x }, rg)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scale(x, -1.0);
        self.shift(neg, 1.0)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// `Σ x²`.
    pub fn l2(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::SumSquares(x), rg)
    }

    /// `Σ |x|`.
    pub fn l1(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).data().iter().map(|v| v.abs()).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::SumAbs(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.any_grad(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if len == 0 || start + len > c {
            return Err(shape_err("slice_channels", format!("channels {start}..{} of {c}", start + len)));
        }
        let plane = h * w;
        let data = self.value(x).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::new(&[len, h, w], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SliceChannels { x, start }, rg))
    }

    /// Splits a `[2C,H,W]` feature into its first and second `C` channels.
    pub fn split_channels(&mut self, x: Var) -> Result<(Var, Var)> {
        let (c, _, _) = self.value(x).chw()?;
        if c % 2 != 0 {
            return Err(shape_err("split_channels", format!("odd channel count {c}")));
        }
        Ok((self.slice_channels(x, 0, c / 2)?, self.slice_channels(x, c / 2, c / 2)?))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(shape_err("concat_channels", format!("{ha}x{wa} vs {hb}x{wb}")));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(&[ca + cb, ha, wa], data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    pub fn minmax_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let value = kernels::minmax_normalize(self.value(x), eps)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MinMax { x, eps }, rg))
    }

    pub fn spatial_gradient(&mut self, x: Var) -> Result<Var> {
        let value = kernels::spatial_gradient(self.value(x))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SpatialGrad(x), rg))
    }

    pub fn avgpool_down(&mut self, x: Var, factor: usize) -> Result<Var> {
        let value = kernels::avgpool_down(self.value(x), factor)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::AvgPool { x, factor }, rg))
    }

    /// Accumulates `d loss / d node` into every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(Tensor::ones(&shape));
        for i in (0..=loss.0).rev() {
            let Some(g) = adjoints[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (input, contribution) in self.pullback(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adjoints[input.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its inputs given upstream `g`.
    fn pullback(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let out = &self.nodes[i].value;
        let grads = match self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, stride, pad } => {
                let r = kernels::conv2d_backward(val(x), val(w), stride, pad, g, [rg(x), rg(w), rg(b)])?;
                collect([(x, r.dx), (w, r.dw), (b, r.db)])
            }
            Op::Deconv2d { x, w, b } => {
                let r = kernels::deconv2d_backward(val(x), val(w), g, [rg(x), rg(w), rg(b)])?;
                collect([(x, r.dx), (w, r.dw), (b, r.db)])
            }
            Op::DeformConv { x, w, offsets, modulation } => {
                let need_m = modulation.is_some_and(rg);
                let r = deform::deform_conv2d_backward(
                    val(x),
                    val(w),
                    val(offsets),
                    modulation.map(val),
                    g,
                    [rg(x), rg(w), rg(offsets), need_m],
                )?;
                let mut v = collect([(x, r.dx), (w, r.dw), (offsets, r.doffsets)]);
                if let (Some(m), Some(dm)) = (modulation, r.dmodulation) {
                    v.push((m, dm));
                }
                v
            }
            Op::Add(a, b) => {
                vec![(a, reduce_to(g.clone(), val(a).shape())), (b, reduce_to(g.clone(), val(b).shape()))]
            }
            Op::Sub(a, b) => {
                vec![(a, reduce_to(g.clone(), val(a).shape())), (b, reduce_to(g.map(|v| -v), val(b).shape()))]
            }
            Op::Mul(a, b) => {
                let kind = broadcast_kind("mul", val(a).shape(), val(b).shape())?;
                let mut v = Vec::with_capacity(2);
                if rg(a) {
                    let full = broadcast_apply(&ones_like_broadcast(val(a)), val(b), kind, |_, y| y);
                    v.push((a, reduce_to(g.zip_map(&full, |p, q| p * q)?, val(a).shape())));
                }
                if rg(b) {
                    let full = broadcast_apply(val(a), &ones_like_broadcast(val(b)), kind, |x, _| x);
                    v.push((b, reduce_to(g.zip_map(&full, |p, q| p * q)?, val(b).shape())));
                }
                v
            }
            Op::ScaleBy { x, s } => {
                let sv = val(s).item()?;
                let ds: f64 = g.data().iter().zip(val(x).data()).map(|(p, q)| p * q).sum();
                vec![(x, g.map(|v| v * sv)), (s, Tensor::new(val(s).shape(), vec![ds])?)]
            }
            Op::Scale { x, c } => vec![(x, g.map(|v| v * c))],
            Op::Shift { x } => vec![(x, g.clone())],
            Op::Relu(x) => vec![(x, g.zip_map(val(x), |p, q| if q > 0.0 { p } else { 0.0 })?)],
            Op::Sigmoid(x) => vec![(x, g.zip_map(out, |p, y| p * y * (1.0 - y))?)],
            Op::SumSquares(x) => {
                let s = g.item()?;
                vec![(x, val(x).map(|v| 2.0 * v * s))]
            }
            Op::SumAbs(x) => {
                let s = g.item()?;
                vec![(x, val(x).map(|v| if v > 0.0 { s } else if v < 0.0 { -s } else { 0.0 }))]
            }
            Op::Mean(x) => {
                let n = val(x).numel() as f64;
                let s = g.item()? / n;
                vec![(x, Tensor::full(val(x).shape(), s))]
            }
            Op::Sum(x) => vec![(x, Tensor::full(val(x).shape(), g.item()?))],
            Op::SliceChannels { x, start } => {
                let mut dx = Tensor::zeros(val(x).shape());
                let offset = start * out.shape()[1] * out.shape()[2];
                dx.data_mut()[offset..offset + g.numel()].copy_from_slice(g.data());
                vec![(x, dx)]
            }
            Op::Concat(a, b) => {
                let split = val(a).numel();
                let ga = Tensor::new(val(a).shape(), g.data()[..split].to_vec())?;
                let gb = Tensor::new(val(b).shape(), g.data()[split..].to_vec())?;
                vec![(a, ga), (b, gb)]
            }
            Op::MinMax { x, eps } => vec![(x, kernels::minmax_backward(val(x), eps, g))],
            Op::SpatialGrad(x) => {
                let (_, h, w) = val(x).chw()?;
                vec![(x, kernels::spatial_gradient_backward(g, h, w))]
            }
            Op::AvgPool { x, factor } => vec![(x, kernels::avgpool_backward(g, val(x).shape(), factor))],
        };
        Ok(grads)
    }
}

fn ones_like_broadcast(t: &Tensor) -> Tensor {
    Tensor::ones(t.shape())
}

fn collect<const N: usize>(items: [(Var, Option<Tensor>); N]) -> Vec<(Var, Tensor)> {
    items.into_iter().filter_map(|(v, g)| g.map(|g| (v, g))).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
