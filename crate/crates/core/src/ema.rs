//! Event-modulated alignment of RGB and depth features.
//!
//! Per encoder stage:
//!
//! ```text
//! Q̄ = τ1(I) + α · first(split(τ2(E)))
//! Q̃ = τ3(S) + β · second(split(τ2(E)))
//! ō = offsets(τ4(Q̄)),  õ = offsets(τ5(Q̃))
//! Î = deform(I, w̄, ō),  Ŝ = deform(S, w̃, õ)     (identity modulation)
//! F = τ6(Î + Ŝ)
//! ```
//!
//! `α`, `β` and the offset heads `τ4`, `τ5` start at zero, so an untrained
//! block is an ordinary convolutional fusion.

use crate::autodiff::{Tape, Var};
use crate::deform::DeformKernelConfig;
use crate::error::{shape_err, Result};
use crate::params::{Bound, ConvLayer, Initializer, ParamId};

/// Layers shared by the event-conditioned block and the plain deformable
/// ablation: per-modality transforms, offset heads, redistribution kernels and
/// the fusion conv.
#[derive(Clone, Debug)]
pub struct AlignParams {
    pub t1: ConvLayer,
    pub t3: ConvLayer,
    /// Emits `3K` channels: `2K` offsets followed by `K` modulation logits.
    pub t4: ConvLayer,
    pub t5: ConvLayer,
    pub t6: ConvLayer,
    pub w_bar: ParamId,
    pub w_tilde: ParamId,
}

impl AlignParams {
    pub fn new(init: &mut Initializer<'_>, prefix: &str, c: usize, kernel: DeformKernelConfig) -> Result<Self> {
        let k = kernel.taps();
        let kernel_shape = [c, c, kernel.kh, kernel.kw];
        Ok(AlignParams {
            t1: ConvLayer::new(init, &format!("{prefix}.t1"), c, c, 3, 1)?,
            t3: ConvLayer::new(init, &format!("{prefix}.t3"), c, c, 3, 1)?,
            t4: ConvLayer::zeroed(init, &format!("{prefix}.t4"), c, 3 * k, 3)?,
            t5: ConvLayer::zeroed(init, &format!("{prefix}.t5"), c, 3 * k, 3)?,
            t6: ConvLayer::new(init, &format!("{prefix}.t6"), c, c, 3, 1)?,
            w_bar: init.uniform(format!("{prefix}.w_bar"), &kernel_shape, c * k)?,
            w_tilde: init.uniform(format!("{prefix}.w_tilde"), &kernel_shape, c * k)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EmaStageParams {
    pub align: AlignParams,
    pub t2: ConvLayer,
    pub alpha: ParamId,
    pub beta: ParamId,
    /// 1x1 single-channel projection inside the structure loss, shared by both branches.
    pub g: ConvLayer,
}

impl EmaStageParams {
    pub fn new(init: &mut Initializer<'_>, prefix: &str, c: usize, kernel: DeformKernelConfig) -> Result<Self> {
        Ok(EmaStageParams {
            align: AlignParams::new(init, prefix, c, kernel)?,
            t2: ConvLayer::new(init, &format!("{prefix}.t2"), c, 2 * c, 3, 1)?,
            alpha: init.zeros(format!("{prefix}.alpha"), &[1])?,
            beta: init.zeros(format!("{prefix}.beta"), &[1])?,
            g: ConvLayer::new(init, &format!("{prefix}.g"), c, 1, 1, 1)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmaOutput {
    pub fused: Var,
    pub rgb: Var,
    pub depth: Var,
}

/// Splits a `3K`-channel head output into offsets `[2K]` and modulation logits `[K]`.
pub fn split_head(tape: &mut Tape, head: Var, kernel: DeformKernelConfig) -> Result<(Var, Var)> {
    let k = kernel.taps();
    let offsets = tape.slice_channels(head, 0, 2 * k)?;
    let logits = tape.slice_channels(head, 2 * k, k)?;
    Ok((offsets, logits))
}

fn check_same(tape: &Tape, op: &'static str, vars: &[Var]) -> Result<()> {
    let first = tape.value(vars[0]).shape();
    if first.len() != 3 {
        return Err(shape_err(op, format!("expected [C,H,W], got {first:?}")));
    }
    for v in &vars[1..] {
        if tape.value(*v).shape() != first {
            return Err(shape_err(op, format!("{:?} vs {first:?}", tape.value(*v).shape())));
        }
    }
    Ok(())
}

/// Redistributes `x` with offsets (and optionally modulation) read from a head output.
fn redistribute(
    tape: &mut Tape,
    x: Var,
    kernel_w: Var,
    head: Var,
    kernel: DeformKernelConfig,
    use_modulation: bool,
) -> Result<Var> {
    let (offsets, logits) = split_head(tape, head, kernel)?;
    if use_modulation {
        let m = tape.sigmoid(logits);
        tape.deform_conv2d(x, kernel_w, offsets, Some(m))
    } else {
        tape.ema_redistribute(x, kernel_w, offsets)
    }
}

/// Full event-conditioned block.
pub fn ema_forward(
    tape: &mut Tape,
    p: &Bound,
    params: &EmaStageParams,
    rgb: Var,
    depth: Var,
    event: Var,
    kernel: DeformKernelConfig,
    use_predicted_modulation: bool,
) -> Result<EmaOutput> {
    check_same(tape, "ema_forward", &[rgb, depth, event])?;
    let a = &params.align;
    let ev = params.t2.forward(tape, p, event)?;
    let (ev_rgb, ev_depth) = tape.split_channels(ev)?;

    let q_rgb = a.t1.forward(tape, p, rgb)?;
    let ev_rgb = tape.scale_by(ev_rgb, p[params.alpha])?;
    let q_rgb = tape.add(q_rgb, ev_rgb)?;

    let q_depth = a.t3.forward(tape, p, depth)?;
    let ev_depth = tape.scale_by(ev_depth, p[params.beta])?;
    let q_depth = tape.add(q_depth, ev_depth)?;

    fuse(tape, p, a, rgb, depth, q_rgb, q_depth, kernel, use_predicted_modulation)
}

/// Deformable fusion whose offsets come from each modality's own transformed
/// feature, with no event term.
pub fn dconv_forward(
    tape: &mut Tape,
    p: &Bound,
    a: &AlignParams,
    rgb: Var,
    depth: Var,
    kernel: DeformKernelConfig,
) -> Result<EmaOutput> {
    check_same(tape, "dconv_forward", &[rgb, depth])?;
    let q_rgb = a.t1.forward(tape, p, rgb)?;
    let q_depth = a.t3.forward(tape, p, depth)?;
    fuse(tape, p, a, rgb, depth, q_rgb, q_depth, kernel, false)
}

#[allow(clippy::too_many_arguments)]
fn fuse(
    tape: &mut Tape,
    p: &Bound,
    a: &AlignParams,
    rgb: Var,
    depth: Var,
    q_rgb: Var,
    q_depth: Var,
    kernel: DeformKernelConfig,
    use_modulation: bool,
) -> Result<EmaOutput> {
    let head_rgb = a.t4.forward(tape, p, q_rgb)?;
    let head_depth = a.t5.forward(tape, p, q_depth)?;
    let rgb_hat = redistribute(tape, rgb, p[a.w_bar], head_rgb, kernel, use_modulation)?;
    let depth_hat = redistribute(tape, depth, p[a.w_tilde], head_depth, kernel, use_modulation)?;
    let sum = tape.add(rgb_hat, depth_hat)?;
    let fused = a.t6.forward(tape, p, sum)?;
    Ok(EmaOutput { fused, rgb: rgb_hat, depth: depth_hat })
}

/// Structure map: projection to one channel, min-max normalization, forward differences.
pub fn structure_map(tape: &mut Tape, p: &Bound, g: &ConvLayer, x: Var, eps: f64) -> Result<Var> {
    let proj = g.forward(tape, p, x)?;
    let norm = tape.minmax_normalize(proj, eps)?;
    tape.spatial_gradient(norm)
}

/// One stage of the structure loss: mean squared difference of the two structure maps.
pub fn structure_term(tape: &mut Tape, p: &Bound, g: &ConvLayer, rgb_hat: Var, depth_hat: Var, eps: f64) -> Result<Var> {
    check_same(tape, "structure_loss", &[rgb_hat, depth_hat])?;
    let a = structure_map(tape, p, g, rgb_hat, eps)?;
    let b = structure_map(tape, p, g, depth_hat, eps)?;
    let n = tape.value(a).numel() as f64;
    let diff = tape.sub(a, b)?;
    let sq = tape.l2(diff);
    Ok(tape.scale(sq, 1.0 / n))
}

/// Sum of [`structure_term`] over stages given as `(projection, Î, Ŝ)`.
pub fn structure_loss(tape: &mut Tape, p: &Bound, stages: &[(ConvLayer, Var, Var)], eps: f64) -> Result<Var> {
    let mut total = tape.constant(crate::tensor::Tensor::scalar(0.0));
    for (g, rgb_hat, depth_hat) in stages {
        let term = structure_term(tape, p, g, *rgb_hat, *depth_hat, eps)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}
