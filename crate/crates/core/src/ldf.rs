//! Local depth filtering for the decoder and the motion-aware loss.
//!
//! ```text
//! Q̃ = τd(D) + β · τe(E)
//! (õ, Δm) = head(Q̃)                 Δm passed through a sigmoid
//! D̂ = deform(D, w̃, õ, Δm)
//! m = σ(τ6(E))                       single channel
//! D̊ = m · D̂ + (1 − m) · D
//! ```

use crate::autodiff::{Tape, Var};
use crate::deform::DeformKernelConfig;
use crate::ema::split_head;
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ConvLayer, Initializer, ParamId};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LdfStageParams {
    pub depth_conv: ConvLayer,
    pub event_conv: ConvLayer,
    pub beta: ParamId,
    /// `3K` outputs: `2K` offsets then `K` modulation logits. Zero at init.
    pub head: ConvLayer,
    pub w_tilde: ParamId,
    /// Mask conv, zero at init so the mask starts at 0.5 everywhere.
    pub mask_conv: ConvLayer,
    /// Single-channel projection used by the motion loss.
    pub h: ConvLayer,
}

impl LdfStageParams {
    pub fn new(init: &mut Initializer<'_>, prefix: &str, c: usize, kernel: DeformKernelConfig) -> Result<Self> {
        let k = kernel.taps();
        Ok(LdfStageParams {
            depth_conv: ConvLayer::new(init, &format!("{prefix}.depth_conv"), c, c, 3, 1)?,
            event_conv: ConvLayer::new(init, &format!("{prefix}.event_conv"), c, c, 3, 1)?,
            beta: init.zeros(format!("{prefix}.beta"), &[1])?,
            head: ConvLayer::zeroed(init, &format!("{prefix}.head"), c, 3 * k, 3)?,
            w_tilde: init.uniform(format!("{prefix}.w_tilde"), &[c, c, kernel.kh, kernel.kw], c * k)?,
            mask_conv: ConvLayer::zeroed(init, &format!("{prefix}.mask"), c, 1, 3)?,
            h: ConvLayer::new(init, &format!("{prefix}.h"), c, 1, 1, 1)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LdfOutput {
    pub refined: Var,
    pub filtered: Var,
    pub mask: Var,
}

/// `m · filtered + (1 − m) · input`, with a single-channel `m` broadcast over channels.
pub fn gate(tape: &mut Tape, mask: Var, filtered: Var, input: Var) -> Result<Var> {
    let keep = tape.one_minus(mask);
    let a = tape.mul(mask, filtered)?;
    let b = tape.mul(keep, input)?;
    tape.add(a, b)
}

/// Deformable filtering with modulation predicted from depth and event features.
pub fn ldf_filter(
    tape: &mut Tape,
    p: &Bound,
    params: &LdfStageParams,
    depth: Var,
    event: Var,
    kernel: DeformKernelConfig,
) -> Result<Var> {
    let qd = params.depth_conv.forward(tape, p, depth)?;
    let qe = params.event_conv.forward(tape, p, event)?;
    let qe = tape.scale_by(qe, p[params.beta])?;
    let q = tape.add(qd, qe)?;
    let head = params.head.forward(tape, p, q)?;
    let (offsets, logits) = split_head(tape, head, kernel)?;
    let modulation = tape.sigmoid(logits);
    tape.deform_conv2d(depth, p[params.w_tilde], offsets, Some(modulation))
}

pub fn motion_mask(tape: &mut Tape, p: &Bound, params: &LdfStageParams, event: Var) -> Result<Var> {
    let logits = params.mask_conv.forward(tape, p, event)?;
    Ok(tape.sigmoid(logits))
}

pub fn ldf_forward(
    tape: &mut Tape,
    p: &Bound,
    params: &LdfStageParams,
    depth: Var,
    event: Var,
    kernel: DeformKernelConfig,
) -> Result<LdfOutput> {
    let (ds, es) = (tape.value(depth).shape(), tape.value(event).shape());
    if ds.len() != 3 || ds != es {
        return Err(shape_err("ldf_forward", format!("depth {ds:?} vs event {es:?}")));
    }
    let filtered = ldf_filter(tape, p, params, depth, event, kernel)?;
    let mask = motion_mask(tape, p, params, event)?;
    let refined = gate(tape, mask, filtered, depth)?;
    Ok(LdfOutput { refined, filtered, mask })
}

/// `1` where `m` is strictly above its spatial mean, `0` elsewhere.
pub fn binarize_mask(m: &Tensor) -> Tensor {
    let mean = m.mean();
    m.map(|v| if v > mean { 1.0 } else { 0.0 })
}

/// Block-mean of valid (`> 0`) pixels over `factor x factor` blocks, plus the
/// block validity map. A block with no valid pixel gets value 0 and validity 0.
pub fn downsample_valid(z: &Tensor, factor: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = z.chw()?;
    if c != 1 {
        return Err(shape_err("downsample_valid", format!("expected one channel, got {c}")));
    }
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!("cannot downsample {h}x{w} by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut value = Tensor::zeros(&[1, oh, ow]);
    let mut valid = Tensor::zeros(&[1, oh, ow]);
    let src = z.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in oy * factor..(oy + 1) * factor {
                for x in ox * factor..(ox + 1) * factor {
                    let v = src[y * w + x];
                    if v > 0.0 {
                        sum += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                value.data_mut()[oy * ow + ox] = sum / n as f64;
                valid.data_mut()[oy * ow + ox] = 1.0;
            }
        }
    }
    Ok((value, valid))
}

/// One stage of the motion loss. `binary` is treated as a constant; `target`
/// and `valid` come from [`downsample_valid`]. Returns zero when no pixel is
/// both selected and valid.
pub fn motion_term(
    tape: &mut Tape,
    p: &Bound,
    h: &ConvLayer,
    refined: Var,
    binary: &Tensor,
    target: &Tensor,
    valid: &Tensor,
) -> Result<Var> {
    let select = binary.zip_map(valid, |b, v| b * v)?;
    let n = select.sum();
    if n == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let act = tape.relu(refined);
    let pred = h.forward(tape, p, act)?;
    if tape.value(pred).shape() != target.shape() {
        return Err(shape_err("motion_loss", format!("{:?} vs {:?}", tape.value(pred).shape(), target.shape())));
    }
    let target = tape.constant(target.clone());
    let select = tape.constant(select);
    let diff = tape.sub(pred, target)?;
    let masked = tape.mul(diff, select)?;
    let sq = tape.l2(masked);
    Ok(tape.scale(sq, 1.0 / n))
}

/// Sum of [`motion_term`] over decoder stages. Stage `i` (0-based) sits at
/// scale `1 / 2^i` of the ground truth `z`; its binary mask is derived from
/// the stage's motion mask.
pub fn motion_loss(tape: &mut Tape, p: &Bound, stages: &[(&LdfStageParams, LdfOutput)], z: &Tensor) -> Result<Var> {
    let mut total = tape.constant(Tensor::scalar(0.0));
    for (i, (params, out)) in stages.iter().enumerate() {
        let (target, valid) = downsample_valid(z, 1 << i)?;
        let binary = binarize_mask(tape.value(out.mask));
        let term = motion_term(tape, p, &params.h, out.refined, &binary, &target, &valid)?;
        total = tape.add(total, term)?;
    }
    Ok(total)
}
