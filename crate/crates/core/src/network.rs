//! Full encoder/decoder model, losses and ablation presets.
//!
//! Parameter names form a dotted tree:
//!
//! ```text
//! enc.{rgb,depth,event}.stage{j}.conv{1,2}.{w,b}     j = 1..4
//! ema.{j}.{t1,t2,t3,t4,t5,t6,g}.{w,b}, ema.{j}.{w_bar,w_tilde,alpha,beta}
//! dconv_enc.{j}.*                                     encoder_mode = dconv
//! dec.deconv{i}.{w,b}                                 i = 3, 2, 1
//! ldf.{i}.*  |  dec.refine{i}.*  |  dec.dconv{i}.*    per decoder_mode
//! tail.{w,b}
//! ```

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::deform::DeformKernelConfig;
use crate::ema::{dconv_forward, ema_forward, split_head, structure_loss, AlignParams, EmaOutput, EmaStageParams};
use crate::error::{shape_err, Error, Result};
use crate::events::DEFAULT_BINS;
use crate::kernels::DECONV_KERNEL;
use crate::ldf::{ldf_forward, motion_loss, LdfOutput, LdfStageParams};
use crate::params::{Bound, ConvLayer, Initializer, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STAGES: usize = 4;
pub const DECODER_STAGES: usize = 3;
/// Inputs must be divisible by this factor.
pub const RESOLUTION_MULTIPLE: usize = 1 << (STAGES - 1);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderMode {
    Add,
    Dconv,
    Ema,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderMode {
    Plain,
    Dconv,
    Ldf,
}

macro_rules! str_enum {
    ($ty:ident { $($variant:ident => $name:literal),* }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)*
                    _ => Err(Error::InvalidArgument(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)* })
            }
        }
    };
}

str_enum!(EncoderMode { Add => "add", Dconv => "dconv", Ema => "ema" });
str_enum!(DecoderMode { Plain => "plain", Dconv => "dconv", Ldf => "ldf" });

/// Rows i to ix of the component ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
    Vii,
    Viii,
    Ix,
}

impl Ablation {
    pub const ALL: [Ablation; 9] = [
        Ablation::I,
        Ablation::Ii,
        Ablation::Iii,
        Ablation::Iv,
        Ablation::V,
        Ablation::Vi,
        Ablation::Vii,
        Ablation::Viii,
        Ablation::Ix,
    ];

    /// `(use_rgb, use_event, encoder, decoder)`.
    pub fn switches(self) -> (bool, bool, EncoderMode, DecoderMode) {
        use {DecoderMode as D, EncoderMode as E};
        match self {
            Ablation::I => (false, false, E::Add, D::Plain),
            Ablation::Ii => (true, false, E::Add, D::Plain),
            Ablation::Iii => (false, true, E::Add, D::Plain),
            Ablation::Iv => (true, true, E::Add, D::Plain),
            Ablation::V => (true, true, E::Dconv, D::Plain),
            Ablation::Vi => (true, true, E::Ema, D::Plain),
            Ablation::Vii => (true, true, E::Add, D::Dconv),
            Ablation::Viii => (true, true, E::Add, D::Ldf),
            Ablation::Ix => (true, true, E::Ema, D::Ldf),
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation `{s}` (expected i..ix)")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = ["i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix"][*self as usize];
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub base_channels: usize,
    pub kernel: DeformKernelConfig,
    pub event_bins: usize,
    pub use_rgb: bool,
    pub use_event: bool,
    pub encoder_mode: EncoderMode,
    pub decoder_mode: DecoderMode,
    pub lambda: f64,
    pub mu: f64,
    /// Denominator guard of the min-max normalization in the structure loss.
    pub structure_eps: f64,
    /// Use the K weight channels of the encoder offset heads as sigmoid modulation.
    pub ema_use_predicted_modulation: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig::ablation(Ablation::Ix)
    }
}

impl NetworkConfig {
    pub fn ablation(a: Ablation) -> Self {
        let (use_rgb, use_event, encoder_mode, decoder_mode) = a.switches();
        NetworkConfig {
            base_channels: 16,
            kernel: DeformKernelConfig::default(),
            event_bins: DEFAULT_BINS,
            use_rgb,
            use_event,
            encoder_mode,
            decoder_mode,
            lambda: 1.0,
            mu: 0.1,
            structure_eps: 1e-6,
            ema_use_predicted_modulation: false,
        }
    }

    pub fn apply_ablation(&mut self, a: Ablation) {
        (self.use_rgb, self.use_event, self.encoder_mode, self.decoder_mode) = a.switches();
    }

    /// Whether some component reads event features. The deformable encoder
    /// substitute takes no event input, so with a non-LDF decoder the event
    /// encoder would have no consumer and is not built.
    pub fn consumes_events(&self) -> bool {
        self.use_event && (self.encoder_mode != EncoderMode::Dconv || self.decoder_mode == DecoderMode::Ldf)
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.event_bins == 0 {
            return Err(Error::InvalidArgument("channel and bin counts must be positive".into()));
        }
        if self.kernel.kh % 2 == 0 || self.kernel.kw % 2 == 0 {
            return Err(Error::InvalidArgument("deformable kernel must have odd size".into()));
        }
        if matches!(self.encoder_mode, EncoderMode::Ema | EncoderMode::Dconv) && !self.use_rgb {
            return Err(Error::InvalidArgument(format!("encoder mode {} needs rgb input", self.encoder_mode)));
        }
        if self.encoder_mode == EncoderMode::Ema && !self.use_event {
            return Err(Error::InvalidArgument("encoder mode ema needs event input".into()));
        }
        if self.decoder_mode == DecoderMode::Ldf && !self.use_event {
            return Err(Error::InvalidArgument("decoder mode ldf needs event input".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl EncoderStage {
    fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv1.forward(tape, p, x)?;
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, p, y)?;
        Ok(tape.relu(y))
    }
}

fn encoder(init: &mut Initializer<'_>, name: &str, c_in: usize, cfg: &NetworkConfig) -> Result<Vec<EncoderStage>> {
    let mut stages = Vec::with_capacity(STAGES);
    let mut prev = c_in;
    for j in 1..=STAGES {
        let c = cfg.channels(j);
        let stride = if j == 1 { 1 } else { 2 };
        stages.push(EncoderStage {
            conv1: ConvLayer::new(init, &format!("enc.{name}.stage{j}.conv1"), prev, c, 3, stride)?,
            conv2: ConvLayer::new(init, &format!("enc.{name}.stage{j}.conv2"), c, c, 3, 1)?,
        });
        prev = c;
    }
    Ok(stages)
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Add,
    Dconv(Vec<AlignParams>),
    Ema(Vec<EmaStageParams>),
}

#[derive(Clone, Debug)]
pub struct DconvDecoderStage {
    pub head: ConvLayer,
    pub w: ParamId,
}

#[derive(Clone, Debug)]
pub enum Refine {
    Plain(Vec<ConvLayer>),
    Dconv(Vec<DconvDecoderStage>),
    Ldf(Vec<LdfStageParams>),
}

#[derive(Clone, Copy, Debug)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameter handles of every layer. Decoder vectors are indexed by stage
/// `i - 1`, so entry 0 is the full-resolution stage.
#[derive(Clone, Debug)]
pub struct Layout {
    pub rgb: Option<Vec<EncoderStage>>,
    pub depth: Vec<EncoderStage>,
    pub event: Option<Vec<EncoderStage>>,
    pub fusion: Fusion,
    pub deconv: Vec<Deconv>,
    pub refine: Refine,
    pub tail: ConvLayer,
}

/// Network inputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// `[1, H, W]` metres, 0 where unmeasured.
    pub sparse: Tensor,
    /// `[B, H, W]` voxel grid.
    pub events: Tensor,
}

#[derive(Clone, Debug)]
pub struct Pyramids {
    pub rgb: Option<Vec<Var>>,
    pub depth: Vec<Var>,
    pub event: Option<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub pyramids: Pyramids,
    pub fused: Vec<Var>,
    /// EMA outputs per stage, empty unless `encoder_mode = ema`.
    pub ema: Vec<EmaOutput>,
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub depth: Var,
    /// Refined decoder features, index 0 at full resolution.
    pub refined: Vec<Var>,
    /// LDF outputs, index 0 at full resolution. Empty unless `decoder_mode = ldf`.
    pub ldf: Vec<LdfOutput>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub encoded: Encoded,
    pub decoded: Decoded,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub rec: Var,
    pub structure: Var,
    pub motion: Var,
    pub total: Var,
    pub n_valid: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub rec: f64,
    pub structure: f64,
    pub motion: f64,
    pub total: f64,
    pub n_valid: usize,
}

/// `rec + λ·str + μ·mot`, evaluated in that order.
pub fn total_loss(rec: f64, structure: f64, motion: f64, lambda: f64, mu: f64) -> f64 {
    rec + lambda * structure + mu * motion
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> Result<LossReport> {
        Ok(LossReport {
            rec: tape.value(self.rec).item()?,
            structure: tape.value(self.structure).item()?,
            motion: tape.value(self.motion).item()?,
            total: tape.value(self.total).item()?,
            n_valid: self.n_valid,
        })
    }
}

/// Mean of squared plus absolute residuals over pixels with `z > 0`.
pub fn reconstruction_loss(tape: &mut Tape, d: Var, z: &Tensor) -> Result<(Var, usize)> {
    if tape.value(d).shape() != z.shape() {
        return Err(shape_err("reconstruction_loss", format!("{:?} vs {:?}", tape.value(d).shape(), z.shape())));
    }
    let valid = z.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let n = valid.data().iter().filter(|&&v| v > 0.0).count();
    if n == 0 {
        return Err(Error::Degenerate("ground truth has no valid pixel".into()));
    }
    let zc = tape.constant(z.clone());
    let valid = tape.constant(valid);
    let diff = tape.sub(d, zc)?;
    let masked = tape.mul(diff, valid)?;
    let sq = tape.l2(masked);
    let abs = tape.l1(masked);
    let sum = tape.add(sq, abs)?;
    Ok((tape.scale(sum, 1.0 / n as f64), n))
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: NetworkConfig,
    pub store: ParamStore,
    pub layout: Layout,
}

impl Model {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(&mut store, seed);
        let cfg = &config;
        let rgb = cfg.use_rgb.then(|| encoder(&mut init, "rgb", 3, cfg)).transpose()?;
        let depth = encoder(&mut init, "depth", 1, cfg)?;
        let event = cfg.consumes_events().then(|| encoder(&mut init, "event", cfg.event_bins, cfg)).transpose()?;

        let fusion = match cfg.encoder_mode {
            EncoderMode::Add => Fusion::Add,
            EncoderMode::Dconv => Fusion::Dconv(
                (1..=STAGES)
                    .map(|j| AlignParams::new(&mut init, &format!("dconv_enc.{j}"), cfg.channels(j), cfg.kernel))
                    .collect::<Result<_>>()?,
            ),
            EncoderMode::Ema => Fusion::Ema(
                (1..=STAGES)
                    .map(|j| EmaStageParams::new(&mut init, &format!("ema.{j}"), cfg.channels(j), cfg.kernel))
                    .collect::<Result<_>>()?,
            ),
        };

        let k = DECONV_KERNEL;
        let deconv = (1..=DECODER_STAGES)
            .map(|i| {
                let (c_in, c_out) = (cfg.channels(i + 1), cfg.channels(i));
                Ok(Deconv {
                    w: init.uniform(format!("dec.deconv{i}.w"), &[c_in, c_out, k, k], c_in)?,
                    b: init.zeros(format!("dec.deconv{i}.b"), &[c_out])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let taps = cfg.kernel.taps();
        let refine = match cfg.decoder_mode {
            DecoderMode::Plain => Refine::Plain(
                (1..=DECODER_STAGES)
                    .map(|i| ConvLayer::new(&mut init, &format!("dec.refine{i}"), cfg.channels(i), cfg.channels(i), 3, 1))
                    .collect::<Result<_>>()?,
            ),
            DecoderMode::Dconv => Refine::Dconv(
                (1..=DECODER_STAGES)
                    .map(|i| {
                        let c = cfg.channels(i);
                        Ok(DconvDecoderStage {
                            head: ConvLayer::zeroed(&mut init, &format!("dec.dconv{i}.head"), c, 3 * taps, 3)?,
                            w: init.uniform(format!("dec.dconv{i}.w"), &[c, c, cfg.kernel.kh, cfg.kernel.kw], c * taps)?,
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
            DecoderMode::Ldf => Refine::Ldf(
                (1..=DECODER_STAGES)
                    .map(|i| LdfStageParams::new(&mut init, &format!("ldf.{i}"), cfg.channels(i), cfg.kernel))
                    .collect::<Result<_>>()?,
            ),
        };
        let tail = ConvLayer::new(&mut init, "tail", cfg.base_channels, 1, 3, 1)?;

        let layout = Layout { rgb, depth, event, fusion, deconv, refine, tail };
        Ok(Model { config, store, layout })
    }

    pub fn check_input(&self, x: &ModelInput) -> Result<(usize, usize)> {
        let (_, h, w) = x.sparse.chw()?;
        if h % RESOLUTION_MULTIPLE != 0 || w % RESOLUTION_MULTIPLE != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "resolution {h}x{w} is not divisible by {RESOLUTION_MULTIPLE}"
            )));
        }
        let expect = [
            ("sparse", &x.sparse, 1),
            ("image", &x.image, 3),
            ("events", &x.events, self.config.event_bins),
        ];
        for (what, t, c) in expect {
            if t.shape() != [c, h, w] {
                return Err(shape_err("model input", format!("{what} has shape {:?}, expected {:?}", t.shape(), [c, h, w])));
            }
        }
        Ok((h, w))
    }

    /// Per-modality encoder features at scales 1, 1/2, 1/4, 1/8.
    pub fn pyramids(&self, tape: &mut Tape, p: &Bound, x: &ModelInput) -> Result<Pyramids> {
        self.check_input(x)?;
        let run = |tape: &mut Tape, stages: &[EncoderStage], input: &Tensor| -> Result<Vec<Var>> {
            let mut v = tape.constant(input.clone());
            let mut out = Vec::with_capacity(STAGES);
            for s in stages {
                v = s.forward(tape, p, v)?;
                out.push(v);
            }
            Ok(out)
        };
        let l = &self.layout;
        Ok(Pyramids {
            rgb: l.rgb.as_ref().map(|s| run(tape, s, &x.image)).transpose()?,
            depth: run(tape, &l.depth, &x.sparse)?,
            event: l.event.as_ref().map(|s| run(tape, s, &x.events)).transpose()?,
        })
    }

    /// Fuses per-stage features according to the encoder mode.
    pub fn fuse(&self, tape: &mut Tape, p: &Bound, pyr: &Pyramids) -> Result<(Vec<Var>, Vec<EmaOutput>)> {
        let cfg = &self.config;
        let mut fused = Vec::with_capacity(STAGES);
        let mut ema = Vec::new();
        for j in 0..STAGES {
            let s = pyr.depth[j];
            let i = pyr.rgb.as_ref().map(|r| r[j]);
            let e = pyr.event.as_ref().map(|r| r[j]);
            let f = match &self.layout.fusion {
                Fusion::Add => {
                    let mut acc = s;
                    for extra in [i, e].into_iter().flatten() {
                        acc = tape.add(acc, extra)?;
                    }
                    acc
                }
                Fusion::Dconv(params) => {
                    let i = i.ok_or_else(|| Error::InvalidArgument("dconv fusion needs rgb".into()))?;
                    dconv_forward(tape, p, &params[j], i, s, cfg.kernel)?.fused
                }
                Fusion::Ema(params) => {
                    let (i, e) = i.zip(e).ok_or_else(|| Error::InvalidArgument("ema fusion needs rgb and events".into()))?;
                    let out = ema_forward(tape, p, &params[j], i, s, e, cfg.kernel, cfg.ema_use_predicted_modulation)?;
                    ema.push(out);
                    out.fused
                }
            };
            fused.push(f);
        }
        Ok((fused, ema))
    }

    pub fn encode(&self, tape: &mut Tape, p: &Bound, x: &ModelInput) -> Result<Encoded> {
        let pyramids = self.pyramids(tape, p, x)?;
        let (fused, ema) = self.fuse(tape, p, &pyramids)?;
        Ok(Encoded { pyramids, fused, ema })
    }

    /// Runs the decoder on fused features `fused[0..4]` with encoder event
    /// features for the LDF stages.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, fused: &[Var], events: Option<&[Var]>) -> Result<Decoded> {
        if fused.len() != STAGES {
            return Err(shape_err("decode", format!("expected {STAGES} fused stages, got {}", fused.len())));
        }
        let cfg = &self.config;
        let mut refined = vec![None; DECODER_STAGES];
        let mut ldf = vec![None; DECODER_STAGES];
        let mut cur = fused[STAGES - 1];
        for i in (0..DECODER_STAGES).rev() {
            let dc = self.layout.deconv[i];
            let up = tape.deconv2d(cur, p[dc.w], p[dc.b])?;
            let d = tape.add(up, fused[i])?;
            cur = match &self.layout.refine {
                Refine::Plain(convs) => convs[i].forward(tape, p, d)?,
                Refine::Dconv(stages) => {
                    let head = stages[i].head.forward(tape, p, d)?;
                    let (offsets, logits) = split_head(tape, head, cfg.kernel)?;
                    let m = tape.sigmoid(logits);
                    tape.deform_conv2d(d, p[stages[i].w], offsets, Some(m))?
                }
                Refine::Ldf(stages) => {
                    let e = events.ok_or_else(|| Error::InvalidArgument("ldf decoder needs event features".into()))?;
                    let out = ldf_forward(tape, p, &stages[i], d, e[i], cfg.kernel)?;
                    ldf[i] = Some(out);
                    out.refined
                }
            };
            refined[i] = Some(cur);
        }
        let depth = self.layout.tail.forward(tape, p, cur)?;
        Ok(Decoded {
            depth,
            refined: refined.into_iter().flatten().collect(),
            ldf: ldf.into_iter().flatten().collect(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: &ModelInput) -> Result<Forward> {
        let encoded = self.encode(tape, p, x)?;
        let decoded = self.decode(tape, p, &encoded.fused, encoded.pyramids.event.as_deref())?;
        Ok(Forward { encoded, decoded })
    }

    /// Builds every loss term on the tape for a completed forward pass.
    pub fn losses(&self, tape: &mut Tape, p: &Bound, fwd: &Forward, z: &Tensor) -> Result<LossVars> {
        let cfg = &self.config;
        let (rec, n_valid) = reconstruction_loss(tape, fwd.decoded.depth, z)?;
        let structure = match &self.layout.fusion {
            Fusion::Ema(params) => {
                let stages: Vec<_> = params.iter().zip(&fwd.encoded.ema).map(|(sp, o)| (sp.g, o.rgb, o.depth)).collect();
                structure_loss(tape, p, &stages, cfg.structure_eps)?
            }
            _ => tape.constant(Tensor::scalar(0.0)),
        };
        let motion = match &self.layout.refine {
            Refine::Ldf(params) => {
                let stages: Vec<_> = params.iter().zip(fwd.decoded.ldf.iter().copied()).collect();
                motion_loss(tape, p, &stages, z)?
            }
            _ => tape.constant(Tensor::scalar(0.0)),
        };
        let ws = tape.scale(structure, cfg.lambda);
        let wm = tape.scale(motion, cfg.mu);
        let partial = tape.add(rec, ws)?;
        let total = tape.add(partial, wm)?;
        Ok(LossVars { rec, structure, motion, total, n_valid })
    }

    /// Forward pass without gradient tracking; returns the `[1, H, W]` prediction.
    pub fn predict(&self, x: &ModelInput) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let fwd = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(fwd.decoded.depth).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(h: usize, w: usize, bins: usize) -> ModelInput {
        ModelInput {
            image: Tensor::from_fn(&[3, h, w], |i| (i % 7) as f64 / 7.0),
            sparse: Tensor::from_fn(&[1, h, w], |i| if i % 5 == 0 { 1.0 + (i % 3) as f64 } else { 0.0 }),
            events: Tensor::from_fn(&[bins, h, w], |i| ((i % 11) as f64 - 5.0) / 5.0),
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert_eq!("IX".parse::<Ablation>().unwrap(), Ablation::Ix);
        assert!("x".parse::<Ablation>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = NetworkConfig::ablation(Ablation::Ix);
        c.use_event = false;
        assert!(c.validate().is_err());
        for a in Ablation::ALL {
            NetworkConfig::ablation(a).validate().unwrap();
        }
    }

    #[test]
    fn total_loss_arithmetic() {
        assert!((total_loss(1.0, 0.5, 2.0, 1.0, 0.1) - 1.7).abs() < 1e-15);
        assert_eq!(total_loss(0.3, 0.0, 0.0, 1.0, 0.1), 0.3);
        assert_eq!(total_loss(0.3, 5.0, 7.0, 0.0, 0.0), 0.3);
    }

    #[test]
    fn shapes_through_the_network() {
        let mut cfg = NetworkConfig::ablation(Ablation::Ix);
        cfg.base_channels = 2;
        let model = Model::new(cfg, 1).unwrap();
        let x = input(16, 24, DEFAULT_BINS);
        let mut tape = Tape::new();
        let p = model.store.bind_frozen(&mut tape);
        let fwd = model.forward(&mut tape, &p, &x).unwrap();
        let shapes: Vec<_> = fwd.encoded.fused.iter().map(|v| tape.value(*v).shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![2, 16, 24], vec![4, 8, 12], vec![8, 4, 6], vec![16, 2, 3]]);
        assert_eq!(tape.value(fwd.decoded.depth).shape(), &[1, 16, 24]);
        assert_eq!(fwd.decoded.ldf.len(), 3);
        assert!(fwd.encoded.fused.iter().all(|v| tape.value(*v).is_finite()));
    }

    #[test]
    fn rejects_indivisible_resolution() {
        let mut cfg = NetworkConfig::ablation(Ablation::I);
        cfg.base_channels = 1;
        let model = Model::new(cfg, 1).unwrap();
        assert!(model.predict(&input(12, 16, DEFAULT_BINS)).is_err());
        assert!(model.predict(&input(16, 16, 3)).is_err());
    }

    #[test]
    fn reconstruction_loss_needs_valid_pixels() {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::ones(&[1, 2, 2]));
        assert!(reconstruction_loss(&mut tape, d, &Tensor::zeros(&[1, 2, 2])).is_err());
        let z = Tensor::new(&[1, 2, 2], vec![0.5, 0.0, 0.0, 0.0]).unwrap();
        let (l, n) = reconstruction_loss(&mut tape, d, &z).unwrap();
        assert_eq!(n, 1);
        assert_eq!(tape.value(l).item().unwrap(), 0.25 + 0.5);
    }

    #[test]
    fn canonical_names() {
        let model = Model::new(NetworkConfig::ablation(Ablation::Ix), 0).unwrap();
        for name in ["enc.rgb.stage2.conv1.w", "ema.3.alpha", "ldf.1.w_tilde", "dec.deconv3.w", "tail.b"] {
            assert!(model.store.id(name).is_some(), "{name}");
        }
        assert!(model.store.by_name("ema.4.beta").unwrap().data() == [0.0]);
    }
}
