//! Synthetic dynamic scenes: a textured background plane under ego-motion,
//! one moving textured square, contrast-threshold events, a motion-blurred
//! colour image and sparse line-scan depth.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::events::{Event, EventStream};
use crate::io;
use crate::network::ModelInput;
use crate::tensor::Tensor;

/// Offset inside the log so that black pixels stay finite.
pub const LOG_EPS: f64 = 1e-3;
/// Slack when counting threshold crossings, so that a change of exactly
/// `k · C` in log space yields `k` events despite rounding.
const CROSSING_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparseMode {
    /// Keep each pixel independently with probability `rho`.
    Random { rho: f64 },
    /// Keep every `every`-th row, starting at row 0.
    Lines { every: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bg_depth: f64,
    pub object_size: f64,
    pub object_depth: f64,
    /// Top-left corner `(row, col)` at the first frame, in pixels.
    pub object_start: (f64, f64),
    /// `(rows/s, cols/s)`.
    pub object_velocity: (f64, f64),
    /// Relative magnification per second about the image centre.
    pub zoom_rate: f64,
    /// Background translation `(rows/s, cols/s)`.
    pub translation: (f64, f64),
    /// Time spanned by the frames, seconds.
    pub exposure: f64,
    pub frames: usize,
    pub t_center: f64,
    pub contrast_threshold: f64,
    pub blur_steps: usize,
    pub blur_scale: f64,
    /// Value-noise lattice spacing in pixels.
    pub texture_cell: f64,
    pub sparse: SparseMode,
    /// Standard deviation of additive sparse-depth noise, metres.
    pub sparse_noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            bg_depth: 1.2,
            object_size: 16.0,
            object_depth: 0.6,
            object_start: (24.0, 18.0),
            object_velocity: (0.0, 400.0),
            zoom_rate: 2.0,
            translation: (0.0, 40.0),
            exposure: 0.03,
            frames: 9,
            t_center: 0.1,
            contrast_threshold: 0.15,
            blur_steps: 8,
            blur_scale: 0.08,
            texture_cell: 8.0,
            sparse: SparseMode::Lines { every: 4 },
            sparse_noise: 0.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("scene: {m}")));
        if self.height == 0 || self.width == 0 || self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return bad("resolution out of range");
        }
        if !(self.object_depth > 0.0 && self.object_depth < self.bg_depth) {
            return bad("need 0 < object depth < background depth");
        }
        if !(self.exposure > 0.0) || !(self.contrast_threshold > 0.0) {
            return bad("exposure and contrast threshold must be positive");
        }
        if self.frames < 2 {
            return bad("need at least two frames");
        }
        if self.object_size <= 0.0 || self.texture_cell <= 0.0 {
            return bad("object size and texture cell must be positive");
        }
        if self.blur_steps == 0 || self.blur_scale < 0.0 {
            return bad("blur needs steps >= 1 and scale >= 0");
        }
        match self.sparse {
            SparseMode::Random { rho } if !(rho > 0.0 && rho <= 1.0) => bad("rho must be in (0, 1]"),
            SparseMode::Lines { every: 0 } => bad("line spacing must be >= 1"),
            _ => Ok(()),
        }
    }

    pub fn frame_interval(&self) -> f64 {
        self.exposure / (self.frames - 1) as f64
    }

    pub fn timestamps(&self) -> Vec<f64> {
        let t0 = self.t_center - self.exposure / 2.0;
        let dt = self.frame_interval();
        (0..self.frames).map(|k| t0 + k as f64 * dt).collect()
    }

    /// Object top-left corner at frame `k`.
    pub fn object_position(&self, k: usize) -> (f64, f64) {
        let t = k as f64 * self.frame_interval();
        (self.object_start.0 + self.object_velocity.0 * t, self.object_start.1 + self.object_velocity.1 * t)
    }

    /// A random variation of this template: object size, depths, motion
    /// direction and speed, ego-motion and texture all drawn from `seed`.
    pub fn randomized(&self, seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.clone();
        s.seed = seed;
        s.object_size = (self.object_size * rng.random_range(0.75..1.25)).round().max(2.0);
        s.bg_depth = self.bg_depth * rng.random_range(0.85..1.15);
        s.object_depth = (self.object_depth * rng.random_range(0.7..1.3)).min(0.9 * s.bg_depth);

        let speed = self.object_velocity.0.hypot(self.object_velocity.1) * rng.random_range(0.5..1.5);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        s.object_velocity = (speed * angle.sin(), speed * angle.cos());
        let (h, w) = (self.height as f64, self.width as f64);
        let centre = (
            rng.random_range(0.0..(h - s.object_size).max(1.0)),
            rng.random_range(0.0..(w - s.object_size).max(1.0)),
        );
        s.object_start = (
            centre.0 - s.object_velocity.0 * s.exposure / 2.0,
            centre.1 - s.object_velocity.1 * s.exposure / 2.0,
        );

        s.zoom_rate = self.zoom_rate * rng.random_range(0.5..1.5);
        let shift = self.translation.0.hypot(self.translation.1) * rng.random_range(0.5..1.5);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        s.translation = (shift * angle.sin(), shift * angle.cos());
        s
    }

    /// Flat `key=value` rendering, also the input of [`SceneSpec::hash`].
    pub fn describe(&self) -> String {
        let sparse = match self.sparse {
            SparseMode::Random { rho } => format!("random:{rho}"),
            SparseMode::Lines { every } => format!("lines:{every}"),
        };
        let mut s = String::new();
        let fields: [(&str, String); 20] = [
            ("height", self.height.to_string()),
            ("width", self.width.to_string()),
            ("bg_depth", self.bg_depth.to_string()),
            ("object_size", self.object_size.to_string()),
            ("object_depth", self.object_depth.to_string()),
            ("object_start", format!("{},{}", self.object_start.0, self.object_start.1)),
            ("object_velocity", format!("{},{}", self.object_velocity.0, self.object_velocity.1)),
            ("zoom_rate", self.zoom_rate.to_string()),
            ("translation", format!("{},{}", self.translation.0, self.translation.1)),
            ("exposure", self.exposure.to_string()),
            ("frames", self.frames.to_string()),
            ("t_center", self.t_center.to_string()),
            ("contrast_threshold", self.contrast_threshold.to_string()),
            ("blur_steps", self.blur_steps.to_string()),
            ("blur_scale", self.blur_scale.to_string()),
            ("texture_cell", self.texture_cell.to_string()),
            ("sparse", sparse),
            ("sparse_noise", self.sparse_noise.to_string()),
            ("seed", self.seed.to_string()),
            ("format", "1".to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.describe().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, iy: i64, ix: i64) -> f64 {
    let h = splitmix(seed ^ splitmix(iy as u64 ^ splitmix(ix as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Two-octave value noise in `[0, 1]`, defined on the whole plane.
fn value_noise(seed: u64, y: f64, x: f64, cell: f64) -> f64 {
    let mut total = 0.0;
    let mut amp = 0.0;
    for (octave, weight) in [(1.0, 0.65), (0.5, 0.35)] {
        let (fy, fx) = (y / (cell * octave), x / (cell * octave));
        let (iy, ix) = (fy.floor(), fx.floor());
        let (ty, tx) = (smooth(fy - iy), smooth(fx - ix));
        let s = seed.wrapping_add((octave * 1000.0) as u64);
        let (iy, ix) = (iy as i64, ix as i64);
        let top = lattice(s, iy, ix) * (1.0 - tx) + lattice(s, iy, ix + 1) * tx;
        let bottom = lattice(s, iy + 1, ix) * (1.0 - tx) + lattice(s, iy + 1, ix + 1) * tx;
        total += weight * (top * (1.0 - ty) + bottom * ty);
        amp += weight;
    }
    total / amp
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Sharp RGB frames, per-frame depth and their timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Tensor>,
    pub depths: Vec<Tensor>,
    pub timestamps: Vec<f64>,
}

impl Sequence {
    /// Per-frame intensity (channel mean), `[1, H, W]`.
    pub fn intensities(&self) -> Vec<Tensor> {
        self.frames.iter().map(intensity).collect()
    }
}

pub fn intensity(frame: &Tensor) -> Tensor {
    let (c, h, w) = frame.chw().expect("frame is [C,H,W]");
    Tensor::from_fn(&[1, h, w], |i| (0..c).map(|ch| frame.data()[ch * h * w + i]).sum::<f64>() / c as f64)
}

pub fn render_sequence(spec: &SceneSpec) -> Result<Sequence> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let size = spec.object_size;
    let dt = spec.frame_interval();
    let mut visible = false;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut depths = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let t = k as f64 * dt;
        let scale = 1.0 + spec.zoom_rate * t;
        let (or, oc) = spec.object_position(k);
        let mut frame = Tensor::zeros(&[3, h, w]);
        let mut depth = Tensor::full(&[1, h, w], spec.bg_depth);
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                let sy = cy + (yf - cy) / scale - spec.translation.0 * t;
                let sx = cx + (xf - cx) / scale - spec.translation.1 * t;
                let cover = overlap(yf, yf + 1.0, or, or + size) * overlap(xf, xf + 1.0, oc, oc + size);
                if cover >= 0.5 {
                    depth.data_mut()[y * w + x] = spec.object_depth;
                }
                visible |= cover > 0.0;
                for ch in 0..3 {
                    let cseed = spec.seed.wrapping_mul(31).wrapping_add(ch as u64);
                    let bg = 0.1 + 0.6 * value_noise(cseed, sy, sx, spec.texture_cell);
                    let obj = 0.35 + 0.6 * value_noise(cseed ^ 0xA5A5, yf + 0.5 - or, xf + 0.5 - oc, spec.texture_cell / 2.0);
                    frame.data_mut()[(ch * h + y) * w + x] = cover * obj + (1.0 - cover) * bg;
                }
            }
        }
        frames.push(frame);
        depths.push(depth);
    }
    if !visible {
        return Err(Error::Degenerate("object never enters the frame".into()));
    }
    Ok(Sequence { frames, depths, timestamps: spec.timestamps() })
}

/// Ideal contrast-threshold event camera. Each pixel keeps a reference log
/// intensity; whenever the linearly interpolated signal moves one threshold
/// away from it, an event fires at the interpolated crossing time and the
/// reference moves by one threshold.
pub fn simulate_events(intensities: &[Tensor], timestamps: &[f64], threshold: f64) -> Result<EventStream> {
    if intensities.len() < 2 || intensities.len() != timestamps.len() {
        return Err(Error::InvalidArgument("need at least two frames with one timestamp each".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("contrast threshold must be positive, got {threshold}")));
    }
    if timestamps.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::InvalidArgument("timestamps must increase".into()));
    }
    let (_, h, w) = intensities[0].chw()?;
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidArgument("sensor too large".into()));
    }
    if intensities.iter().any(|f| f.shape() != [1, h, w]) {
        return Err(Error::InvalidArgument("intensity frames must all be [1,H,W]".into()));
    }
    let logs: Vec<Vec<f64>> = intensities.iter().map(|f| f.data().iter().map(|v| (v + LOG_EPS).ln()).collect()).collect();
    let mut reference = logs[0].clone();
    let mut events = Vec::new();
    for k in 0..logs.len() - 1 {
        let (t0, t1) = (timestamps[k], timestamps[k + 1]);
        for (i, r) in reference.iter_mut().enumerate() {
            let (a, b) = (logs[k][i], logs[k + 1][i]);
            let (y, x) = ((i / w) as u16, (i % w) as u16);
            let polarity: i8 = if b > *r { 1 } else { -1 };
            let step = polarity as f64 * threshold;
            while polarity as f64 * (b - *r) >= threshold - CROSSING_SLACK {
                *r += step;
                let frac = if b != a { ((*r - a) / (b - a)).clamp(0.0, 1.0) } else { 1.0 };
                events.push(Event { t: t0 + frac * (t1 - t0), x, y, polarity });
            }
        }
    }
    events.sort_by(|p, q| p.t.total_cmp(&q.t));
    EventStream::new(h as u16, w as u16, timestamps[0], timestamps[timestamps.len() - 1], events)
}

fn sample_clamped(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Mean of `steps` edge-clamped bilinear zooms about the centre with factors
/// `1 + scale · k / steps`, `k = 0..steps`.
pub fn radial_blur(img: &Tensor, steps: usize, scale: f64) -> Result<Tensor> {
    if steps == 0 || !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("radial blur needs steps >= 1 and scale >= 0, got {steps}, {scale}")));
    }
    let (c, h, w) = img.chw()?;
    if steps == 1 || scale == 0.0 {
        return Ok(img.clone());
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let plane = img.channel(ch);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for k in 0..steps {
                    let f = 1.0 + scale * k as f64 / steps as f64;
                    acc += sample_clamped(plane, h, w, cy + (y as f64 - cy) / f, cx + (x as f64 - cx) / f);
                }
                out.data_mut()[(ch * h + y) * w + x] = acc / steps as f64;
            }
        }
    }
    Ok(out)
}

/// Keeps `z` on the selected pixels and zeroes the rest.
pub fn sample_sparse(z: &Tensor, mode: SparseMode, seed: u64) -> Result<Tensor> {
    let (_, _, w) = z.chw()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = match mode {
        SparseMode::Random { rho } => {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidArgument(format!("rho must be in (0, 1], got {rho}")));
            }
            (0..z.numel()).map(|_| rng.random::<f64>() < rho).collect()
        }
        SparseMode::Lines { every } => {
            if every == 0 {
                return Err(Error::InvalidArgument("line spacing must be >= 1".into()));
            }
            (0..z.numel()).map(|i| (i / w) % every == 0).collect()
        }
    };
    let mut out = z.clone();
    let mut any = false;
    for (v, &k) in out.data_mut().iter_mut().zip(&keep) {
        if k && *v > 0.0 {
            any = true;
        } else {
            *v = 0.0;
        }
    }
    if !any {
        return Err(Error::Degenerate("sparse selection is empty".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleMeta {
    pub seed: u64,
    pub spec_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub sparse: Tensor,
    pub events: EventStream,
    pub gt: Tensor,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn input(&self, bins: usize) -> Result<ModelInput> {
        Ok(ModelInput { image: self.image.clone(), sparse: self.sparse.clone(), events: self.events.voxelize(bins)? })
    }
}

/// Renders one scene into a training sample. Ground truth is the depth at the
/// middle frame.
pub fn generate_sample(spec: &SceneSpec) -> Result<Sample> {
    let seq = render_sequence(spec)?;
    let events = simulate_events(&seq.intensities(), &seq.timestamps, spec.contrast_threshold)?;
    let n = seq.frames.len() as f64;
    let mut mean = Tensor::zeros(seq.frames[0].shape());
    for f in &seq.frames {
        mean.add_assign(f);
    }
    let mean = mean.map(|v| v / n);
    let image = radial_blur(&mean, spec.blur_steps, spec.blur_scale)?;
    let gt = seq.depths[seq.depths.len() / 2].clone();
    let mut sparse = sample_sparse(&gt, spec.sparse, spec.seed)?;
    if spec.sparse_noise > 0.0 {
        let normal = Normal::new(0.0, spec.sparse_noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5EED);
        for v in sparse.data_mut().iter_mut().filter(|v| **v > 0.0) {
            *v = (*v + normal.sample(&mut rng)).max(1e-3);
        }
    }
    Ok(Sample { image, sparse, events, gt, meta: SampleMeta { seed: spec.seed, spec_hash: spec.hash() } })
}

pub const MANIFEST: &str = "manifest.txt";

fn sample_dir(index: usize) -> String {
    format!("sample_{index:05}")
}

pub fn save_sample(dir: &Path, sample: &Sample, spec: &SceneSpec) -> Result<()> {
    fs::create_dir_all(dir)?;
    io::save_tensor(dir.join("image.etsr"), &sample.image)?;
    io::save_tensor(dir.join("sparse.etsr"), &sample.sparse)?;
    io::save_tensor(dir.join("gt.etsr"), &sample.gt)?;
    io::save_events(dir.join("events.evt"), &sample.events)?;
    let meta = format!("seed={}\nspec_hash={}\n{}", sample.meta.seed, sample.meta.spec_hash, spec.describe());
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(())
}

pub fn load_sample(dir: &Path) -> Result<Sample> {
    let meta = fs::read_to_string(dir.join("meta.txt"))?;
    let field = |key: &str| {
        meta.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .ok_or_else(|| Error::Format(format!("{}: missing `{key}`", dir.display())))
    };
    let seed = field("seed")?.parse().map_err(|e| Error::Format(format!("seed: {e}")))?;
    let spec_hash = field("spec_hash")?.to_string();
    Ok(Sample {
        image: io::load_tensor(dir.join("image.etsr"))?,
        sparse: io::load_tensor(dir.join("sparse.etsr"))?,
        gt: io::load_tensor(dir.join("gt.etsr"))?,
        events: io::load_events(dir.join("events.evt"))?,
        meta: SampleMeta { seed, spec_hash },
    })
}

/// Generates `count` randomized variations of `template` in memory. Sample
/// `i` uses seed `seed ^ i`.
pub fn generate_samples(template: &SceneSpec, count: usize, seed: u64) -> Result<Vec<(SceneSpec, Sample)>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let spec = template.randomized(seed ^ i as u64);
            let sample = generate_sample(&spec)?;
            Ok((spec, sample))
        })
        .collect()
}

/// Writes samples plus a manifest of `index<TAB>relative-path` lines.
pub fn generate_dataset(template: &SceneSpec, count: usize, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    template.validate()?;
    fs::create_dir_all(out)?;
    let samples = generate_samples(template, count, seed)?;
    let mut manifest = String::new();
    let mut dirs = Vec::with_capacity(count);
    for (i, (spec, sample)) in samples.iter().enumerate() {
        let rel = sample_dir(i);
        save_sample(&out.join(&rel), sample, spec)?;
        let _ = writeln!(manifest, "{i}\t{rel}");
        dirs.push(out.join(rel));
    }
    fs::write(out.join(MANIFEST), manifest)?;
    Ok(dirs)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = fs::read_to_string(dir.join(MANIFEST))?;
    let mut samples = Vec::new();
    for (n, line) in manifest.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (index, rel) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("manifest line {}: expected index<TAB>path", n + 1)))?;
        let index: usize = index.parse().map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1)))?;
        if index != samples.len() {
            return Err(Error::Format(format!("manifest line {}: index {index} out of order", n + 1)));
        }
        samples.push(load_sample(&dir.join(rel))?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still() -> SceneSpec {
        SceneSpec { object_velocity: (0.0, 0.0), zoom_rate: 0.0, translation: (0.0, 0.0), ..SceneSpec::default() }
    }

    #[test]
    fn static_scene_has_identical_frames_and_no_events() {
        let seq = render_sequence(&still()).unwrap();
        assert!(seq.frames.windows(2).all(|p| p[0] == p[1]));
        let ev = simulate_events(&seq.intensities(), &seq.timestamps, 0.15).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn kinematics() {
        let spec = SceneSpec {
            object_start: (10.0, 10.0),
            object_velocity: (0.0, 32.0),
            exposure: 0.25 * 8.0,
            ..SceneSpec::default()
        };
        assert_eq!(spec.frame_interval(), 0.25);
        assert_eq!(spec.object_position(1), (10.0, 18.0));
    }

    #[test]
    fn depth_is_two_layer() {
        let spec = still();
        let seq = render_sequence(&spec).unwrap();
        let d = &seq.depths[0];
        assert!(d.data().iter().all(|&v| v == spec.bg_depth || v == spec.object_depth));
        let (r, c) = (spec.object_start.0 as usize + 2, spec.object_start.1 as usize + 2);
        assert_eq!(d.at3(0, r, c), spec.object_depth);
        assert_eq!(d.at3(0, 0, 0), spec.bg_depth);
    }

    #[test]
    fn object_outside_is_degenerate() {
        let spec = SceneSpec { object_start: (-500.0, -500.0), object_velocity: (0.0, 0.0), ..SceneSpec::default() };
        assert!(matches!(render_sequence(&spec), Err(Error::Degenerate(_))));
    }

    #[test]
    fn swapping_frames_flips_polarity() {
        let a = Tensor::new(&[1, 1, 2], vec![0.2, 0.8]).unwrap();
        let b = Tensor::new(&[1, 1, 2], vec![0.8, 0.2]).unwrap();
        let fwd = simulate_events(&[a.clone(), b.clone()], &[0.0, 1.0], 0.15).unwrap();
        let back = simulate_events(&[b, a], &[0.0, 1.0], 0.15).unwrap();
        assert_eq!(fwd.len(), back.len());
        let pol = |s: &EventStream, x: u16| s.events().iter().filter(|e| e.x == x).map(|e| e.polarity).collect::<Vec<_>>();
        assert!(pol(&fwd, 0).iter().all(|&p| p == 1) && pol(&back, 0).iter().all(|&p| p == -1));
    }

    #[test]
    fn blur_identity_cases() {
        let img = Tensor::from_fn(&[3, 5, 6], |i| (i * 37 % 11) as f64);
        assert_eq!(radial_blur(&img, 1, 0.3).unwrap(), img);
        assert_eq!(radial_blur(&img, 4, 0.0).unwrap(), img);
        let flat = Tensor::full(&[1, 7, 7], 0.4);
        assert!(radial_blur(&flat, 4, 0.2).unwrap().max_abs_diff(&flat).unwrap() < 1e-15);
    }

    #[test]
    fn sparse_modes() {
        let z = Tensor::full(&[1, 64, 64], 2.0);
        assert_eq!(sample_sparse(&z, SparseMode::Random { rho: 1.0 }, 1).unwrap(), z);
        let lines = sample_sparse(&z, SparseMode::Lines { every: 8 }, 1).unwrap();
        let rows = (0..64).filter(|&y| lines.data()[y * 64..(y + 1) * 64].iter().any(|&v| v > 0.0)).count();
        assert_eq!(rows, 8);
        let a = sample_sparse(&z, SparseMode::Random { rho: 0.05 }, 9).unwrap();
        assert_eq!(a, sample_sparse(&z, SparseMode::Random { rho: 0.05 }, 9).unwrap());
        assert!(sample_sparse(&Tensor::zeros(&[1, 4, 4]), SparseMode::Lines { every: 1 }, 0).is_err());
    }

    #[test]
    fn randomized_specs_stay_valid() {
        let t = SceneSpec::default();
        for seed in 0..50 {
            let s = t.randomized(seed);
            s.validate().unwrap();
            assert_eq!(s, t.randomized(seed));
        }
    }
}
