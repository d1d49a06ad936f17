//! Flat `key=value` configuration covering training, the network and the
//! scene template. Blank lines and `#` comments are ignored; later keys
//! override earlier ones, and `ablation=<i..ix>` resets the four switches.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::datagen::{SceneSpec, SparseMode};
use crate::deform::DeformKernelConfig;
use crate::error::{Error, Result};
use crate::network::{Ablation, NetworkConfig};
use crate::optim::{AdamWConfig, Schedule};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub iters: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub adamw: AdamWConfig,
    /// Save a checkpoint every this many steps; 0 saves only the final one.
    pub checkpoint_every: usize,
    /// Samples written by `generate`, or generated in memory when
    /// `train_data` is unset.
    pub samples: usize,
    pub data_seed: u64,
    /// Held-out samples generated when `eval_data` is unset.
    pub eval_samples: usize,
    pub eval_seed: u64,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub per_image_metrics: bool,
    pub network: NetworkConfig,
    pub scene: SceneSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            iters: 300,
            batch: 2,
            schedule: Schedule::default(),
            adamw: AdamWConfig::default(),
            checkpoint_every: 0,
            samples: 8,
            data_seed: 7,
            eval_samples: 32,
            eval_seed: 0xE0A1,
            train_data: None,
            eval_data: None,
            per_image_metrics: false,
            network: NetworkConfig::default(),
            scene: SceneSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::InvalidArgument(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::InvalidArgument(format!("{key}: expected `a,b`, got `{value}`")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse_sparse(value: &str) -> Result<SparseMode> {
    match value.split_once(':') {
        Some(("random", rho)) => Ok(SparseMode::Random { rho: parse("scene.sparse", rho)? }),
        Some(("lines", every)) => Ok(SparseMode::Lines { every: parse("scene.sparse", every)? }),
        _ => Err(Error::InvalidArgument(format!("scene.sparse: expected random:<rho> or lines:<r>, got `{value}`"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let n = &mut self.network;
        let s = &mut self.scene;
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "iters" => self.iters = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "lr_warm_start" => self.schedule.warm_start = parse(key, v)?,
            "lr_peak" => self.schedule.peak = parse(key, v)?,
            "warmup_frac" => self.schedule.warmup_frac = parse(key, v)?,
            "lr_final" => self.schedule.final_lr = parse(key, v)?,
            "adam_beta1" => self.adamw.beta1 = parse(key, v)?,
            "adam_beta2" => self.adamw.beta2 = parse(key, v)?,
            "adam_eps" => self.adamw.eps = parse(key, v)?,
            "weight_decay" => self.adamw.weight_decay = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "eval_samples" => self.eval_samples = parse(key, v)?,
            "eval_seed" => self.eval_seed = parse(key, v)?,
            "train_data" => self.train_data = parse_path(v),
            "eval_data" => self.eval_data = parse_path(v),
            "per_image_metrics" => self.per_image_metrics = parse(key, v)?,
            "ablation" => n.apply_ablation(parse::<Ablation>(key, v)?),
            "base_channels" => n.base_channels = parse(key, v)?,
            "kernel_size" => {
                let k = parse(key, v)?;
                n.kernel = DeformKernelConfig { kh: k, kw: k };
            }
            "event_bins" => n.event_bins = parse(key, v)?,
            "use_rgb" => n.use_rgb = parse(key, v)?,
            "use_event" => n.use_event = parse(key, v)?,
            "encoder_mode" => n.encoder_mode = parse(key, v)?,
            "decoder_mode" => n.decoder_mode = parse(key, v)?,
            "lambda" => n.lambda = parse(key, v)?,
            "mu" => n.mu = parse(key, v)?,
            "structure_eps" => n.structure_eps = parse(key, v)?,
            "ema_use_predicted_modulation" => n.ema_use_predicted_modulation = parse(key, v)?,
            "scene.height" => s.height = parse(key, v)?,
            "scene.width" => s.width = parse(key, v)?,
            "scene.bg_depth" => s.bg_depth = parse(key, v)?,
            "scene.object_size" => s.object_size = parse(key, v)?,
            "scene.object_depth" => s.object_depth = parse(key, v)?,
            "scene.object_start" => s.object_start = parse_pair(key, v)?,
            "scene.object_velocity" => s.object_velocity = parse_pair(key, v)?,
            "scene.zoom_rate" => s.zoom_rate = parse(key, v)?,
            "scene.translation" => s.translation = parse_pair(key, v)?,
            "scene.exposure" => s.exposure = parse(key, v)?,
            "scene.frames" => s.frames = parse(key, v)?,
            "scene.t_center" => s.t_center = parse(key, v)?,
            "scene.contrast_threshold" => s.contrast_threshold = parse(key, v)?,
            "scene.blur_steps" => s.blur_steps = parse(key, v)?,
            "scene.blur_scale" => s.blur_scale = parse(key, v)?,
            "scene.texture_cell" => s.texture_cell = parse(key, v)?,
            "scene.sparse" => s.sparse = parse_sparse(v)?,
            "scene.sparse_noise" => s.sparse_noise = parse(key, v)?,
            other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("config line {}: expected key=value", i + 1)))?;
            self.set(k, v).map_err(|e| Error::InvalidArgument(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()));
        }
        self.schedule.validate()?;
        self.network.validate()?;
        self.scene.validate()
    }

    /// Full `key=value` rendering that [`TrainConfig::parse_str`] reads back.
    pub fn to_text(&self) -> String {
        let n = &self.network;
        let s = &self.scene;
        let sparse = match s.sparse {
            SparseMode::Random { rho } => format!("random:{rho}"),
            SparseMode::Lines { every } => format!("lines:{every}"),
        };
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("iters", self.iters.to_string()),
            ("batch", self.batch.to_string()),
            ("lr_warm_start", self.schedule.warm_start.to_string()),
            ("lr_peak", self.schedule.peak.to_string()),
            ("warmup_frac", self.schedule.warmup_frac.to_string()),
            ("lr_final", self.schedule.final_lr.to_string()),
            ("adam_beta1", self.adamw.beta1.to_string()),
            ("adam_beta2", self.adamw.beta2.to_string()),
            ("adam_eps", self.adamw.eps.to_string()),
            ("weight_decay", self.adamw.weight_decay.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("samples", self.samples.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("eval_samples", self.eval_samples.to_string()),
            ("eval_seed", self.eval_seed.to_string()),
            ("train_data", path_text(&self.train_data)),
            ("eval_data", path_text(&self.eval_data)),
            ("per_image_metrics", self.per_image_metrics.to_string()),
            ("base_channels", n.base_channels.to_string()),
            ("kernel_size", n.kernel.kh.to_string()),
            ("event_bins", n.event_bins.to_string()),
            ("use_rgb", n.use_rgb.to_string()),
            ("use_event", n.use_event.to_string()),
            ("encoder_mode", n.encoder_mode.to_string()),
            ("decoder_mode", n.decoder_mode.to_string()),
            ("lambda", n.lambda.to_string()),
            ("mu", n.mu.to_string()),
            ("structure_eps", n.structure_eps.to_string()),
            ("ema_use_predicted_modulation", n.ema_use_predicted_modulation.to_string()),
            ("scene.height", s.height.to_string()),
            ("scene.width", s.width.to_string()),
            ("scene.bg_depth", s.bg_depth.to_string()),
            ("scene.object_size", s.object_size.to_string()),
            ("scene.object_depth", s.object_depth.to_string()),
            ("scene.object_start", format!("{},{}", s.object_start.0, s.object_start.1)),
            ("scene.object_velocity", format!("{},{}", s.object_velocity.0, s.object_velocity.1)),
            ("scene.zoom_rate", s.zoom_rate.to_string()),
            ("scene.translation", format!("{},{}", s.translation.0, s.translation.1)),
            ("scene.exposure", s.exposure.to_string()),
            ("scene.frames", s.frames.to_string()),
            ("scene.t_center", s.t_center.to_string()),
            ("scene.contrast_threshold", s.contrast_threshold.to_string()),
            ("scene.blur_steps", s.blur_steps.to_string()),
            ("scene.blur_scale", s.blur_scale.to_string()),
            ("scene.texture_cell", s.texture_cell.to_string()),
            ("scene.sparse", sparse),
            ("scene.sparse_noise", s.sparse_noise.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in lines {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DecoderMode, EncoderMode};

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.set("ablation", "vii").unwrap();
        cfg.set("scene.sparse", "random:0.05").unwrap();
        cfg.set("lr_peak", "0.0015").unwrap();
        cfg.set("train_data", "data/train").unwrap();
        assert_eq!(TrainConfig::parse_str(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn ablation_then_override() {
        let cfg = TrainConfig::parse_str("ablation = iv # tri-modal\nencoder_mode=ema\n\n").unwrap();
        assert_eq!(cfg.network.encoder_mode, EncoderMode::Ema);
        assert_eq!(cfg.network.decoder_mode, DecoderMode::Plain);
    }

    #[test]
    fn errors_name_the_line() {
        let err = TrainConfig::parse_str("seed=1\nbogus=2").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("bogus"), "{err}");
        assert!(TrainConfig::parse_str("iters").is_err());
        assert!(TrainConfig::parse_str("iters=-3").is_err());
    }
}
