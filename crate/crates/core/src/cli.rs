//! Command-line front end: `generate`, `train`, `eval`, `gradcheck` and
//! `ablate`. [`run`] returns the process exit code so it can be driven from
//! tests as well as from the binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::TrainConfig;
use crate::datagen::generate_dataset;
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradCheckConfig};
use crate::network::Ablation;
use crate::train::{evaluate, evaluation_set, load_model, train_to_dir, training_set};

#[derive(Parser, Debug)]
#[command(name = "eventdc", version, about = "Event-driven depth completion on the CPU")]
struct Cli {
    /// Worker threads for generation, batches and evaluation.
    #[arg(long, global = true, value_name = "N")]
    device_threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Ablation preset, i..ix.
    #[arg(long, value_name = "PRESET")]
    ablation: Option<Ablation>,

    /// Extra configuration overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Average metrics per image instead of pooling pixels.
    #[arg(long)]
    per_image: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (`--seed` sets the data seed).
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train, writing config.txt, loss.csv and .edck checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; generated in memory when omitted.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Print metrics of a checkpoint as key=value lines. Without `--config`
    /// the `config.txt` next to the checkpoint is used when present.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
    },
    /// Finite-difference gradient suite; exits 0 iff every case passes.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
    },
    /// Train one preset and evaluate it on the held-out set.
    Ablate {
        preset: Ablation,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        eval_data: Option<PathBuf>,
    },
}

fn resolve(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(a) = common.ablation {
        cfg.network.apply_ablation(a);
    }
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.per_image {
        cfg.per_image_metrics = true;
    }
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_metrics(dir: &Path, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.txt"), text)?;
    Ok(())
}

fn execute(command: Command, stdout: &mut (dyn Write + Send)) -> Result<bool> {
    match command {
        Command::Generate { common, samples } => {
            let mut cfg = resolve(&common)?;
            if let Some(seed) = common.seed {
                cfg.data_seed = seed;
            }
            if let Some(n) = samples {
                cfg.samples = n;
            }
            cfg.validate()?;
            let out = out_dir(&common, "data");
            let dirs = generate_dataset(&cfg.scene, cfg.samples, cfg.data_seed, &out)?;
            writeln!(stdout, "wrote {} samples to {}", dirs.len(), out.display())?;
        }
        Command::Train { common, data } => {
            let mut cfg = resolve(&common)?;
            if data.is_some() {
                cfg.train_data = data;
            }
            cfg.validate()?;
            let set = training_set(&cfg)?;
            let out = train_to_dir(&cfg, &set, &out_dir(&common, "run"))?;
            if let Some(last) = out.logs.last() {
                writeln!(stdout, "step={} l_total={}", last.step, last.loss.total)?;
            }
            writeln!(stdout, "loss log: {}", out.loss_csv.display())?;
            for c in &out.checkpoints {
                writeln!(stdout, "checkpoint: {}", c.display())?;
            }
        }
        Command::Eval { mut common, checkpoint, data } => {
            if common.config.is_none() {
                let sidecar = checkpoint.with_file_name("config.txt");
                common.config = sidecar.is_file().then_some(sidecar);
            }
            let mut cfg = resolve(&common)?;
            if data.is_some() {
                cfg.eval_data = data;
            }
            cfg.validate()?;
            let model = load_model(&cfg, &checkpoint)?;
            let report = evaluate(&model, &evaluation_set(&cfg)?, cfg.per_image_metrics)?;
            let text = report.to_string();
            write!(stdout, "{text}")?;
            if let Some(dir) = &common.out {
                write_metrics(dir, &text)?;
            }
        }
        Command::Gradcheck { seed, step } => {
            let cfg = GradCheckConfig { step, ..Default::default() };
            let mut all = true;
            for case in run_suite(seed, &cfg)? {
                let r = &case.report;
                let status = if r.passed() { "ok" } else { "FAIL" };
                all &= r.passed();
                writeln!(
                    stdout,
                    "{status:4} {:36} checked={} failures={} refined={} max_rel={:.2e} max_abs={:.2e}",
                    case.name,
                    r.checked,
                    r.failures.len(),
                    r.refined,
                    r.max_rel_err,
                    r.max_abs_err
                )?;
            }
            return Ok(all);
        }
        Command::Ablate { preset, mut common, data, eval_data } => {
            common.ablation = Some(preset);
            let mut cfg = resolve(&common)?;
            if data.is_some() {
                cfg.train_data = data;
            }
            if eval_data.is_some() {
                cfg.eval_data = eval_data;
            }
            cfg.validate()?;
            let dir = out_dir(&common, "ablate").join(preset.to_string());
            let out = train_to_dir(&cfg, &training_set(&cfg)?, &dir)?;
            let report = evaluate(&out.model, &evaluation_set(&cfg)?, cfg.per_image_metrics)?;
            let text = format!("ablation={preset}\n{report}");
            write!(stdout, "{text}")?;
            write_metrics(&dir, &text)?;
        }
    }
    Ok(true)
}

/// Parses `args` (program name first) and runs the command. Usage errors
/// exit with 2, runtime errors and failed gradient checks with 1.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send), stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.device_threads {
        if n == 0 {
            let _ = writeln!(stderr, "error: --device-threads must be positive");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let result = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| execute(cli.command, stdout)));
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
