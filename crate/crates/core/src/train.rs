//! Mini-batch training, evaluation and checkpoints.
//!
//! Per-sample forward/backward passes run in parallel on independent tapes;
//! their gradients are summed in sample order so results do not depend on
//! scheduling.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::datagen::{generate_samples, load_dataset, Sample, SceneSpec};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{compute_metrics, MetricsReport};
use crate::network::{LossReport, Model, ModelInput};
use crate::optim::{lr_at, AdamW};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const LOSS_CSV_HEADER: &str = "step,lr,l_rec,l_str,l_mot,l_total";

/// A sample with its event grid already voxelized.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub input: ModelInput,
    pub gt: Tensor,
}

pub fn prepare(samples: &[Sample], bins: usize) -> Result<Vec<Prepared>> {
    samples.iter().map(|s| Ok(Prepared { input: s.input(bins)?, gt: s.gt.clone() })).collect()
}

/// Reads a dataset directory, or generates `count` samples from `scene`
/// with `seed` when no directory is given.
pub fn load_or_generate(dir: Option<&Path>, scene: &SceneSpec, count: usize, seed: u64, bins: usize) -> Result<Vec<Prepared>> {
    let samples = match dir {
        Some(dir) => load_dataset(dir)?,
        None => generate_samples(scene, count, seed)?.into_iter().map(|(_, s)| s).collect(),
    };
    prepare(&samples, bins)
}

pub fn training_set(config: &TrainConfig) -> Result<Vec<Prepared>> {
    let c = config;
    load_or_generate(c.train_data.as_deref(), &c.scene, c.samples, c.data_seed, c.network.event_bins)
}

pub fn evaluation_set(config: &TrainConfig) -> Result<Vec<Prepared>> {
    let c = config;
    load_or_generate(c.eval_data.as_deref(), &c.scene, c.eval_samples, c.eval_seed, c.network.event_bins)
}

/// Loss terms and parameter gradients of one sample.
pub fn sample_gradients(model: &Model, x: &ModelInput, z: &Tensor) -> Result<(LossReport, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &p, x)?;
    let losses = model.losses(&mut tape, &p, &fwd, z)?;
    tape.backward(losses.total)?;
    let report = losses.report(&tape)?;
    let grads = p.vars().iter().map(|&v| tape.grad_or_zeros(v)).collect();
    Ok((report, grads))
}

/// Batch-mean losses and gradients.
pub fn batch_gradients(model: &Model, batch: &[&Prepared]) -> Result<(LossReport, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let results: Vec<_> = batch.par_iter().map(|s| sample_gradients(model, &s.input, &s.gt)).collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut iter = results.into_iter();
    let (first, mut grads) = iter.next().expect("non-empty batch");
    let mut sum = [first.rec, first.structure, first.motion, first.total];
    let mut n_valid = first.n_valid;
    for (r, g) in iter {
        for (a, b) in sum.iter_mut().zip([r.rec, r.structure, r.motion, r.total]) {
            *a += b;
        }
        n_valid += r.n_valid;
        for (acc, g) in grads.iter_mut().zip(&g) {
            acc.add_assign(g);
        }
    }
    for g in &mut grads {
        for v in g.data_mut() {
            *v *= scale;
        }
    }
    let [rec, structure, motion, total] = sum.map(|v| v * scale);
    Ok((LossReport { rec, structure, motion, total, n_valid }, grads))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: LossReport,
}

impl StepLog {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!("{},{},{},{},{},{}", self.step, self.lr, l.rec, l.structure, l.motion, l.total)
    }
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.network.clone(), config.seed)?;
        Ok(Self::with_model(model, config))
    }

    pub fn with_model(model: Model, config: TrainConfig) -> Self {
        let optimizer = AdamW::new(config.adamw, model.store.values());
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xDA7A_0BDE);
        Trainer { model, config, optimizer, rng, order: Vec::new(), cursor: 0, step: 0 }
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        (0..self.config.batch)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.order = (0..n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// One optimizer step on the next batch drawn from `data`.
    pub fn step(&mut self, data: &[Prepared]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        if self.order.len() != data.len() {
            self.order.clear();
            self.cursor = 0;
        }
        let idx = self.next_batch(data.len());
        let batch: Vec<&Prepared> = idx.iter().map(|&i| &data[i]).collect();
        let lr = lr_at(self.step, self.config.iters, &self.config.schedule)?;
        let (loss, grads) = batch_gradients(&self.model, &batch)?;
        self.optimizer.step(self.model.store.values_mut(), &grads, lr)?;
        let log = StepLog { step: self.step, lr, loss };
        self.step += 1;
        Ok(log)
    }

    /// Runs the configured number of steps, calling `on_step` after each.
    pub fn run(&mut self, data: &[Prepared], mut on_step: impl FnMut(&StepLog, &Model) -> Result<()>) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.config.iters);
        while self.step < self.config.iters {
            let log = self.step(data)?;
            on_step(&log, &self.model)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

pub fn evaluate(model: &Model, data: &[Prepared], per_image: bool) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let pairs: Vec<(Tensor, Tensor)> =
        data.par_iter().map(|s| Ok((model.predict(&s.input)?, s.gt.clone()))).collect::<Result<_>>()?;
    compute_metrics(&pairs, per_image)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    io::write_checkpoint(&mut w, store.iter())?;
    w.flush()?;
    Ok(())
}

/// Rebuilds a model for `config` and overwrites its parameters from `path`.
pub fn load_model(config: &TrainConfig, path: &Path) -> Result<Model> {
    let mut model = Model::new(config.network.clone(), config.seed)?;
    let entries = io::read_checkpoint(BufReader::new(File::open(path)?))?;
    model.store.load(entries)?;
    Ok(model)
}

/// Files written by [`train_to_dir`].
#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub loss_csv: PathBuf,
    pub config: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub logs: Vec<StepLog>,
    pub model: Model,
}

/// Trains on `data`, writing `config.txt`, `loss.csv`, periodic
/// `step_XXXXXX.edck` checkpoints and `final.edck` into `out`.
pub fn train_to_dir(config: &TrainConfig, data: &[Prepared], out: &Path) -> Result<TrainOutputs> {
    fs::create_dir_all(out)?;
    let config_path = out.join("config.txt");
    fs::write(&config_path, config.to_text())?;
    let loss_csv = out.join("loss.csv");
    let mut csv = BufWriter::new(File::create(&loss_csv)?);
    writeln!(csv, "{LOSS_CSV_HEADER}")?;
    let mut checkpoints = Vec::new();
    let every = config.checkpoint_every;
    let mut trainer = Trainer::new(config.clone())?;
    let logs = trainer.run(data, |log, model| {
        writeln!(csv, "{}", log.csv_row())?;
        if every > 0 && (log.step + 1) % every == 0 {
            let path = out.join(format!("step_{:06}.edck", log.step + 1));
            save_checkpoint(&path, &model.store)?;
            checkpoints.push(path);
        }
        Ok(())
    })?;
    csv.flush()?;
    let final_path = out.join("final.edck");
    save_checkpoint(&final_path, &trainer.model.store)?;
    checkpoints.push(final_path);
    Ok(TrainOutputs { loss_csv, config: config_path, checkpoints, logs, model: trainer.model })
}
