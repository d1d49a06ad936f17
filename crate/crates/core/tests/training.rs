mod common;

use std::fs;

use common::*;
use eventdc::cli;
use eventdc::config::TrainConfig;
use eventdc::datagen::SceneSpec;
use eventdc::metrics::compute_metrics;
use eventdc::network::Ablation;
use eventdc::optim::{lr_at, AdamW, AdamWConfig, Schedule};
use eventdc::train::{evaluate, load_model, train_to_dir, training_set, Trainer, LOSS_CSV_HEADER};
use eventdc::Tensor;
use rand::Rng;

/// Pooled metrics with explicit loops over images, rows and columns.
fn metrics_oracle(pairs: &[(Tensor, Tensor)]) -> [f64; 6] {
    let (mut sq, mut abs, mut rel, mut n) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0.0; 3];
    for (d, z) in pairs {
        let (h, w) = (z.shape()[1], z.shape()[2]);
        for y in 0..h {
            for x in 0..w {
                let (dv, zv) = (d.at3(0, y, x), z.at3(0, y, x));
                if zv <= 0.0 {
                    continue;
                }
                sq += (dv - zv).powi(2);
                abs += (dv - zv).abs();
                rel += (dv - zv).abs() / zv;
                let dc = if dv < 1e-3 { 1e-3 } else { dv };
                let ratio = if dc / zv > zv / dc { dc / zv } else { zv / dc };
                for (k, t) in [1.05, 1.10, 1.15].iter().enumerate() {
                    if ratio < *t {
                        hits[k] += 1.0;
                    }
                }
                n += 1.0;
            }
        }
    }
    [1000.0 * (sq / n).sqrt(), 1000.0 * abs / n, rel / n, 100.0 * hits[0] / n, 100.0 * hits[1] / n, 100.0 * hits[2] / n]
}

fn random_pairs(seed: u64, count: usize) -> Vec<(Tensor, Tensor)> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| {
            let z = Tensor::from_fn(&[1, 6, 5], |_| if r.random::<f64>() < 0.3 { 0.0 } else { r.random_range(0.5..5.0) });
            let d = Tensor::from_fn(z.shape(), |i| z.data()[i] * r.random_range(0.85..1.15) + r.random_range(-0.05..0.05));
            (d, z)
        })
        .collect()
}

#[test]
fn metrics_match_loop_oracle() {
    let pairs = random_pairs(1, 100);
    let r = compute_metrics(&pairs, false).unwrap();
    let got = [r.rmse_mm, r.mae_mm, r.rel, r.delta[0], r.delta[1], r.delta[2]];
    for (g, w) in got.iter().zip(metrics_oracle(&pairs)) {
        assert!((g - w).abs() <= 1e-9 * w.abs().max(1e-12), "{got:?}");
    }
    assert!(r.rmse_mm >= r.mae_mm && r.delta[0] <= r.delta[1] && r.delta[1] <= r.delta[2] && r.delta[2] <= 100.0);
}

#[test]
fn metrics_are_permutation_invariant_and_per_image_is_a_mean() {
    let pairs = random_pairs(2, 7);
    let a = compute_metrics(&pairs, false).unwrap();
    let mut rev = pairs.clone();
    rev.reverse();
    let b = compute_metrics(&rev, false).unwrap();
    assert!((a.rmse_mm - b.rmse_mm).abs() < 1e-9 && (a.mae_mm - b.mae_mm).abs() < 1e-9);

    let per = compute_metrics(&pairs, true).unwrap();
    let mean_mae = pairs.iter().map(|p| compute_metrics(std::slice::from_ref(p), false).unwrap().mae_mm).sum::<f64>() / 7.0;
    assert!((per.mae_mm - mean_mae).abs() < 1e-9);
}

#[test]
fn adam_matches_reference_loop_for_ten_steps() {
    let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
    let mut r = rng(3);
    let grads: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut params = vec![Tensor::scalar(0.7)];
    let mut opt = AdamW::new(cfg, &params);
    let (mut theta, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
    for (t, &g) in grads.iter().enumerate() {
        let lr = 0.01 * (t + 1) as f64;
        opt.step(&mut params, &[Tensor::scalar(g)], lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
        let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
        theta -= lr * mh / (vh.sqrt() + 1e-8);
        assert!((params[0].data()[0] - theta).abs() < 1e-12);
    }
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    let mut p = vec![Tensor::scalar(0.0)];
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &p);
    opt.step(&mut p, &[Tensor::scalar(1.0)], 0.05).unwrap();
    assert!((p[0].data()[0] + 0.05).abs() < 1e-9);
}

#[test]
fn schedule_is_continuous_and_monotone_in_each_phase() {
    let s = Schedule::default();
    let total = 1000;
    assert_eq!(lr_at(0, total, &s).unwrap(), 0.00002);
    assert!((lr_at(100, total, &s).unwrap() - 0.001).abs() < 1e-15);
    assert!((lr_at(101, total, &s).unwrap() - 0.001).abs() < 1e-6);
    assert!((lr_at(total, total, &s).unwrap() - 0.0002).abs() < 1e-15);
    let lrs: Vec<f64> = (0..=total).map(|t| lr_at(t, total, &s).unwrap()).collect();
    assert!(lrs[..=100].windows(2).all(|p| p[1] > p[0]));
    assert!(lrs[100..].windows(2).all(|p| p[1] <= p[0]));
    assert!(lr_at(total + 1, total, &s).is_err());
}

fn tiny_config(a: Ablation, iters: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.network.apply_ablation(a);
    cfg.network.base_channels = 4;
    cfg.scene = SceneSpec { height: 16, width: 16, object_size: 5.0, object_start: (4.0, 3.0), ..SceneSpec::default() };
    cfg.samples = 4;
    cfg.eval_samples = 2;
    cfg.iters = iters;
    cfg
}

#[test]
fn training_reduces_loss() {
    let mut cfg = tiny_config(Ablation::Ix, 60);
    cfg.schedule.peak = 0.01;
    cfg.schedule.final_lr = 0.002;
    let data = training_set(&cfg).unwrap();
    let mut trainer = Trainer::new(cfg).unwrap();
    let before = evaluate(&trainer.model, &data, false).unwrap();
    trainer.run(&data, |_, _| Ok(())).unwrap();
    let after = evaluate(&trainer.model, &data, false).unwrap();
    assert!(after.rmse_mm < 0.5 * before.rmse_mm, "{} -> {}", before.rmse_mm, after.rmse_mm);
}

#[test]
fn same_seed_gives_identical_run() {
    let cfg = tiny_config(Ablation::Ix, 4);
    let data = training_set(&cfg).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let oa = train_to_dir(&cfg, &data, a.path()).unwrap();
    let ob = train_to_dir(&cfg, &data, b.path()).unwrap();
    let csv = fs::read(&oa.loss_csv).unwrap();
    assert_eq!(csv, fs::read(&ob.loss_csv).unwrap());
    assert_eq!(fs::read(a.path().join("final.edck")).unwrap(), fs::read(b.path().join("final.edck")).unwrap());

    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(LOSS_CSV_HEADER));
    assert_eq!(lines.count(), 4);

    let mut other = cfg.clone();
    other.seed = 8;
    let oc = train_to_dir(&other, &data, tempfile::tempdir().unwrap().path()).unwrap();
    assert_ne!(oc.logs, oa.logs);
}

#[test]
fn checkpoints_restore_the_model() {
    let mut cfg = tiny_config(Ablation::Viii, 4);
    cfg.checkpoint_every = 2;
    let data = training_set(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = train_to_dir(&cfg, &data, dir.path()).unwrap();
    let names: Vec<_> = out.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().to_string()).collect();
    assert_eq!(names, ["step_000002.edck", "step_000004.edck", "final.edck"]);
    let restored = load_model(&TrainConfig::load(&out.config).unwrap(), &out.checkpoints[2]).unwrap();
    assert_eq!(restored.store, out.model.store);
    assert_eq!(restored.predict(&data[0].input).unwrap(), out.model.predict(&data[0].input).unwrap());

    let mismatched = tiny_config(Ablation::Iv, 4);
    assert!(load_model(&mismatched, &out.checkpoints[2]).is_err());
}

fn run_cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(args.iter().copied(), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

#[test]
fn cli_generate_train_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg_path = root.join("tiny.cfg");
    let mut cfg = tiny_config(Ablation::Ix, 3);
    cfg.samples = 2;
    fs::write(&cfg_path, cfg.to_text()).unwrap();
    let (c, d) = (cfg_path.to_str().unwrap(), root.join("data"));
    let data = d.to_str().unwrap();
    let run = root.join("run");
    let run = run.to_str().unwrap();

    let (code, out, err) = run_cli(&["eventdc", "--device-threads", "1", "generate", "--config", c, "--out", data]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("wrote 2 samples"));

    let (code, _, err) = run_cli(&["eventdc", "train", "--config", c, "--data", data, "--out", run, "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(root.join("run/loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let ckpt = root.join("run/final.edck");
    let (code, out, err) = run_cli(&["eventdc", "eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data]);
    assert_eq!(code, 0, "{err}");
    let keys: Vec<&str> = out.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["rmse_mm", "mae_mm", "rel", "delta_1.05", "delta_1.10", "delta_1.15", "n_valid"]);

    let (code, _, err) = run_cli(&["eventdc", "eval", "--checkpoint", ckpt.to_str().unwrap(), "--ablation", "iv"]);
    assert_ne!(code, 0);
    assert!(err.contains("error"), "{err}");
}

#[test]
fn cli_ablate_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.cfg");
    fs::write(&cfg_path, tiny_config(Ablation::I, 2).to_text()).unwrap();
    let out = dir.path().join("abl");
    let (code, text, err) =
        run_cli(&["eventdc", "ablate", "vii", "--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(text.starts_with("ablation=vii\nrmse_mm="), "{text}");
    let saved = TrainConfig::load(&out.join("vii/config.txt")).unwrap();
    assert_eq!(saved.network.decoder_mode.to_string(), "dconv");
    assert!(out.join("vii/metrics.txt").is_file());
}

#[test]
fn cli_rejects_bad_usage() {
    for args in [
        &["eventdc"][..],
        &["eventdc", "fly"],
        &["eventdc", "train", "--nope"],
        &["eventdc", "ablate", "xi"],
        &["eventdc", "train", "--seed", "abc"],
    ] {
        let (code, _, err) = run_cli(args);
        assert_eq!(code, 2, "{args:?}");
        assert!(err.starts_with("error:") || err.contains("Usage"), "{args:?}: {err}");
    }
    let (code, _, err) = run_cli(&["eventdc", "train", "--set", "iters=-1"]);
    assert_eq!(code, 1);
    assert!(err.contains("iters"), "{err}");
}
