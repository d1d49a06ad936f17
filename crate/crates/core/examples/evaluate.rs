//! Trains briefly into a run directory, reloads the final checkpoint with
//! its config sidecar, and evaluates on a held-out set.
//!
//!     cargo run --release --example evaluate

use eventdc::config::TrainConfig;
use eventdc::network::Ablation;
use eventdc::train::{evaluate, evaluation_set, load_model, train_to_dir, training_set};
use eventdc::Result;

fn main() -> Result<()> {
    let mut cfg = TrainConfig::default();
    cfg.network.apply_ablation(Ablation::Viii);
    cfg.network.base_channels = 4;
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.scene.object_size = 8.0;
    cfg.samples = 4;
    cfg.eval_samples = 4;
    cfg.iters = 20;

    let dir = std::env::temp_dir().join("eventdc-example-run");
    let out = train_to_dir(&cfg, &training_set(&cfg)?, &dir)?;
    println!("loss log {}", out.loss_csv.display());

    let final_ckpt = out.checkpoints.last().expect("final checkpoint");
    let model = load_model(&TrainConfig::load(&out.config)?, final_ckpt)?;
    let report = evaluate(&model, &evaluation_set(&cfg)?, false)?;
    print!("{report}");
    Ok(())
}
