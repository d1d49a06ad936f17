//! Trains the full model on a handful of samples and reports training RMSE.
//!
//!     cargo run --release --example overfit -- [ITERS]

use eventdc::config::TrainConfig;
use eventdc::network::Ablation;
use eventdc::train::{evaluate, training_set, Trainer};
use eventdc::Result;

fn main() -> Result<()> {
    let iters = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut cfg = TrainConfig::default();
    cfg.network.apply_ablation(Ablation::Ix);
    cfg.network.base_channels = 8;
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.scene.object_size = 8.0;
    cfg.samples = 8;
    cfg.iters = iters;

    let data = training_set(&cfg)?;
    let mut trainer = Trainer::new(cfg)?;
    println!("step 0: rmse {:.1} mm", evaluate(&trainer.model, &data, false)?.rmse_mm);
    trainer.run(&data, |log, model| {
        if (log.step + 1) % 25 == 0 {
            let r = evaluate(model, &data, false)?;
            println!("step {}: l_total {:.4}, rmse {:.1} mm", log.step + 1, log.loss.total, r.rmse_mm);
        }
        Ok(())
    })?;
    Ok(())
}
