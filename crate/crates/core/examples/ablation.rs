//! Short comparison of ablation presets on the same data.
//!
//!     cargo run --release --example ablation -- [ITERS] [PRESET...]

use eventdc::config::TrainConfig;
use eventdc::network::Ablation;
use eventdc::train::{evaluate, evaluation_set, training_set, Trainer};
use eventdc::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let iters = args.next().and_then(|s| s.parse().ok()).unwrap_or(60);
    let presets: Vec<Ablation> = args.filter_map(|s| s.parse().ok()).collect();
    let presets = if presets.is_empty() { vec![Ablation::I, Ablation::Iv, Ablation::Ix] } else { presets };

    let mut base = TrainConfig::default();
    base.network.base_channels = 4;
    base.scene.height = 32;
    base.scene.width = 32;
    base.scene.object_size = 8.0;
    base.samples = 8;
    base.eval_samples = 4;
    base.iters = iters;
    let (train, test) = (training_set(&base)?, evaluation_set(&base)?);

    for a in presets {
        let mut cfg = base.clone();
        cfg.network.apply_ablation(a);
        let mut trainer = Trainer::new(cfg)?;
        trainer.run(&train, |_, _| Ok(()))?;
        let r = evaluate(&trainer.model, &test, false)?;
        println!("{a:>4}: rmse {:.1} mm, mae {:.1} mm, delta1.05 {:.1}%", r.rmse_mm, r.mae_mm, r.delta[0]);
    }
    Ok(())
}
