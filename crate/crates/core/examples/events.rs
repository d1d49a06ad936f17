//! Renders a moving scene, simulates the event camera over it, and bins the
//! stream into a voxel grid.
//!
//!     cargo run --release --example events

use eventdc::datagen::{render_sequence, simulate_events, SceneSpec};
use eventdc::Result;

fn main() -> Result<()> {
    let spec = SceneSpec::default();
    let seq = render_sequence(&spec)?;
    let stream = simulate_events(&seq.intensities(), &seq.timestamps, spec.contrast_threshold)?;
    let on = stream.events().iter().filter(|e| e.polarity > 0).count();
    println!("{} frames, {} events ({} on, {} off)", seq.frames.len(), stream.len(), on, stream.len() - on);

    let bins = 4;
    let grid = stream.voxelize(bins)?;
    let (_, h, w) = grid.chw()?;
    for b in 0..bins {
        let slice = &grid.data()[b * h * w..(b + 1) * h * w];
        let active = slice.iter().filter(|v| **v != 0.0).count();
        let net: f64 = slice.iter().sum();
        println!("bin {b}: {active} active pixels, net polarity {net:+}");
    }
    Ok(())
}
