//! Writes a small synthetic dataset and reads it back.
//!
//!     cargo run --release --example generate_dataset -- [DIR]

use std::path::PathBuf;

use eventdc::datagen::{generate_dataset, load_dataset, SceneSpec};
use eventdc::Result;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("eventdc-example-data"));
    let scene = SceneSpec { height: 32, width: 32, object_size: 8.0, object_start: (10.0, 6.0), ..SceneSpec::default() };
    let dirs = generate_dataset(&scene, 4, 17, &dir)?;
    println!("wrote {} samples under {}", dirs.len(), dir.display());

    for (i, s) in load_dataset(&dir)?.iter().enumerate() {
        let valid = s.sparse.data().iter().filter(|v| **v > 0.0).count();
        let gt = s.gt.data();
        let (lo, hi) = gt.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        println!("sample {i}: {} events, {valid} sparse points, depth {lo:.2}..{hi:.2} m", s.events.len());
    }
    Ok(())
}
