//! One EMA encoder stage and one LDF decoder stage on random features.
//!
//!     cargo run --release --example blocks

use eventdc::deform::DeformKernelConfig;
use eventdc::ema::{ema_forward, EmaStageParams};
use eventdc::ldf::{binarize_mask, ldf_forward, LdfStageParams};
use eventdc::params::{Initializer, ParamStore};
use eventdc::{Result, Tape, Tensor};

const K: DeformKernelConfig = DeformKernelConfig { kh: 3, kw: 3 };

fn main() -> Result<()> {
    let (c, h, w) = (4, 12, 16);
    let feature = |phase: f64| Tensor::from_fn(&[c, h, w], |i| (i as f64 * 0.13 + phase).sin());

    let mut store = ParamStore::new();
    let ema = EmaStageParams::new(&mut Initializer::new(&mut store, 1), "ema.1", c, K)?;
    let ldf = LdfStageParams::new(&mut Initializer::new(&mut store, 2), "ldf.1", c, K)?;

    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let (rgb, depth, event) = (tape.constant(feature(0.0)), tape.constant(feature(1.0)), tape.constant(feature(2.0)));

    let out = ema_forward(&mut tape, &p, &ema, rgb, depth, event, K, false)?;
    println!("EMA fused {:?}, |fused|max = {:.4}", tape.value(out.fused).shape(), tape.value(out.fused).max_abs());

    let out = ldf_forward(&mut tape, &p, &ldf, out.fused, event, K)?;
    let mask = tape.value(out.mask);
    println!("LDF refined {:?}, mask mean {:.3}", tape.value(out.refined).shape(), mask.sum() / mask.numel() as f64);
    println!("pixels above mean mask: {}", binarize_mask(mask).sum());
    Ok(())
}
