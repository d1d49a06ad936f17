//! Modulated deformable convolution: zero offsets with unit modulation
//! reproduce a plain convolution; a half-pixel shift does not.
//!
//!     cargo run --release --example deform_conv

use eventdc::deform::deform_conv2d;
use eventdc::kernels::conv2d;
use eventdc::{Result, Tensor};

fn main() -> Result<()> {
    let (h, w) = (6, 8);
    let x = Tensor::from_fn(&[2, h, w], |i| (i as f64 * 0.37).sin());
    let k = Tensor::from_fn(&[4, 2, 3, 3], |i| (i as f64 * 0.11).cos() / 3.0);

    let plain = conv2d(&x, &k, &Tensor::zeros(&[4]), 1, 1)?;
    let zero = deform_conv2d(&x, &k, &Tensor::zeros(&[18, h, w]), Some(&Tensor::ones(&[9, h, w])))?;
    let diff = plain.data().iter().zip(zero.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("zero offsets vs conv2d: max |diff| = {diff:.2e}");

    // Shift every tap half a pixel to the right.
    let shifted = Tensor::from_fn(&[18, h, w], |i| if (i / (h * w)) % 2 == 1 { 0.5 } else { 0.0 });
    let moved = deform_conv2d(&x, &k, &shifted, None)?;
    let diff = plain.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("half-pixel shift vs conv2d: max |diff| = {diff:.3}");
    Ok(())
}
