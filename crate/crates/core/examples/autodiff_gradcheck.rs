//! Builds a small graph on the tape, backpropagates, and compares the result
//! with central differences. Then runs the built-in gradient suite.
//!
//!     cargo run --release --example autodiff_gradcheck

use eventdc::gradcheck::{check_gradients, run_suite, GradCheckConfig};
use eventdc::{Result, Tape, Tensor};

fn main() -> Result<()> {
    let x = Tensor::from_fn(&[2, 5, 5], |i| ((i * 7 % 11) as f64 - 5.0) / 5.0);
    let w = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5 % 13) as f64 - 6.0) / 10.0);
    let b = Tensor::new(&[3], vec![0.1, -0.2, 0.3])?;

    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.param(x.clone()), tape.param(w.clone()), tape.param(b.clone()));
    let y = tape.conv2d(xv, wv, bv, 1, 1)?;
    let y = tape.sigmoid(y);
    let loss = tape.sum(y);
    tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item()?);
    println!("|dL/dw|max = {:.6}", tape.grad(wv).map_or(0.0, |g| g.max_abs()));

    let report = check_gradients(
        &[x, w, b],
        |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
            let y = t.sigmoid(y);
            Ok(t.sum(y))
        },
        &GradCheckConfig::default(),
    )?;
    println!("conv+sigmoid: {} entries, max rel err {:.2e}, passed={}", report.checked, report.max_rel_err, report.passed());

    for case in run_suite(0, &GradCheckConfig::default())? {
        println!("{:4} {}", if case.report.passed() { "ok" } else { "FAIL" }, case.name);
    }
    Ok(())
}
