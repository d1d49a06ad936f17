//! Reference implementations shared by the integration tests. Each one is a
//! direct loop transcription, kept separate from the library code paths.
#![allow(dead_code)]

use eventdc::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Six nested loops over (co, oy, ox, ci, ki, kj).
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co_n * oh * ow];
    for co in 0..co_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b.data()[co];
                for ci in 0..ci_n {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let xv = x.data()[(ci * h + iy as usize) * wd + ix as usize];
                            let wv = w.data()[((co * ci_n + ci) * kh + ki) * kw + kj];
                            acc += xv * wv;
                        }
                    }
                }
                out[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(&[co_n, oh, ow], out).unwrap()
}

/// Pixel read with zero padding.
fn pixel(x: &Tensor, c: usize, y: i64, xx: i64) -> f64 {
    let (h, w) = (x.shape()[1] as i64, x.shape()[2] as i64);
    if y < 0 || xx < 0 || y >= h || xx >= w {
        0.0
    } else {
        x.data()[((c as i64 * h + y) * w + xx) as usize]
    }
}

/// Explicit four-neighbour bilinear interpolation.
pub fn naive_bilinear(x: &Tensor, c: usize, py: f64, px: f64) -> f64 {
    let y0 = py.floor();
    let x0 = px.floor();
    let (ty, tx) = (py - y0, px - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    pixel(x, c, y0, x0) * (1.0 - ty) * (1.0 - tx)
        + pixel(x, c, y0, x0 + 1) * (1.0 - ty) * tx
        + pixel(x, c, y0 + 1, x0) * ty * (1.0 - tx)
        + pixel(x, c, y0 + 1, x0 + 1) * ty * tx
}

/// Per-pixel modulated deformable convolution:
/// out(p0) = Σ_k w_k · x(p0 + p_k + Δp_k) · Δm_k.
pub fn naive_deform_conv2d(x: &Tensor, w: &Tensor, offsets: &Tensor, modulation: Option<&Tensor>) -> Tensor {
    let (ci_n, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let mut out = Tensor::zeros(&[co_n, h, wd]);
    for co in 0..co_n {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = 0.0;
                for ki in 0..kh {
                    for kj in 0..kw {
                        let k = ki * kw + kj;
                        let dy = offsets.at3(2 * k, y, xx);
                        let dx = offsets.at3(2 * k + 1, y, xx);
                        let m = modulation.map_or(1.0, |m| m.at3(k, y, xx));
                        let py = y as f64 + ki as f64 - (kh / 2) as f64 + dy;
                        let px = xx as f64 + kj as f64 - (kw / 2) as f64 + dx;
                        for ci in 0..ci_n {
                            let wv = w.data()[((co * ci_n + ci) * kh + ki) * kw + kj];
                            acc += wv * naive_bilinear(x, ci, py, px) * m;
                        }
                    }
                }
                out.data_mut()[(co * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

pub fn naive_avgpool(x: &Tensor, f: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, h / f, w / f]);
    for ch in 0..c {
        for oy in 0..h / f {
            for ox in 0..w / f {
                let mut s = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        s += x.at3(ch, oy * f + dy, ox * f + dx);
                    }
                }
                out.data_mut()[(ch * (h / f) + oy) * (w / f) + ox] = s / (f * f) as f64;
            }
        }
    }
    out
}

pub fn naive_spatial_gradient(x: &Tensor) -> Tensor {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[2, h, w]);
    for y in 0..h {
        for xx in 0..w {
            let gx = if xx + 1 < w { x.at3(0, y, xx + 1) - x.at3(0, y, xx) } else { 0.0 };
            let gy = if y + 1 < h { x.at3(0, y + 1, xx) - x.at3(0, y, xx) } else { 0.0 };
            out.data_mut()[y * w + xx] = gx;
            out.data_mut()[h * w + y * w + xx] = gy;
        }
    }
    out
}
