//! Forward and adjoint kernels on raw tensors, independent of the tape.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// `c = a · b + beta · c` where `a` is `[m,k]` (or `[k,m]` if `a_t`) and `b` is
/// `[k,n]` (or `[n,k]` if `b_t`), all row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds asserted above cover every index reachable with these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c_in, h, wd) = x.chw()?;
        let [c_out, wc, kh, kw] = w.shape()[..] else {
            return Err(shape_err("conv2d", format!("kernel must be [C_out,C_in,kh,kw], got {:?}", w.shape())));
        };
        if wc != c_in {
            return Err(shape_err("conv2d", format!("input has {c_in} channels but kernel expects {wc}")));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be positive"));
        }
        let (hp, wp) = (h + 2 * pad, wd + 2 * pad);
        if hp < kh || wp < kw {
            return Err(shape_err("conv2d", format!("kernel {kh}x{kw} larger than padded input {hp}x{wp}")));
        }
        Ok(ConvGeom {
            c_in,
            h,
            w: wd,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (hp - kh) / stride + 1,
            ow: (wp - kw) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.cols();
    let mut cols = vec![0.0; g.rows() * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let p = g.cols();
    let mut x = vec![0.0; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded cross-correlation. `b` must hold `C_out` values.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    if b.numel() != g.c_out {
        return Err(shape_err("conv2d", format!("bias has {} values, expected {}", b.numel(), g.c_out)));
    }
    let cols = im2col(x.data(), &g);
    let p = g.cols();
    let mut out = vec![0.0; g.c_out * p];
    for (co, row) in out.chunks_mut(p).enumerate() {
        row.fill(b.data()[co]);
    }
    gemm(g.c_out, g.rows(), p, w.data(), false, &cols, false, &mut out, 1.0);
    Tensor::new(&[g.c_out, g.oh, g.ow], out)
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    gout: &Tensor,
    need: [bool; 3],
) -> Result<ConvGrads> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    let p = g.cols();
    let r = g.rows();
    let dw = if need[1] {
        let cols = im2col(x.data(), &g);
        let mut dw = vec![0.0; g.c_out * r];
        gemm(g.c_out, p, r, gout.data(), false, &cols, true, &mut dw, 0.0);
        Some(Tensor::new(w.shape(), dw)?)
    } else {
        None
    };
    let dx = if need[0] {
        let mut dcols = vec![0.0; r * p];
        gemm(r, g.c_out, p, w.data(), true, gout.data(), false, &mut dcols, 0.0);
        Some(Tensor::new(x.shape(), col2im(&dcols, &g))?)
    } else {
        None
    };
    let db = need[2].then(|| {
        let sums = gout.data().chunks(p).map(|row| row.iter().sum()).collect();
        Tensor::new(&[g.c_out], sums).expect("bias gradient shape")
    });
    Ok(ConvGrads { dx, dw, db })
}

pub const DECONV_KERNEL: usize = 2;

fn deconv_dims(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (c_in, h, wd) = x.chw()?;
    match w.shape()[..] {
        [wc, c_out, DECONV_KERNEL, DECONV_KERNEL] if wc == c_in => Ok((c_in, c_out, h, wd)),
        _ => Err(shape_err(
            "deconv2d",
            format!("kernel must be [{c_in},C_out,2,2] for a stride-2 doubling, got {:?}", w.shape()),
        )),
    }
}

/// Stride-2 transposed convolution with a 2x2 kernel laid out `[C_in,C_out,2,2]`.
/// The output is exactly twice the input extent.
pub fn deconv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, wd) = deconv_dims(x, w)?;
    if b.numel() != c_out {
        return Err(shape_err("deconv2d", format!("bias has {} values, expected {c_out}", b.numel())));
    }
    let p = h * wd;
    let q = c_out * 4;
    // spread[(co,a,bb), p] = sum_ci w[ci,(co,a,bb)] x[ci,p]
    let mut spread = vec![0.0; q * p];
    gemm(q, c_in, p, w.data(), true, x.data(), false, &mut spread, 0.0);
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out = vec![0.0; c_out * oh * ow];
    for co in 0..c_out {
        for a in 0..2 {
            for bb in 0..2 {
                let row = &spread[((co * 2 + a) * 2 + bb) * p..][..p];
                for y in 0..h {
                    let dst = &mut out[(co * oh + 2 * y + a) * ow..][..ow];
                    for xx in 0..wd {
                        dst[2 * xx + bb] = row[y * wd + xx] + b.data()[co];
                    }
                }
            }
        }
    }
    Tensor::new(&[c_out, oh, ow], out)
}

pub(crate) fn deconv2d_backward(x: &Tensor, w: &Tensor, gout: &Tensor, need: [bool; 3]) -> Result<ConvGrads> {
    let (c_in, c_out, h, wd) = deconv_dims(x, w)?;
    let p = h * wd;
    let q = c_out * 4;
    let (oh, ow) = (2 * h, 2 * wd);
    if gout.shape() != [c_out, oh, ow] {
        return Err(shape_err("deconv2d", format!("upstream gradient shape {:?}", gout.shape())));
    }
    let mut gathered = vec![0.0; q * p];
    for co in 0..c_out {
        for a in 0..2 {
            for bb in 0..2 {
                let row = &mut gathered[((co * 2 + a) * 2 + bb) * p..][..p];
                for y in 0..h {
                    let src = &gout.data()[(co * oh + 2 * y + a) * ow..][..ow];
                    for xx in 0..wd {
                        row[y * wd + xx] = src[2 * xx + bb];
                    }
                }
            }
        }
    }
    let dx = if need[0] {
        let mut dx = vec![0.0; c_in * p];
        gemm(c_in, q, p, w.data(), false, &gathered, false, &mut dx, 0.0);
        Some(Tensor::new(x.shape(), dx)?)
    } else {
        None
    };
    let dw = if need[1] {
        let mut dw = vec![0.0; c_in * q];
        gemm(c_in, p, q, x.data(), false, &gathered, true, &mut dw, 0.0);
        Some(Tensor::new(w.shape(), dw)?)
    } else {
        None
    };
    let db = need[2].then(|| {
        let plane = oh * ow;
        let sums = gout.data().chunks(plane).map(|c| c.iter().sum()).collect();
        Tensor::new(&[c_out], sums).expect("bias gradient shape")
    });
    Ok(ConvGrads { dx, dw, db })
}

/// Non-overlapping block mean.
pub fn avgpool_down(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err("avgpool_down", format!("{h}x{w} is not divisible by factor {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * oh + y / factor) * ow + xx / factor] += x.at3(ch, y, xx);
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Tensor::new(&[c, oh, ow], out)
}

pub(crate) fn avgpool_backward(gout: &Tensor, in_shape: &[usize], factor: usize) -> Tensor {
    let (h, w) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    Tensor::from_fn(in_shape, |i| {
        let (ch, rem) = (i / (h * w), i % (h * w));
        let (y, xx) = (rem / w, rem % w);
        gout.data()[(ch * oh + y / factor) * ow + xx / factor] * norm
    })
}

/// Forward differences along x (channel 0) and y (channel 1); zero on the last column/row.
pub fn spatial_gradient(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if c != 1 {
        return Err(shape_err("spatial_gradient", format!("expected one channel, got {c}")));
    }
    if h < 2 || w < 2 {
        return Err(shape_err("spatial_gradient", format!("needs at least 2x2, got {h}x{w}")));
    }
    let d = x.data();
    let mut out = vec![0.0; 2 * h * w];
    let (gx, gy) = out.split_at_mut(h * w);
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            if xx + 1 < w {
                gx[i] = d[i + 1] - d[i];
            }
            if y + 1 < h {
                gy[i] = d[i + w] - d[i];
            }
        }
    }
    Tensor::new(&[2, h, w], out)
}

pub(crate) fn spatial_gradient_backward(gout: &Tensor, h: usize, w: usize) -> Tensor {
    let (gx, gy) = gout.data().split_at(h * w);
    let mut dx = vec![0.0; h * w];
    for y in 0..h {
        for xx in 0..w {
            let i = y * w + xx;
            if xx + 1 < w {
                dx[i + 1] += gx[i];
                dx[i] -= gx[i];
            }
            if y + 1 < h {
                dx[i + w] += gy[i];
                dx[i] -= gy[i];
            }
        }
    }
    Tensor::new(&[1, h, w], dx).expect("gradient shape")
}

/// Location of the first minimum and first maximum.
pub(crate) fn argmin_argmax(v: &[f64]) -> (usize, usize) {
    let (mut lo, mut hi) = (0, 0);
    for (i, &x) in v.iter().enumerate() {
        if x < v[lo] {
            lo = i;
        }
        if x > v[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// `(x - min) / (max - min + eps)` over a single-channel map.
pub fn minmax_normalize(x: &Tensor, eps: f64) -> Result<Tensor> {
    let (c, _, _) = x.chw()?;
    if c != 1 {
        return Err(shape_err("minmax_normalize", format!("expected one channel, got {c}")));
    }
    let (lo, hi) = argmin_argmax(x.data());
    let (mn, mx) = (x.data()[lo], x.data()[hi]);
    let range = mx - mn + eps;
    Ok(x.map(|v| (v - mn) / range))
}

pub(crate) fn minmax_backward(x: &Tensor, eps: f64, gout: &Tensor) -> Tensor {
    let d = x.data();
    let (lo, hi) = argmin_argmax(d);
    let mn = d[lo];
    let range = d[hi] - mn + eps;
    let mut dx: Vec<f64> = gout.data().iter().map(|g| g / range).collect();
    let total: f64 = gout.data().iter().sum();
    let weighted: f64 = gout.data().iter().zip(d).map(|(g, v)| g * (v - mn)).sum::<f64>() / (range * range);
    dx[lo] += weighted - total / range;
    dx[hi] -= weighted;
    Tensor::new(x.shape(), dx).expect("gradient shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(&[1, 1, 1], vec![5.0]).unwrap();
        let w = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv_constant_field_interior() {
        let x = Tensor::full(&[1, 5, 5], 2.5);
        let w = Tensor::ones(&[1, 1, 3, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        assert_eq!(y.at3(0, 2, 2), 9.0 * 2.5);
        // corners only see four in-bounds taps
        assert_eq!(y.at3(0, 0, 0), 4.0 * 2.5);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let w = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("2 channels"), "{err}");
        let w = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv2d(&Tensor::zeros(&[2, 2, 2]), &w, &Tensor::zeros(&[1]), 1, 0).is_err());
        assert_eq!(conv2d(&Tensor::zeros(&[2, 4, 4]), &w, &Tensor::zeros(&[1]), 2, 0).unwrap().shape(), &[1, 1, 1]);
    }

    #[test]
    fn deconv_zero_input_is_bias() {
        let x = Tensor::zeros(&[2, 3, 3]);
        let w = Tensor::ones(&[2, 3, 2, 2]);
        let b = Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = deconv2d(&x, &w, &b).unwrap();
        assert_eq!(y.shape(), &[3, 6, 6]);
        assert!(y.channel(1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn deconv_single_pixel_spread() {
        let x = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let w = Tensor::ones(&[1, 1, 2, 2]);
        let y = deconv2d(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);
    }

    #[test]
    fn deconv_rejects_other_kernels() {
        let x = Tensor::zeros(&[1, 2, 2]);
        assert!(deconv2d(&x, &Tensor::zeros(&[1, 1, 4, 4]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn avgpool_block_mean() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool_down(&x, 2).unwrap().data(), &[2.5]);
        assert_eq!(avgpool_down(&x, 1).unwrap(), x);
        assert!(avgpool_down(&Tensor::zeros(&[1, 3, 4]), 2).is_err());
    }

    #[test]
    fn spatial_gradient_ramp() {
        let x = Tensor::from_fn(&[1, 3, 4], |i| (i % 4) as f64);
        let g = spatial_gradient(&x).unwrap();
        for y in 0..3 {
            for xx in 0..4 {
                assert_eq!(g.at3(0, y, xx), if xx < 3 { 1.0 } else { 0.0 });
                assert_eq!(g.at3(1, y, xx), 0.0);
            }
        }
        assert!(spatial_gradient(&Tensor::full(&[1, 4, 4], 3.0)).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(spatial_gradient(&Tensor::zeros(&[1, 1, 4])).is_err());
    }

    #[test]
    fn minmax_basic() {
        let x = Tensor::new(&[1, 1, 3], vec![0.0, 5.0, 10.0]).unwrap();
        let y = minmax_normalize(&x, 0.0).unwrap();
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
        let c = minmax_normalize(&Tensor::full(&[1, 2, 2], 7.0), 1e-6).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }
}
