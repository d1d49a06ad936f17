//! Modulated deformable convolution.
//!
//! Each output pixel `p0` gathers `K` taps at `p0 + p_k + Δp_k`, scales them by a
//! per-tap modulation `Δm_k` and contracts them with the kernel:
//!
//! ```text
//! out(p0) = Σ_k w_k · x(p0 + p_k + Δp_k) · Δm_k
//! ```
//!
//! Offsets are laid out `[2K,H,W]` with taps in row-major kernel order and the
//! `(Δy, Δx)` pair interleaved per tap. Samples that fall outside the image read
//! zeros, so zero offsets and unit modulation reproduce a padded 3x3 convolution.

use crate::error::{shape_err, Result};
use crate::kernels::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeformKernelConfig {
    pub kh: usize,
    pub kw: usize,
}

impl Default for DeformKernelConfig {
    fn default() -> Self {
        DeformKernelConfig { kh: 3, kw: 3 }
    }
}

impl DeformKernelConfig {
    pub fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// Regular-grid offsets `(dy, dx)` of every tap, row-major.
    pub fn base_offsets(&self) -> Vec<(isize, isize)> {
        let (ch, cw) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        (0..self.kh as isize)
            .flat_map(|i| (0..self.kw as isize).map(move |j| (i - ch, j - cw)))
            .collect()
    }
}

/// Bilinear corner weights for a fractional position.
#[derive(Clone, Copy, Debug)]
struct Corners {
    y0: isize,
    x0: isize,
    fy: f64,
    fx: f64,
}

impl Corners {
    #[inline]
    fn at(py: f64, px: f64) -> Self {
        let (fy0, fx0) = (py.floor(), px.floor());
        Corners { y0: fy0 as isize, x0: fx0 as isize, fy: py - fy0, fx: px - fx0 }
    }

    /// `(offset into plane, weight, d weight/dy, d weight/dx)` for each in-bounds corner.
    #[inline]
    fn taps(&self, h: usize, w: usize) -> impl Iterator<Item = (usize, f64, f64, f64)> {
        let Corners { y0, x0, fy, fx } = *self;
        let all = [
            (y0, x0, (1.0 - fy) * (1.0 - fx), -(1.0 - fx), -(1.0 - fy)),
            (y0, x0 + 1, (1.0 - fy) * fx, -fx, 1.0 - fy),
            (y0 + 1, x0, fy * (1.0 - fx), 1.0 - fx, -fy),
            (y0 + 1, x0 + 1, fy * fx, fx, fy),
        ];
        all.into_iter().filter_map(move |(y, x, wt, dy, dx)| {
            (y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w).then(|| (y as usize * w + x as usize, wt, dy, dx))
        })
    }
}

/// Samples every channel of `x` at the fractional location `(py, px)`.
/// Locations outside the image read zeros.
pub fn bilinear_sample(x: &Tensor, py: f64, px: f64) -> Result<Vec<f64>> {
    let (c, h, w) = x.chw()?;
    let corners = Corners::at(py, px);
    Ok((0..c)
        .map(|ch| {
            let plane = x.channel(ch);
            corners.taps(h, w).map(|(i, wt, _, _)| wt * plane[i]).sum()
        })
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DeformGeom {
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    kernel: DeformKernelConfig,
}

impl DeformGeom {
    pub fn new(x: &Tensor, w: &Tensor, offsets: &Tensor, modulation: Option<&Tensor>) -> Result<Self> {
        let (c_in, h, wd) = x.chw()?;
        let [c_out, wc, kh, kw] = w.shape()[..] else {
            return Err(shape_err("deform_conv2d", format!("kernel must be rank 4, got {:?}", w.shape())));
        };
        if wc != c_in {
            return Err(shape_err("deform_conv2d", format!("input has {c_in} channels but kernel expects {wc}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(shape_err("deform_conv2d", format!("kernel {kh}x{kw} must be odd")));
        }
        let k = kh * kw;
        if offsets.shape() != [2 * k, h, wd] {
            return Err(shape_err(
                "deform_conv2d",
                format!("offsets must be [{}, {h}, {wd}], got {:?}", 2 * k, offsets.shape()),
            ));
        }
        if let Some(m) = modulation {
            if m.shape() != [k, h, wd] {
                return Err(shape_err(
                    "deform_conv2d",
                    format!("modulation must be [{k}, {h}, {wd}], got {:?}", m.shape()),
                ));
            }
        }
        Ok(DeformGeom { c_in, c_out, h, w: wd, kernel: DeformKernelConfig { kh, kw } })
    }

    #[inline]
    fn position(&self, offsets: &[f64], tap: usize, base: (isize, isize), pix: usize) -> (f64, f64) {
        let plane = self.h * self.w;
        let (y, x) = (pix / self.w, pix % self.w);
        let py = y as f64 + base.0 as f64 + offsets[(2 * tap) * plane + pix];
        let px = x as f64 + base.1 as f64 + offsets[(2 * tap + 1) * plane + pix];
        (py, px)
    }

    /// Modulated samples `[C_in·K, H·W]`, row index `c·K + k` to match the kernel layout.
    fn columns(&self, x: &Tensor, offsets: &Tensor, modulation: Option<&Tensor>) -> Vec<f64> {
        let plane = self.h * self.w;
        let k_taps = self.kernel.taps();
        let mut cols = vec![0.0; self.c_in * k_taps * plane];
        for (k, base) in self.kernel.base_offsets().into_iter().enumerate() {
            for pix in 0..plane {
                let (py, px) = self.position(offsets.data(), k, base, pix);
                let m = modulation.map_or(1.0, |m| m.data()[k * plane + pix]);
                let corners = Corners::at(py, px);
                for c in 0..self.c_in {
                    let src = x.channel(c);
                    let v: f64 = corners.taps(self.h, self.w).map(|(i, wt, _, _)| wt * src[i]).sum();
                    cols[(c * k_taps + k) * plane + pix] = v * m;
                }
            }
        }
        cols
    }
}

/// Forward pass. `modulation = None` means unit modulation on every tap.
pub fn deform_conv2d(x: &Tensor, w: &Tensor, offsets: &Tensor, modulation: Option<&Tensor>) -> Result<Tensor> {
    let g = DeformGeom::new(x, w, offsets, modulation)?;
    let plane = g.h * g.w;
    let cols = g.columns(x, offsets, modulation);
    let mut out = vec![0.0; g.c_out * plane];
    gemm(g.c_out, g.c_in * g.kernel.taps(), plane, w.data(), false, &cols, false, &mut out, 0.0);
    Tensor::new(&[g.c_out, g.h, g.w], out)
}

pub(crate) struct DeformGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub doffsets: Option<Tensor>,
    pub dmodulation: Option<Tensor>,
}

/// Adjoint of [`deform_conv2d`]. `need` selects `[x, w, offsets, modulation]`.
pub(crate) fn deform_conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    offsets: &Tensor,
    modulation: Option<&Tensor>,
    gout: &Tensor,
    need: [bool; 4],
) -> Result<DeformGrads> {
    let g = DeformGeom::new(x, w, offsets, modulation)?;
    let plane = g.h * g.w;
    let k_taps = g.kernel.taps();
    let rows = g.c_in * k_taps;

    let dw = if need[1] {
        let cols = g.columns(x, offsets, modulation);
        let mut dw = vec![0.0; g.c_out * rows];
        gemm(g.c_out, plane, rows, gout.data(), false, &cols, true, &mut dw, 0.0);
        Some(Tensor::new(w.shape(), dw)?)
    } else {
        None
    };

    let need_modulation = need[3] && modulation.is_some();
    if !(need[0] || need[2] || need_modulation) {
        return Ok(DeformGrads { dx: None, dw, doffsets: None, dmodulation: None });
    }

    let mut dcols = vec![0.0; rows * plane];
    gemm(rows, g.c_out, plane, w.data(), true, gout.data(), false, &mut dcols, 0.0);

    let mut dx = vec![0.0; if need[0] { g.c_in * plane } else { 0 }];
    let mut doff = vec![0.0; if need[2] { 2 * k_taps * plane } else { 0 }];
    let mut dmod = vec![0.0; if need_modulation { k_taps * plane } else { 0 }];

    for (k, base) in g.kernel.base_offsets().into_iter().enumerate() {
        for pix in 0..plane {
            let (py, px) = g.position(offsets.data(), k, base, pix);
            let m = modulation.map_or(1.0, |m| m.data()[k * plane + pix]);
            let corners = Corners::at(py, px);
            let (mut gy, mut gx, mut gm) = (0.0, 0.0, 0.0);
            for c in 0..g.c_in {
                let upstream = dcols[(c * k_taps + k) * plane + pix];
                if upstream == 0.0 {
                    continue;
                }
                let src = x.channel(c);
                let scaled = upstream * m;
                for (i, wt, dwy, dwx) in corners.taps(g.h, g.w) {
                    let v = src[i];
                    gm += upstream * wt * v;
                    gy += scaled * dwy * v;
                    gx += scaled * dwx * v;
                    if need[0] {
                        dx[c * plane + i] += scaled * wt;
                    }
                }
            }
            if need[2] {
                doff[(2 * k) * plane + pix] += gy;
                doff[(2 * k + 1) * plane + pix] += gx;
            }
            if need_modulation {
                dmod[k * plane + pix] += gm;
            }
        }
    }

    Ok(DeformGrads {
        dx: need[0].then(|| Tensor::new(x.shape(), dx)).transpose()?,
        dw,
        doffsets: need[2].then(|| Tensor::new(offsets.shape(), doff)).transpose()?,
        dmodulation: need_modulation.then(|| Tensor::new(&[k_taps, g.h, g.w], dmod)).transpose()?,
    })
}
