//! Depth-completion error metrics over valid (`Z > 0`) pixels.

use std::fmt;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Predictions are clamped to at least this depth before ratio thresholds.
pub const MIN_DEPTH: f64 = 1e-3;
pub const DELTA_THRESHOLDS: [f64; 3] = [1.05, 1.10, 1.15];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub rmse_mm: f64,
    pub mae_mm: f64,
    pub rel: f64,
    /// Percentages for [`DELTA_THRESHOLDS`].
    pub delta: [f64; 3],
    pub n_valid: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Sums {
    sq: f64,
    abs: f64,
    rel: f64,
    hits: [usize; 3],
    n: usize,
}

impl Sums {
    fn add(&mut self, d: &Tensor, z: &Tensor) -> Result<()> {
        if d.shape() != z.shape() {
            return Err(shape_err("metrics", format!("{:?} vs {:?}", d.shape(), z.shape())));
        }
        for (&d, &z) in d.data().iter().zip(z.data()) {
            if z <= 0.0 {
                continue;
            }
            let e = d - z;
            self.sq += e * e;
            self.abs += e.abs();
            self.rel += e.abs() / z;
            let dc = d.max(MIN_DEPTH);
            let ratio = (dc / z).max(z / dc);
            for (hit, t) in self.hits.iter_mut().zip(DELTA_THRESHOLDS) {
                if ratio < t {
                    *hit += 1;
                }
            }
            self.n += 1;
        }
        Ok(())
    }

    fn report(&self) -> MetricsReport {
        let n = self.n as f64;
        MetricsReport {
            rmse_mm: 1000.0 * (self.sq / n).sqrt(),
            mae_mm: 1000.0 * self.abs / n,
            rel: self.rel / n,
            delta: self.hits.map(|h| 100.0 * h as f64 / n),
            n_valid: self.n,
        }
    }
}

/// Metrics over `(prediction, ground truth)` pairs. Pooled mode treats all
/// valid pixels as one set; per-image mode averages each image's metrics.
pub fn compute_metrics(pairs: &[(Tensor, Tensor)], per_image: bool) -> Result<MetricsReport> {
    if per_image {
        let mut acc = MetricsReport { rmse_mm: 0.0, mae_mm: 0.0, rel: 0.0, delta: [0.0; 3], n_valid: 0 };
        let mut images = 0usize;
        for (d, z) in pairs {
            let mut s = Sums::default();
            s.add(d, z)?;
            if s.n == 0 {
                continue;
            }
            let r = s.report();
            acc.rmse_mm += r.rmse_mm;
            acc.mae_mm += r.mae_mm;
            acc.rel += r.rel;
            for k in 0..3 {
                acc.delta[k] += r.delta[k];
            }
            acc.n_valid += r.n_valid;
            images += 1;
        }
        if images == 0 {
            return Err(Error::Degenerate("no valid pixel in the evaluation set".into()));
        }
        let m = images as f64;
        acc.rmse_mm /= m;
        acc.mae_mm /= m;
        acc.rel /= m;
        acc.delta = acc.delta.map(|d| d / m);
        return Ok(acc);
    }
    let mut s = Sums::default();
    for (d, z) in pairs {
        s.add(d, z)?;
    }
    if s.n == 0 {
        return Err(Error::Degenerate("no valid pixel in the evaluation set".into()));
    }
    Ok(s.report())
}

impl fmt::Display for MetricsReport {
    /// `key=value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rmse_mm={}", self.rmse_mm)?;
        writeln!(f, "mae_mm={}", self.mae_mm)?;
        writeln!(f, "rel={}", self.rel)?;
        for (t, d) in DELTA_THRESHOLDS.iter().zip(self.delta) {
            writeln!(f, "delta_{t:.2}={d}")?;
        }
        writeln!(f, "n_valid={}", self.n_valid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        let d = Tensor::new(&[1, 1, 2], vec![2.0, 4.0]).unwrap();
        let z = Tensor::new(&[1, 1, 2], vec![1.0, 2.0]).unwrap();
        let r = compute_metrics(&[(d, z)], false).unwrap();
        assert!((r.rmse_mm - 2.5f64.sqrt() * 1000.0).abs() < 1e-9);
        assert!((r.rmse_mm - 1581.14).abs() < 0.01);
        assert_eq!(r.mae_mm, 1500.0);
        assert_eq!(r.rel, 1.0);
        assert_eq!(r.delta[0], 0.0);
        assert_eq!(r.n_valid, 2);
    }

    #[test]
    fn perfect_prediction() {
        let z = Tensor::from_fn(&[1, 3, 3], |i| 0.5 + i as f64);
        let r = compute_metrics(&[(z.clone(), z)], false).unwrap();
        assert_eq!((r.rmse_mm, r.mae_mm, r.rel), (0.0, 0.0, 0.0));
        assert_eq!(r.delta, [100.0; 3]);
    }

    #[test]
    fn invalid_pixels_ignored_and_empty_set_rejected() {
        let d = Tensor::new(&[1, 1, 2], vec![5.0, 1.0]).unwrap();
        let z = Tensor::new(&[1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(compute_metrics(&[(d.clone(), z)], false).unwrap().rmse_mm, 0.0);
        assert!(compute_metrics(&[(d, Tensor::zeros(&[1, 1, 2]))], false).is_err());
        assert!(compute_metrics(&[], true).is_err());
    }

    #[test]
    fn display_is_key_value() {
        let z = Tensor::ones(&[1, 1, 1]);
        let text = compute_metrics(&[(z.clone(), z)], false).unwrap().to_string();
        assert!(text.contains("rmse_mm=0\n") && text.contains("delta_1.10=100\n"), "{text}");
    }
}
