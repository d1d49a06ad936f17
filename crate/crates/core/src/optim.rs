//! Warmup/cosine learning-rate schedule and AdamW.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub warm_start: f64,
    pub peak: f64,
    pub warmup_frac: f64,
    pub final_lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { warm_start: 0.00002, peak: 0.001, warmup_frac: 0.10, final_lr: 0.0002 }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::InvalidArgument(format!("warmup fraction {} not in (0, 1)", self.warmup_frac)));
        }
        if !(self.warm_start > 0.0 && self.peak > 0.0 && self.final_lr > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup to the peak over the first `warmup_frac · total` steps, then
/// cosine decay to the final rate at `step = total`.
pub fn lr_at(step: usize, total: usize, s: &Schedule) -> Result<f64> {
    if step > total {
        return Err(Error::InvalidArgument(format!("step {step} beyond schedule length {total}")));
    }
    let warm = s.warmup_frac * total as f64;
    let t = step as f64;
    if t <= warm {
        if warm == 0.0 {
            return Ok(s.peak);
        }
        return Ok(s.warm_start + (s.peak - s.warm_start) * t / warm);
    }
    let tau = (t - warm) / (total as f64 - warm);
    Ok(s.final_lr + 0.5 * (s.peak - s.final_lr) * (1.0 + (std::f64::consts::PI * tau).cos()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamW { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Decoupled weight decay, then the bias-corrected Adam update. Rejects
    /// non-finite gradients before touching any parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::InvalidArgument(format!("tensor {i}: shape mismatch {:?} vs {:?}", p.shape(), g.shape())));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(format!("tensor {i}")));
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((theta, &g), (m, v)) in it {
                *theta -= lr * c.weight_decay * *theta;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::default();
        assert_eq!(lr_at(0, 1000, &s).unwrap(), 0.00002);
        assert!((lr_at(100, 1000, &s).unwrap() - 0.001).abs() < 1e-15);
        assert!((lr_at(1000, 1000, &s).unwrap() - 0.0002).abs() < 1e-15);
        assert!(lr_at(1001, 1000, &s).is_err());
    }

    #[test]
    fn zero_grad_without_decay_is_noop() {
        let mut p = vec![Tensor::new(&[2], vec![0.5, -1.0]).unwrap()];
        let before = p.clone();
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &p);
        opt.step(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn pure_decay() {
        let mut p = vec![Tensor::scalar(2.0)];
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.1, ..Default::default() }, &p);
        opt.step(&mut p, &[Tensor::scalar(0.0)], 0.5).unwrap();
        assert_eq!(p[0].data()[0], 2.0 * (1.0 - 0.5 * 0.1));
    }

    #[test]
    fn nan_gradient_rejected_without_update() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        let err = opt.step(&mut p, &[Tensor::scalar(f64::NAN)], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(opt.steps_taken(), 0);
    }
}
