//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::deform::DeformKernelConfig;
use crate::ema::{ema_forward, structure_term, EmaStageParams};
use crate::error::Result;
use crate::ldf::{downsample_valid, ldf_forward, motion_term, LdfStageParams};
use crate::network::{Ablation, Model, ModelInput, NetworkConfig};
use crate::params::{Bound, Initializer, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance applied where `|analytic| > grad_floor`.
    pub rel_tol: f64,
    /// Absolute tolerance applied where `|analytic| <= grad_floor`.
    pub abs_tol: f64,
    pub grad_floor: f64,
    /// Extra attempts at a tenth of the previous step for coordinates that
    /// miss the tolerance; piecewise-linear ops put kinks inside wide stencils.
    pub refinements: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-4, rel_tol: 1e-4, abs_tol: 1e-7, grad_floor: 1e-6, refinements: 2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Coordinates that passed only at a refined step.
    pub refined: usize,
    pub failures: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.refined += other.refined;
        self.failures.extend(other.failures);
    }
}

fn evaluate<F>(inputs: &[Tensor], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.value(loss).item()
}

/// Compares the tape gradient of the scalar `f(inputs)` against central
/// differences, coordinate by coordinate, over every input tensor.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_or_zeros(v)).collect();
    drop(tape);

    let mut report = GradCheckReport::default();
    let mut probe = inputs.to_vec();
    for (input, grads) in analytic.iter().enumerate() {
        for index in 0..grads.numel() {
            let a = grads.data()[index];
            let mut step = cfg.step;
            let mut attempt = 0;
            let (numeric, abs_err, rel, ok) = loop {
                let numeric = central_difference(&mut probe, input, index, step, &f)?;
                let abs_err = (a - numeric).abs();
                let rel = abs_err / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
                let ok = if a.abs() > cfg.grad_floor { rel < cfg.rel_tol } else { abs_err < cfg.abs_tol };
                if ok || attempt == cfg.refinements {
                    break (numeric, abs_err, rel, ok);
                }
                attempt += 1;
                step *= 0.1;
            };
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs_err);
            if a.abs() > cfg.grad_floor {
                report.max_rel_err = report.max_rel_err.max(rel);
            }
            if ok && attempt > 0 {
                report.refined += 1;
            }
            if !ok {
                report.failures.push(Mismatch { input, index, analytic: a, numeric });
            }
        }
    }
    Ok(report)
}

fn central_difference<F>(probe: &mut [Tensor], input: usize, index: usize, step: f64, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let original = probe[input].data()[index];
    probe[input].data_mut()[index] = original + step;
    let plus = evaluate(probe, f)?;
    probe[input].data_mut()[index] = original - step;
    let minus = evaluate(probe, f)?;
    probe[input].data_mut()[index] = original;
    Ok((plus - minus) / (2.0 * step))
}

/// Named result of one gradient-check case.
#[derive(Clone, Debug)]
pub struct SuiteCase {
    pub name: String,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values whose magnitude stays at least `gap` away from zero, so kinks at
/// zero (ReLU, |x|) are not straddled by the difference stencil.
fn signed_away(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random::<bool>() { m } else { -m }
    })
}

/// Offsets whose fractional parts stay clear of the bilinear kinks.
fn fractional_offsets(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0) + rng.random_range(0.15..0.85))
}

fn project(t: &mut Tape, y: Var, weights: &Tensor) -> Result<Var> {
    let w = t.constant(weights.clone());
    let prod = t.mul(y, w)?;
    Ok(t.sum(prod))
}

/// Every differentiable primitive, the EMA and LDF blocks and a full 16x16
/// network with all loss terms active, each checked against central
/// differences.
pub fn run_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = Vec::new();
    let mut case = |name: &str, inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>| -> Result<()> {
        let report = check_gradients(inputs, f, cfg)?;
        cases.push(SuiteCase { name: name.to_string(), report });
        Ok(())
    };

    let x = uniform(r, &[2, 5, 5], -1.0, 1.0);
    let w = uniform(r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = uniform(r, &[3], -1.0, 1.0);
    let p5 = uniform(r, &[3, 5, 5], -1.0, 1.0);
    let p3 = uniform(r, &[3, 3, 3], -1.0, 1.0);
    case("conv2d stride 1", &[x.clone(), w.clone(), b.clone()], &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 1, 1)?;
        project(t, y, &p5)
    })?;
    case("conv2d stride 2", &[x.clone(), w, b], &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], 2, 1)?;
        project(t, y, &p3)
    })?;

    let dx = uniform(r, &[3, 3, 2], -1.0, 1.0);
    let dw = uniform(r, &[3, 2, 2, 2], -1.0, 1.0);
    let db = uniform(r, &[2], -1.0, 1.0);
    let pd = uniform(r, &[2, 6, 4], -1.0, 1.0);
    case("deconv2d", &[dx, dw, db], &|t, v| {
        let y = t.deconv2d(v[0], v[1], v[2])?;
        project(t, y, &pd)
    })?;

    let fx = uniform(r, &[2, 5, 4], -1.0, 1.0);
    let fw = uniform(r, &[2, 2, 3, 3], -1.0, 1.0);
    let off = fractional_offsets(r, &[18, 5, 4]);
    let m = uniform(r, &[9, 5, 4], 0.1, 0.9);
    let pf = uniform(r, &[2, 5, 4], -1.0, 1.0);
    case("deform_conv2d", &[fx.clone(), fw.clone(), off.clone(), m], &|t, v| {
        let y = t.deform_conv2d(v[0], v[1], v[2], Some(v[3]))?;
        project(t, y, &pf)
    })?;
    case("ema_redistribute", &[fx, fw, off], &|t, v| {
        let y = t.ema_redistribute(v[0], v[1], v[2])?;
        project(t, y, &pf)
    })?;

    let a = signed_away(r, &[3, 4, 4], 0.05);
    let bb = uniform(r, &[3, 4, 4], -1.0, 1.0);
    let single = uniform(r, &[1, 4, 4], -1.0, 1.0);
    let pe = uniform(r, &[3, 4, 4], -1.0, 1.0);
    let pairs: [(&str, fn(&mut Tape, Var, Var) -> Result<Var>, &Tensor, &Tensor); 5] = [
        ("add", |t, p, q| t.add(p, q), &a, &single),
        ("sub", |t, p, q| t.sub(p, q), &single, &a),
        ("mul", |t, p, q| t.mul(p, q), &a, &bb),
        ("mul broadcast", |t, p, q| t.mul(p, q), &single, &a),
        ("concat_channels", |t, p, q| t.concat_channels(p, q), &single, &single),
    ];
    for (name, op, p, q) in pairs {
        let proj = uniform(r, &[p.shape()[0].max(q.shape()[0]) + if name == "concat_channels" { 1 } else { 0 }, 4, 4], -1.0, 1.0);
        case(name, &[p.clone(), q.clone()], &|t, v| {
            let y = op(t, v[0], v[1])?;
            project(t, y, &proj)
        })?;
    }
    case("scale_by", &[a.clone(), Tensor::scalar(0.7)], &|t, v| {
        let y = t.scale_by(v[0], v[1])?;
        project(t, y, &pe)
    })?;
    let even = uniform(r, &[4, 3, 3], -1.0, 1.0);
    let unary: [(&str, fn(&mut Tape, Var) -> Result<Var>, &Tensor); 6] = [
        ("relu", |t, x| Ok(t.relu(x)), &a),
        ("sigmoid", |t, x| Ok(t.sigmoid(x)), &bb),
        ("one_minus", |t, x| Ok(t.one_minus(x)), &bb),
        ("scale", |t, x| Ok(t.scale(x, -1.3)), &bb),
        ("shift", |t, x| {
            let y = t.shift(x, 0.4);
            t.mul(y, y)
        }, &bb),
        ("split_channels", |t, x| {
            let (p, q) = t.split_channels(x)?;
            t.mul(p, q)
        }, &even),
    ];
    for (name, op, x) in unary {
        case(name, &[x.clone()], &|t, v| {
            let y = op(t, v[0])?;
            let shape = t.value(y).shape().to_vec();
            let proj = Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 6.5 - 1.0);
            project(t, y, &proj)
        })?;
    }
    case("slice_channels", &[a.clone()], &|t, v| {
        let y = t.slice_channels(v[0], 1, 2)?;
        let y = t.mul(y, y)?;
        Ok(t.sum(y))
    })?;
    case("l1", &[a.clone()], &|t, v| Ok(t.l1(v[0])))?;
    case("l2", &[bb.clone()], &|t, v| Ok(t.l2(v[0])))?;
    case("mean", &[bb.clone()], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y))
    })?;

    let g = uniform(r, &[1, 5, 6], -2.0, 2.0);
    let pg = uniform(r, &[1, 5, 6], -1.0, 1.0);
    let pgrad = uniform(r, &[2, 5, 6], -1.0, 1.0);
    case("minmax_normalize", &[g.clone()], &|t, v| {
        let y = t.minmax_normalize(v[0], 1e-6)?;
        project(t, y, &pg)
    })?;
    case("spatial_gradient", &[g], &|t, v| {
        let y = t.spatial_gradient(v[0])?;
        project(t, y, &pgrad)
    })?;
    let pool = uniform(r, &[2, 4, 4], -1.0, 1.0);
    let ppool = uniform(r, &[2, 2, 2], -1.0, 1.0);
    case("avgpool_down", &[pool], &|t, v| {
        let y = t.avgpool_down(v[0], 2)?;
        project(t, y, &ppool)
    })?;

    cases.extend(block_cases(seed, cfg)?);
    Ok(cases)
}

/// Parameters drawn away from initialization so zero-initialized heads,
/// `alpha` and `beta` produce fractional offsets and live gradients.
fn perturbed(store: &ParamStore, rng: &mut ChaCha8Rng, scale: f64) -> Vec<Tensor> {
    store.values().iter().map(|v| Tensor::from_fn(v.shape(), |i| v.data()[i] + scale * rng.random_range(-1.0..1.0))).collect()
}

fn block_cases(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB10C);
    let kernel = DeformKernelConfig::default();
    let mut out = Vec::new();

    // EMA block with its structure loss.
    let (c, h, w) = (2, 6, 6);
    let mut store = ParamStore::new();
    let ema = EmaStageParams::new(&mut Initializer::new(&mut store, seed), "ema.1", c, kernel)?;
    let mut inputs = perturbed(&store, &mut rng, 0.3);
    let n_params = inputs.len();
    for _ in 0..3 {
        inputs.push(uniform(&mut rng, &[c, h, w], -1.0, 1.0));
    }
    let proj = uniform(&mut rng, &[c, h, w], -1.0, 1.0);
    let report = check_gradients(
        &inputs,
        |t, v| {
            let p = Bound::from_vars(v[..n_params].to_vec());
            let o = ema_forward(t, &p, &ema, v[n_params], v[n_params + 1], v[n_params + 2], kernel, false)?;
            let fused = project(t, o.fused, &proj)?;
            let s = structure_term(t, &p, &ema.g, o.rgb, o.depth, 1e-6)?;
            t.add(fused, s)
        },
        cfg,
    )?;
    out.push(SuiteCase { name: "ema block + structure loss".into(), report });

    // LDF block with its motion loss.
    let mut store = ParamStore::new();
    let ldf = LdfStageParams::new(&mut Initializer::new(&mut store, seed), "ldf.1", c, kernel)?;
    let mut inputs = perturbed(&store, &mut rng, 0.3);
    let n_params = inputs.len();
    inputs.push(uniform(&mut rng, &[c, h, w], -1.0, 1.0));
    inputs.push(uniform(&mut rng, &[c, h, w], -1.0, 1.0));
    let z = uniform(&mut rng, &[1, h, w], 0.5, 1.5);
    let (target, valid) = downsample_valid(&z, 1)?;
    let binary = Tensor::from_fn(&[1, h, w], |i| ((i * 5) % 3 == 0) as u8 as f64);
    let report = check_gradients(
        &inputs,
        |t, v| {
            let p = Bound::from_vars(v[..n_params].to_vec());
            let o = ldf_forward(t, &p, &ldf, v[n_params], v[n_params + 1], kernel)?;
            let refined = project(t, o.refined, &proj)?;
            let m = motion_term(t, &p, &ldf.h, o.refined, &binary, &target, &valid)?;
            t.add(refined, m)
        },
        cfg,
    )?;
    out.push(SuiteCase { name: "ldf block + motion loss".into(), report });

    // Full model, ablation ix, all loss terms.
    let mut net_cfg = NetworkConfig::ablation(Ablation::Ix);
    net_cfg.base_channels = 1;
    let model = Model::new(net_cfg, seed)?;
    let inputs = perturbed(&model.store, &mut rng, 0.2);
    let hw = 16;
    let x = ModelInput {
        image: uniform(&mut rng, &[3, hw, hw], 0.0, 1.0),
        sparse: Tensor::from_fn(&[1, hw, hw], |i| if (i / hw) % 4 == 0 { 1.0 + (i % 5) as f64 * 0.1 } else { 0.0 }),
        events: uniform(&mut rng, &[model.config.event_bins, hw, hw], -2.0, 2.0),
    };
    let z = uniform(&mut rng, &[1, hw, hw], 0.5, 1.5);
    let report = check_gradients(
        &inputs,
        |t, v| {
            let p = Bound::from_vars(v.to_vec());
            let fwd = model.forward(t, &p, &x)?;
            Ok(model.losses(t, &p, &fwd, &z)?.total)
        },
        cfg,
    )?;
    out.push(SuiteCase { name: "network 16x16 (ix), all parameters".into(), report });
    Ok(out)
}
