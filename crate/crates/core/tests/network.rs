mod common;

use common::*;
use eventdc::network::{
    reconstruction_loss, total_loss, Ablation, DecoderMode, EncoderMode, Fusion, Model, ModelInput, NetworkConfig,
};
use eventdc::params::ParamStore;
use eventdc::{Tape, Tensor};
use rand::Rng;

fn config(a: Ablation, c: usize) -> NetworkConfig {
    let mut cfg = NetworkConfig { base_channels: c, ..NetworkConfig::default() };
    cfg.apply_ablation(a);
    cfg
}

fn input(seed: u64, h: usize, w: usize, bins: usize) -> (ModelInput, Tensor) {
    let mut r = rng(seed);
    let gt = random_tensor(&mut r, &[1, h, w], 0.5, 2.0);
    let sparse = Tensor::from_fn(&[1, h, w], |i| if i % 3 == 0 { gt.data()[i] } else { 0.0 });
    let x = ModelInput {
        image: random_tensor(&mut r, &[3, h, w], 0.0, 1.0),
        sparse,
        events: Tensor::from_fn(&[bins, h, w], |_| r.random_range(-2i32..=2) as f64),
    };
    (x, gt)
}

fn perturb(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for t in store.values_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-scale..scale);
        }
    }
}

/// EMA encoder with every deformable redistribution replaced by a plain
/// convolution, followed by the model's own decoder.
fn conv_baseline(model: &Model, x: &ModelInput) -> (Vec<Tensor>, Tensor) {
    let Fusion::Ema(stages) = &model.layout.fusion else { panic!("ema model expected") };
    let mut tape = Tape::new();
    let p = model.store.bind_frozen(&mut tape);
    let pyr = model.pyramids(&mut tape, &p, x).unwrap();
    let rgb = pyr.rgb.as_ref().unwrap();
    let mut fused = Vec::new();
    for (j, sp) in stages.iter().enumerate() {
        let a = &sp.align;
        let c = model.config.channels(j + 1);
        let zero = tape.constant(Tensor::zeros(&[c]));
        let ib = tape.conv2d(rgb[j], p[a.w_bar], zero, 1, 1).unwrap();
        let sb = tape.conv2d(pyr.depth[j], p[a.w_tilde], zero, 1, 1).unwrap();
        let sum = tape.add(ib, sb).unwrap();
        fused.push(a.t6.forward(&mut tape, &p, sum).unwrap());
    }
    let dec = model.decode(&mut tape, &p, &fused, pyr.event.as_deref()).unwrap();
    (fused.iter().map(|&v| tape.value(v).clone()).collect(), tape.value(dec.depth).clone())
}

#[test]
fn ema_network_at_init_equals_convolutional_baseline() {
    for a in [Ablation::Vi, Ablation::Ix] {
        let model = Model::new(config(a, 4), 3).unwrap();
        let (x, _) = input(1, 16, 24, 4);
        let mut tape = Tape::new();
        let p = model.store.bind_frozen(&mut tape);
        let fwd = model.forward(&mut tape, &p, &x).unwrap();
        let (fused, depth) = conv_baseline(&model, &x);
        for (f, b) in fwd.encoded.fused.iter().zip(&fused) {
            assert_eq!(tape.value(*f), b, "{a}");
        }
        assert_eq!(tape.value(fwd.decoded.depth), &depth, "{a}");
    }
}

#[test]
fn ema_without_event_gain_equals_dconv_network() {
    let mut ema = Model::new(config(Ablation::Vi, 3), 5).unwrap();
    let mut r = rng(6);
    for name in ["t4", "t5"] {
        for j in 1..=4 {
            for part in ["w", "b"] {
                let t = ema.store.by_name_mut(&format!("ema.{j}.{name}.{part}")).unwrap();
                *t = random_tensor(&mut r, t.shape(), -0.2, 0.2);
            }
        }
    }
    let mut dconv = Model::new(config(Ablation::V, 3), 99).unwrap();
    let ids: Vec<_> = dconv.store.ids().collect();
    for id in ids {
        let name = dconv.store.name(id).to_string();
        let source = name.replacen("dconv_enc.", "ema.", 1);
        *dconv.store.get_mut(id) = ema.store.by_name(&source).unwrap_or_else(|| panic!("{source}")).clone();
    }
    let (x, _) = input(2, 16, 16, 4);
    assert_eq!(ema.predict(&x).unwrap(), dconv.predict(&x).unwrap());
}

#[test]
fn presets_switch_the_expected_components() {
    let expect = [
        (Ablation::I, false, false, EncoderMode::Add, DecoderMode::Plain),
        (Ablation::Ii, true, false, EncoderMode::Add, DecoderMode::Plain),
        (Ablation::Iii, false, true, EncoderMode::Add, DecoderMode::Plain),
        (Ablation::Iv, true, true, EncoderMode::Add, DecoderMode::Plain),
        (Ablation::V, true, true, EncoderMode::Dconv, DecoderMode::Plain),
        (Ablation::Vi, true, true, EncoderMode::Ema, DecoderMode::Plain),
        (Ablation::Vii, true, true, EncoderMode::Add, DecoderMode::Dconv),
        (Ablation::Viii, true, true, EncoderMode::Add, DecoderMode::Ldf),
        (Ablation::Ix, true, true, EncoderMode::Ema, DecoderMode::Ldf),
    ];
    for (a, rgb, event, enc, dec) in expect {
        let cfg = config(a, 2);
        assert_eq!((cfg.use_rgb, cfg.use_event, cfg.encoder_mode, cfg.decoder_mode), (rgb, event, enc, dec), "{a}");
        let model = Model::new(cfg, 1).unwrap();
        let has = |prefix: &str| model.store.iter().any(|(n, _)| n.starts_with(prefix));
        assert_eq!(has("enc.rgb."), rgb, "{a}");
        assert_eq!(has("enc.event."), event && a != Ablation::V, "{a}");
        assert_eq!(has("ema."), enc == EncoderMode::Ema, "{a}");
        assert_eq!(has("ldf."), dec == DecoderMode::Ldf, "{a}");
        let (x, gt) = input(3, 8, 16, 4);
        let pred = model.predict(&x).unwrap();
        assert_eq!(pred.shape(), gt.shape());
        assert!(pred.is_finite());
    }
}

#[test]
fn inconsistent_configs_are_rejected() {
    for (enc, dec, rgb, event) in [
        (EncoderMode::Ema, DecoderMode::Plain, true, false),
        (EncoderMode::Dconv, DecoderMode::Plain, false, true),
        (EncoderMode::Add, DecoderMode::Ldf, true, false),
    ] {
        let cfg = NetworkConfig { encoder_mode: enc, decoder_mode: dec, use_rgb: rgb, use_event: event, ..NetworkConfig::default() };
        assert!(Model::new(cfg, 0).is_err(), "{enc} {dec} rgb={rgb} event={event}");
    }
}

#[test]
fn inputs_are_validated() {
    let model = Model::new(config(Ablation::Ix, 2), 0).unwrap();
    let (x, _) = input(0, 12, 16, 4);
    assert!(model.predict(&x).is_err());
    let (mut x, _) = input(0, 16, 16, 4);
    x.events = Tensor::zeros(&[3, 16, 16]);
    assert!(model.predict(&x).is_err());
}

fn rec_value(d: &Tensor, z: &Tensor) -> f64 {
    let mut tape = Tape::new();
    let dv = tape.constant(d.clone());
    let (l, _) = reconstruction_loss(&mut tape, dv, z).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn reconstruction_loss_identities() {
    let mut r = rng(4);
    let z = Tensor::from_fn(&[1, 6, 6], |i| if i % 4 == 1 { 0.0 } else { r.random_range(0.5..3.0) });
    assert_eq!(rec_value(&z, &z), 0.0);
    for c in [0.3, -0.7, 2.0] {
        let d = z.map(|v| v + c);
        assert!((rec_value(&d, &z) - (c * c + c.abs())).abs() < 1e-9);
    }
    let mut tape = Tape::new();
    let dv = tape.constant(z.clone());
    assert!(reconstruction_loss(&mut tape, dv, &Tensor::zeros(&[1, 6, 6])).is_err());
}

#[test]
fn total_loss_recomposes_bit_exactly() {
    let mut model = Model::new(config(Ablation::Ix, 2), 7).unwrap();
    perturb(&mut model.store, 8, 0.3);
    assert_eq!((model.config.lambda, model.config.mu), (1.0, 0.1));
    let (x, gt) = input(5, 16, 16, 4);
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let fwd = model.forward(&mut tape, &p, &x).unwrap();
    let r = model.losses(&mut tape, &p, &fwd, &gt).unwrap().report(&tape).unwrap();
    assert!(r.rec > 0.0 && r.structure > 0.0 && r.motion > 0.0, "{r:?}");
    assert_eq!(r.total, total_loss(r.rec, r.structure, r.motion, 1.0, 0.1));
    assert_eq!(r.n_valid, 256);
}

#[test]
fn auxiliary_losses_only_in_their_modes() {
    for (a, has_str, has_mot) in [(Ablation::Iv, false, false), (Ablation::Vi, true, false), (Ablation::Viii, false, true)] {
        let mut model = Model::new(config(a, 2), 7).unwrap();
        perturb(&mut model.store, 8, 0.3);
        let (x, gt) = input(5, 16, 16, 4);
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let fwd = model.forward(&mut tape, &p, &x).unwrap();
        let r = model.losses(&mut tape, &p, &fwd, &gt).unwrap().report(&tape).unwrap();
        assert_eq!((r.structure > 0.0, r.motion > 0.0), (has_str, has_mot), "{a}: {r:?}");
    }
}

#[test]
fn every_parameter_receives_gradient() {
    for a in Ablation::ALL {
        let mut model = Model::new(config(a, 4), 11).unwrap();
        perturb(&mut model.store, 12, 0.1);
        let (x, gt) = input(13, 16, 16, 4);
        let mut tape = Tape::new();
        let p = model.store.bind(&mut tape);
        let fwd = model.forward(&mut tape, &p, &x).unwrap();
        let l = model.losses(&mut tape, &p, &fwd, &gt).unwrap();
        tape.backward(l.total).unwrap();
        for (id, &v) in model.store.ids().zip(p.vars()) {
            let g = tape.grad_or_zeros(v);
            assert!(g.max_abs() > 0.0, "{a}: `{}` gets no gradient", model.store.name(id));
        }
    }
}

#[test]
fn initialization_is_seeded() {
    let a = Model::new(config(Ablation::Ix, 2), 1).unwrap();
    let b = Model::new(config(Ablation::Ix, 2), 1).unwrap();
    let c = Model::new(config(Ablation::Ix, 2), 2).unwrap();
    assert_eq!(a.store, b.store);
    assert_ne!(a.store, c.store);
}
