use super::*;
use crate::tensor::BatchNormMode::{Eval, Train};

fn quarter() -> NetConfig {
    NetConfig::at_scale(Scale::Quarter)
}

fn two_stream(seed: u64) -> Generator {
    Generator::new(quarter(), Arch::TwoStream, &mut Rng::new(seed)).unwrap()
}

fn run_parts(g: &mut Generator, z: &Tensor) -> (Tensor, Tensor, Tensor, Tensor) {
    let tape = Tape::new();
    let zv = tape.constant(z.clone());
    let (out, _) = g.forward(&tape, &zv, Eval, false, None).unwrap();
    let p = out.parts.unwrap();
    let v = |x: &Var| (*x.value()).clone();
    (v(&out.video), v(&p.foreground), v(&p.background), v(&p.mask))
}

fn set_mask_bias(g: &mut Generator, bias: f32) {
    g.net.params.get_mut("mask.out.w").unwrap().data_mut().fill(0.0);
    g.net.params.get_mut("mask.out.b").unwrap().data_mut().fill(bias);
}

#[test]
fn full_scale_plan() {
    let p = NetConfig::default().plan().unwrap();
    assert_eq!(p.base_volume, [2, 4, 4]);
    assert_eq!(p.widths, [512, 256, 128, 64]);
    assert_eq!(p.temporal, [true; 4]);
    let stem = &p.generator_trunk()[0].spec;
    assert_eq!(stem.kernel, [2, 4, 4]);
}

#[test]
fn quarter_scale_plan() {
    let c = quarter();
    assert_eq!((c.frames, c.size, c.base_channels, c.latent_dim), (8, 16, 16, 100));
    let p = c.plan().unwrap();
    assert_eq!(p.base_volume, [1, 1, 1]);
    assert_eq!(p.widths, [128, 64, 32, 16]);
    assert_eq!(p.temporal, [false, true, true, true]);
}

#[test]
fn config_validation() {
    let bad = NetConfig {
        size: 40,
        ..NetConfig::default()
    };
    assert!(matches!(bad.plan(), Err(NetError::Config(_))));
    let bad = NetConfig {
        frames: 12,
        ..NetConfig::default()
    };
    assert!(bad.plan().is_err());
    assert_eq!(Scale::parse("1/4"), Some(Scale::Quarter));
    assert_eq!(Scale::parse("3"), None);
}

#[test]
fn quarter_scale_layer_chain() {
    let mut g = two_stream(1);
    let tape = Tape::new();
    let z = tape.constant(Tensor::zeros(&[1, 100]));
    let mut trace = LayerTrace::default();
    g.forward(&tape, &z, Eval, false, Some(&mut trace)).unwrap();
    assert_eq!(
        trace.shapes("fg."),
        vec![
            vec![128, 1, 1, 1],
            vec![64, 1, 2, 2],
            vec![32, 2, 4, 4],
            vec![16, 4, 8, 8],
            vec![3, 8, 16, 16]
        ]
    );
    assert_eq!(trace.shapes("mask."), vec![vec![1, 8, 16, 16]]);
    assert_eq!(
        trace.shapes("bg."),
        vec![vec![128, 1, 1], vec![64, 2, 2], vec![32, 4, 4], vec![16, 8, 8], vec![3, 16, 16]]
    );
}

#[test]
fn zero_latent_output_in_range() {
    let mut g = Generator::new(quarter(), Arch::OneStream, &mut Rng::new(2)).unwrap();
    let clip = g.sample(&Tensor::zeros(&[1, 100]), Eval).unwrap();
    assert_eq!(clip.shape(), &[1, 3, 8, 16, 16]);
    assert!(clip.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn eval_mode_is_deterministic() {
    let mut g = two_stream(3);
    let z = sample_latent(2, 100, &mut Rng::new(4));
    let a = g.sample(&z, Eval).unwrap();
    let b = g.sample(&z, Eval).unwrap();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn train_mode_needs_two_samples() {
    let mut g = two_stream(3);
    let err = g.sample(&Tensor::zeros(&[1, 100]), Train).unwrap_err();
    assert!(matches!(err, NetError::Tensor(TensorError::BatchTooSmall(1))));
}

#[test]
fn latent_shape_checked() {
    let mut g = two_stream(3);
    assert!(matches!(
        g.sample(&Tensor::zeros(&[1, 99]), Eval),
        Err(NetError::InputShape { .. })
    ));
}

#[test]
fn mask_one_gives_foreground() {
    let mut g = two_stream(5);
    set_mask_bias(&mut g, 100.0);
    let z = sample_latent(2, 100, &mut Rng::new(6));
    let (video, f, _, m) = run_parts(&mut g, &z);
    assert!(m.data().iter().all(|&v| v == 1.0));
    assert_eq!(video.data(), f.data());
}

#[test]
fn mask_zero_gives_static_frames() {
    let mut g = two_stream(7);
    set_mask_bias(&mut g, -200.0);
    let z = sample_latent(2, 100, &mut Rng::new(8));
    let (video, _, b, m) = run_parts(&mut g, &z);
    assert!(m.data().iter().all(|&v| v == 0.0));
    let s = video.shape().to_vec();
    let plane = s[3] * s[4];
    for nc in 0..s[0] * s[1] {
        let first = &video.data()[nc * s[2] * plane..][..plane];
        for t in 1..s[2] {
            assert_eq!(&video.data()[(nc * s[2] + t) * plane..][..plane], first);
        }
        assert_eq!(&b.data()[nc * plane..][..plane], first);
    }
}

#[test]
fn recomposition_is_bit_exact() {
    let mut g = two_stream(9);
    let z = sample_latent(3, 100, &mut Rng::new(10));
    let (video, f, b, m) = run_parts(&mut g, &z);
    let s = f.shape().to_vec();
    let plane = s[3] * s[4];
    for n in 0..s[0] {
        for c in 0..3 {
            for t in 0..s[2] {
                for i in 0..plane {
                    let fi = ((n * 3 + c) * s[2] + t) * plane + i;
                    let mi = (n * s[2] + t) * plane + i;
                    let bi = (n * 3 + c) * plane + i;
                    let mv = m.data()[mi];
                    let expect = mv * f.data()[fi] + (1.0 - mv) * b.data()[bi];
                    assert_eq!(video.data()[fi].to_bits(), expect.to_bits());
                }
            }
        }
    }
    assert!(video.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn compose_arithmetic() {
    let tape = Tape::new();
    let f = tape.constant(Tensor::full(&[1, 3, 1, 1, 1], 0.8));
    let b = tape.constant(Tensor::full(&[1, 3, 1, 1], -0.2));
    let m = tape.constant(Tensor::full(&[1, 1, 1, 1, 1], 0.5));
    let v = compose(&f, &b, &m).unwrap();
    assert!(v.value().data().iter().all(|&x| (x - 0.3).abs() < 1e-7));
}

#[test]
fn trunk_is_shared_mask_head_is_not() {
    let z = sample_latent(2, 100, &mut Rng::new(12));
    let mut g = two_stream(11);
    let (_, f0, _, m0) = run_parts(&mut g, &z);

    let mut trunk = g.clone();
    trunk.net.params.get_mut("fg.2.w").unwrap().data_mut().iter_mut().for_each(|w| *w += 0.5);
    let (_, f1, _, m1) = run_parts(&mut trunk, &z);
    assert_ne!(f0.data(), f1.data());
    assert_ne!(m0.data(), m1.data());

    let mut head = g.clone();
    head.net.params.get_mut("mask.out.w").unwrap().data_mut().iter_mut().for_each(|w| *w += 0.5);
    let (_, f2, _, m2) = run_parts(&mut head, &z);
    assert_eq!(f0.data(), f2.data());
    assert_ne!(m0.data(), m2.data());
}

#[test]
fn discriminator_logits() {
    let cfg = quarter();
    let mut d = Discriminator::new(cfg, &mut Rng::new(13)).unwrap();
    let mut rng = Rng::new(14);
    let clip = Tensor::uniform(&[1, 3, 8, 16, 16], -1.0, 1.0, &mut rng);
    let other = Tensor::uniform(&[2, 3, 8, 16, 16], -1.0, 1.0, &mut rng);
    let batch = Tensor::stack(&[clip.outer(0), other.outer(0), clip.outer(0), other.outer(1)]).unwrap();
    let tape = Tape::new();
    let x = tape.constant(batch);
    let mut trace = LayerTrace::default();
    let (out, _) = d.forward(&tape, &x, Eval, false, Some(&mut trace)).unwrap();
    let l = out.logits.value();
    assert_eq!(l.shape(), &[4]);
    assert!(l.all_finite());
    assert_eq!(l.data()[0].to_bits(), l.data()[2].to_bits());
    assert_eq!(
        trace.shapes("d."),
        vec![vec![16, 4, 8, 8], vec![32, 2, 4, 4], vec![64, 1, 2, 2], vec![128, 1, 1, 1], vec![1, 1, 1, 1]]
    );
    assert_eq!(out.activations.len(), 4);
    assert!(matches!(
        d.logits(&Tensor::zeros(&[1, 3, 8, 8, 8]), Eval),
        Err(NetError::InputShape { .. })
    ));
}

#[test]
fn replace_head_changes_classes() {
    let mut d = Discriminator::new(quarter(), &mut Rng::new(15)).unwrap();
    d.replace_head("cls.out", 4, &mut Rng::new(16)).unwrap();
    assert!(!d.net.params.contains_key("d.out.w"));
    let l = d.logits(&Tensor::zeros(&[2, 3, 8, 16, 16]), Eval).unwrap();
    assert_eq!(l.shape(), &[2, 4]);
}

#[test]
fn encoder_chain() {
    let mut e = Encoder::new(quarter(), &mut Rng::new(17)).unwrap();
    let x0 = Tensor::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut Rng::new(18));
    let tape = Tape::new();
    let xv = tape.constant(x0.clone());
    let mut trace = LayerTrace::default();
    let (code, _, _) = e.forward(&tape, &xv, Eval, false, Some(&mut trace)).unwrap();
    assert_eq!(code.shape(), vec![2, 100]);
    assert!(code.value().data().iter().all(|v| v.abs() <= 1.0));
    assert_eq!(
        trace.shapes("enc."),
        vec![vec![16, 8, 8], vec![32, 4, 4], vec![64, 2, 2], vec![128, 1, 1], vec![100, 1, 1]]
    );
    let again = e.encode(&x0, Eval).unwrap();
    assert_eq!(again.data(), code.value().data());
    assert!(e.encode(&Tensor::zeros(&[1, 3, 8, 8]), Eval).is_err());
}

#[test]
fn param_hash_tracks_values() {
    let g = two_stream(19);
    let mut h = g.clone();
    assert_eq!(g.net.param_hash(), h.net.param_hash());
    h.net.params.get_mut("bg.0.w").unwrap().data_mut()[3] = 1.0;
    assert_ne!(g.net.param_hash(), h.net.param_hash());
}

#[test]
fn init_statistics() {
    let g = Generator::new(NetConfig::default(), Arch::TwoStream, &mut Rng::new(20)).unwrap();
    let w = &g.net.params["fg.1.w"];
    let n = w.len() as f64;
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (w.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-4);
    assert!((std - 0.01).abs() < 1e-4);
    assert!(g.net.params["fg.out.b"].data().iter().all(|&b| b == 0.0));
    assert!(g.net.params["fg.0.bn.gamma"].data().iter().all(|&b| b == 1.0));
}

mod props {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn mask_in_unit_interval(seed in any::<u64>(), zscale in 0.1f64..20.0) {
            let mut g = two_stream(seed);
            let z = Tensor::randn(&[2, 100], zscale, &mut Rng::new(seed ^ 1));
            let (video, _, _, m) = run_parts(&mut g, &z);
            prop_assert!(m.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!(video.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn every_scale_lands_on_config(scale in prop::sample::select(vec![Scale::Full, Scale::Half, Scale::Quarter])) {
            let c = NetConfig::at_scale(scale);
            let p = c.plan().unwrap();
            let mut v = p.base_volume;
            for l in p.generator_trunk().iter().skip(1).chain(std::iter::once(&p.generator_head("fg.out", 3))) {
                v = l.spec.transpose_output(v).unwrap();
            }
            prop_assert_eq!(v, [c.frames, c.size, c.size]);
            let mut v = [c.frames, c.size, c.size];
            for l in p.discriminator_trunk("d") {
                v = l.spec.conv_output(v).unwrap();
            }
            prop_assert_eq!(v, p.base_volume);
            prop_assert_eq!(p.discriminator_head("d.out", 1).spec.conv_output(v).unwrap(), [1, 1, 1]);
        }
    }
}
