use acl_core::net::params::AttentionParams;
use acl_core::net::{attention_forward, forward_sequence, AttentionMode, ConvLayer, NetConfig, SaliencyNet};
use acl_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Mirrors a `[H, W, C]` map or a `[k, k, Cin, Cout]` kernel left to right.
fn flip_columns(t: &Tensor) -> Tensor {
    let s = t.shape().to_vec();
    let (w, inner): (usize, usize) = (s[1], s[2..].iter().product());
    Tensor::from_fn(&s, |i| {
        let (row, rest) = (i / (w * inner), i % (w * inner));
        let (col, k) = (rest / inner, rest % inner);
        t.data()[(row * w + (w - 1 - col)) * inner + k]
    })
}

fn attention_map(x: &Tensor, p: &AttentionParams<Tensor>) -> Tensor {
    let mut tape = Tape::new();
    let mut layer = |l: &ConvLayer<Tensor>| ConvLayer {
        kernel: tape.leaf(&l.kernel),
        bias: tape.leaf(&l.bias),
    };
    let bound = AttentionParams {
        conv1: layer(&p.conv1),
        conv2: layer(&p.conv2),
        out: layer(&p.out),
    };
    let xv = tape.leaf(x);
    let out = attention_forward(&mut tape, xv, &bound).unwrap();
    tape.value(out.map).detached()
}

fn frames(n: usize, side: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_fn(&[side, side, 3], |_| rng.gen_range(0.0..1.0)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_commutes_with_mirroring(seed in any::<u64>(), side in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, width) = (3, 4);
        let side = 4 * side;
        let conv = |cin: usize, cout: usize, rng: &mut ChaCha8Rng| ConvLayer {
            kernel: random(&[3, 3, cin, cout], rng),
            bias: random(&[cout], rng),
        };
        let p = AttentionParams {
            conv1: conv(c, width, &mut rng),
            conv2: conv(width, width, &mut rng),
            out: conv(width, 1, &mut rng),
        };
        let mirror = |l: &ConvLayer<Tensor>| ConvLayer {
            kernel: flip_columns(&l.kernel),
            bias: l.bias.clone(),
        };
        let flipped = AttentionParams {
            conv1: mirror(&p.conv1),
            conv2: mirror(&p.conv2),
            out: mirror(&p.out),
        };
        let x = random(&[side, side, c], &mut rng);
        let direct = flip_columns(&attention_map(&x, &p));
        let via_mirror = attention_map(&flip_columns(&x), &flipped);
        for (a, b) in direct.data().iter().zip(via_mirror.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predictions_lie_in_unit_interval(seed in any::<u64>()) {
        let net = SaliencyNet::new(NetConfig::tiny(), seed).unwrap();
        let pred = net.predict(&frames(3, 32, seed)).unwrap();
        prop_assert!(pred.saliency.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let m = pred.attention.unwrap();
        prop_assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn init_and_prediction_are_deterministic() {
    let a = SaliencyNet::new(NetConfig::tiny(), 3).unwrap();
    let b = SaliencyNet::new(NetConfig::tiny(), 3).unwrap();
    let c = SaliencyNet::new(NetConfig::tiny(), 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let f = frames(4, 32, 1);
    assert_eq!(a.predict(&f).unwrap().saliency, b.predict(&f).unwrap().saliency);
}

#[test]
fn streaming_prediction_matches_unrolled_graph() {
    for mode in [AttentionMode::Residual, AttentionMode::Selector, AttentionMode::Off] {
        let net = SaliencyNet::new(
            NetConfig {
                attention_mode: mode,
                ..NetConfig::tiny()
            },
            8,
        )
        .unwrap();
        let f = frames(5, 32, 2);
        let pred = net.predict(&f).unwrap();
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape, |_| false);
        let vars: Vec<_> = f.iter().map(|x| tape.leaf(x)).collect();
        let seq = forward_sequence(&mut tape, &net.config, &p, &vars).unwrap();
        assert_eq!(seq.saliency.len(), 5);
        for (t, &y) in seq.saliency.iter().enumerate() {
            let unrolled = tape.value(y).data();
            let streamed = pred.frame(t);
            let diff = unrolled
                .iter()
                .zip(streamed.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12, "{mode:?} frame {t}: {diff}");
        }
        assert_eq!(pred.attention.is_some(), mode != AttentionMode::Off);
    }
}

#[test]
fn later_frames_depend_on_earlier_ones() {
    let net = SaliencyNet::new(NetConfig::tiny(), 5).unwrap();
    let mut a = frames(3, 32, 9);
    let base = net.predict(&a).unwrap();
    a[0] = Tensor::zeros(&[32, 32, 3]);
    let changed = net.predict(&a).unwrap();
    assert_ne!(base.frame(2), changed.frame(2));
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net = SaliencyNet::new(NetConfig::tiny(), 2).unwrap();
    net.params.save(&net.config, dir.path()).unwrap();
    let (config, params) = acl_core::net::ModelParams::load(dir.path()).unwrap();
    assert_eq!(config, net.config);
    let f = frames(2, 32, 0);
    let reloaded = SaliencyNet { config, params };
    let (x, y) = (net.predict(&f).unwrap(), reloaded.predict(&f).unwrap());
    let diff = x
        .saliency
        .data()
        .iter()
        .zip(y.saliency.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // parameters are stored as f32
    assert!(diff < 1e-5, "{diff}");
}
