use acl_core::tensor::ops::{conv2d, max_pool2d, resize_bilinear, upsample_bilinear};
use acl_core::tensor::{stns, Tape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(&shape, d).unwrap())
}

fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear_in_the_input(
        x in tensor(vec![5, 6, 2]),
        y in tensor(vec![5, 6, 2]),
        k in tensor(vec![3, 3, 2, 3]),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        stride in 1usize..3,
    ) {
        let zero = Tensor::zeros(&[3]);
        let mixed = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]);
        let lhs = conv2d(&mixed, &k, &zero, stride, 1).unwrap();
        let cx = conv2d(&x, &k, &zero, stride, 1).unwrap();
        let cy = conv2d(&y, &k, &zero, stride, 1).unwrap();
        let rhs = Tensor::from_fn(cx.shape(), |i| a * cx.data()[i] + b * cy.data()[i]);
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn conv_bias_shifts_every_output(x in tensor(vec![4, 4, 1]), k in tensor(vec![3, 3, 1, 2]), b in tensor(vec![2])) {
        let plain = conv2d(&x, &k, &Tensor::zeros(&[2]), 1, 1).unwrap();
        let biased = conv2d(&x, &k, &b, 1, 1).unwrap();
        for (i, (p, q)) in plain.data().iter().zip(biased.data()).enumerate() {
            prop_assert!((q - p - b.data()[i % 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_takes_window_maxima(x in tensor(vec![6, 8, 2])) {
        let p = max_pool2d(&x, 2, 2).unwrap();
        prop_assert_eq!(p.shape(), &[3, 4, 2]);
        for oy in 0..3 {
            for ox in 0..4 {
                for c in 0..2 {
                    let v = p.get(&[oy, ox, c]);
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| x.get(&[2 * oy + dy, 2 * ox + dx, c]));
                    prop_assert!(window.iter().all(|&w| w <= v));
                    prop_assert!(window.contains(&v));
                }
            }
        }
        prop_assert!(p.max() == x.max());
    }

    #[test]
    fn upsampling_stays_within_input_range(x in tensor(vec![3, 4, 2]), factor in 1usize..5) {
        let u = upsample_bilinear(&x, factor).unwrap();
        prop_assert_eq!(u.shape(), &[3 * factor, 4 * factor, 2]);
        prop_assert!(u.min() >= x.min() - 1e-12 && u.max() <= x.max() + 1e-12);
        for c in 0..2 {
            prop_assert!((u.get(&[0, 0, c]) - x.get(&[0, 0, c])).abs() < 1e-12);
            prop_assert!((u.get(&[3 * factor - 1, 4 * factor - 1, c]) - x.get(&[2, 3, c])).abs() < 1e-12);
        }
    }

    #[test]
    fn resize_preserves_constants(v in -5.0f64..5.0, h in 1usize..6, w in 1usize..6, oh in 1usize..9, ow in 1usize..9) {
        let r = resize_bilinear(&Tensor::full(&[h, w, 1], v), oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn stns_round_trips_f32_values(d in prop::collection::vec(-1e3f32..1e3, 1..40)) {
        let t = Tensor::new(&[d.len()], d.iter().map(|&x| x as f64).collect()).unwrap();
        let back = stns::decode(&stns::encode(&t)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.data(), t.data());
    }
}

#[test]
fn stns_rejects_truncated_and_foreign_bytes() {
    let bytes = stns::encode(&Tensor::ones(&[2, 3]));
    assert!(stns::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(stns::decode(&wrong).is_err());
}

#[test]
fn gradient_of_unused_leaf_is_absent() {
    let mut tape = Tape::new();
    let a = tape.param(&Tensor::full(&[2], 3.0));
    let b = tape.param(&Tensor::full(&[2], 1.0));
    let c = tape.leaf(&Tensor::full(&[2], 2.0));
    let prod = tape.hadamard(a, c).unwrap();
    let loss = tape.sum(prod);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(a), Some(&[2.0, 2.0][..]));
    assert!(g.get(b).is_none());
    assert!(g.get(c).is_none());
}

#[test]
fn nan_survives_relu_and_pooling() {
    use acl_core::tensor::ops::apply_activation;
    use acl_core::tensor::Activation;
    let mut x = Tensor::full(&[2, 2, 1], 1.0);
    x.set(&[1, 0, 0], f64::NAN);
    assert!(apply_activation(&x, Activation::Relu).get(&[1, 0, 0]).is_nan());
    assert!(max_pool2d(&x, 2, 2).unwrap().item().is_nan());
}
