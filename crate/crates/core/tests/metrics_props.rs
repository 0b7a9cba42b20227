use acl_core::data::FixationMap;
use acl_core::metrics::{auc_judd, cc_metric, nss_metric, roc_auc, shuffled_auc, sim_metric, Metric};
use acl_core::metrics::{FrameScores, MetricReport};
use acl_core::oracle;
use acl_core::Tensor;
use proptest::prelude::*;

const H: usize = 6;
const W: usize = 7;

fn map() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..1.0, H * W).prop_map(|d| Tensor::new(&[H, W], d).unwrap())
}

fn fixations() -> impl Strategy<Value = FixationMap> {
    prop::collection::btree_set((0..H, 0..W), 1..8).prop_map(|cells| FixationMap::from_cells(H, W, cells).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn auc_and_nss_are_invariant_to_increasing_affine_maps(y in map(), p in fixations(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let z = y.map(|v| a * v + b);
        prop_assert!((auc_judd(&y, &p).unwrap() - auc_judd(&z, &p).unwrap()).abs() < 1e-12);
        prop_assume!(y.data().iter().any(|&v| (v - y.data()[0]).abs() > 1e-3));
        prop_assert!((nss_metric(&y, &p).unwrap() - nss_metric(&z, &p).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn auc_matches_pair_counting(pos in prop::collection::vec(0u8..6, 1..12), neg in prop::collection::vec(0u8..6, 1..12)) {
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        prop_assert!((roc_auc(&pos, &neg).unwrap() - oracle::pair_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn metric_ranges(y in map(), q in map(), p in fixations()) {
        let auc = auc_judd(&y, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&auc));
        let cc = cc_metric(&y, &q).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&cc));
        let sim = sim_metric(&y, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&sim));
        prop_assert!((sim_metric(&q, &q).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((cc - cc_metric(&q, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shuffled_auc_is_seed_deterministic(y in map(), p in fixations(), pool in fixations(), seed in any::<u64>()) {
        let a = shuffled_auc(&y, &p, &pool, 5, seed).unwrap();
        let b = shuffled_auc(&y, &p, &pool, 5, seed).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn aggregation_ignores_frame_order(
        values in prop::collection::vec((0usize..3, 0usize..5, prop::option::of(-3.0f64..3.0)), 1..20),
        shuffle_seed in any::<u64>(),
    ) {
        let mut seen = std::collections::BTreeSet::new();
        let frames: Vec<FrameScores> = values
            .into_iter()
            .filter(|(v, f, _)| seen.insert((*v, *f)))
            .map(|(v, f, x)| {
                let mut values = [x; 5];
                values[Metric::Cc.index()] = None;
                FrameScores { video: format!("v{v}"), frame: f, values }
            })
            .collect();
        let mut shuffled = frames.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (shuffle_seed as usize).wrapping_add(i * 7919) % n);
        }
        let a = MetricReport::aggregate(frames.clone(), vec![], vec![], vec![]);
        let b = MetricReport::aggregate(shuffled, vec![], vec![], vec![]);
        prop_assert_eq!(&a, &b);

        // dataset value is the unweighted mean of per-video means
        let nss = Metric::Nss.index();
        let mut by_video: std::collections::BTreeMap<&str, Vec<f64>> = Default::default();
        for f in &frames {
            if let Some(x) = f.values[nss] {
                by_video.entry(&f.video).or_default().push(x);
            }
        }
        let means: Vec<f64> = by_video.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        let want = (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64);
        match (a.dataset[nss], want) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        prop_assert_eq!(a.dataset[Metric::Cc.index()], None);
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let flat = Tensor::full(&[H, W], 0.3);
    let p = FixationMap::from_cells(H, W, [(1, 1)]).unwrap();
    assert!(nss_metric(&flat, &p).is_err());
    assert!(cc_metric(&flat, &flat).is_err());
    assert!(auc_judd(&flat, &FixationMap::empty(H, W)).is_err());
    assert!((auc_judd(&flat, &p).unwrap() - 0.5).abs() < 1e-12);
}
