//! Property-based invariants over randomized inputs.

use ndarray::{Array2, ArrayD, IxDyn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use shunit::data::{downsample_mask, one_hot, Domain, LabelMask};
use shunit::graph::Tape;
use shunit::losses::{info_nce, NceOpts, Reduction};
use shunit::memory::{read, MemoryBank, MemoryMode};
use shunit::metrics::{frechet_distance, GaussianStats};
use shunit::params::normal_init;

fn arb_mask(max_classes: u8) -> impl Strategy<Value = (Vec<u8>, usize, usize)> {
    (1usize..5, 1usize..5, 1u8..=max_classes).prop_flat_map(|(h, w, n)| {
        (
            proptest::collection::vec(0..n, h * 4 * w * 4),
            Just(h * 4),
            Just(w * 4),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_hot_then_argmax_restores_the_mask((values, h, w) in arb_mask(6)) {
        let mask = LabelMask::new(
            Array2::from_shape_vec((h, w), values).unwrap(), 6,
        ).unwrap();
        let oh = one_hot(&mask, 6);
        for r in 0..h {
            for c in 0..w {
                let mut best = 0usize;
                for n in 1..6 {
                    if oh[(n, r, c)] > oh[(best, r, c)] {
                        best = n;
                    }
                }
                prop_assert_eq!(best as u8, mask.data()[(r, c)]);
            }
        }
    }

    #[test]
    fn downsampling_composes((values, h, w) in arb_mask(4)) {
        let mask = LabelMask::new(
            Array2::from_shape_vec((h, w), values).unwrap(), 4,
        ).unwrap();
        // h and w are divisible by 4, so 2x2 composes with 2
        let once = downsample_mask(&mask, 4).unwrap();
        let twice = downsample_mask(&downsample_mask(&mask, 2).unwrap(), 2).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn memory_read_weights_partition_and_hull(seed in 0u64..1000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let bank = MemoryBank::init(&mut rng, Domain::Y, 3, 4, 6, 5, MemoryMode::Backprop).unwrap();
        let content = normal_init(&mut rng, &[6, 3, 3], 1.0);
        let mask = LabelMask::new(
            Array2::from_shape_fn((3, 3), |(r, c)| ((r * 2 + c) % 3) as u8), 3,
        ).unwrap();
        let tape = Tape::new();
        let out = bank.read(&tape, tape.leaf(content.clone()), &mask).unwrap();
        let weights = out.weights.value();
        let style = out.memory_style.value();
        for r in 0..3 {
            for c in 0..3 {
                let total: f64 = (0..4).map(|j| weights[[j, r, c]]).sum();
                prop_assert!((total - 1.0).abs() <= 1e-6, "weight sum {total}");
                prop_assert!((0..4).all(|j| weights[[j, r, c]] >= 0.0));
                // convexity: outputs inside the class's value hull
                let class = mask.data()[(r, c)] as usize;
                for ch in 0..5 {
                    let lo = (0..4).map(|j| bank.values[[class, j, ch]]).fold(f64::INFINITY, f64::min);
                    let hi = (0..4).map(|j| bank.values[[class, j, ch]]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(style[[ch, r, c]] >= lo - 1e-12 && style[[ch, r, c]] <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn memory_read_weights_are_scale_invariant(seed in 0u64..1000, lambda in 0.01f64..100.0) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let bank = MemoryBank::init(&mut rng, Domain::Y, 2, 3, 4, 4, MemoryMode::Backprop).unwrap();
        let content = normal_init(&mut rng, &[4, 2, 2], 1.0);
        let mask = LabelMask::new(
            Array2::from_shape_fn((2, 2), |(r, c)| ((r + c) % 2) as u8), 2,
        ).unwrap();
        let run = |data: &ArrayD<f64>| -> ArrayD<f64> {
            let tape = Tape::new();
            let out = bank.read(&tape, tape.leaf(data.clone()), &mask).unwrap();
            out.weights.value().as_ref().clone()
        };
        let a = run(&content);
        let b = run(&(&content * lambda));
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn info_nce_is_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let a = normal_init(&mut rng, &[3, 2, 3], 1.0);
        let p = normal_init(&mut rng, &[3, 2, 3], 1.0);
        let tape = Tape::new();
        for reduction in [Reduction::Sum, Reduction::Mean] {
            let loss = info_nce(
                tape.leaf(a.clone()),
                tape.leaf(p.clone()),
                &NceOpts { tau: 0.7, normalize: true, reduction },
            ).unwrap().scalar();
            prop_assert!(loss >= 0.0, "{loss}");
        }
    }

    #[test]
    fn frechet_is_symmetric_and_nonnegative(seed in 0u64..1000) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha12Rng| -> GaussianStats {
            let vectors: Vec<ndarray::Array1<f64>> = (0..12)
                .map(|_| {
                    normal_init(rng, &[3], 1.0)
                        .into_dimensionality::<ndarray::Ix1>()
                        .unwrap()
                })
                .collect();
            GaussianStats::from_embeddings(&vectors).unwrap()
        };
        let p = draw(&mut rng);
        let q = draw(&mut rng);
        let d1 = frechet_distance(&p, &q, 1e-6).unwrap();
        let d2 = frechet_distance(&q, &p, 1e-6).unwrap();
        prop_assert!(d1 >= 0.0);
        prop_assert!((d1 - d2).abs() <= 1e-6, "{d1} vs {d2}");
    }

    #[test]
    fn label_round_trip_quantization_is_bounded(v in -1.0f64..1.0) {
        let byte = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        let back = byte as f64 / 127.5 - 1.0;
        prop_assert!((back - v).abs() < 1.0 / 127.0);
    }

    #[test]
    fn shl_identity_holds_for_random_features(seed in 0u64..500) {
        use shunit::harmonization::{shl_forward, standalone_shl_store, ShlVars, NORM_EPS};
        use shunit::params::Session;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let f0 = normal_init(&mut rng, &[2, 4, 4], 1.0);
        let mut mu = vec![0.0; 2];
        let mut sigma = vec![0.0; 2];
        for c in 0..2 {
            let ch = f0.index_axis(ndarray::Axis(0), c);
            let m = ch.sum() / 16.0;
            mu[c] = m;
            sigma[c] = (ch.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / 16.0 + NORM_EPS).sqrt();
        }
        let mut store = standalone_shl_store(&mut rng, 2, 2, 2);
        for name in [
            "shl.comp.shared.w", "shl.comp.gamma.w", "shl.comp.beta.w",
            "shl.mem.shared.w", "shl.mem.gamma.w", "shl.mem.beta.w",
        ] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set(name, ArrayD::zeros(IxDyn(&shape))).unwrap();
        }
        store.set("shl.comp.gamma.b", ndarray::arr1(&sigma).into_dyn()).unwrap();
        store.set("shl.mem.gamma.b", ndarray::arr1(&sigma).into_dyn()).unwrap();
        store.set("shl.comp.beta.b", ndarray::arr1(&mu).into_dyn()).unwrap();
        store.set("shl.mem.beta.b", ndarray::arr1(&mu).into_dyn()).unwrap();

        let tape = Tape::new();
        let sess = Session::new(&tape, &store);
        let params = ShlVars::bind(&sess, "shl").unwrap();
        let mask = LabelMask::new(
            Array2::from_shape_fn((4, 4), |(r, c)| ((r + c) % 2) as u8), 2,
        ).unwrap();
        let out = shl_forward(
            tape.leaf(f0.clone()),
            tape.leaf(normal_init(&mut rng, &[2, 4, 4], 1.0)),
            tape.leaf(normal_init(&mut rng, &[2, 4, 4], 1.0)),
            &mask,
            &params,
            shunit::graph::PadMode::Zero,
        ).unwrap();
        for (a, b) in out.value().iter().zip(f0.iter()) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
