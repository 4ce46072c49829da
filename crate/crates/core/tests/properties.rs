use num_complex::Complex32;
use proptest::prelude::*;
use shipnet_core::harness::{score, train, Dataset, TrainConfig};
use shipnet_core::model::pccaf::cross_attention;
use shipnet_core::model::{predict, Ctx, ModelConfig, Network};
use shipnet_core::ops::softmax::softmax;
use shipnet_core::ops::{BnMode, ConvGeom};
use shipnet_core::sardata::channels::normalize_max;
use shipnet_core::sardata::{decode_chip, derive_channels, encode_chip, prepare};
use shipnet_core::sardata::{ComplexChipPair, SynthConfig, ALL_BRANCHES};
use shipnet_core::{par, weights, Tape, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn complex() -> impl Strategy<Value = Complex32> {
    (-100.0f32..100.0, -100.0f32..100.0).prop_map(|(re, im)| Complex32::new(re, im))
}

fn chip() -> impl Strategy<Value = ComplexChipPair> {
    (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(complex(), h * w),
            prop::collection::vec(complex(), h * w),
        )
            .prop_map(move |(svh, svv)| ComplexChipPair::new(h, w, svh, svv, "p").unwrap())
    })
}

fn small_model() -> ModelConfig {
    ModelConfig {
        classes: 3,
        input_size: 16,
        width_divisor: 8,
        n_drdb: 1,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(x in tensor(vec![3, 5])) {
        let y = softmax(x.data(), x.shape(), 1);
        for row in y.chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn predictions_are_distributions(x in tensor(vec![4, 6])) {
        for (row, p) in x.data().chunks(6).zip(predict(&x).unwrap()) {
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(row[p.label], best);
        }
    }

    #[test]
    fn product_channel_is_product_of_amplitudes(pair in chip()) {
        let raw = derive_channels(&pair).unwrap();
        for ((a, b), c) in raw.i1.iter().zip(&raw.i2).zip(&raw.i3) {
            prop_assert!((c - a * b).abs() <= 1e-5 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn normalization_is_idempotent(v in prop::collection::vec(0.0f32..1e4, 1..40)) {
        let once = normalize_max(&v);
        prop_assert!(once.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(normalize_max(&once), once);
    }

    #[test]
    fn prepared_channels_lie_in_unit_range(pair in chip(), target in 1usize..9) {
        let g = prepare(&pair, target, ALL_BRANCHES).unwrap();
        for c in [&g.i1, &g.i2, &g.i3] {
            prop_assert_eq!(c.len(), target * target);
            prop_assert!(c.iter().all(|x| (0.0..=1.0 + 1e-6).contains(x)));
        }
    }

    #[test]
    fn chip_files_round_trip(pair in chip()) {
        let back = decode_chip(&encode_chip(&pair).unwrap(), "p").unwrap();
        prop_assert_eq!(back, pair);
    }

    #[test]
    fn concat_splits_back_and_passes_unit_gradients(
        a in tensor(vec![2, 1, 2, 3]),
        b in tensor(vec![2, 3, 2, 3]),
    ) {
        let mut tape = Tape::new();
        let va = tape.leaf(a.clone(), true);
        let vb = tape.leaf(b.clone(), true);
        let c = tape.concat_channels(&[va, vb]).unwrap();
        let joined = tape.value(c).clone();
        prop_assert_eq!(joined.slice_channels(0, 1).unwrap(), a);
        prop_assert_eq!(joined.slice_channels(1, 3).unwrap(), b);
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        prop_assert!(g.get(va).unwrap().iter().all(|&v| v == 1.0));
        prop_assert!(g.get(vb).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_output_follows_extent_formula(
        h in 3usize..9, w in 3usize..9, k in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3, padding in 0usize..3, dilation in 1usize..3,
    ) {
        let geom = ConvGeom { stride, padding, dilation };
        let span = dilation * (k - 1) + 1;
        prop_assume!(h + 2 * padding >= span && w + 2 * padding >= span);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(vec![1, 2, h, w]));
        let wt = tape.constant(Tensor::ones(vec![3, 2, k, k]));
        let y = tape.conv2d(x, wt, None, geom).unwrap();
        let out = |n: usize| (n + 2 * padding - span) / stride + 1;
        prop_assert_eq!(tape.shape(y), &[1, 3, out(h), out(w)][..]);
    }

    #[test]
    fn confusion_accuracy_matches_counter(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let names = (0..4).map(|k| k.to_string()).collect();
        let r = score(names, pairs.iter().copied()).unwrap();
        let hits = pairs.iter().filter(|(t, p)| t == p).count() as u64;
        prop_assert_eq!(r.correct, hits);
        prop_assert_eq!(r.matrix.trace(), hits);
        prop_assert_eq!(r.matrix.total(), pairs.len() as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weight_files_round_trip(seed in any::<u64>()) {
        let net = Network::new(small_model()).unwrap();
        let store = net.init_params::<f32>(seed).unwrap();
        let entries = weights::decode(&weights::encode(&store).unwrap()).unwrap();
        let mut fresh = net.init_params::<f32>(seed.wrapping_add(1)).unwrap();
        weights::load_into(&mut fresh, &entries).unwrap();
        for (name, p) in store.params() {
            prop_assert_eq!(&fresh.param(name).unwrap().value, &p.value);
        }
        prop_assert_eq!(weights::encode(&fresh).unwrap(), weights::encode(&store).unwrap());
    }

    #[test]
    fn gated_features_stay_below_ungated(seed in any::<u64>(), zi in tensor(vec![1, 8, 2, 2]), zr in tensor(vec![1, 8, 2, 2])) {
        let net = Network::new(small_model()).unwrap();
        let store = net.init_params::<f64>(seed).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, BnMode::Train);
        let zi = ctx.tape.constant(zi.map(f64::abs));
        let zr = ctx.tape.constant(zr.map(f64::abs));
        let a = cross_attention(&mut ctx, zi, zr, "pccaf.xattn1", true).unwrap();
        let gated = ctx.tape.mul(zi, a).unwrap();
        for ((&z, &g), &m) in tape.value(zi).data().iter().zip(tape.value(gated).data()).zip(tape.value(a).data()) {
            // sigmoid rounds to exactly 1.0 for large pre-activations
            prop_assert!((0.0..=1.0).contains(&m));
            prop_assert!(g >= 0.0 && g <= z);
        }
    }
}

fn conv_pass(x: &Tensor<f64>, w: &Tensor<f64>) -> (Tensor<f64>, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let vx = tape.leaf(x.clone(), true);
    let vw = tape.leaf(w.clone(), true);
    let y = tape.conv2d(vx, vw, None, ConvGeom::DILATED_3X3).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    (tape.value(y).clone(), g.get(vx).unwrap().to_vec(), g.get(vw).unwrap().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn thread_count_does_not_change_conv(x in tensor(vec![3, 4, 6, 6]), w in tensor(vec![5, 4, 3, 3])) {
        let seq = par::with_workers(1, || conv_pass(&x, &w));
        let many = par::with_workers(4, || conv_pass(&x, &w));
        prop_assert_eq!(seq, many);
    }
}

#[test]
fn thread_count_does_not_change_training() {
    let cfg = small_model();
    let synth = SynthConfig::new(3, 32);
    let samples = (0..6)
        .map(|i| prepare(&synth.chip(i % 3, i as u64).unwrap(), 16, ALL_BRANCHES).unwrap())
        .collect();
    let data = Dataset::new(samples, vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let net = Network::new(cfg).unwrap();
    let tcfg = TrainConfig { epochs: 2, batch_size: 4, lr: 1e-3, seed: 9 };
    let run = |workers| {
        par::with_workers(workers, || {
            let mut store = net.init_params::<f32>(9).unwrap();
            let log = train(&net, &mut store, &data, &tcfg).unwrap().log;
            (weights::encode(&store).unwrap(), log)
        })
    };
    assert_eq!(run(1), run(3));
}
