//! Each op against an independent direct implementation.

use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shipnet_core::ops::conv::{conv2d_forward, ConvDims, ConvGeom};
use shipnet_core::ops::pool::{maxpool_forward, PoolDims};
use shipnet_core::ops::resize::bilinear_resize;
use shipnet_core::ops::{BnConfig, BnMode};
use shipnet_core::params::he_init;
use shipnet_core::{AdamConfig, ParamStore, Tape, Tensor};

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn naive_conv(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    (n, cin, h, wd): (usize, usize, usize, usize),
    (cout, k): (usize, usize),
    g: ConvGeom,
) -> (Vec<f64>, usize, usize) {
    let span = g.dilation * (k - 1) + 1;
    let ho = (h + 2 * g.padding - span) / g.stride + 1;
    let wo = (wd + 2 * g.padding - span) / g.stride + 1;
    let mut y = vec![0.0; n * cout * ho * wo];
    for bn in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * g.stride + ky * g.dilation) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx * g.dilation) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x[((bn * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((bn * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (y, ho, wo)
}

#[test]
fn conv_matches_nested_loops() {
    let x = random(2 * 8 * 16 * 16, 1);
    let w = random(16 * 8 * 9, 2);
    let b = random(16, 3);
    for geom in [
        ConvGeom::SAME_3X3,
        ConvGeom::DILATED_3X3,
        ConvGeom { stride: 2, padding: 1, dilation: 1 },
    ] {
        let dims = ConvDims::new(&[2, 8, 16, 16], &[16, 8, 3, 3], geom).unwrap();
        let got = conv2d_forward(&x, &w, Some(&b), &dims);
        let (want, ho, wo) = naive_conv(&x, &w, &b, (2, 8, 16, 16), (16, 3), geom);
        assert_eq!(dims.out_shape(), [2, 16, ho, wo]);
        assert!(max_abs(&got, &want) < 1e-5, "{geom:?}");
    }
}

#[test]
fn conv_counts_overlapping_taps() {
    let dims = ConvDims::new(&[1, 1, 3, 3], &[1, 1, 3, 3], ConvGeom::SAME_3X3).unwrap();
    let y = conv2d_forward(&[1.0f64; 9], &[1.0; 9], None, &dims);
    assert_eq!(y, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    let dims = ConvDims::new(&[1, 1, 5, 5], &[1, 1, 3, 3], ConvGeom::DILATED_3X3).unwrap();
    let y = conv2d_forward(&[1.0f64; 25], &[1.0; 9], None, &dims);
    assert_eq!(y[12], 9.0);
}

#[test]
fn conv_single_precision_matches_double() {
    let x = random(2 * 8 * 16 * 16, 4);
    let w = random(16 * 8 * 9, 5);
    let dims = ConvDims::new(&[2, 8, 16, 16], &[16, 8, 3, 3], ConvGeom::SAME_3X3).unwrap();
    let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let wf: Vec<f32> = w.iter().map(|&v| v as f32).collect();
    let got: Vec<f64> = conv2d_forward(&xf, &wf, None, &dims).iter().map(|&v| v as f64).collect();
    let want = conv2d_forward(&x, &w, None, &dims);
    assert!(max_abs(&got, &want) < 1e-5);
}

#[test]
fn maxpool_matches_window_scan() {
    let x = random(2 * 8 * 8, 6);
    let dims = PoolDims::new(&[1, 2, 8, 8], 2, 2).unwrap();
    let (y, _) = maxpool_forward(&x, &dims);
    for c in 0..2 {
        for oy in 0..4 {
            for ox in 0..4 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x[(c * 8 + oy * 2 + dy) * 8 + ox * 2 + dx]);
                    }
                }
                assert_eq!(y[(c * 4 + oy) * 4 + ox], m);
            }
        }
    }
    let (y, _) = maxpool_forward(&[1.0, 2.0, 3.0, 4.0], &PoolDims::new(&[1, 1, 2, 2], 2, 2).unwrap());
    assert_eq!(y, vec![4.0]);
    assert_eq!(PoolDims::new(&[1, 8, 128, 128], 2, 2).unwrap().ho, 64);
    assert!(PoolDims::new(&[1, 1, 5, 4], 2, 2).is_err());
}

#[test]
fn maxpool_tie_routes_to_first() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).unwrap(), true);
    let y = tape.maxpool2d(x, 2, 2).unwrap();
    let l = tape.sum(y);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

fn bn_train(x: Tensor<f64>, gamma: f64, beta: f64) -> Tensor<f64> {
    let c = x.shape()[1];
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(vec![c], gamma));
    let b = tape.constant(Tensor::full(vec![c], beta));
    let (zeros, ones) = (vec![0.0; c], vec![1.0; c]);
    let (y, _) = tape
        .batchnorm2d(xv, g, b, (&zeros, &ones), BnMode::Train, BnConfig::default().eps)
        .unwrap();
    tape.value(y).clone()
}

#[test]
fn batchnorm_moments() {
    let x = Tensor::new(vec![4, 3, 5, 5], random(300, 7).iter().map(|v| 3.0 * v + 2.0).collect()).unwrap();
    let y = bn_train(x, 1.0, 0.0);
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| y.data()[(n * 3 + c) * 25..(n * 3 + c + 1) * 25].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn batchnorm_constant_and_zero_gamma() {
    let y = bn_train(Tensor::full(vec![2, 1, 3, 3], 4.5), 1.0, 0.0);
    assert!(y.data().iter().all(|&v| v == 0.0));
    let y = bn_train(Tensor::new(vec![2, 2, 2, 2], random(16, 8)).unwrap(), 0.0, 1.5);
    assert!(y.data().iter().all(|&v| v == 1.5));
}

#[test]
fn batchnorm_eval_uses_initial_state() {
    let x = Tensor::new(vec![1, 2, 2, 2], random(8, 9)).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let g = tape.constant(Tensor::ones(vec![2]));
    let b = tape.constant(Tensor::zeros(vec![2]));
    let (y, stats) = tape
        .batchnorm2d(xv, g, b, (&[0.0, 0.0], &[1.0, 1.0]), BnMode::Eval, 1e-5)
        .unwrap();
    assert!(stats.is_none());
    let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
    for (o, i) in tape.value(y).data().iter().zip(x.data()) {
        assert_abs_diff_eq!(*o, i * scale, epsilon = 1e-15);
    }
}

#[test]
fn softmax_and_cross_entropy_formulas() {
    let x = random(7, 10);
    let y = shipnet_core::ops::softmax::softmax(&x, &[7], 0);
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    for (a, b) in y.iter().zip(&x) {
        assert_abs_diff_eq!(*a, b.exp() / z, epsilon = 1e-7);
    }
    let logits = random(30, 11);
    let labels = [0, 5, 2, 3, 1];
    let (loss, _) = shipnet_core::ops::softmax::cross_entropy(&logits, 6, &labels);
    let want: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let row = &logits[i * 6..(i + 1) * 6];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum::<f64>()
        / 5.0;
    assert_abs_diff_eq!(loss, want, epsilon = 1e-6);
    let (uniform, _) = shipnet_core::ops::softmax::cross_entropy(&[0.0f64; 3], 3, &[1]);
    assert_abs_diff_eq!(uniform, 3f64.ln(), epsilon = 1e-12);
    let (peaked, _) = shipnet_core::ops::softmax::cross_entropy(&[50.0f64, 0.0, 0.0], 3, &[0]);
    assert!(peaked < 1e-12);
}

#[test]
fn cross_entropy_rejects_bad_label() {
    let mut tape = Tape::<f64>::new();
    let l = tape.leaf(Tensor::zeros(vec![2, 3]), true);
    assert!(tape.cross_entropy(l, &[0, 3]).is_err());
}

#[test]
fn linear_matches_triple_loop() {
    let x = random(15, 12);
    let w = random(20, 13);
    let b = random(4, 14);
    let y = shipnet_core::ops::linear::linear_forward(&x, &w, &b, 3, 5, 4);
    for i in 0..3 {
        for j in 0..4 {
            let mut acc = b[j];
            for k in 0..5 {
                acc += x[i * 5 + k] * w[k * 4 + j];
            }
            assert_abs_diff_eq!(y[i * 4 + j], acc, epsilon = 1e-6);
        }
    }
    let eye: Vec<f64> = (0..25).map(|i| if i % 6 == 0 { 1.0 } else { 0.0 }).collect();
    assert_eq!(shipnet_core::ops::linear::linear_forward(&x, &eye, &[0.0; 5], 3, 5, 5), x);
    let y = shipnet_core::ops::linear::linear_forward(&x, &[0.0; 20], &[2.0; 4], 3, 5, 4);
    assert!(y.iter().all(|&v| v == 2.0));
}

#[test]
fn bilinear_matches_half_pixel_formula() {
    let img = Tensor::new(vec![1, 2, 2], vec![0.0f64, 1.0, 2.0, 3.0]).unwrap();
    let out = bilinear_resize(&img, 4, 4).unwrap();
    // Source coordinate (o + 0.5) / 2 - 0.5 clamped to [0, 1]; the image is
    // the plane v(y, x) = 2y + x, so the result is exact.
    let coord = |o: usize| ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
    for oy in 0..4 {
        for ox in 0..4 {
            let want = 2.0 * coord(oy) + coord(ox);
            assert_abs_diff_eq!(out.data()[oy * 4 + ox], want, epsilon = 1e-12);
        }
    }
    let same = Tensor::new(vec![2, 3, 5], random(30, 15)).unwrap();
    assert!(bilinear_resize(&same, 3, 5).unwrap().max_abs_diff(&same) < 1e-6);
    let c = Tensor::full(vec![1, 7, 3], 0.37f64);
    assert!(bilinear_resize(&c, 16, 9).unwrap().data().iter().all(|&v| v == 0.37));
}

#[test]
fn adam_ten_steps_on_square() {
    let mut store = ParamStore::<f64>::new();
    store.insert("theta", Tensor::scalar(1.0)).unwrap();
    let cfg = AdamConfig::with_lr(0.1);
    let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    for t in 1..=10 {
        let g = 2.0 * theta;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta -= 0.1 * mh / (vh.sqrt() + 1e-8);

        let cur = store.value("theta").unwrap().data()[0];
        store.zero_grad();
        store.param_mut("theta").unwrap().grad = Some(Tensor::scalar(2.0 * cur));
        store.adam_step(&cfg).unwrap();
        assert_eq!(store.step(), t as u64);
        assert_abs_diff_eq!(store.value("theta").unwrap().data()[0], theta, epsilon = 1e-6);
    }
}

#[test]
fn he_init_variance() {
    let t = he_init::<f64>(&[100_000], 64, 5, "probe").unwrap();
    let n = t.numel() as f64;
    let mean = t.data().iter().sum::<f64>() / n;
    let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / (2.0 / 64.0) - 1.0).abs() < 0.05, "var {var}");
    assert!(mean.abs() < 0.01);
    assert_eq!(t, he_init::<f64>(&[100_000], 64, 5, "probe").unwrap());
    assert_ne!(t, he_init::<f64>(&[100_000], 64, 5, "other").unwrap());
}
