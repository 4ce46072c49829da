//! Analytic gradients against central finite differences in 64-bit mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shipnet_core::model::{ModelConfig, NetInputs, Network};
use shipnet_core::ops::{BnMode, ConvGeom};
use shipnet_core::sardata::{prepare, synth_chip, ALL_BRANCHES};
use shipnet_core::{ParamStore, Tape, Tensor, Var};

const H: f64 = 1e-6;
const MIN_H: f64 = 1e-8;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// `sum(f(inputs) * r)` for a fixed random `r`, so every output element
/// carries a distinct weight.
fn weighted_loss(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], grad: bool, f: &Build) -> (Var, Vec<Var>) {
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
    let out = f(tape, &vars);
    let shape = tape.shape(out).to_vec();
    if shape.iter().product::<usize>() == 1 && shape.len() <= 1 {
        return (out, vars);
    }
    let r = tape.constant(random(&shape, 99));
    let prod = tape.mul(out, r).unwrap();
    (tape.sum(prod), vars)
}

fn check_primitive(name: &str, inputs: Vec<Tensor<f64>>, f: &Build) {
    let mut tape = Tape::new();
    let (loss, vars) = weighted_loss(&mut tape, &inputs, true, f);
    let grads = tape.backward(loss).unwrap();
    let eval = |inputs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let (l, _) = weighted_loss(&mut t, inputs, false, f);
        t.value(l).data()[0]
    };
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zero(&tape, *v);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            assert!(err < 1e-5, "{name}: input {i} elem {j}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn conv2d_all_geometries() {
    for (k, geom) in [
        (3, ConvGeom::SAME_3X3),
        (3, ConvGeom::DILATED_3X3),
        (1, ConvGeom::POINTWISE),
        (3, ConvGeom { stride: 2, padding: 1, dilation: 1 }),
    ] {
        check_primitive(
            "conv2d",
            vec![random(&[2, 3, 6, 6], 1), random(&[4, 3, k, k], 2), random(&[4], 3)],
            &move |t, v| t.conv2d(v[0], v[1], Some(v[2]), geom).unwrap(),
        );
    }
}

#[test]
fn maxpool() {
    // distinct values keep every window's maximum unique
    let mut x = random(&[2, 2, 4, 4], 4);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += i as f64 * 0.01;
    }
    check_primitive("maxpool", vec![x], &|t, v| t.maxpool2d(v[0], 2, 2).unwrap());
}

#[test]
fn batchnorm_both_modes() {
    for mode in [BnMode::Train, BnMode::Eval] {
        check_primitive(
            "batchnorm",
            vec![random(&[3, 2, 3, 3], 5), random(&[2], 6), random(&[2], 7)],
            &move |t, v| {
                let (mean, var) = ([0.1, -0.2], [0.7, 1.3]);
                t.batchnorm2d(v[0], v[1], v[2], (&mean, &var), mode, 1e-5).unwrap().0
            },
        );
    }
}

#[test]
fn elementwise() {
    let mut x = random(&[2, 3, 2, 2], 8);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.3;
        }
    }
    check_primitive("relu", vec![x], &|t, v| t.relu(v[0]));
    check_primitive("sigmoid", vec![random(&[2, 3, 2, 2], 9)], &|t, v| t.sigmoid(v[0]));
    check_primitive(
        "add",
        vec![random(&[2, 3], 10), random(&[2, 3], 11)],
        &|t, v| t.add(v[0], v[1]).unwrap(),
    );
    check_primitive(
        "mul",
        vec![random(&[2, 3], 12), random(&[2, 3], 13)],
        &|t, v| t.mul(v[0], v[1]).unwrap(),
    );
}

#[test]
fn sigmoid_at_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(0.0), true);
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).data()[0], 0.5);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap()[0], 0.25);
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    assert!(((s(H) - s(-H)) / (2.0 * H) - 0.25).abs() < 1e-6);
}

#[test]
fn structural_ops() {
    check_primitive(
        "concat",
        vec![random(&[2, 1, 2, 2], 14), random(&[2, 3, 2, 2], 15)],
        &|t, v| t.concat_channels(&[v[0], v[1]]).unwrap(),
    );
    check_primitive("flatten", vec![random(&[2, 3, 2, 2], 16)], &|t, v| t.flatten(v[0]).unwrap());
    check_primitive(
        "linear",
        vec![random(&[3, 5], 17), random(&[5, 4], 18), random(&[4], 19)],
        &|t, v| t.linear(v[0], v[1], v[2]).unwrap(),
    );
    for axis in [0, 1] {
        check_primitive("softmax", vec![random(&[3, 4], 20)], &move |t, v| {
            t.softmax(v[0], axis).unwrap()
        });
    }
    check_primitive("cross_entropy", vec![random(&[4, 3], 21)], &|t, v| {
        t.cross_entropy(v[0], &[0, 2, 1, 2]).unwrap()
    });
}

#[test]
fn non_local() {
    check_primitive(
        "non_local",
        vec![random(&[2, 2, 3, 3], 22), random(&[2, 2, 3, 3], 23), random(&[2, 2, 3, 3], 24)],
        &|t, v| t.non_local(v[0], v[1], v[2]).unwrap(),
    );
}

#[test]
fn backward_basics() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[2, 3], 25), true);
    let unused = tape.leaf(random(&[4], 26), true);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));
    assert!(g.get_or_zero(&tape, unused).data().iter().all(|&v| v == 0.0));
    assert!(tape.backward(x).is_err());
}

/// Input 16x16, widths divided by 8, one DRDB.
pub fn miniature() -> ModelConfig {
    ModelConfig {
        classes: 3,
        input_size: 16,
        width_divisor: 8,
        n_drdb: 1,
        ..Default::default()
    }
}

fn model_loss(net: &Network, store: &ParamStore<f64>, inputs: &NetInputs<f64>, labels: &[usize]) -> (Tape<f64>, Var) {
    let mut tape = Tape::new();
    let out = net.forward(&mut tape, store, inputs, BnMode::Train).unwrap();
    let loss = tape.cross_entropy(out.logits, labels).unwrap();
    (tape, loss)
}

/// Moves every bias off zero so that no ReLU input sits exactly on the kink,
/// where central differences and the analytic one-sided slope disagree.
fn jitter_biases(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.params().map(|(n, _)| n.to_string()).collect();
    for name in names.iter().filter(|n| n.ends_with(".bias")) {
        for v in store.param_mut(name).unwrap().value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

/// Relative error with a floor so that analytically zero gradients are
/// compared in absolute terms.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Central difference whose step shrinks while the two one-sided slopes
/// disagree, i.e. while a ReLU or max-pool switch lies within the step.
fn smooth_central_difference(base: f64, eval: &mut impl FnMut(f64) -> f64) -> f64 {
    let mut h = H;
    loop {
        let (plus, minus) = (eval(h), eval(-h));
        let (right, left) = ((plus - base) / h, (base - minus) / h);
        let smooth = (right - left).abs() <= 2e-5 * right.abs().max(left.abs()).max(1e-3);
        if smooth || h <= MIN_H {
            return (plus - minus) / (2.0 * h);
        }
        h /= 10.0;
    }
}

#[test]
fn full_model_matches_finite_differences() {
    let cfg = miniature();
    let net = Network::new(cfg.clone()).unwrap();
    let mut store = net.init_params::<f64>(3).unwrap();
    jitter_biases(&mut store, 3);
    let chips: Vec<_> = (0..3)
        .map(|k| prepare(&synth_chip(3, k, 40 + k as u64, 32).unwrap(), 16, ALL_BRANCHES).unwrap())
        .collect();
    let refs: Vec<_> = chips.iter().collect();
    let inputs = NetInputs::from_triples(&refs, &cfg).unwrap();
    let labels = [0, 1, 2];

    let (tape, loss) = model_loss(&net, &store, &inputs, &labels);
    let grads = tape.backward(loss).unwrap();
    store.accumulate_grads(&tape, &grads).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = store
        .params()
        .map(|(n, p)| (n.to_string(), p.grad.as_ref().unwrap().data().to_vec()))
        .collect();

    let base = {
        let (t, l) = model_loss(&net, &store, &inputs, &labels);
        t.value(l).data()[0]
    };
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    for (name, grad) in &analytic {
        for (j, &a) in grad.iter().enumerate() {
            let mut eval = |delta: f64| {
                let p = store.param_mut(name).unwrap();
                let orig = p.value.data()[j];
                p.value.data_mut()[j] = orig + delta;
                let (t, l) = model_loss(&net, &store, &inputs, &labels);
                store.param_mut(name).unwrap().value.data_mut()[j] = orig;
                t.value(l).data()[0]
            };
            let numeric = smooth_central_difference(base, &mut eval);
            let e = rel_err(a, numeric);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}] analytic {a:e} numeric {numeric:e}"));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, net.count_params());
    assert!(worst.0 < 1e-4, "worst relative error {:e} at {}", worst.0, worst.1);
}
