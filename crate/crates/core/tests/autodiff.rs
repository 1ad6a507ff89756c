use proptest::prelude::*;
use qtart::autodiff::{Tape, Var};
use qtart::data::NormalizationStats;
use qtart::nn::ConvNetSpec;
use qtart::{Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `sum(probe ⊙ f(inputs))` on a fresh tape and returns it with the leaves.
fn scalar<F>(f: &F, inputs: &[Tensor<f64>], probe_seed: u64) -> (Tape<f64>, Vec<Var>, Var)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &leaves);
    let shape = tape.value(out).shape().to_vec();
    let probe = tape.leaf(random(&shape, &mut ChaCha8Rng::seed_from_u64(probe_seed)), false);
    let weighted = tape.mul(out, probe).unwrap();
    let root = tape.sum(weighted);
    (tape, leaves, root)
}

/// Worst relative error between tape gradients and central differences.
fn gradcheck<F>(f: F, inputs: Vec<Tensor<f64>>) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let (tape, leaves, root) = scalar(&f, &inputs, 99);
    let mut grads = tape.backward(root).unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let (t, _, r) = scalar(&f, xs, 99);
        t.value(r).data()[0]
    };
    let mut worst = 0.0f64;
    for (k, leaf) in leaves.iter().enumerate() {
        let g = grads.take(*leaf).unwrap();
        for j in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = g.data()[j];
            worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
        }
    }
    worst
}

#[test]
fn elementwise_ops() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&[3, 4], &mut r), random(&[3, 4], &mut r));
    let e = gradcheck(
        |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let p = t.mul(s, v[0]).unwrap();
            t.scale(p, -1.7)
        },
        vec![a, b],
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn dense_layer() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let e = gradcheck(
        |t, v| t.dense(v[0], v[1], v[2]).unwrap(),
        vec![random(&[4, 5], &mut r), random(&[3, 5], &mut r), random(&[3], &mut r)],
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn conv_with_and_without_padding() {
    for pad in [0, 1] {
        let mut r = ChaCha8Rng::seed_from_u64(3 + pad as u64);
        let e = gradcheck(
            |t, v| t.conv2d(v[0], v[1], v[2], pad).unwrap(),
            vec![random(&[2, 2, 5, 5], &mut r), random(&[3, 2, 3, 3], &mut r), random(&[3], &mut r)],
        );
        assert!(e < 1e-4, "pad {pad}: {e}");
    }
}

#[test]
fn relu_pool_reshape_chain() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let e = gradcheck(
        |t, v| {
            let a = t.relu(v[0]);
            let p = t.maxpool(a, 2).unwrap();
            t.reshape(p, &[2, 18]).unwrap()
        },
        vec![random(&[2, 2, 6, 6], &mut r)],
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn maxpool_routes_gradient_to_the_max() {
    let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![0.1, 0.9, 0.3, -0.2]).unwrap();
    let mut t = Tape::new();
    let v = t.leaf(x, true);
    let p = t.maxpool(v, 2).unwrap();
    let s = t.sum(p);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap().data(), &[0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn channel_affine_and_weighted_cross_entropy() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let e = gradcheck(
        |t, v| t.channel_affine(v[0], &[0.2, -0.1], &[0.5, 2.0]).unwrap(),
        vec![random(&[2, 2, 3, 3], &mut r)],
    );
    assert!(e < 1e-4, "{e}");

    let targets = vec![0.05, 0.9, 0.05, 0.8, 0.1, 0.1, 0.1, 0.1, 0.8];
    let e = gradcheck(
        |t, v| t.smoothed_cross_entropy(v[0], &targets, &[1.0, 0.0, 2.0]).unwrap(),
        vec![random(&[3, 3], &mut r)],
    );
    assert!(e < 1e-4, "{e}");
}

#[test]
fn backward_needs_a_scalar_root_on_the_tape() {
    let mut t = Tape::<f64>::new();
    let v = t.leaf(Tensor::zeros(&[2, 2]), true);
    assert!(matches!(t.backward(v), Err(Error::Shape { .. })));
    let other = Tape::<f64>::new();
    assert!(matches!(other.backward(v), Err(Error::NoGraph(_))));
}

#[test]
fn frozen_leaves_get_no_gradient() {
    let mut t = Tape::<f64>::new();
    let a = t.leaf(Tensor::from_vec(vec![1.0, 2.0]), true);
    let b = t.leaf(Tensor::from_vec(vec![3.0, 4.0]), false);
    let m = t.mul(a, b).unwrap();
    let s = t.sum(m);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(a).unwrap().data(), &[3.0, 4.0]);
    assert!(g.get(b).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn model_gradients_match_finite_differences(seed in 0u64..1000, smoothing in 0.0f64..0.3) {
        let spec = ConvNetSpec { hidden: Some(4), ..ConvNetSpec::new([1, 4, 4], 3, &[2]) };
        let mut model = spec.build_as::<f64>(seed).unwrap();
        model.set_input_norm(Some(NormalizationStats::new(vec![0.3], vec![0.7]).unwrap())).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::new(&[2, 1, 4, 4], (0..32).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let y = vec![r.random_range(0..3), r.random_range(0..3)];
        let g = model.loss_gradients(&x, &y, smoothing, None, true).unwrap();
        let loss = |m: &qtart::nn::Model<f64>, x: &Tensor<f64>| m.loss_gradients(x, &y, smoothing, None, false).unwrap().loss;
        for p in 0..g.params.len() {
            for j in 0..g.params[p].len() {
                let (mut a, mut b) = (model.clone(), model.clone());
                a.params_mut()[p].data_mut()[j] += H;
                b.params_mut()[p].data_mut()[j] -= H;
                let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * H);
                let an = g.params[p].data()[j];
                prop_assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-4, "param {} entry {}: {} vs {}", p, j, an, fd);
            }
        }
        let gx = g.input.unwrap();
        for j in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data_mut()[j] += H;
            b.data_mut()[j] -= H;
            let fd = (loss(&model, &a) - loss(&model, &b)) / (2.0 * H);
            let an = gx.data()[j];
            prop_assert!((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-4);
        }
    }

    #[test]
    fn f32_and_f64_models_agree(seed in 0u64..1000) {
        let spec = ConvNetSpec::new([2, 6, 6], 4, &[3, 3]);
        let m32 = spec.build(seed).unwrap();
        let m64 = m32.cast::<f64>();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f32>::new(&[3, 2, 6, 6], (0..216).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
        let a = m32.logits(&x).unwrap();
        let b = m64.logits(&x.cast::<f64>()).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            prop_assert!((*u as f64 - v).abs() < 1e-4);
        }
    }
}
