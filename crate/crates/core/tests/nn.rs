use conplan::nn::{
    attention, attention_backward, layer_norm, read_checkpoint, save_checkpoint, sgd_step, sigmoid, softmax, Linear,
    Mlp, Parameters, LN_EPS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central differences of `f` with respect to every parameter of `m`.
fn numeric_grad(m: &Mlp, f: impl Fn(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-5;
    let base = m.flatten();
    let mut out = Vec::with_capacity(base.len());
    let mut probe = m.clone();
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        probe.assign_flat(&p).unwrap();
        let up = f(&probe);
        p[i] -= 2.0 * h;
        probe.assign_flat(&p).unwrap();
        let down = f(&probe);
        out.push((up - down) / (2.0 * h));
    }
    out
}

#[test]
fn zero_mlp_outputs_zero() {
    let m = Mlp::zeros(&[5, 64, 64, 3]);
    assert_eq!(m.eval(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap(), vec![0.0; 3]);
}

#[test]
fn two_by_two_mlp_hand_evaluation() {
    // [2] -> affine -> LN -> ReLU -> [2] -> affine -> [1]
    let mut m = Mlp::zeros(&[2, 2, 1]);
    m.layers[0].weight = vec![1.0, 0.0, 0.0, 2.0];
    m.layers[0].bias = vec![0.5, 0.0];
    m.layers[1].weight = vec![1.0, -1.0];
    m.layers[1].bias = vec![0.25];
    let x = [1.0, 3.0];
    // hidden pre-norm [1.5, 6.0]: mean 3.75, population variance 5.0625
    let s = (5.0625f64 + LN_EPS).sqrt();
    let h = [((1.5 - 3.75) / s).max(0.0), ((6.0 - 3.75) / s).max(0.0)];
    let expected = h[0] - h[1] + 0.25;
    let y = m.eval(&x).unwrap();
    assert!((y[0] - expected).abs() < 1e-12, "{} vs {expected}", y[0]);
}

#[test]
fn mlp_is_pure() {
    let m = Mlp::new(&[3, 8, 2], &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(m.eval(&[0.1, 0.2, 0.3]).unwrap(), m.eval(&[0.1, 0.2, 0.3]).unwrap());
}

#[test]
fn wrong_input_length_is_a_dimension_error() {
    let m = Mlp::zeros(&[3, 4, 1]);
    assert!(matches!(m.eval(&[1.0]), Err(conplan::Error::Dimension { .. })));
}

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm(&[1.0, 1.0, 1.0], &[1.0; 3], &[0.0; 3]), vec![0.0; 3]);
    let y = layer_norm(&[1.0, 2.0, 3.0], &[1.0; 3], &[0.0; 3]);
    let s = (2.0f64 / 3.0 + LN_EPS).sqrt();
    for (a, b) in y.iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((y[2] - 1.2247).abs() < 1e-4);
}

proptest! {
    #[test]
    fn layer_norm_is_shift_invariant(x in prop::collection::vec(-10.0..10.0f64, 2..16), k in -50.0..50.0f64) {
        let n = x.len();
        let g = vec![1.3; n];
        let b = vec![-0.2; n];
        let shifted: Vec<f64> = x.iter().map(|v| v + k).collect();
        for (a, c) in layer_norm(&x, &g, &b).iter().zip(layer_norm(&shifted, &g, &b)) {
            prop_assert!((a - c).abs() < 1e-8);
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(
        q in prop::collection::vec(-3.0..3.0f64, 4),
        keys in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 1..12),
    ) {
        let values: Vec<Vec<f64>> = keys.iter().map(|k| vec![k[0]]).collect();
        let (_, w) = attention(&q, &keys, &values).unwrap();
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn attention_examples() {
    let (ctx, w) = attention(&[0.3, -1.0], &[vec![2.0, 1.0]], &[vec![7.0, 8.0]]).unwrap();
    assert_eq!(w, vec![1.0]);
    assert_eq!(ctx, vec![7.0, 8.0]);
    let keys = vec![vec![0.5, 0.5]; 4];
    let (_, w) = attention(&[1.0, 2.0], &keys, &keys).unwrap();
    assert!(w.iter().all(|x| (x - 0.25).abs() < 1e-15));
    let (_, w) = attention(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![0.0], vec![0.0]]).unwrap();
    let a = (1.0 / 2f64.sqrt()).exp();
    assert!((w[0] - a / (a + 1.0)).abs() < 1e-15);
    assert!((w[0] - 0.6698).abs() < 1e-4 && (w[1] - 0.3302).abs() < 1e-4);
    assert!(attention(&[1.0], &[], &[]).is_err());
}

#[test]
fn attention_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut r = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let q = r(3);
    let keys: Vec<Vec<f64>> = (0..4).map(|_| r(3)).collect();
    let values: Vec<Vec<f64>> = (0..4).map(|_| r(2)).collect();
    let up = r(2);
    let loss = |q: &[f64], k: &[Vec<f64>], v: &[Vec<f64>]| {
        let (c, _) = attention(q, k, v).unwrap();
        c.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, w) = attention(&q, &keys, &values).unwrap();
    let g = attention_backward(&q, &keys, &values, &w, &up, None);
    let h = 1e-6;
    for i in 0..3 {
        let (mut a, mut b) = (q.clone(), q.clone());
        a[i] += h;
        b[i] -= h;
        let fd = (loss(&a, &keys, &values) - loss(&b, &keys, &values)) / (2.0 * h);
        assert!(rel_err(fd, g.dquery[i]) < 1e-6);
    }
    for j in 0..4 {
        for i in 0..3 {
            let (mut a, mut b) = (keys.clone(), keys.clone());
            a[j][i] += h;
            b[j][i] -= h;
            let fd = (loss(&q, &a, &values) - loss(&q, &b, &values)) / (2.0 * h);
            assert!(rel_err(fd, g.dkeys[j][i]) < 1e-6);
        }
        for i in 0..2 {
            let (mut a, mut b) = (values.clone(), values.clone());
            a[j][i] += h;
            b[j][i] -= h;
            let fd = (loss(&q, &keys, &a) - loss(&q, &keys, &b)) / (2.0 * h);
            assert!(rel_err(fd, g.dvalues[j][i]) < 1e-6);
        }
    }
}

#[test]
fn small_mlp_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::new(&[3, 4, 4, 2], &mut rng);
        // perturb LN parameters so their gradients are non-trivial
        m.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1)));
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |m: &Mlp| m.eval(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
        let (_, tape) = m.forward(&x).unwrap();
        let mut grads = m.zeros_like();
        let dx = m.backward(&tape, &up, &mut grads).unwrap();
        for (a, n) in grads.flatten().iter().zip(numeric_grad(&m, f)) {
            assert!((a - n).abs() < 1e-8 || rel_err(*a, n) < 1e-4, "seed {seed}: {a} vs {n}");
        }
        let h = 1e-5;
        for i in 0..3 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let g = |x: &[f64]| m.eval(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
            let fd = (g(&a) - g(&b)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8 || rel_err(fd, dx[i]) < 1e-4);
        }
    }
}

#[test]
fn sigmoid_head_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = Mlp::new(&[4, 6, 6, 1], &mut rng);
    let x = [0.2, -0.7, 1.1, 0.4];
    let y = 1.0;
    let bce = |m: &Mlp| {
        let c = sigmoid(m.eval(&x).unwrap()[0]);
        -(y * c.ln() + (1.0 - y) * (1.0 - c).ln())
    };
    let (out, tape) = m.forward(&x).unwrap();
    let mut grads = m.zeros_like();
    m.backward(&tape, &[sigmoid(out[0]) - y], &mut grads).unwrap();
    for (a, n) in grads.flatten().iter().zip(numeric_grad(&m, bce)) {
        assert!((a - n).abs() < 1e-8 || rel_err(*a, n) < 1e-4);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let m = Mlp::new(&[3, 4, 2], &mut ChaCha8Rng::seed_from_u64(2));
    let (_, tape) = m.forward(&[0.1, 0.2, 0.3]).unwrap();
    let mut grads = m.zeros_like();
    m.backward(&tape, &[0.0, 0.0], &mut grads).unwrap();
    assert!(grads.flatten().iter().all(|&g| g == 0.0));
}

#[test]
fn sgd_applies_the_plain_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Mlp::new(&[3, 4, 2], &mut rng);
    let mut g = m.zeros_like();
    g.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0)));
    let mut same = m.clone();
    sgd_step(&mut same, &g, 0.0);
    assert_eq!(same, m);
    let mut stepped = m.clone();
    sgd_step(&mut stepped, &g, 0.05);
    for ((new, old), grad) in stepped.flatten().iter().zip(m.flatten()).zip(g.flatten()) {
        assert_eq!(*new, old - 0.05 * grad);
    }
}

#[test]
fn xavier_init_bounds() {
    let l = Linear::init(30, 10, &mut ChaCha8Rng::seed_from_u64(4));
    let bound = (6.0f64 / 40.0).sqrt();
    assert!(l.weight.iter().all(|w| w.abs() <= bound));
    assert!(l.bias.iter().all(|&b| b == 0.0));
    let m = Mlp::new(&[3, 5, 1], &mut ChaCha8Rng::seed_from_u64(4));
    assert!(m.norms[0].gain.iter().all(|&g| g == 1.0));
}

#[test]
fn softmax_is_shift_invariant_and_normalized() {
    let p = softmax(&[1.0, 2.0, 3.0]);
    let q = softmax(&[1001.0, 1002.0, 1003.0]);
    for (a, b) in p.iter().zip(&q) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let m = Mlp::new(&[3, 7, 2], &mut ChaCha8Rng::seed_from_u64(11));
    save_checkpoint(&m, serde_json::json!({"note": "x"}), &path).unwrap();
    let mut back = Mlp::zeros(&[3, 7, 2]);
    let meta = conplan::nn::load_checkpoint(&mut back, &path).unwrap();
    assert_eq!(back, m);
    assert_eq!(meta["note"], "x");
    assert!(read_checkpoint(&path).unwrap().schema.starts_with("conplan.checkpoint"));
    let mut wrong = Mlp::zeros(&[3, 6, 2]);
    assert!(conplan::nn::load_checkpoint(&mut wrong, &path).is_err());
}
