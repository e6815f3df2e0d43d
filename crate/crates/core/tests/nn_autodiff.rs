use jw_core::nn::{
    power_iteration_sigma, refine_singular_vector, top_singular_value, Activation, Adam,
    DenseLayer, Mlp, Tape, Tensor,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na.max(nb) < 1e-12 {
        diff
    } else {
        diff / na.max(nb)
    }
}

/// `Σ c ⊙ net(x)` evaluated without a tape.
fn probe(net: &Mlp, x: &Tensor, c: &[f64]) -> f64 {
    net.predict(x)
        .unwrap()
        .data()
        .iter()
        .zip(c)
        .map(|(o, w)| o * w)
        .sum()
}

/// Analytic gradients of `probe` for every parameter and the input, from the tape.
fn analytic(net: &Mlp, x: &Tensor, c: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let fwd = net.forward(&mut tape, xv).unwrap();
    let out = tape.value(fwd.output).clone();
    let cv = tape.constant(Tensor::new(out.shape().to_vec(), c.to_vec()).unwrap());
    let prod = tape.mul(fwd.output, cv);
    let loss = tape.sum(prod);
    let mut grads = tape.backward(loss).unwrap();
    let gx = grads.take_or_zeros(xv, x).into_data();
    let gp = net
        .collect_grads(&mut grads, &fwd.params)
        .into_iter()
        .map(Tensor::into_data)
        .collect();
    (gp, gx)
}

fn numeric(net: &Mlp, x: &Tensor, c: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let np = net.params().len();
    let mut gp = Vec::with_capacity(np);
    for p in 0..np {
        let len = net.params()[p].len();
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[i] += H;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[i] -= H;
            *gi = (probe(&plus, x, c) - probe(&minus, x, c)) / (2.0 * H);
        }
        gp.push(g);
    }
    let mut gx = vec![0.0; x.len()];
    for (i, gi) in gx.iter_mut().enumerate() {
        let mut a = x.clone();
        a.data_mut()[i] += H;
        let mut b = x.clone();
        b.data_mut()[i] -= H;
        *gi = (probe(net, &a, c) - probe(net, &b, c)) / (2.0 * H);
    }
    (gp, gx)
}

fn check_kind(hidden: Activation, last: Activation, spectral: bool, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d_in = rng.random_range(1..5);
        let widths = [d_in, rng.random_range(2..7), rng.random_range(2..5)];
        let net = Mlp::build(&widths, hidden, last, spectral, &mut rng).unwrap();
        let rows = rng.random_range(1..4);
        let x = random_tensor(&mut rng, rows, d_in, 1.5);
        let c: Vec<f64> = (0..rows * widths[2])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (ap, ax) = analytic(&net, &x, &c);
        let (np, nx) = numeric(&net, &x, &c);
        for (a, n) in ap.iter().zip(&np) {
            worst = worst.max(rel_err(a, n));
        }
        worst = worst.max(rel_err(&ax, &nx));
    }
    assert!(
        worst < 1e-4,
        "{hidden:?}/{last:?}: worst relative error {worst:e}"
    );
}

#[test]
fn gradient_check_identity() {
    check_kind(Activation::Identity, Activation::Identity, false, 1);
}

#[test]
fn gradient_check_relu() {
    check_kind(Activation::Relu, Activation::Identity, false, 2);
}

#[test]
fn gradient_check_leaky_relu() {
    check_kind(
        Activation::leaky(),
        Activation::LeakyRelu { slope: 0.3 },
        false,
        3,
    );
}

#[test]
fn gradient_check_softmax() {
    check_kind(Activation::leaky(), Activation::Softmax, false, 4);
}

#[test]
fn gradient_check_spectral_dense() {
    check_kind(Activation::leaky(), Activation::Identity, true, 5);
}

#[test]
fn gradient_check_loss_ops() {
    // ln, concat and division by a scalar, as used by the losses
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let a0 = random_tensor(&mut rng, 3, 2, 1.0).map(|v| v.abs() + 0.1);
        let b0 = random_tensor(&mut rng, 3, 1, 1.0);
        let s0 = Tensor::scalar(rng.random_range(0.5..2.0));
        let f = |a: &Tensor, b: &Tensor, s: &Tensor| -> f64 {
            let mut t = Tape::new();
            let (a, b, s) = (t.param(a.clone()), t.param(b.clone()), t.param(s.clone()));
            let l = t.log_clamped(a, 1e-12);
            let c = t.concat_cols(l, b);
            let sm = t.softmax_rows(c);
            let d = t.div_scalar(sm, s);
            let sq = t.mul(d, c);
            let out = t.mean(sq);
            t.value(out).item()
        };
        let mut t = Tape::new();
        let (a, b, s) = (
            t.param(a0.clone()),
            t.param(b0.clone()),
            t.param(s0.clone()),
        );
        let l = t.log_clamped(a, 1e-12);
        let c = t.concat_cols(l, b);
        let sm = t.softmax_rows(c);
        let d = t.div_scalar(sm, s);
        let sq = t.mul(d, c);
        let out = t.mean(sq);
        let g = t.backward(out).unwrap();
        let inputs = [a0, b0, s0];
        for (k, v) in [a, b, s].into_iter().enumerate() {
            let grad = g.get(v).unwrap().data().to_vec();
            let mut num = vec![0.0; grad.len()];
            for (i, ni) in num.iter_mut().enumerate() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= H;
                *ni = (f(&plus[0], &plus[1], &plus[2]) - f(&minus[0], &minus[1], &minus[2]))
                    / (2.0 * H);
            }
            assert!(rel_err(&grad, &num) < 1e-4);
        }
    }
}

#[test]
fn refined_sigma_is_within_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let r = rng.random_range(1..=128);
        let c = rng.random_range(1..=128);
        let w = random_tensor(&mut rng, r, c, 2.0);
        let mut layer = DenseLayer::from_parts(w, vec![0.0; r], Activation::Identity)
            .unwrap()
            .with_spectral_norm(&mut rng);
        layer.refine_spectral();
        let s = top_singular_value(&layer.effective_weight());
        assert!((0.99..=1.01).contains(&s), "{r}x{c}: sigma {s}");
    }
}

#[test]
fn three_layer_critic_lipschitz_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let mut net = Mlp::build(
            &[16, 64, 64, 3],
            Activation::leaky(),
            Activation::Identity,
            true,
            &mut rng,
        )
        .unwrap();
        net.refine_spectral();
        let bound = net.lipschitz_upper_bound();
        assert!(bound <= 1.04, "{bound}");
    }
}

#[test]
fn power_iteration_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let w = random_tensor(&mut rng, 5, 3, 1.0);
        let u: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (s, next) = power_iteration_sigma(&w, &u, 200);
        assert!((s - top_singular_value(&w)).abs() < 1e-6);
        let n: f64 = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn normalization_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let w = random_tensor(&mut rng, 6, 4, 3.0);
        let u: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, u) = refine_singular_vector(&w, &u);
        let once = jw_core::nn::spectral::normalized_weight(&w, &u);
        let (_, u2) = refine_singular_vector(&once, &u);
        let twice = jw_core::nn::spectral::normalized_weight(&once, &u2);
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() <= 0.01 * a.abs().max(1e-3));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::build(
            &[3, 8, 2],
            Activation::leaky(),
            Activation::Softmax,
            true,
            &mut rng,
        )
        .unwrap();
        let x = random_tensor(&mut rng, 4, 3, 1.0);
        net.predict(&x).unwrap()
    };
    assert_eq!(build(), build());
}

#[test]
fn adam_follows_the_gradient_sign() {
    let mut p = Tensor::vector(vec![1.0, -1.0]);
    let g = Tensor::vector(vec![0.5, -2.0]);
    let mut opt = Adam::new(0.1, 0.9, 0.999);
    opt.step(vec![&mut p], &[g]);
    assert!(p.data()[0] < 1.0 && p.data()[1] > -1.0);
}

proptest! {
    #[test]
    fn softmax_rows_are_on_the_simplex(
        row in prop::collection::vec(-50.0f64..50.0, 1..8),
    ) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, row.len(), row).unwrap());
        let s = t.softmax_rows(x);
        let v = t.value(s).data();
        prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn finite_inputs_give_finite_outputs(
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::build(&[2, 6, 3], Activation::leaky(), Activation::Softmax, true, &mut rng)
            .unwrap();
        let x = random_tensor(&mut rng, 3, 2, scale);
        prop_assert!(net.predict(&x).unwrap().all_finite());
    }
}
