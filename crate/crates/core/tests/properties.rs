use jw_core::bounds::{
    check_lemma1, check_lemma3, check_theorem2_core, classifier_lipschitz, lemma1_instance,
    theorem2_instance, InstanceShape,
};
use jw_core::distributions::{
    expected_conditional_kl, gen_finite_joint, kl_divergence, mask_labels, mix, random_simplex,
    two_moons, DatasetSplit, Domain, FiniteJointSpec, MixtureSpec,
};
use jw_core::explain::{gradient_times_input_mlp, lrp_gamma_mlp, GammaSchedule};
use jw_core::nn::{Activation, Mlp, Tensor};
use jw_core::objective::{critic_loss, CriticKind, CriticNet};
use jw_core::ot::{feature_w1, EmpiricalJoint, Label};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simplex_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..8, any::<u64>()).prop_map(|(k, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (
            random_simplex(&mut rng, k, 0.0),
            random_simplex(&mut rng, k, 0.0),
        )
    })
}

fn spec(m: usize, k: usize, min_prob: f64) -> FiniteJointSpec {
    FiniteJointSpec {
        min_prob,
        ..FiniteJointSpec::new(m, k)
    }
}

/// KL between two joints over the same finite cells `(z_i, y)`.
fn flattened_kl(a: &EmpiricalJoint, b: &EmpiricalJoint) -> f64 {
    let mut kl = 0.0;
    for i in 0..a.len() {
        let (ca, cb) = (a.conditional(i), b.conditional(i));
        for y in 0..a.num_classes() {
            let pa = a.weights()[i] * ca[y];
            let pb = b.weights()[i] * cb[y];
            if pa > 0.0 {
                kl += pa * (pa / pb).ln();
            }
        }
    }
    kl
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::matrix(n, d, data).unwrap()
}

fn random_conditionals(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| random_simplex(rng, k, 0.0)).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn critic(kind: CriticKind, d: usize, k: usize, seed: u64) -> CriticNet {
    CriticNet::build(kind, d, k, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
        .unwrap()
}

fn add_to_head(c: &CriticNet, head: usize, shift: f64) -> CriticNet {
    let mut c = c.clone();
    let last = c.net.layers.len() - 1;
    c.net.layers[last].bias.data_mut()[head] += shift;
    c
}

fn zero_bias_net(seed: u64, widths: &[usize]) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slope = [0.0, 0.01, 0.1, 0.5][rng.random_range(0..4)];
    let mut net = Mlp::build(
        widths,
        Activation::LeakyRelu { slope },
        Activation::Softmax,
        false,
        &mut rng,
    )
    .unwrap();
    for l in &mut net.layers {
        l.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }
    net
}

#[test]
fn kl_is_nonnegative_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let (p, q) = (
            random_simplex(&mut rng, k, 0.0),
            random_simplex(&mut rng, k, 0.0),
        );
        let kl = kl_divergence(&p, &q).unwrap();
        assert!(kl > 0.0);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }
}

#[test]
fn stratified_masking_keeps_class_proportions() {
    let (x, y) = two_moons(301, 0.0, 0.1, 4);
    let split = DatasetSplit::new(Domain::P, x, y.iter().map(|&c| Some(c)).collect()).unwrap();
    let masked = mask_labels(&split, 0.1, 9).unwrap();
    assert_eq!(masked.labeled_count(), 31);
    let per_class = |c: usize| masked.labels.iter().filter(|l| **l == Some(c)).count() as f64;
    let expected = |c: usize| 0.1 * y.iter().filter(|&&l| l == c).count() as f64;
    for c in 0..2 {
        assert!((per_class(c) - expected(c)).abs() <= 1.0 + 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_nonnegative((p, q) in simplex_pair()) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn mix_conserves_mass(seed in any::<u64>(), alpha in 0.001f64..0.999, m in 1usize..12) {
        let a = gen_finite_joint(seed, spec(m, 3, 0.0), None).unwrap();
        let b = gen_finite_joint(seed ^ 1, spec(m + 1, 3, 0.0), None).unwrap();
        let out = mix(&MixtureSpec::new(alpha, a, b).unwrap()).unwrap();
        prop_assert!((out.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditional_kl_equals_joint_kl(seed in any::<u64>(), m in 1usize..15, k in 2usize..5) {
        let a = gen_finite_joint(seed, spec(m, k, 0.01), None).unwrap();
        let b = gen_finite_joint(seed.wrapping_add(7), spec(m, k, 0.01), Some(&a)).unwrap();
        let lhs = expected_conditional_kl(&a, &b).unwrap();
        prop_assert!((lhs - flattened_kl(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn generators_repeat_per_seed(seed in any::<u64>()) {
        let a = gen_finite_joint(seed, spec(5, 3, 0.0), None).unwrap();
        let b = gen_finite_joint(seed, spec(5, 3, 0.0), None).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn critic_loss_antisymmetric(
        seed in any::<u64>(),
        kind_ix in 0usize..3,
        np in 1usize..8,
        nq in 1usize..8,
    ) {
        let kind = [CriticKind::ClassDependent, CriticKind::Joint, CriticKind::Marginal][kind_ix];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = critic(kind, 3, 2, seed);
        let (zp, zq) = (random_features(&mut rng, np, 3), random_features(&mut rng, nq, 3));
        let (cp, cq) = (random_conditionals(&mut rng, np, 2), random_conditionals(&mut rng, nq, 2));
        let fwd = critic_loss(&c, &zp, &zq, &cp, &cq).unwrap();
        let rev = critic_loss(&c, &zq, &zp, &cq, &cp).unwrap();
        prop_assert!((fwd + rev).abs() < 1e-12);
    }

    #[test]
    fn class_head_shift_rule(
        seed in any::<u64>(),
        np in 1usize..8,
        nq in 1usize..8,
        head in 0usize..3,
        shift in -5.0f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = critic(CriticKind::ClassDependent, 2, 3, seed);
        let (zp, zq) = (random_features(&mut rng, np, 2), random_features(&mut rng, nq, 2));
        let (cp, cq) = (random_conditionals(&mut rng, np, 3), random_conditionals(&mut rng, nq, 3));
        let before = critic_loss(&c, &zp, &zq, &cp, &cq).unwrap();
        let after = critic_loss(&add_to_head(&c, head, shift), &zp, &zq, &cp, &cq).unwrap();
        let col_mean = |t: &Tensor| (0..t.rows()).map(|i| t.get(i, head)).sum::<f64>() / t.rows() as f64;
        let expected = shift * (col_mean(&cp) - col_mean(&cq));
        prop_assert!((after - before - expected).abs() < 1e-9);
    }

    #[test]
    fn balanced_critics_ignore_constant_shift(
        seed in any::<u64>(),
        n in 1usize..8,
        joint in any::<bool>(),
        shift in -5.0f64..5.0,
    ) {
        let kind = if joint { CriticKind::Joint } else { CriticKind::Marginal };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = critic(kind, 2, 2, seed);
        let (zp, zq) = (random_features(&mut rng, n, 2), random_features(&mut rng, n, 2));
        let (cp, cq) = (random_conditionals(&mut rng, n, 2), random_conditionals(&mut rng, n, 2));
        let before = critic_loss(&c, &zp, &zq, &cp, &cq).unwrap();
        let after = critic_loss(&add_to_head(&c, 0, shift), &zp, &zq, &cp, &cq).unwrap();
        prop_assert!((after - before).abs() < 1e-9);
    }

    #[test]
    fn marginal_critic_is_below_lipschitz_times_w1(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = critic(CriticKind::Marginal, 2, 2, seed);
        let (zp, zq) = (random_features(&mut rng, n, 2), random_features(&mut rng, n + 2, 2));
        let zeros = |r| Tensor::zeros(&[r, 1]);
        let value = critic_loss(&c, &zp, &zq, &zeros(n), &zeros(n + 2)).unwrap();
        let w = feature_w1(
            &zp.row_vecs(), &vec![1.0 / n as f64; n],
            &zq.row_vecs(), &vec![1.0 / (n + 2) as f64; n + 2],
        ).unwrap();
        prop_assert!(value <= c.net.lipschitz_upper_bound() * w + 1e-12);
    }

    #[test]
    fn lrp_zero_bias_conservation(seed in any::<u64>(), gi in 0usize..3) {
        let gamma = [0.0, 0.25, 1.0][gi];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = zero_bias_net(seed, &[3, 6, 5, 2]);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = lrp_gamma_mlp(&net, &x, rng.random_range(0..2), &GammaSchedule::constant(gamma, 3))
            .unwrap();
        let top: f64 = m.layers.last().unwrap().iter().sum();
        for layer in &m.layers {
            let s: f64 = layer.iter().sum();
            prop_assert!((s - top).abs() < 1e-10 * top.abs().max(1.0), "{s} vs {top}");
        }
    }

    #[test]
    fn lrp_gamma_zero_is_gradient_times_input(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = [0.0, 0.01, 0.1, 0.5][rng.random_range(0..4)];
        let net = Mlp::build(
            &[4, 7, 5, 3],
            Activation::LeakyRelu { slope },
            Activation::Softmax,
            false,
            &mut rng,
        ).unwrap();
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0..3);
        let a = lrp_gamma_mlp(&net, &x, t, &GammaSchedule::constant(0.0, 3)).unwrap();
        let b = gradient_times_input_mlp(&net, &x, t).unwrap();
        for (u, v) in a.input.iter().zip(&b.input) {
            prop_assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn lemma1_is_tight_when_truth_equals_pseudo(seed in any::<u64>(), alpha in 0.01f64..0.99) {
        let shape = InstanceShape::default();
        let (pt, _, k, _) = lemma1_instance(seed, &shape).unwrap();
        let r = check_lemma1(&pt, &pt, &k, alpha, 1.0).unwrap();
        prop_assert!(r.slack.abs() < 1e-9);
    }

    #[test]
    fn lemma3_is_tight_on_one_class(seed in any::<u64>(), m in 1usize..8, n in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = |rng: &mut ChaCha8Rng, n| -> Vec<Vec<f64>> {
            (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect()
        };
        let p = EmpiricalJoint::uniform(pts(&mut rng, m), vec![Label::Hard(0); m], 2).unwrap();
        let q = EmpiricalJoint::uniform(pts(&mut rng, n), vec![Label::Hard(0); n], 2).unwrap();
        let r = check_lemma3(&p, &q, 1.0).unwrap();
        prop_assert!(r.slack.abs() < 1e-9);
    }

    #[test]
    fn theorem2_rhs_grows_with_weight_scale(seed in any::<u64>(), s in 1.0f64..10.0) {
        let (net, pt, qt) = theorem2_instance(seed, &InstanceShape::default()).unwrap();
        let mut scaled = net.clone();
        scaled.scale_weights(s);
        prop_assert!(classifier_lipschitz(&scaled) >= classifier_lipschitz(&net));
        let a = check_theorem2_core(&net, &pt, &qt).unwrap();
        let b = check_theorem2_core(&scaled, &pt, &qt).unwrap();
        prop_assert!(b.rhs >= a.rhs);
    }
}
