use jw_core::ot::{
    brute_force_w1, classwise_w1_oracle, exact_w1, feature_w1, transport, w1, EmpiricalJoint, Label,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_joint(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    k: usize,
    uniform: bool,
) -> EmpiricalJoint {
    let points = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..n)
        .map(|_| Label::Hard(rng.random_range(0..k)))
        .collect();
    if uniform {
        EmpiricalJoint::uniform(points, labels, k).unwrap()
    } else {
        let w = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        EmpiricalJoint::normalized(points, labels, w, k).unwrap()
    }
}

#[test]
fn network_simplex_matches_permutation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..200 {
        let n = rng.random_range(1..=6);
        let d = rng.random_range(1..=3);
        let p = random_joint(&mut rng, n, d, 3, true);
        let q = random_joint(&mut rng, n, d, 3, true);
        let a = w1(&p, &q, 1.0).unwrap();
        let b = brute_force_w1(&p, &q, 1.0).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn optimality_certificate_on_larger_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for t in 0..30 {
        let n = rng.random_range(20..120);
        let m = rng.random_range(20..120);
        let p = random_joint(&mut rng, n, 4, 3, t % 2 == 0);
        let q = random_joint(&mut rng, m, 4, 3, t % 3 == 0);
        let (dist, plan) = exact_w1(&p, &q, 1.0).unwrap();
        for (r, w) in plan.row_sums().iter().zip(p.weights()) {
            assert!((r - w).abs() < 1e-9);
        }
        for (c, w) in plan.col_sums().iter().zip(q.weights()) {
            assert!((c - w).abs() < 1e-9);
        }
        assert!((plan.total_cost() - dist).abs() < 1e-9);
        let (f, g) = &plan.potentials;
        let mut dual = 0.0;
        for i in 0..n {
            dual += p.weights()[i] * f[i];
        }
        for j in 0..m {
            dual += q.weights()[j] * g[j];
        }
        assert!((dual - dist).abs() < 1e-9, "duality gap {}", dual - dist);
        for i in 0..n {
            for j in 0..m {
                let yi = p.labels()[i].to_vec(3);
                let yj = q.labels()[j].to_vec(3);
                let c =
                    jw_core::ot::product_metric_cost(&p.points()[i], &yi, &q.points()[j], &yj, 1.0)
                        .unwrap();
                assert!(f[i] + g[j] <= c + 1e-9);
            }
        }
    }
}

#[test]
fn metric_axioms_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..100 {
        let ns: Vec<usize> = (0..3).map(|_| rng.random_range(1..15)).collect();
        let a = random_joint(&mut rng, ns[0], 2, 2, false);
        let b = random_joint(&mut rng, ns[1], 2, 2, false);
        let c = random_joint(&mut rng, ns[2], 2, 2, false);
        let ab = w1(&a, &b, 1.0).unwrap();
        let ba = w1(&b, &a, 1.0).unwrap();
        let bc = w1(&b, &c, 1.0).unwrap();
        let ac = w1(&a, &c, 1.0).unwrap();
        assert!(ab >= 0.0);
        assert!((ab - ba).abs() < 1e-10);
        assert!(ab + bc - ac >= -1e-9);
        assert!(w1(&a, &a, 1.0).unwrap().abs() < 1e-12);
    }
}

#[test]
fn degenerate_uniform_grid() {
    // many ties in the cost matrix
    let pts: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i % 5) as f64, (i / 5) as f64])
        .collect();
    let p = EmpiricalJoint::uniform(pts.clone(), vec![Label::Hard(0); 30], 1).unwrap();
    let mut shifted = pts.clone();
    shifted.reverse();
    let q = EmpiricalJoint::uniform(shifted, vec![Label::Hard(0); 30], 1).unwrap();
    assert!(w1(&p, &q, 1.0).unwrap().abs() < 1e-12);
    let r = p.scale_features(2.0);
    let d = w1(&p, &r, 1.0).unwrap();
    let direct = feature_w1(p.points(), p.weights(), r.points(), r.weights()).unwrap();
    assert!((d - direct).abs() < 1e-10);
}

#[test]
fn single_class_oracle_equals_feature_w1() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let p = random_joint(&mut rng, 7, 2, 1, false);
        let q = random_joint(&mut rng, 5, 2, 1, false);
        let a = classwise_w1_oracle(&p, &q, 0).unwrap();
        assert!((a - w1(&p, &q, 1.0).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn transport_rejects_unbalanced_masses() {
    assert!(transport(&[1.0], &[0.5], |_, _| 1.0).is_err());
}

proptest! {
    #[test]
    fn scale_equivariance(seed in 0u64..1000, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..10);
        let m = rng.random_range(1..10);
        let p = random_joint(&mut rng, n, 3, 1, false);
        let q = random_joint(&mut rng, m, 3, 1, false);
        let base = w1(&p, &q, 1.0).unwrap();
        let scaled = w1(&p.scale_features(s), &q.scale_features(s), 1.0).unwrap();
        prop_assert!((scaled - s * base).abs() < 1e-9 * (1.0 + s * base));
    }

    #[test]
    fn symmetric_in_arguments(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_joint(&mut rng, 8, 2, 3, false);
        let q = random_joint(&mut rng, 11, 2, 3, false);
        prop_assert!((w1(&p, &q, 0.7).unwrap() - w1(&q, &p, 0.7).unwrap()).abs() < 1e-10);
    }
}
