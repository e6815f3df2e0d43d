use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::dataset::{mask_labels, DatasetSplit, Domain};
use crate::nn::Tensor;
use crate::ot::{EmpiricalJoint, Label};
use crate::{derive_seed, Error, Result};

/// Centre of the two-moons point cloud; rotations are taken about it.
pub const MOONS_CENTER: [f64; 2] = [0.5, 0.25];

/// Two interleaved half circles (class 0 outer, class 1 inner) with Gaussian
/// noise, rotated by `rotation_deg` about [`MOONS_CENTER`] and shuffled.
pub fn two_moons(n: usize, rotation_deg: f64, noise_sd: f64, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_out = n / 2;
    let n_in = n - n_out;
    let line = |k: usize, i: usize| {
        if k > 1 {
            std::f64::consts::PI * i as f64 / (k - 1) as f64
        } else {
            0.0
        }
    };
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = line(n_out, i);
        rows.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_in {
        let t = line(n_in, i);
        rows.push(([1.0 - t.cos(), 1.0 - t.sin() - 0.5], 1));
    }
    for (p, _) in &mut rows {
        for x in p.iter_mut() {
            *x += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    rows.shuffle(&mut rng);
    let (s, c) = rotation_deg.to_radians().sin_cos();
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for ([x, y], l) in rows {
        let (dx, dy) = (x - MOONS_CENTER[0], y - MOONS_CENTER[1]);
        data.push(MOONS_CENTER[0] + c * dx - s * dy);
        data.push(MOONS_CENTER[1] + s * dx + c * dy);
        labels.push(l);
    }
    (Tensor::matrix(n, 2, data).expect("shape"), labels)
}

/// Fully labeled source/target pair: `P` upright, `Q` rotated.
pub fn gen_two_moons_labeled(
    n_per_domain: usize,
    rotation_deg: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    if n_per_domain < 20 {
        return Err(Error::InvalidParam(format!(
            "need at least 20 points per domain, got {n_per_domain}"
        )));
    }
    if !(noise_sd >= 0.0) || !rotation_deg.is_finite() {
        return Err(Error::InvalidParam(
            "noise_sd must be ≥ 0 and rotation finite".into(),
        ));
    }
    let make = |domain, rot, stream| {
        let (x, y) = two_moons(n_per_domain, rot, noise_sd, derive_seed(seed, stream));
        DatasetSplit::new(domain, x, y.into_iter().map(Some).collect())
    };
    Ok((make(Domain::P, 0.0, 1)?, make(Domain::Q, rotation_deg, 2)?))
}

/// [`gen_two_moons_labeled`] followed by stratified label masking with
/// fractions `alpha` (P) and `beta` (Q).
pub fn gen_two_moons_domains(
    n_per_domain: usize,
    rotation_deg: f64,
    noise_sd: f64,
    alpha: f64,
    beta: f64,
    seed: u64,
) -> Result<(DatasetSplit, DatasetSplit)> {
    for (name, f) in [("alpha", alpha), ("beta", beta)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidParam(format!("{name} = {f} outside (0, 1)")));
        }
    }
    let (p, q) = gen_two_moons_labeled(n_per_domain, rotation_deg, noise_sd, seed)?;
    Ok((
        mask_labels(&p, alpha, derive_seed(seed, 3))?,
        mask_labels(&q, beta, derive_seed(seed, 4))?,
    ))
}

/// Shape of randomly drawn finite joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteJointSpec {
    pub support: usize,
    pub classes: usize,
    pub dim: usize,
    /// Every conditional entry is at least this value.
    pub min_prob: f64,
}

impl FiniteJointSpec {
    pub fn new(support: usize, classes: usize) -> Self {
        FiniteJointSpec {
            support,
            classes,
            dim: 2,
            min_prob: 0.0,
        }
    }
}

/// Uniform draw from the simplex, mixed towards uniform so each entry is at
/// least `min_prob`.
pub fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize, min_prob: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..k)
        .map(|_| rng.sample::<f64, _>(Exp1) + 1e-300)
        .collect();
    let s: f64 = e.iter().sum();
    let lam = 1.0 - k as f64 * min_prob;
    e.into_iter().map(|x| lam * x / s + min_prob).collect()
}

/// Random joint on `support` atoms in `[0,1]^dim` with random marginal
/// weights and random soft conditionals.
///
/// With `shared_marginal`, atoms and weights are copied from it and only the
/// conditionals are redrawn.
pub fn gen_finite_joint(
    seed: u64,
    spec: FiniteJointSpec,
    shared_marginal: Option<&EmpiricalJoint>,
) -> Result<EmpiricalJoint> {
    let FiniteJointSpec {
        support,
        classes,
        dim,
        min_prob,
    } = spec;
    if support == 0 || classes < 2 {
        return Err(Error::InvalidParam("need m ≥ 1 and K ≥ 2".into()));
    }
    if !(0.0..=1.0 / classes as f64).contains(&min_prob) {
        return Err(Error::InvalidParam(format!(
            "min_prob {min_prob} infeasible"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (points, weights) = match shared_marginal {
        Some(base) => {
            if base.num_classes() != classes {
                return Err(Error::Dimension("shared marginal has a different K".into()));
            }
            (base.points().to_vec(), base.weights().to_vec())
        }
        None => {
            let pts = (0..support)
                .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
                .collect();
            let w = (0..support)
                .map(|_| rng.sample::<f64, _>(Exp1) + 1e-3)
                .collect();
            (pts, w)
        }
    };
    let labels = (0..points.len())
        .map(|_| Label::Soft(random_simplex(&mut rng, classes, min_prob)))
        .collect();
    match shared_marginal {
        Some(_) => EmpiricalJoint::new(points, labels, weights, classes),
        None => EmpiricalJoint::normalized(points, labels, weights, classes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_are_deterministic_and_balanced() {
        let (a, la) = two_moons(101, 0.0, 0.1, 5);
        let (b, lb) = two_moons(101, 0.0, 0.1, 5);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.iter().filter(|&&l| l == 0).count(), 50);
    }

    #[test]
    fn half_turn_maps_outer_moon_onto_inner() {
        let (up, lu) = two_moons(200, 0.0, 0.0, 1);
        let (rot, lr) = two_moons(200, 180.0, 0.0, 1);
        let collect = |x: &Tensor, l: &[usize], c| {
            let mut v: Vec<[f64; 2]> = (0..l.len())
                .filter(|&i| l[i] == c)
                .map(|i| [x.get(i, 0), x.get(i, 1)])
                .collect();
            v.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
            v
        };
        let inner = collect(&up, &lu, 1);
        let outer_rotated = collect(&rot, &lr, 0);
        for (a, b) in inner.iter().zip(&outer_rotated) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_pair_masks_expected_fraction() {
        let (p, q) = gen_two_moons_domains(40, 35.0, 0.1, 0.1, 0.25, 0).unwrap();
        assert_eq!(p.labeled_count(), 4);
        assert_eq!(q.labeled_count(), 10);
        assert!(gen_two_moons_domains(10, 0.0, 0.1, 0.1, 0.1, 0).is_err());
    }

    #[test]
    fn finite_joint_shapes() {
        let j = gen_finite_joint(0, FiniteJointSpec::new(1, 2), None).unwrap();
        assert_eq!(j.len(), 1);
        let mut spec = FiniteJointSpec::new(6, 3);
        spec.min_prob = 0.01;
        let a = gen_finite_joint(1, spec, None).unwrap();
        let b = gen_finite_joint(2, spec, Some(&a)).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!(a.weights(), b.weights());
        assert!(b
            .labels()
            .iter()
            .all(|l| (0..3).all(|y| l.prob(y) >= 0.01 - 1e-15)));
    }
}
