//! Random finite instances for the bound checkers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributions::{gen_finite_joint, mix, random_simplex, FiniteJointSpec, MixtureSpec};
use crate::nn::{Activation, Mlp};
use crate::ot::{EmpiricalJoint, Label};
use crate::{derive_seed, Error, Result};

/// Size ranges of random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub max_support: usize,
    pub max_classes: usize,
    pub dim: usize,
    /// Floor on every conditional entry where finite KL is needed.
    pub min_prob: f64,
}

impl Default for InstanceShape {
    fn default() -> Self {
        InstanceShape {
            max_support: 20,
            max_classes: 4,
            dim: 2,
            min_prob: 0.01,
        }
    }
}

impl InstanceShape {
    pub fn validate(&self) -> Result<()> {
        if self.max_support == 0 || self.max_classes < 2 || self.dim == 0 {
            return Err(Error::InvalidParam(
                "instances need support ≥ 1, at least 2 classes and dim ≥ 1".into(),
            ));
        }
        if !(0.0..=0.5 / self.max_classes as f64).contains(&self.min_prob) {
            return Err(Error::InvalidParam(format!(
                "min_prob {} too large for {} classes",
                self.min_prob, self.max_classes
            )));
        }
        Ok(())
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        (
            rng.random_range(1..=self.max_support),
            rng.random_range(2..=self.max_classes),
        )
    }

    fn spec(&self, m: usize, k: usize, min_prob: f64) -> FiniteJointSpec {
        FiniteJointSpec {
            support: m,
            classes: k,
            dim: self.dim,
            min_prob,
        }
    }
}

fn joint(
    rng: &mut ChaCha8Rng,
    spec: FiniteJointSpec,
    base: Option<&EmpiricalJoint>,
) -> Result<EmpiricalJoint> {
    gen_finite_joint(rng.random(), spec, base)
}

/// Four independent joints `(Pt, P, Q, Qt)` of a common shape.
pub fn prop1_instance(seed: u64, shape: &InstanceShape) -> Result<[EmpiricalJoint; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, k) = shape.draw(&mut rng);
    let one = |rng: &mut ChaCha8Rng| {
        let m = rng.random_range(1..=shape.max_support);
        joint(rng, shape.spec(m, k, 0.0), None)
    };
    Ok([
        one(&mut rng)?,
        one(&mut rng)?,
        one(&mut rng)?,
        one(&mut rng)?,
    ])
}

/// `(Pt, Pf, K, α)` with independent joints and `α ∈ (0.01, 0.99)`.
pub fn lemma1_instance(
    seed: u64,
    shape: &InstanceShape,
) -> Result<(EmpiricalJoint, EmpiricalJoint, EmpiricalJoint, f64)> {
    let [pt, pf, k, _] = prop1_instance(seed, shape)?;
    let alpha = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)).random_range(0.01..0.99);
    Ok((pt, pf, k, alpha))
}

/// `(Pt, Pf)` on the same atoms and marginal weights, conditionals floored
/// at `shape.min_prob`.
pub fn shared_marginal_pair(
    seed: u64,
    shape: &InstanceShape,
) -> Result<(EmpiricalJoint, EmpiricalJoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k) = shape.draw(&mut rng);
    let spec = shape.spec(m, k, shape.min_prob);
    let pt = joint(&mut rng, spec, None)?;
    let pf = joint(&mut rng, spec, Some(&pt))?;
    Ok((pt, pf))
}

/// Moves `base`'s mass to fresh atoms while keeping every class mass: each
/// atom is relocated or split in two with its conditional row unchanged,
/// then random mass swaps between pairs of atoms shift conditional mass
/// across classes without changing totals. Entries stay ≥ `floor` when the
/// input rows are.
pub fn matched_mass_copy<R: Rng>(
    rng: &mut R,
    rows: &[(Vec<f64>, Vec<f64>, f64)],
    dim: usize,
    floor: f64,
) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let fresh = |rng: &mut R| -> Vec<f64> { (0..dim).map(|_| rng.random::<f64>()).collect() };
    for (z, row, w) in rows {
        match rng.random_range(0..3) {
            0 => out.push((z.clone(), row.clone(), *w)),
            1 => out.push((fresh(rng), row.clone(), *w)),
            _ => {
                let t = rng.random_range(0.1..0.9);
                out.push((fresh(rng), row.clone(), t * w));
                out.push((fresh(rng), row.clone(), (1.0 - t) * w));
            }
        }
    }
    let k = rows.first().map_or(0, |r| r.1.len());
    if out.len() >= 2 && k >= 2 {
        for _ in 0..out.len() {
            let a = rng.random_range(0..out.len());
            let b = rng.random_range(0..out.len());
            let y = rng.random_range(0..k);
            let y2 = rng.random_range(0..k);
            if a == b || y == y2 {
                continue;
            }
            // a gains class y and loses y2; b the reverse
            let room = (out[a].2 * (out[a].1[y2] - floor)).min(out[b].2 * (out[b].1[y] - floor));
            if room <= 0.0 {
                continue;
            }
            let eps = room * rng.random::<f64>();
            let (wa, wb) = (out[a].2, out[b].2);
            out[a].1[y] += eps / wa;
            out[a].1[y2] -= eps / wa;
            out[b].1[y] -= eps / wb;
            out[b].1[y2] += eps / wb;
        }
    }
    for r in &mut out {
        let s: f64 = r.1.iter().sum();
        r.1.iter_mut().for_each(|p| *p /= s);
    }
    out
}

fn rows_of(j: &EmpiricalJoint) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    (0..j.len())
        .map(|i| (j.points()[i].clone(), j.conditional(i), j.weights()[i]))
        .collect()
}

fn from_rows(rows: Vec<(Vec<f64>, Vec<f64>, f64)>, k: usize) -> Result<EmpiricalJoint> {
    let (mut pts, mut labels, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (z, row, m) in rows {
        pts.push(z);
        labels.push(Label::Soft(row));
        w.push(m);
    }
    EmpiricalJoint::new(pts, labels, w, k)
}

/// `(P, Q)` with equal class masses.
pub fn matched_mass_pair(
    seed: u64,
    shape: &InstanceShape,
) -> Result<(EmpiricalJoint, EmpiricalJoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k) = shape.draw(&mut rng);
    let p = joint(&mut rng, shape.spec(m, k, shape.min_prob), None)?;
    let q = from_rows(
        matched_mass_copy(&mut rng, &rows_of(&p), shape.dim, shape.min_prob),
        k,
    )?;
    Ok((p, q))
}

/// One domain of a Theorem 1 bundle: a truly labeled joint and its
/// pseudo-labeled counterpart on shared atoms, plus the mixing weight.
#[derive(Debug, Clone)]
pub struct DomainBundle {
    pub truth: EmpiricalJoint,
    pub pseudo: EmpiricalJoint,
    pub alpha: f64,
}

impl DomainBundle {
    pub fn mixture(&self) -> Result<EmpiricalJoint> {
        mix(&MixtureSpec::new(
            self.alpha,
            self.truth.clone(),
            self.pseudo.clone(),
        )?)
    }
}

/// `(P side, Q side)` where both mixtures have equal class masses and each
/// side's two joints share atoms and marginal weights.
pub fn theorem1_bundle(seed: u64, shape: &InstanceShape) -> Result<(DomainBundle, DomainBundle)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pt, pf) = shared_marginal_pair(rng.random(), shape)?;
    let k = pt.num_classes();
    let floor = shape.min_prob;
    let alpha = rng.random_range(0.05..0.95);
    let beta = rng.random_range(0.05..0.95);
    let mixed: Vec<_> = (0..pt.len())
        .map(|i| {
            let (ct, cf) = (pt.conditional(i), pf.conditional(i));
            let row = ct
                .iter()
                .zip(&cf)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            (pt.points()[i].clone(), row, pt.weights()[i])
        })
        .collect();
    let q_rows = matched_mass_copy(&mut rng, &mixed, shape.dim, floor);
    let (mut qt_rows, mut qg_rows) = (Vec::new(), Vec::new());
    for (z, r, w) in q_rows {
        // r = β·ct + (1−β)·cg with ct = (1−t)r + t·s, both floored at `floor`
        let s = random_simplex(&mut rng, k, floor);
        let mut t_max: f64 = 1.0;
        for y in 0..k {
            if s[y] > r[y] {
                t_max = t_max.min((1.0 - beta) * (r[y] - floor).max(0.0) / (beta * (s[y] - r[y])));
            }
        }
        let t = t_max * rng.random::<f64>();
        let ct: Vec<f64> = r
            .iter()
            .zip(&s)
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
        let cg: Vec<f64> = r
            .iter()
            .zip(&ct)
            .map(|(a, c)| ((a - beta * c) / (1.0 - beta)).max(0.0))
            .collect();
        qt_rows.push((z.clone(), ct, w));
        qg_rows.push((z, cg, w));
    }
    let renorm = |rows: &mut Vec<(Vec<f64>, Vec<f64>, f64)>| {
        for r in rows.iter_mut() {
            let s: f64 = r.1.iter().sum();
            r.1.iter_mut().for_each(|p| *p /= s);
        }
    };
    renorm(&mut qt_rows);
    renorm(&mut qg_rows);
    Ok((
        DomainBundle {
            truth: pt,
            pseudo: pf,
            alpha,
        },
        DomainBundle {
            truth: from_rows(qt_rows, k)?,
            pseudo: from_rows(qg_rows, k)?,
            alpha: beta,
        },
    ))
}

/// Random softmax classifier on `dim` features with weights rescaled by a
/// random factor, and two independent joints.
pub fn theorem2_instance(
    seed: u64,
    shape: &InstanceShape,
) -> Result<(Mlp, EmpiricalJoint, EmpiricalJoint)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, k) = shape.draw(&mut rng);
    let hidden = rng.random_range(2..=16);
    let slope = [0.0, 0.01, 0.1, 0.5][rng.random_range(0..4)];
    let mut net = Mlp::build(
        &[shape.dim, hidden, k],
        Activation::LeakyRelu { slope },
        Activation::Softmax,
        false,
        &mut rng,
    )?;
    net.scale_weights(rng.random_range(0.1..8.0));
    let pt = joint(&mut rng, shape.spec(m, k, 0.0), None)?;
    let m2 = rng.random_range(1..=shape.max_support);
    let qt = joint(&mut rng, shape.spec(m2, k, 0.0), None)?;
    Ok((net, pt, qt))
}
