//! Exact 1-Wasserstein distances between weighted finite samples on `Z × Y`.

mod joint;
pub mod simplex;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use joint::{EmpiricalJoint, Label, MASS_TOL};

use crate::{Error, Result};

/// Marginal residual allowed on a returned plan.
pub const PLAN_TOL: f64 = 1e-9;
/// Largest `n` accepted by [`brute_force_w1`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// `√(‖z1−z2‖² + s²‖y1−y2‖²)`.
pub fn product_metric_cost(
    z1: &[f64],
    y1: &[f64],
    z2: &[f64],
    y2: &[f64],
    label_scale: f64,
) -> Result<f64> {
    if z1.len() != z2.len() || y1.len() != y2.len() {
        return Err(Error::Dimension(format!(
            "feature dims {} vs {}, label dims {} vs {}",
            z1.len(),
            z2.len(),
            y1.len(),
            y2.len()
        )));
    }
    if !(label_scale >= 0.0) {
        return Err(Error::InvalidParam(
            "label_scale must be nonnegative".into(),
        ));
    }
    Ok(cost_unchecked(z1, y1, z2, y2, label_scale))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cost_unchecked(z1: &[f64], y1: &[f64], z2: &[f64], y2: &[f64], s: f64) -> f64 {
    (sq_dist(z1, z2) + s * s * sq_dist(y1, y2)).sqrt()
}

/// Optimal coupling stored sparsely.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    pub n: usize,
    pub m: usize,
    /// `(i, j, mass, cost)` for every positive entry.
    pub entries: Vec<(usize, usize, f64, f64)>,
    /// Dual objective at the optimal potentials.
    pub dual_value: f64,
    /// Potentials `f` (sources) and `g` (targets) with `f_i + g_j ≤ c_ij`.
    pub potentials: (Vec<f64>, Vec<f64>),
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for &(i, _, f, _) in &self.entries {
            r[i] += f;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.m];
        for &(_, j, f, _) in &self.entries {
            c[j] += f;
        }
        c
    }

    pub fn total_cost(&self) -> f64 {
        self.entries.iter().map(|&(_, _, f, c)| f * c).sum()
    }

    /// Dense `n × m` coupling matrix, row-major.
    pub fn dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.m];
        for &(i, j, f, _) in &self.entries {
            d[i * self.m + j] += f;
        }
        d
    }

    /// Writes `i,j,mass,cost` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("i,j,mass,cost\n");
        for &(i, j, f, c) in &self.entries {
            out.push_str(&format!("{i},{j},{f:e},{c:e}\n"));
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Solves the transportation LP between two weighted point sets under the
/// row-major cost `cost(i, j)`. Zero-mass atoms are removed before solving
/// and reinstated in the plan indices.
pub fn transport(
    a: &[f64],
    b: &[f64],
    cost: impl Fn(usize, usize) -> f64,
) -> Result<(f64, TransportPlan)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("empty distribution".into()));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if (sa - sb).abs() > PLAN_TOL * sa.max(sb).max(1.0) {
        return Err(Error::Contract(format!("unbalanced masses {sa} and {sb}")));
    }
    let ia: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    let ib: Vec<usize> = (0..b.len()).filter(|&j| b[j] > 0.0).collect();
    let plan_of = |entries| TransportPlan {
        n: a.len(),
        m: b.len(),
        entries,
        dual_value: 0.0,
        potentials: (vec![0.0; a.len()], vec![0.0; b.len()]),
    };
    if ia.is_empty() || ib.is_empty() {
        return Ok((0.0, plan_of(Vec::new())));
    }
    let ra: Vec<f64> = ia.iter().map(|&i| a[i]).collect();
    let rb: Vec<f64> = ib.iter().map(|&j| b[j]).collect();
    let mut c = Vec::with_capacity(ia.len() * ib.len());
    for &i in &ia {
        for &j in &ib {
            c.push(cost(i, j));
        }
    }
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("transport cost".into()));
    }
    let dump = || serde_json::json!({ "a": ra, "b": rb, "cost": c }).to_string();
    let sol = simplex::solve(&ra, &rb, &c).map_err(|s| Error::Solver {
        message: format!("no convergence after {} pivots", s.pivots),
        dump: dump(),
    })?;
    if sol.artificial_residual > PLAN_TOL {
        return Err(Error::Solver {
            message: format!(
                "infeasible basis, artificial flow {}",
                sol.artificial_residual
            ),
            dump: dump(),
        });
    }
    let entries: Vec<_> = sol
        .flows
        .iter()
        .map(|&(i, j, f)| (ia[i], ib[j], f, c[i * ib.len() + j]))
        .collect();
    let mut plan = plan_of(entries);
    plan.dual_value = sol.dual_objective;
    // zero-mass atoms get their c-transform so the pair stays feasible
    let (f, g) = &mut plan.potentials;
    for (k, &i) in ia.iter().enumerate() {
        f[i] = sol.f[k];
    }
    for (k, &j) in ib.iter().enumerate() {
        g[j] = sol.g[k];
    }
    let (kept_a, kept_b): (Vec<bool>, Vec<bool>) = (
        a.iter().map(|&x| x > 0.0).collect(),
        b.iter().map(|&x| x > 0.0).collect(),
    );
    for i in (0..a.len()).filter(|&i| !kept_a[i]) {
        f[i] = ib
            .iter()
            .map(|&j| cost(i, j) - g[j])
            .fold(f64::INFINITY, f64::min);
    }
    for j in (0..b.len()).filter(|&j| !kept_b[j]) {
        g[j] = (0..a.len())
            .map(|i| cost(i, j) - f[i])
            .fold(f64::INFINITY, f64::min);
    }
    Ok((sol.objective, plan))
}

fn check_compatible(p: &EmpiricalJoint, q: &EmpiricalJoint) -> Result<()> {
    if p.dim() != q.dim() || p.num_classes() != q.num_classes() {
        return Err(Error::Dimension(format!(
            "samples over (d={}, K={}) and (d={}, K={})",
            p.dim(),
            p.num_classes(),
            q.dim(),
            q.num_classes()
        )));
    }
    Ok(())
}

/// Exact W1 between `p` and `q` under [`product_metric_cost`].
pub fn exact_w1(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    label_scale: f64,
) -> Result<(f64, TransportPlan)> {
    check_compatible(p, q)?;
    if !(label_scale >= 0.0) {
        return Err(Error::InvalidParam(
            "label_scale must be nonnegative".into(),
        ));
    }
    let k = p.num_classes();
    let yp: Vec<Vec<f64>> = p.labels().iter().map(|l| l.to_vec(k)).collect();
    let yq: Vec<Vec<f64>> = q.labels().iter().map(|l| l.to_vec(k)).collect();
    let (zp, zq) = (p.points(), q.points());
    transport(p.weights(), q.weights(), |i, j| {
        cost_unchecked(&zp[i], &yp[i], &zq[j], &yq[j], label_scale)
    })
}

/// Distance only.
pub fn w1(p: &EmpiricalJoint, q: &EmpiricalJoint, label_scale: f64) -> Result<f64> {
    exact_w1(p, q, label_scale).map(|r| r.0)
}

/// W1 between weighted point clouds under the Euclidean metric on features.
pub fn feature_w1(za: &[Vec<f64>], wa: &[f64], zb: &[Vec<f64>], wb: &[f64]) -> Result<f64> {
    if za.len() != wa.len() || zb.len() != wb.len() {
        return Err(Error::Dimension(
            "points and weights differ in length".into(),
        ));
    }
    if let (Some(x), Some(y)) = (za.first(), zb.first()) {
        if za.iter().chain(zb).any(|p| p.len() != x.len()) || x.len() != y.len() {
            return Err(Error::Dimension("feature dimensions differ".into()));
        }
    }
    transport(wa, wb, |i, j| sq_dist(&za[i], &zb[j]).sqrt()).map(|r| r.0)
}

/// Minimum average cost over all perfect matchings of two uniform samples.
pub fn brute_force_w1(p: &EmpiricalJoint, q: &EmpiricalJoint, label_scale: f64) -> Result<f64> {
    check_compatible(p, q)?;
    let n = p.len();
    if q.len() != n || !p.is_uniform() || !q.is_uniform() {
        return Err(Error::Contract(
            "brute force needs two uniform samples of equal size".into(),
        ));
    }
    if n > BRUTE_FORCE_MAX {
        return Err(Error::InvalidParam(format!(
            "brute force refused for n = {n} > {BRUTE_FORCE_MAX}"
        )));
    }
    let k = p.num_classes();
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                cost_unchecked(
                    &p.points()[i],
                    &p.labels()[i].to_vec(k),
                    &q.points()[j],
                    &q.labels()[j].to_vec(k),
                    label_scale,
                )
            })
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| {
        perm.iter()
            .enumerate()
            .map(|(i, &j)| cost[i * n + j])
            .sum::<f64>()
    };
    let mut best = eval(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

/// Mass tolerance for the per-class oracle.
pub const CLASS_MASS_TOL: f64 = 1e-9;

/// Supremum over 1-Lipschitz `φ` of `Σ_i w_i P(y|z_i) φ(z_i) − Σ_j v_j Q(y|z_j) φ(z_j)`.
///
/// Finite only when both class-`y` masses agree; then it is the common mass
/// times the feature-space W1 between the normalized class slices.
pub fn classwise_w1_oracle(p: &EmpiricalJoint, q: &EmpiricalJoint, y: usize) -> Result<f64> {
    check_compatible(p, q)?;
    if y >= p.num_classes() {
        return Err(Error::InvalidParam(format!("class {y} out of range")));
    }
    let slice = |d: &EmpiricalJoint| -> Vec<f64> {
        d.weights()
            .iter()
            .zip(d.labels())
            .map(|(w, l)| w * l.prob(y))
            .collect()
    };
    let (wp, wq) = (slice(p), slice(q));
    let (mp, mq) = (wp.iter().sum::<f64>(), wq.iter().sum::<f64>());
    if (mp - mq).abs() > CLASS_MASS_TOL {
        return Err(Error::Contract(format!(
            "class {y} masses differ ({mp} vs {mq}); the supremum is unbounded"
        )));
    }
    let mass = 0.5 * (mp + mq);
    if mass <= 0.0 {
        return Ok(0.0);
    }
    let np: Vec<f64> = wp.iter().map(|w| w / mp).collect();
    let nq: Vec<f64> = wq.iter().map(|w| w / mq).collect();
    Ok(mass * feature_w1(p.points(), &np, q.points(), &nq)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hard(points: &[f64], classes: &[usize], k: usize) -> EmpiricalJoint {
        EmpiricalJoint::uniform(
            points.iter().map(|&x| vec![x]).collect(),
            classes.iter().map(|&c| Label::Hard(c)).collect(),
            k,
        )
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(
            product_metric_cost(&[1.0], &[1.0, 0.0], &[1.0], &[1.0, 0.0], 1.0).unwrap(),
            0.0
        );
        assert_eq!(
            product_metric_cost(&[0.0], &[1.0, 0.0], &[3.0], &[1.0, 0.0], 1.0).unwrap(),
            3.0
        );
        let d = product_metric_cost(&[0.0], &[1.0, 0.0], &[0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            product_metric_cost(&[0.0], &[1.0], &[0.0, 1.0], &[1.0], 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn w1_examples() {
        let p = hard(&[0.0, 2.0], &[0, 0], 2);
        assert_eq!(w1(&p, &p, 1.0).unwrap(), 0.0);
        let a = hard(&[0.0], &[0], 2);
        let b = hard(&[1.0], &[0], 2);
        assert!((w1(&a, &b, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let q = hard(&[1.0, 3.0], &[0, 0], 2);
        assert!((w1(&p, &q, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plan_marginals_and_csv() {
        let p = hard(&[0.0, 2.0, 5.0], &[0, 1, 0], 2);
        let q = hard(&[1.0, 3.0], &[1, 0], 2);
        let (d, plan) = exact_w1(&p, &q, 1.0).unwrap();
        for r in plan.row_sums() {
            assert!((r - 1.0 / 3.0).abs() < 1e-12);
        }
        for c in plan.col_sums() {
            assert!((c - 0.5).abs() < 1e-12);
        }
        assert!((plan.total_cost() - d).abs() < 1e-12);
        assert!((plan.dual_value - d).abs() < 1e-9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        plan.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i,j,mass,cost\n"));
        assert_eq!(text.lines().count(), plan.entries.len() + 1);
    }

    #[test]
    fn brute_force_small() {
        let p = hard(&[0.3], &[1], 2);
        let q = hard(&[0.9], &[0], 2);
        assert!((brute_force_w1(&p, &q, 1.0).unwrap() - w1(&p, &q, 1.0).unwrap()).abs() < 1e-15);
        let a = hard(&[0.0, 1.0, 4.0], &[0, 1, 0], 2);
        let b = hard(&[4.0, 0.0, 1.0], &[0, 0, 1], 2);
        assert_eq!(brute_force_w1(&a, &b, 1.0).unwrap(), 0.0);
        let big = hard(&[0.0; 9], &[0; 9], 2);
        assert!(brute_force_w1(&big, &big, 1.0).is_err());
    }

    #[test]
    fn classwise_oracle_basics() {
        let p = hard(&[0.0, 2.0], &[0, 1], 2);
        assert_eq!(classwise_w1_oracle(&p, &p, 0).unwrap(), 0.0);
        let q = hard(&[1.0, 2.0], &[0, 1], 2);
        assert!((classwise_w1_oracle(&p, &q, 0).unwrap() - 0.5).abs() < 1e-12);
        let r = hard(&[1.0, 2.0], &[0, 0], 2);
        assert!(matches!(
            classwise_w1_oracle(&p, &r, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empty_or_mismatched_inputs() {
        assert!(EmpiricalJoint::uniform(vec![], vec![], 2).is_err());
        let p = hard(&[0.0], &[0], 2);
        let q = hard(&[0.0], &[0], 3);
        assert!(matches!(w1(&p, &q, 1.0), Err(Error::Dimension(_))));
    }
}
