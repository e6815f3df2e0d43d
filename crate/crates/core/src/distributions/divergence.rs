use crate::ot::EmpiricalJoint;
use crate::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(p: &[f64], name: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite())
        || (p.iter().sum::<f64>() - 1.0).abs() > SIMPLEX_TOL
    {
        return Err(Error::InvalidParam(format!(
            "{name} is not a probability vector"
        )));
    }
    Ok(())
}

/// `Σ p_i ln(p_i / q_i)` in nats; `+∞` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!(
            "{} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// `E_{z∼P_Z} KL(P_{Y|z} ‖ P̂_{Y|z})` for two samples on the same atoms with the
/// same marginal weights.
pub fn expected_conditional_kl(truth: &EmpiricalJoint, est: &EmpiricalJoint) -> Result<f64> {
    if truth.len() != est.len()
        || truth.num_classes() != est.num_classes()
        || truth.points() != est.points()
    {
        return Err(Error::Contract(
            "conditional KL needs both samples on identical feature atoms".into(),
        ));
    }
    if truth
        .weights()
        .iter()
        .zip(est.weights())
        .any(|(a, b)| (a - b).abs() > crate::ot::MASS_TOL)
    {
        return Err(Error::Contract(
            "conditional KL needs identical feature marginals".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..truth.len() {
        let w = truth.weights()[i];
        if w == 0.0 {
            continue;
        }
        let kl = kl_divergence(&truth.conditional(i), &est.conditional(i))?;
        if kl.is_infinite() {
            return Ok(f64::INFINITY);
        }
        total += w * kl;
    }
    Ok(total)
}

/// Largest Euclidean distance between two of the given points.
pub fn feature_diameter<'a>(points: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let pts: Vec<&[f64]> = points.into_iter().collect();
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d: f64 = pts[i]
                .iter()
                .zip(pts[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            best = best.max(d);
        }
    }
    best.sqrt()
}

/// Diameter of the joint support of `samples` on `Z × Y` under the product
/// metric, with one-hot labels at mutual distance √2.
pub fn empirical_diameter(samples: &[&EmpiricalJoint], label_scale: f64) -> f64 {
    let dz = feature_diameter(
        samples
            .iter()
            .flat_map(|s| s.points().iter().map(Vec::as_slice)),
    );
    let k = samples.first().map_or(0, |s| s.num_classes());
    let present = (0..k)
        .filter(|&y| samples.iter().any(|s| s.class_mass(y) > 0.0))
        .count();
    let dy = if present >= 2 { 2f64.sqrt() } else { 0.0 };
    (dz * dz + label_scale * label_scale * dy * dy).sqrt()
}
