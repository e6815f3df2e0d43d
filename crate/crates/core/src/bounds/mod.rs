//! Numerical certification of the transport inequalities on finite
//! instances where both sides are computed exactly.
//!
//! Every transport distance here is taken on the categorical view of each
//! joint ([`EmpiricalJoint::disintegrate`]): a soft atom `(z, p)` of mass `w`
//! counts as hard atoms `(z, y)` of mass `w·p_y`, so class labels sit at
//! one-hot positions and the per-class decomposition is well defined.

mod instances;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use instances::{
    lemma1_instance, matched_mass_copy, matched_mass_pair, prop1_instance, shared_marginal_pair,
    theorem1_bundle, theorem2_instance, DomainBundle, InstanceShape,
};

use crate::distributions::{empirical_diameter, expected_conditional_kl, mix, MixtureSpec};
use crate::nn::{Mlp, Tensor};
use crate::ot::{self, classwise_w1_oracle, EmpiricalJoint};
use crate::{derive_seed, Error, Result};

/// Relative slack tolerance of a passing report.
pub const TAU_REL: f64 = 1e-7;
/// Default instance cap for the two theorem checkers.
pub const THEOREM_COUNT_CAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundId {
    Prop1,
    Lemma1,
    Lemma2,
    Lemma3,
    Theorem1,
    Theorem2core,
}

impl BoundId {
    pub const ALL: [BoundId; 6] = [
        BoundId::Prop1,
        BoundId::Lemma1,
        BoundId::Lemma2,
        BoundId::Lemma3,
        BoundId::Theorem1,
        BoundId::Theorem2core,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundId::Prop1 => "prop1",
            BoundId::Lemma1 => "lemma1",
            BoundId::Lemma2 => "lemma2",
            BoundId::Lemma3 => "lemma3",
            BoundId::Theorem1 => "theorem1",
            BoundId::Theorem2core => "theorem2core",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for BoundId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serializes non-finite values as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod float_or_inf {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

/// Outcome of checking one inequality `lhs ≤ rhs` on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: BoundId,
    pub seed: u64,
    #[serde(with = "float_or_inf")]
    pub lhs: f64,
    #[serde(with = "float_or_inf")]
    pub rhs: f64,
    #[serde(with = "float_or_inf")]
    pub slack: f64,
    pub pass: bool,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl BoundReport {
    pub fn new(bound: BoundId, lhs: f64, rhs: f64) -> Self {
        let slack = if rhs == f64::INFINITY {
            f64::INFINITY
        } else {
            rhs - lhs
        };
        let pass = slack >= -TAU_REL * rhs.abs().max(1.0);
        BoundReport {
            bound,
            seed: 0,
            lhs,
            rhs,
            slack,
            pass,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    /// `slack / max(1, |rhs|)`.
    pub fn relative_slack(&self) -> f64 {
        if self.slack.is_infinite() {
            self.slack
        } else {
            self.slack / self.rhs.abs().max(1.0)
        }
    }
}

fn w(p: &EmpiricalJoint, q: &EmpiricalJoint, s: f64) -> Result<f64> {
    ot::w1(&p.disintegrate(), &q.disintegrate(), s)
}

fn same_shape(js: &[&EmpiricalJoint]) -> Result<()> {
    let (d, k) = (js[0].dim(), js[0].num_classes());
    if js.iter().any(|j| j.dim() != d || j.num_classes() != k) {
        return Err(Error::Dimension(
            "joints differ in feature dim or class count".into(),
        ));
    }
    Ok(())
}

/// `W(Pt,Qt) ≤ W(Pt,P) + W(P,Q) + W(Q,Qt)`.
pub fn check_prop1(
    pt: &EmpiricalJoint,
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    qt: &EmpiricalJoint,
    label_scale: f64,
) -> Result<BoundReport> {
    same_shape(&[pt, p, q, qt])?;
    let lhs = w(pt, qt, label_scale)?;
    let rhs = w(pt, p, label_scale)? + w(p, q, label_scale)? + w(q, qt, label_scale)?;
    Ok(BoundReport::new(BoundId::Prop1, lhs, rhs))
}

/// `W(αPt + (1−α)Pf, K) ≤ α·W(Pt,K) + (1−α)·W(Pf,K)`.
pub fn check_lemma1(
    pt: &EmpiricalJoint,
    pf: &EmpiricalJoint,
    k: &EmpiricalJoint,
    alpha: f64,
    label_scale: f64,
) -> Result<BoundReport> {
    same_shape(&[pt, pf, k])?;
    let p = mix(&MixtureSpec::new(alpha, pt.clone(), pf.clone())?)?;
    let lhs = w(&p, k, label_scale)?;
    let rhs = alpha * w(pt, k, label_scale)? + (1.0 - alpha) * w(pf, k, label_scale)?;
    Ok(BoundReport::new(BoundId::Lemma1, lhs, rhs).with_meta("alpha", alpha))
}

/// `diam · √(½·E[KL])`, with `0·∞ = 0`.
fn kl_rhs(diam: f64, kl: f64) -> f64 {
    if diam == 0.0 || kl == 0.0 {
        0.0
    } else {
        diam * (0.5 * kl).sqrt()
    }
}

/// `W(Pt,Pf) ≤ diam(Z×Y)·√(½·E_z KL(Pt(·|z) ‖ Pf(·|z)))` on shared atoms.
pub fn check_lemma2(
    pt: &EmpiricalJoint,
    pf: &EmpiricalJoint,
    label_scale: f64,
) -> Result<BoundReport> {
    let kl = expected_conditional_kl(pt, pf)?;
    let diam = empirical_diameter(&[pt, pf], label_scale);
    let lhs = w(pt, pf, label_scale)?;
    Ok(BoundReport::new(BoundId::Lemma2, lhs, kl_rhs(diam, kl))
        .with_meta("expected_kl", kl_meta(kl))
        .with_meta("diameter", diam))
}

fn kl_meta(kl: f64) -> serde_json::Value {
    if kl.is_finite() {
        kl.into()
    } else {
        "inf".into()
    }
}

/// `Σ_y W̌_y(P,Q)`; requires matching class masses.
fn classwise_sum(p: &EmpiricalJoint, q: &EmpiricalJoint) -> Result<f64> {
    (0..p.num_classes())
        .map(|y| classwise_w1_oracle(p, q, y))
        .sum()
}

/// `W(P,Q) ≤ Σ_y W̌_y(P,Q)` for joints with equal class masses.
pub fn check_lemma3(
    p: &EmpiricalJoint,
    q: &EmpiricalJoint,
    label_scale: f64,
) -> Result<BoundReport> {
    same_shape(&[p, q])?;
    let lhs = w(p, q, label_scale)?;
    let rhs = classwise_sum(p, q)?;
    Ok(BoundReport::new(BoundId::Lemma3, lhs, rhs))
}

/// `W(Pt,Qt) ≤ (1−α)·diam_P·√(½E_P KL) + Σ_y W̌_y(P,Q) + (1−β)·diam_Q·√(½E_Q KL)`
/// with `P`, `Q` the two mixtures.
pub fn check_theorem1(
    p_side: &DomainBundle,
    q_side: &DomainBundle,
    label_scale: f64,
) -> Result<BoundReport> {
    let (pt, pf, qt, qg) = (&p_side.truth, &p_side.pseudo, &q_side.truth, &q_side.pseudo);
    same_shape(&[pt, pf, qt, qg])?;
    let (alpha, beta) = (p_side.alpha, q_side.alpha);
    let p = p_side.mixture()?;
    let q = q_side.mixture()?;
    let kl_p = expected_conditional_kl(pt, pf)?;
    let kl_q = expected_conditional_kl(qt, qg)?;
    let diam_p = empirical_diameter(&[pt, pf], label_scale);
    let diam_q = empirical_diameter(&[qt, qg], label_scale);
    let cw = classwise_sum(&p, &q)?;
    let rhs = (1.0 - alpha) * kl_rhs(diam_p, kl_p) + cw + (1.0 - beta) * kl_rhs(diam_q, kl_q);
    let lhs = w(pt, qt, label_scale)?;
    Ok(BoundReport::new(BoundId::Theorem1, lhs, rhs)
        .with_meta("alpha", alpha)
        .with_meta("beta", beta)
        .with_meta("classwise_sum", cw)
        .with_meta("expected_kl_p", kl_meta(kl_p))
        .with_meta("expected_kl_q", kl_meta(kl_q)))
}

/// Loss Lipschitz constant of `‖softmax − e_y‖₂` in each argument.
pub const THEOREM2_KAPPA: f64 = 1.0;

/// Upper bound on the Lipschitz constant of a classifier: product of exact
/// layer spectral norms and activation constants.
pub fn classifier_lipschitz(classifier: &Mlp) -> f64 {
    classifier.lipschitz_upper_bound()
}

/// `E_{(z,y)} ‖C(z) − e_y‖₂` over the categorical view of `joint`.
pub fn l2_risk(classifier: &Mlp, joint: &EmpiricalJoint) -> Result<f64> {
    let d = joint.disintegrate();
    if d.is_empty() {
        return Ok(0.0);
    }
    let pred = classifier.predict(&Tensor::from_rows(d.points())?)?;
    let mut risk = 0.0;
    for (i, (wt, label)) in d.weights().iter().zip(d.labels()).enumerate() {
        let y = label.argmax();
        let err: f64 = pred
            .row(i)
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let t = if j == y { 1.0 } else { 0.0 };
                (p - t) * (p - t)
            })
            .sum();
        risk += wt * err.sqrt();
    }
    Ok(risk)
}

/// `|R_Q(C) − R_P(C)| ≤ κ·√(λ² + 1)·W(Pt,Qt)` with unit label scale.
pub fn check_theorem2_core(
    classifier: &Mlp,
    pt: &EmpiricalJoint,
    qt: &EmpiricalJoint,
) -> Result<BoundReport> {
    same_shape(&[pt, qt])?;
    if classifier.in_dim() != pt.dim() || classifier.out_dim() != pt.num_classes() {
        return Err(Error::Dimension(
            "classifier does not match the joints".into(),
        ));
    }
    if classifier.layers.last().map(|l| l.activation) != Some(crate::nn::Activation::Softmax) {
        return Err(Error::InvalidParam(
            "classifier must end in a softmax".into(),
        ));
    }
    let lambda = classifier_lipschitz(classifier);
    let (rp, rq) = (l2_risk(classifier, pt)?, l2_risk(classifier, qt)?);
    let wd = w(pt, qt, 1.0)?;
    let rhs = THEOREM2_KAPPA * (lambda * lambda + 1.0).sqrt() * wd;
    Ok(
        BoundReport::new(BoundId::Theorem2core, (rq - rp).abs(), rhs)
            .with_meta("lambda", lambda)
            .with_meta("kappa", THEOREM2_KAPPA)
            .with_meta("w1", wd),
    )
}

/// Constants of the finite-sample risk bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Params {
    pub kappa: f64,
    pub lambda: f64,
    pub psi_prime: f64,
    pub delta: f64,
    pub n_p: f64,
    pub n_q: f64,
}

impl Theorem2Params {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.into()));
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be nonnegative");
        }
        if !(self.psi_prime > 0.0 && self.psi_prime < std::f64::consts::SQRT_2) {
            return bad("psi_prime must lie in (0, √2)");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        if !(self.n_p >= 1.0 && self.n_q >= 1.0) {
            return bad("sample sizes must be at least 1");
        }
        Ok(())
    }
}

/// `κ√(λ²+1)·[ŵ + √((2/ψ′)·ln(1/δ))·(1/√N_P + 1/√N_Q)]`.
pub fn theorem2_full_rhs(w_hat: f64, params: &Theorem2Params) -> Result<f64> {
    params.validate()?;
    if !(w_hat >= 0.0) {
        return Err(Error::InvalidParam(format!("w_hat = {w_hat} must be ≥ 0")));
    }
    let Theorem2Params {
        kappa,
        lambda,
        psi_prime,
        delta,
        n_p,
        n_q,
    } = *params;
    let conc = (2.0 / psi_prime * (1.0 / delta).ln()).sqrt() * (n_p.powf(-0.5) + n_q.powf(-0.5));
    Ok(kappa * (lambda * lambda + 1.0).sqrt() * (w_hat + conc))
}

/// Sizes and seeds of a bound suite run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Instances per lemma-level bound.
    pub count: usize,
    /// Instances per theorem; `None` means `min(count, THEOREM_COUNT_CAP)`.
    pub theorem_count: Option<usize>,
    pub seed: u64,
    pub label_scale: f64,
    pub shape: InstanceShape,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            count: 500,
            theorem_count: None,
            seed: 0,
            label_scale: 1.0,
            shape: InstanceShape::default(),
        }
    }
}

impl SuiteConfig {
    pub fn count_for(&self, bound: BoundId) -> usize {
        match bound {
            BoundId::Theorem1 | BoundId::Theorem2core => self
                .theorem_count
                .unwrap_or(self.count.min(THEOREM_COUNT_CAP)),
            _ => self.count,
        }
    }
}

/// Per-bound aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub bound: BoundId,
    pub count: usize,
    pub passed: usize,
    pub pass_rate: Option<f64>,
    #[serde(with = "float_or_inf")]
    pub min_slack: f64,
    #[serde(with = "float_or_inf")]
    pub min_relative_slack: f64,
}

pub fn summarize(reports: &[BoundReport]) -> Vec<BoundSummary> {
    let mut by: BTreeMap<BoundId, Vec<&BoundReport>> = BTreeMap::new();
    for r in reports {
        by.entry(r.bound).or_default().push(r);
    }
    by.into_iter()
        .map(|(bound, rs)| {
            let passed = rs.iter().filter(|r| r.pass).count();
            BoundSummary {
                bound,
                count: rs.len(),
                passed,
                pass_rate: Some(passed as f64 / rs.len() as f64),
                min_slack: rs.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min),
                min_relative_slack: rs
                    .iter()
                    .map(|r| r.relative_slack())
                    .fold(f64::INFINITY, f64::min),
            }
        })
        .collect()
}

pub fn summary_table(summary: &[BoundSummary]) -> String {
    let mut s = format!(
        "{:<14}{:>8}{:>8}{:>11}{:>16}{:>16}\n",
        "bound", "count", "passed", "pass_rate", "min_slack", "min_rel_slack"
    );
    for b in summary {
        let _ = writeln!(
            s,
            "{:<14}{:>8}{:>8}{:>11.4}{:>16.3e}{:>16.3e}",
            b.bound.as_str(),
            b.count,
            b.passed,
            b.pass_rate.unwrap_or(f64::NAN),
            b.min_slack,
            b.min_relative_slack
        );
    }
    if summary.is_empty() {
        s.push_str("(no instances)\n");
    }
    s
}

/// Per-instance seed of instance `index` of `bound`.
pub fn instance_seed(base: u64, bound: BoundId, index: usize) -> u64 {
    derive_seed(derive_seed(base, bound.stream()), index as u64)
}

/// Draws and checks one instance of `bound`.
pub fn check_instance(bound: BoundId, seed: u64, cfg: &SuiteConfig) -> Result<BoundReport> {
    let (shape, s) = (&cfg.shape, cfg.label_scale);
    let report = match bound {
        BoundId::Prop1 => {
            let [pt, p, q, qt] = prop1_instance(seed, shape)?;
            check_prop1(&pt, &p, &q, &qt, s)?
        }
        BoundId::Lemma1 => {
            let (pt, pf, k, alpha) = lemma1_instance(seed, shape)?;
            check_lemma1(&pt, &pf, &k, alpha, s)?
        }
        BoundId::Lemma2 => {
            let (pt, pf) = shared_marginal_pair(seed, shape)?;
            check_lemma2(&pt, &pf, s)?
        }
        BoundId::Lemma3 => {
            let (p, q) = matched_mass_pair(seed, shape)?;
            check_lemma3(&p, &q, s)?
        }
        BoundId::Theorem1 => {
            let (p, q) = theorem1_bundle(seed, shape)?;
            check_theorem1(&p, &q, s)?
        }
        BoundId::Theorem2core => {
            let (net, pt, qt) = theorem2_instance(seed, shape)?;
            check_theorem2_core(&net, &pt, &qt)?
        }
    };
    Ok(report.with_seed(seed))
}

/// Thread count from `JW_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("JW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
}

/// Runs every checker on its random instance family. Reports come back in
/// bound order, then instance order, whatever the thread count.
pub fn run_bound_suite(cfg: &SuiteConfig) -> Result<Vec<BoundReport>> {
    cfg.shape.validate()?;
    if !(cfg.label_scale > 0.0 && cfg.label_scale.is_finite()) {
        return Err(Error::InvalidParam("label_scale must be positive".into()));
    }
    let jobs: Vec<(BoundId, u64)> = BoundId::ALL
        .into_iter()
        .flat_map(|b| (0..cfg.count_for(b)).map(move |i| (b, instance_seed(cfg.seed, b, i))))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(b, seed)| check_instance(b, seed, cfg))
            .collect()
    })
}
