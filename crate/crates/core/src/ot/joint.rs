use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on total mass and on soft-label normalization.
pub const MASS_TOL: f64 = 1e-12;
const SOFT_TOL: f64 = 1e-9;

/// A class index or a probability vector over classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Hard(usize),
    Soft(Vec<f64>),
}

impl Label {
    /// The label as a `k`-dimensional vector (one-hot for hard labels).
    pub fn to_vec(&self, k: usize) -> Vec<f64> {
        match self {
            Label::Hard(c) => {
                let mut v = vec![0.0; k];
                v[*c] = 1.0;
                v
            }
            Label::Soft(p) => p.clone(),
        }
    }

    pub fn prob(&self, y: usize) -> f64 {
        match self {
            Label::Hard(c) => f64::from(u8::from(*c == y)),
            Label::Soft(p) => p[y],
        }
    }

    pub fn argmax(&self) -> usize {
        match self {
            Label::Hard(c) => *c,
            Label::Soft(p) => {
                p.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
                    )
                    .0
            }
        }
    }
}

/// Weighted finite sample on `R^d × {0..K−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalJoint {
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
    weights: Vec<f64>,
    num_classes: usize,
}

impl EmpiricalJoint {
    pub fn new(
        points: Vec<Vec<f64>>,
        labels: Vec<Label>,
        weights: Vec<f64>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::Contract("empty distribution".into()));
        }
        if labels.len() != n || weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} points, {} labels, {} weights",
                n,
                labels.len(),
                weights.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidParam("need at least one class".into()));
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(Error::Dimension(format!(
                "point of dimension {} in a {}-dimensional sample",
                p.len(),
                d
            )));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("sample coordinates".into()));
        }
        for l in &labels {
            match l {
                Label::Hard(c) if *c >= num_classes => {
                    return Err(Error::InvalidParam(format!(
                        "class {c} out of range for {num_classes} classes"
                    )))
                }
                Label::Soft(p) => {
                    if p.len() != num_classes {
                        return Err(Error::Dimension(format!(
                            "soft label of length {} for {} classes",
                            p.len(),
                            num_classes
                        )));
                    }
                    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite())
                        || (p.iter().sum::<f64>() - 1.0).abs() > SOFT_TOL
                    {
                        return Err(Error::InvalidParam("soft label off the simplex".into()));
                    }
                }
                _ => {}
            }
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParam(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(EmpiricalJoint {
            points,
            labels,
            weights,
            num_classes,
        })
    }

    /// Like [`EmpiricalJoint::new`] but rescales `weights` to unit mass first.
    pub fn normalized(
        points: Vec<Vec<f64>>,
        labels: Vec<Label>,
        weights: Vec<f64>,
        num_classes: usize,
    ) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParam("total mass must be positive".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(points, labels, weights, num_classes)
    }

    pub fn uniform(points: Vec<Vec<f64>>, labels: Vec<Label>, num_classes: usize) -> Result<Self> {
        let n = points.len();
        let weights = vec![1.0 / n.max(1) as f64; n];
        Self::new(points, labels, weights, num_classes)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `P(Y = · | z_i)` as a vector.
    pub fn conditional(&self, i: usize) -> Vec<f64> {
        self.labels[i].to_vec(self.num_classes)
    }

    /// `Σ_i w_i P(Y = y | z_i)`.
    pub fn class_mass(&self, y: usize) -> f64 {
        self.weights
            .iter()
            .zip(&self.labels)
            .map(|(w, l)| w * l.prob(y))
            .sum()
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| (w - u).abs() <= MASS_TOL)
    }

    /// Categorical view: every soft atom `(z, p)` with mass `w` becomes hard
    /// atoms `(z, y)` with mass `w·p_y`; zero-mass atoms are dropped.
    pub fn disintegrate(&self) -> EmpiricalJoint {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for i in 0..self.len() {
            for y in 0..self.num_classes {
                let w = self.weights[i] * self.labels[i].prob(y);
                if w > 0.0 {
                    points.push(self.points[i].clone());
                    labels.push(Label::Hard(y));
                    weights.push(w);
                }
            }
        }
        EmpiricalJoint {
            points,
            labels,
            weights,
            num_classes: self.num_classes,
        }
    }

    /// Replaces the weights (validated as in [`EmpiricalJoint::new`]).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(
            self.points.clone(),
            self.labels.clone(),
            weights,
            self.num_classes,
        )
    }

    /// Same atoms with every feature vector multiplied by `s`.
    pub fn scale_features(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.points.iter_mut().flatten().for_each(|x| *x *= s);
        out
    }
}
