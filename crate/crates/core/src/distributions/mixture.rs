use crate::nn::Tensor;
use crate::ot::{EmpiricalJoint, Label};
use crate::trainer::ModelPair;
use crate::{Error, Result};

/// Observed distribution `αP^t + (1−α)P^f` of one domain.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub alpha: f64,
    pub labeled: EmpiricalJoint,
    pub pseudo: EmpiricalJoint,
}

impl MixtureSpec {
    pub fn new(alpha: f64, labeled: EmpiricalJoint, pseudo: EmpiricalJoint) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha = {alpha} outside (0, 1)"
            )));
        }
        if labeled.dim() != pseudo.dim() || labeled.num_classes() != pseudo.num_classes() {
            return Err(Error::Dimension(
                "labeled and pseudo-labeled samples differ in shape".into(),
            ));
        }
        Ok(MixtureSpec {
            alpha,
            labeled,
            pseudo,
        })
    }
}

/// Concatenates both components with masses `α·w` and `(1−α)·w'`.
pub fn mix(spec: &MixtureSpec) -> Result<EmpiricalJoint> {
    let MixtureSpec {
        alpha,
        labeled,
        pseudo,
    } = spec;
    if !(*alpha > 0.0 && *alpha < 1.0) {
        return Err(Error::InvalidParam(format!(
            "alpha = {alpha} outside (0, 1)"
        )));
    }
    let points = labeled
        .points()
        .iter()
        .chain(pseudo.points())
        .cloned()
        .collect();
    let labels = labeled
        .labels()
        .iter()
        .chain(pseudo.labels())
        .cloned()
        .collect();
    let weights = labeled
        .weights()
        .iter()
        .map(|w| alpha * w)
        .chain(pseudo.weights().iter().map(|w| (1.0 - alpha) * w))
        .collect();
    EmpiricalJoint::normalized(points, labels, weights, labeled.num_classes())
}

/// `(F(x), softmax(C(F(x))))` with uniform weights.
pub fn pseudo_label(features: &Tensor, model: &ModelPair) -> Result<EmpiricalJoint> {
    let z = model.embed(features)?;
    let probs = model.classify(&z)?;
    EmpiricalJoint::uniform(
        z.row_vecs(),
        probs.row_vecs().into_iter().map(Label::Soft).collect(),
        model.num_classes(),
    )
}
