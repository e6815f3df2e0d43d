use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp, Tensor};
use crate::{Error, Result};

/// Feature extractor `F` followed by a softmax classifier `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPair {
    pub feature_extractor: Mlp,
    pub classifier: Mlp,
}

impl ModelPair {
    pub fn new(feature_extractor: Mlp, classifier: Mlp) -> Result<Self> {
        if feature_extractor.out_dim() != classifier.in_dim() {
            return Err(Error::Dimension(format!(
                "feature dim {} does not match classifier input {}",
                feature_extractor.out_dim(),
                classifier.in_dim()
            )));
        }
        if classifier.layers.last().map(|l| l.activation) != Some(Activation::Softmax) {
            return Err(Error::InvalidParam(
                "classifier must end in a softmax".into(),
            ));
        }
        Ok(ModelPair {
            feature_extractor,
            classifier,
        })
    }

    /// `F: d_in → h → h → d_z` and `C: d_z → h_c → K`, leaky-ReLU hidden units.
    pub fn build<R: Rng + ?Sized>(
        input_dim: usize,
        num_classes: usize,
        feature_hidden: usize,
        feature_dim: usize,
        classifier_hidden: usize,
        leaky_slope: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let act = Activation::LeakyRelu { slope: leaky_slope };
        let f = Mlp::build(
            &[input_dim, feature_hidden, feature_hidden, feature_dim],
            act,
            Activation::Identity,
            false,
            rng,
        )?;
        let c = Mlp::build(
            &[feature_dim, classifier_hidden, num_classes],
            act,
            Activation::Softmax,
            false,
            rng,
        )?;
        ModelPair::new(f, c)
    }

    pub fn input_dim(&self) -> usize {
        self.feature_extractor.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_extractor.out_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.feature_extractor.predict(x)
    }

    /// Softmax rows of `C(z)`.
    pub fn classify(&self, z: &Tensor) -> Result<Tensor> {
        self.classifier.predict(z)
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        self.classify(&self.embed(x)?)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.predict_proba(x)?;
        Ok((0..p.rows())
            .map(|i| {
                p.row(i)
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |b, (j, &v)| if v > b.1 { (j, v) } else { b },
                    )
                    .0
            })
            .collect())
    }

    pub fn all_finite(&self) -> bool {
        self.feature_extractor.all_finite() && self.classifier.all_finite()
    }
}
