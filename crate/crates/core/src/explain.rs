//! LRP-γ relevance for dense leaky-ReLU networks, and Gradient×Input.
//!
//! Relevance is seeded at the pre-softmax logit of the target class and
//! propagated layer by layer. For an output unit with pre-activation `z_k`,
//! input activations are split by sign and weights by sign; with `z_k ≥ 0`
//! the numerator is `a⁺(w + γw⁺) + a⁻(w + γw⁻)`, with `z_k < 0` it is
//! `a⁺(w + γw⁻) + a⁻(w + γw⁺)`. The denominator is the sum of numerators
//! plus the bias, so relevance assigned to biases is absorbed.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, DenseLayer, Mlp, Tape, Tensor};
use crate::trainer::ModelPair;
use crate::{Error, Result};

/// Smallest denominator magnitude; smaller values keep their sign.
pub const LRP_EPS: f64 = 1e-9;

/// Per-layer γ, indexed from the input layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule(pub Vec<f64>);

impl GammaSchedule {
    pub fn constant(gamma: f64, layers: usize) -> Self {
        GammaSchedule(vec![gamma; layers])
    }

    /// 0.25 on the first `⌈L/2⌉` layers, 0 on the rest.
    pub fn default_for(layers: usize) -> Self {
        let half = layers.div_ceil(2);
        GammaSchedule(
            (0..layers)
                .map(|i| if i < half { 0.25 } else { 0.0 })
                .collect(),
        )
    }

    fn validate(&self, layers: usize) -> Result<()> {
        if self.0.len() != layers {
            return Err(Error::Dimension(format!(
                "gamma schedule has {} entries for {} layers",
                self.0.len(),
                layers
            )));
        }
        if let Some(g) = self.0.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidParam(format!(
                "gamma {g} must be finite and ≥ 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub target_class: usize,
    /// Relevance of each input feature.
    pub input: Vec<f64>,
    /// `layers[l]` is the relevance at the input of layer `l`; the last entry
    /// is the seed at the logits.
    pub layers: Vec<Vec<f64>>,
}

impl RelevanceMap {
    pub fn total(&self) -> f64 {
        self.input.iter().sum()
    }
}

fn slope(layer: &DenseLayer, is_last: bool) -> Result<Option<f64>> {
    match layer.activation {
        Activation::Identity => Ok(Some(1.0)),
        Activation::Relu => Ok(Some(0.0)),
        Activation::LeakyRelu { slope } => Ok(Some(slope)),
        Activation::Softmax if is_last => Ok(None),
        Activation::Softmax => Err(Error::Unsupported(
            "softmax is only supported as the final layer".into(),
        )),
    }
}

/// Pre-activations and activations of every layer; softmax is not applied.
fn forward(net: &Mlp, x: &[f64]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    if x.len() != net.in_dim() {
        return Err(Error::Dimension(format!(
            "input has {} features, network expects {}",
            x.len(),
            net.in_dim()
        )));
    }
    let n = net.layers.len();
    let mut a = x.to_vec();
    let mut out = Vec::with_capacity(n);
    for (l, layer) in net.layers.iter().enumerate() {
        let s = slope(layer, l + 1 == n)?;
        let w = layer.effective_weight();
        let z: Vec<f64> = (0..layer.out_dim())
            .map(|k| {
                w.row(k).iter().zip(&a).map(|(w, a)| w * a).sum::<f64>() + layer.bias.data()[k]
            })
            .collect();
        let next = match s {
            Some(s) => z
                .iter()
                .map(|&v| if v >= 0.0 { v } else { s * v })
                .collect(),
            None => z.clone(),
        };
        out.push((a, z));
        a = next;
    }
    Ok(out)
}

fn stabilize(d: f64) -> f64 {
    if d.abs() >= LRP_EPS {
        d
    } else if d < 0.0 {
        -LRP_EPS
    } else {
        LRP_EPS
    }
}

/// LRP-γ on a dense network.
pub fn lrp_gamma_mlp(
    net: &Mlp,
    x: &[f64],
    target_class: usize,
    schedule: &GammaSchedule,
) -> Result<RelevanceMap> {
    schedule.validate(net.layers.len())?;
    if target_class >= net.out_dim() {
        return Err(Error::InvalidParam(format!(
            "target class {target_class} out of range for {} outputs",
            net.out_dim()
        )));
    }
    let acts = forward(net, x)?;
    let (_, logits) = acts.last().expect("non-empty network");
    let mut r = vec![0.0; logits.len()];
    r[target_class] = logits[target_class];
    let mut layers = vec![r.clone()];
    for (l, layer) in net.layers.iter().enumerate().rev() {
        let (a, z) = &acts[l];
        let gamma = schedule.0[l];
        let w = layer.effective_weight();
        let mut below = vec![0.0; a.len()];
        let mut num = vec![0.0; a.len()];
        for k in 0..layer.out_dim() {
            if r[k] == 0.0 {
                continue;
            }
            let positive = z[k] >= 0.0;
            let mut den = layer.bias.data()[k];
            for (j, (&aj, &wkj)) in a.iter().zip(w.row(k)).enumerate() {
                let (wp, wn) = (wkj.max(0.0), wkj.min(0.0));
                let (ap, an) = (aj.max(0.0), aj.min(0.0));
                num[j] = if positive {
                    ap * (wkj + gamma * wp) + an * (wkj + gamma * wn)
                } else {
                    ap * (wkj + gamma * wn) + an * (wkj + gamma * wp)
                };
                den += num[j];
            }
            let scale = r[k] / stabilize(den);
            for j in 0..a.len() {
                below[j] += num[j] * scale;
            }
        }
        r = below;
        layers.push(r.clone());
    }
    layers.reverse();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("relevance".into()));
    }
    Ok(RelevanceMap {
        target_class,
        input: r,
        layers,
    })
}

/// `F` and `C` as one network.
pub fn compose(model: &ModelPair) -> Result<Mlp> {
    Mlp::new(
        model
            .feature_extractor
            .layers
            .iter()
            .chain(&model.classifier.layers)
            .cloned()
            .collect(),
    )
}

/// LRP-γ through `C ∘ F`.
pub fn lrp_gamma(
    model: &ModelPair,
    x: &[f64],
    target_class: usize,
    schedule: &GammaSchedule,
) -> Result<RelevanceMap> {
    lrp_gamma_mlp(&compose(model)?, x, target_class, schedule)
}

/// `∂ logit_target / ∂x ⊙ x` by reverse-mode differentiation.
pub fn gradient_times_input_mlp(net: &Mlp, x: &[f64], target_class: usize) -> Result<RelevanceMap> {
    if target_class >= net.out_dim() {
        return Err(Error::InvalidParam(format!(
            "target class {target_class} out of range"
        )));
    }
    for (l, layer) in net.layers.iter().enumerate() {
        slope(layer, l + 1 == net.layers.len())?;
    }
    let mut tape = Tape::new();
    let xv = tape.param(Tensor::matrix(1, x.len(), x.to_vec())?);
    let fwd = net.forward(&mut tape, xv)?;
    let mut pick = Tensor::zeros(&[1, net.out_dim()]);
    pick.data_mut()[target_class] = 1.0;
    let pick = tape.constant(pick);
    let sel = tape.mul(fwd.logits, pick);
    let out = tape.sum(sel);
    let grads = tape.backward(out)?;
    let g = grads
        .get(xv)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);
    let input: Vec<f64> = g.iter().zip(x).map(|(g, x)| g * x).collect();
    Ok(RelevanceMap {
        target_class,
        layers: vec![input.clone()],
        input,
    })
}

pub fn gradient_times_input(
    model: &ModelPair,
    x: &[f64],
    target_class: usize,
) -> Result<RelevanceMap> {
    gradient_times_input_mlp(&compose(model)?, x, target_class)
}

/// Sidecar metadata of a relevance CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceSidecar {
    pub gamma_schedule: Vec<f64>,
    pub target_class: Vec<usize>,
    pub inputs: Vec<usize>,
}

/// Writes `feature_index,relevance` rows, one block per map in order, and
/// `sidecar` as JSON next to it.
pub fn write_relevance(
    maps: &[RelevanceMap],
    sidecar: &RelevanceSidecar,
    csv_path: &Path,
    sidecar_path: &Path,
) -> Result<()> {
    let mut f = fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut text = String::from("feature_index,relevance\n");
    for m in maps {
        for (j, r) in m.input.iter().enumerate() {
            text.push_str(&format!("{j},{r:?}\n"));
        }
    }
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(csv_path, e))?;
    fs::write(sidecar_path, serde_json::to_string_pretty(sidecar)?)
        .map_err(|e| Error::io(sidecar_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(w: Vec<f64>, out: usize, inp: usize) -> Mlp {
        let layer = DenseLayer::from_parts(
            Tensor::matrix(out, inp, w).unwrap(),
            vec![0.0; out],
            Activation::Identity,
        )
        .unwrap();
        Mlp::new(vec![layer]).unwrap()
    }

    #[test]
    fn single_path_attribution() {
        let net = linear(vec![0.3, -2.0, 0.7, 1.5, 0.2, -0.4], 2, 3);
        for g in [0.0, 0.25, 1.0] {
            let m =
                lrp_gamma_mlp(&net, &[0.0, 1.0, 0.0], 1, &GammaSchedule::constant(g, 1)).unwrap();
            assert!((m.input[1] - 0.2).abs() < 1e-15);
            assert_eq!(m.input[0], 0.0);
            assert_eq!(m.input[2], 0.0);
        }
    }

    #[test]
    fn gradient_times_input_on_linear_model() {
        let net = linear(vec![0.3, -2.0, 0.7, 1.5, 0.2, -0.4], 2, 3);
        let m = gradient_times_input_mlp(&net, &[1.0, 2.0, -3.0], 0).unwrap();
        for (a, b) in m.input.iter().zip([0.3, -4.0, -2.1]) {
            assert!((a - b).abs() < 1e-15);
        }
        let zero = gradient_times_input_mlp(&net, &[0.0; 3], 1).unwrap();
        assert!(zero.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gamma_shifts_share_to_sign_agreeing_paths() {
        // z = 2·1 + (−1)·1 = 1 > 0; the positive-weight path gains share as γ grows.
        let net = linear(vec![2.0, -1.0], 1, 2);
        let share = |g| {
            let m = lrp_gamma_mlp(&net, &[1.0, 1.0], 0, &GammaSchedule::constant(g, 1)).unwrap();
            m.input[0].abs() / (m.input[0].abs() + m.input[1].abs())
        };
        assert!(share(0.0) < share(0.25) && share(0.25) < share(1.0));
        assert!((share(0.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_and_layer_checks() {
        assert_eq!(
            GammaSchedule::default_for(5).0,
            vec![0.25, 0.25, 0.25, 0.0, 0.0]
        );
        let net = linear(vec![1.0, 1.0], 1, 2);
        assert!(lrp_gamma_mlp(&net, &[1.0, 1.0], 0, &GammaSchedule::constant(0.0, 2)).is_err());
        assert!(lrp_gamma_mlp(&net, &[1.0, 1.0], 0, &GammaSchedule::constant(-1.0, 1)).is_err());
        let sm = DenseLayer::from_parts(
            Tensor::matrix(2, 2, vec![1.0; 4]).unwrap(),
            vec![0.0; 2],
            Activation::Softmax,
        )
        .unwrap();
        let bad = Mlp::new(vec![sm.clone(), sm]).unwrap();
        assert!(matches!(
            lrp_gamma_mlp(&bad, &[1.0, 1.0], 0, &GammaSchedule::constant(0.0, 2)),
            Err(Error::Unsupported(_))
        ));
    }
}
