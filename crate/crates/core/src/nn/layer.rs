use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spectral::{self, sigma_and_right};
use super::tape::{softmax_in_place, Tape, Var};
use super::tensor::{matmul_bt, Tensor};
use crate::{Error, Result};

/// Default negative-side slope for leaky ReLU layers.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Softmax,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Lipschitz constant with respect to the Euclidean norm.
    ///
    /// For softmax the Jacobian `diag(p) − ppᵀ` is symmetric with Gershgorin
    /// radius bound `2 p_i (1 − p_i) ≤ 1/2`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Activation::Identity | Activation::Relu => 1.0,
            Activation::LeakyRelu { slope } => slope.abs().max(1.0),
            Activation::Softmax => 0.5,
        }
    }

    fn apply_rows(&self, data: &mut [f64], cols: usize) {
        match *self {
            Activation::Identity => {}
            Activation::Relu => data.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::LeakyRelu { slope } => data.iter_mut().for_each(|x| {
                if *x <= 0.0 {
                    *x *= slope
                }
            }),
            Activation::Softmax => data.chunks_mut(cols).for_each(softmax_in_place),
        }
    }

    fn on_tape(&self, tape: &mut Tape, x: Var) -> Var {
        match *self {
            Activation::Identity => x,
            Activation::Relu => tape.leaky_relu(x, 0.0),
            Activation::LeakyRelu { slope } => tape.leaky_relu(x, slope),
            Activation::Softmax => tape.softmax_rows(x),
        }
    }
}

/// Affine map `y = act(x Wᵀ + b)` with optional spectral normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    /// Persisted left singular vector estimate; `Some` marks the layer as
    /// spectrally normalized.
    pub spectral_u: Option<Vec<f64>>,
}

impl DenseLayer {
    /// Uniform `±1/√in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let weight = (0..input * output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let bias = (0..output)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        DenseLayer {
            weight: Tensor::matrix(output, input, weight).expect("shape"),
            bias: Tensor::vector(bias),
            activation,
            spectral_u: None,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || weight.rows() != bias.len() {
            return Err(Error::Dimension(format!(
                "weight {:?} incompatible with bias of length {}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(DenseLayer {
            weight,
            bias: Tensor::vector(bias),
            activation,
            spectral_u: None,
        })
    }

    /// Marks the layer as spectrally normalized with a random unit start vector.
    pub fn with_spectral_norm<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        let u: Vec<f64> = (0..self.out_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let n = super::tensor::norm2(&u).max(f64::MIN_POSITIVE);
        self.spectral_u = Some(u.into_iter().map(|x| x / n).collect());
        self
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral_u.is_some()
    }

    /// Weight actually applied in the forward pass.
    pub fn effective_weight(&self) -> Tensor {
        match &self.spectral_u {
            Some(u) => spectral::normalized_weight(&self.weight, u),
            None => self.weight.clone(),
        }
    }

    /// One warm-started power step on the persisted vector.
    pub fn power_step(&mut self) {
        if let Some(u) = &self.spectral_u {
            let (_, next) = spectral::power_iteration_sigma(&self.weight, u, 1);
            self.spectral_u = Some(next);
        }
    }

    /// Converges the persisted vector (see [`spectral::refine_singular_vector`]).
    pub fn refine_spectral(&mut self) {
        if let Some(u) = &self.spectral_u {
            let (_, next) = spectral::refine_singular_vector(&self.weight, u);
            self.spectral_u = Some(next);
        }
    }

    fn forward_values(&self, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let w = self.effective_weight();
        let (k, m) = (self.in_dim(), self.out_dim());
        let mut pre = matmul_bt(x, w.data(), rows, k, m);
        for r in pre.chunks_mut(m) {
            for (v, b) in r.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        let mut out = pre.clone();
        self.activation.apply_rows(&mut out, m);
        (pre, out)
    }
}

/// Tape handles for one layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    /// Weight after spectral normalization (the raw weight otherwise).
    pub effective: Var,
}

/// Result of running an [`Mlp`] on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Var,
    /// Pre-activation of the final layer.
    pub logits: Var,
    pub params: Vec<LayerVars>,
}

/// Stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam(
                "an MLP needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Dimension(format!(
                    "layer output {} does not feed input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Builds `widths[0] → … → widths[last]` with `hidden` activations between
    /// layers and `last` on the output.
    pub fn build<R: Rng + ?Sized>(
        widths: &[usize],
        hidden: Activation,
        last: Activation,
        spectral: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidParam("need input and output widths".into()));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                let layer = DenseLayer::init(widths[i], widths[i + 1], act, rng);
                if spectral {
                    layer.with_spectral_norm(rng)
                } else {
                    layer
                }
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    /// Records the network on `tape`; parameters become differentiable leaves.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Forward> {
        let params = self.register(tape, true);
        self.forward_with(tape, x, params)
    }

    /// Puts the parameters on `tape` once so several inputs can share them.
    /// Frozen parameters are recorded as constants.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerVars> {
        self.layers
            .iter()
            .map(|layer| {
                let (w, b) = if trainable {
                    (
                        tape.param(layer.weight.clone()),
                        tape.param(layer.bias.clone()),
                    )
                } else {
                    (
                        tape.constant(layer.weight.clone()),
                        tape.constant(layer.bias.clone()),
                    )
                };
                let effective = match &layer.spectral_u {
                    Some(u) => {
                        let (s, v) = sigma_and_right(&layer.weight, u);
                        if s > 0.0 {
                            // σ = Σ W ⊙ u vᵀ with u, v held constant
                            let outer: Vec<f64> = u
                                .iter()
                                .flat_map(|&ui| v.iter().map(move |&vj| ui * vj))
                                .collect();
                            let outer = tape.constant(
                                Tensor::matrix(layer.out_dim(), layer.in_dim(), outer)
                                    .expect("shape"),
                            );
                            let prod = tape.mul(w, outer);
                            let sigma = tape.sum(prod);
                            tape.div_scalar(w, sigma)
                        } else {
                            w
                        }
                    }
                    None => w,
                };
                LayerVars {
                    weight: w,
                    bias: b,
                    effective,
                }
            })
            .collect()
    }

    /// Forward pass using parameters from [`Mlp::register`].
    pub fn forward_with(&self, tape: &mut Tape, x: Var, params: Vec<LayerVars>) -> Result<Forward> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                cols,
                self.in_dim()
            )));
        }
        let mut h = x;
        let mut logits = x;
        for (layer, vars) in self.layers.iter().zip(&params) {
            let lin = tape.matmul_bt(h, vars.effective);
            logits = tape.add_row(lin, vars.bias);
            h = layer.activation.on_tape(tape, logits);
        }
        Ok(Forward {
            output: h,
            logits,
            params,
        })
    }

    /// Tape-free evaluation on a batch of rows.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.predict_with_logits(x)?.1)
    }

    /// `(logits, output)` without recording a tape.
    pub fn predict_with_logits(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let rows = x.rows();
        let mut cur = x.data().to_vec();
        let mut pre = Vec::new();
        for layer in &self.layers {
            let (p, o) = layer.forward_values(&cur, rows);
            pre = p;
            cur = o;
        }
        let m = self.out_dim();
        Ok((
            Tensor::matrix(rows, m, pre).expect("shape"),
            Tensor::matrix(rows, m, cur).expect("shape"),
        ))
    }

    /// Parameters in `(w0, b0, w1, b1, …)` order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    /// Gradients in the same order as [`Mlp::params_mut`].
    pub fn collect_grads(
        &self,
        grads: &mut super::tape::Gradients,
        vars: &[LayerVars],
    ) -> Vec<Tensor> {
        self.layers
            .iter()
            .zip(vars)
            .flat_map(|(l, v)| {
                [
                    grads.take_or_zeros(v.weight, &l.weight),
                    grads.take_or_zeros(v.bias, &l.bias),
                ]
            })
            .collect()
    }

    pub fn power_step(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::power_step);
    }

    pub fn refine_spectral(&mut self) {
        self.layers.iter_mut().for_each(DenseLayer::refine_spectral);
    }

    /// Upper bound on the network's Lipschitz constant: product of exact
    /// spectral norms of the effective weights times activation constants.
    pub fn lipschitz_upper_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| spectral::top_singular_value(&l.effective_weight()) * l.activation.lipschitz())
            .product()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    /// Multiplies every weight matrix by `s` (biases untouched).
    pub fn scale_weights(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(|w| *w *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(act: Activation, w: Vec<f64>, n: usize) -> Mlp {
        let layer =
            DenseLayer::from_parts(Tensor::matrix(n, n, w).unwrap(), vec![0.0; n], act).unwrap();
        Mlp::new(vec![layer]).unwrap()
    }

    #[test]
    fn identity_layer_passes_input() {
        let m = single(Activation::Identity, vec![1., 0., 0., 1.], 2);
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 2, vec![1., 2.]).unwrap());
        let f = m.forward(&mut t, x).unwrap();
        assert_eq!(t.value(f.output).data(), &[1., 2.]);
    }

    #[test]
    fn leaky_relu_values() {
        let m = single(
            Activation::LeakyRelu { slope: 0.1 },
            vec![1., 0., 0., 1.],
            2,
        );
        let out = m
            .predict(&Tensor::matrix(1, 2, vec![-1., 2.]).unwrap())
            .unwrap();
        assert!((out.data()[0] + 0.1).abs() < 1e-15);
        assert_eq!(out.data()[1], 2.0);
    }

    #[test]
    fn softmax_layer_on_zero_input() {
        let m = single(Activation::Softmax, vec![1., 0., 0., 1.], 2);
        let out = m
            .predict(&Tensor::matrix(1, 2, vec![0., 0.]).unwrap())
            .unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn wrong_input_width_is_dimension_error() {
        let m = single(Activation::Identity, vec![1., 0., 0., 1.], 2);
        let mut t = Tape::new();
        let x = t.constant(Tensor::matrix(1, 3, vec![1., 2., 3.]).unwrap());
        assert!(matches!(m.forward(&mut t, x), Err(Error::Dimension(_))));
    }

    #[test]
    fn tape_and_direct_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::build(
            &[3, 5, 2],
            Activation::leaky(),
            Activation::Softmax,
            true,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, -0.3, 0.7, 1.0, 0.2, -0.5]).unwrap();
        let mut t = Tape::new();
        let xv = t.constant(x.clone());
        let f = m.forward(&mut t, xv).unwrap();
        let direct = m.predict(&x).unwrap();
        for (a, b) in t.value(f.output).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
