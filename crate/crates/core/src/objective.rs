//! Classifier, critic and entropy losses, and the combined min-max objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, LayerVars, Mlp, Tape, Tensor, Var};
use crate::{Error, Result};

/// Probability floor inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Which domain critic drives the alignment term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// `K` heads on `z`, head `y` weighted by `P(Y = y | z)`.
    ClassDependent,
    /// One output on `[z; s·y]`.
    Joint,
    /// One output on `z`.
    Marginal,
    None,
}

impl CriticKind {
    pub const ALL: [CriticKind; 4] = [
        CriticKind::ClassDependent,
        CriticKind::Joint,
        CriticKind::Marginal,
        CriticKind::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriticKind::ClassDependent => "class_dependent",
            CriticKind::Joint => "joint",
            CriticKind::Marginal => "marginal",
            CriticKind::None => "none",
        }
    }
}

impl std::fmt::Display for CriticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CriticKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CriticKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown critic kind {s:?}"))
    }
}

/// Spectrally normalized domain critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticNet {
    pub kind: CriticKind,
    pub net: Mlp,
    /// Weight of the label coordinates in the joint critic's input.
    pub label_scale: f64,
}

impl CriticNet {
    /// Three leaky-ReLU layers of width `hidden`; `None` for [`CriticKind::None`].
    pub fn build<R: Rng + ?Sized>(
        kind: CriticKind,
        feature_dim: usize,
        num_classes: usize,
        hidden: usize,
        label_scale: f64,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        let (input, output) = match kind {
            CriticKind::ClassDependent => (feature_dim, num_classes),
            CriticKind::Joint => (feature_dim + num_classes, 1),
            CriticKind::Marginal => (feature_dim, 1),
            CriticKind::None => return Ok(None),
        };
        let mut net = Mlp::build(
            &[input, hidden, hidden, output],
            Activation::leaky(),
            Activation::Identity,
            true,
            rng,
        )?;
        net.refine_spectral();
        Ok(Some(CriticNet {
            kind,
            net,
            label_scale,
        }))
    }

    pub fn from_net(kind: CriticKind, net: Mlp, label_scale: f64) -> Result<Self> {
        if kind == CriticKind::None {
            return Err(Error::InvalidParam("a critic network needs a kind".into()));
        }
        if net.layers.iter().any(|l| !l.is_spectral()) {
            return Err(Error::InvalidParam(
                "critic layers must be spectrally normalized".into(),
            ));
        }
        Ok(CriticNet {
            kind,
            net,
            label_scale,
        })
    }

    /// `L_d` on the tape, with the critic parameters given by `vars`.
    ///
    /// `cond_*` are `n × K` conditional rows; the marginal critic ignores them.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[LayerVars],
        z_p: Var,
        z_q: Var,
        cond_p: Var,
        cond_q: Var,
    ) -> Result<Var> {
        let (np, nq) = (tape.value(z_p).rows(), tape.value(z_q).rows());
        if np == 0 || nq == 0 {
            return Err(Error::Contract("critic loss on an empty batch".into()));
        }
        for (z, c) in [(z_p, cond_p), (z_q, cond_q)] {
            if tape.value(c).rows() != tape.value(z).rows() {
                return Err(Error::Dimension(
                    "conditionals not aligned with features".into(),
                ));
            }
        }
        let input = |tape: &mut Tape, z: Var, c: Var| -> Var {
            if self.kind == CriticKind::Joint {
                let scaled = tape.scale(c, self.label_scale);
                tape.concat_cols(z, scaled)
            } else {
                z
            }
        };
        let (ip, iq) = (input(tape, z_p, cond_p), input(tape, z_q, cond_q));
        let dp = self.net.forward_with(tape, ip, vars.to_vec())?.output;
        let dq = self.net.forward_with(tape, iq, vars.to_vec())?.output;
        match self.kind {
            CriticKind::ClassDependent => {
                let k = tape.value(dp).cols();
                if tape.value(cond_p).cols() != k || tape.value(cond_q).cols() != k {
                    return Err(Error::Dimension(format!(
                        "critic has {k} heads but conditionals have {} classes",
                        tape.value(cond_p).cols()
                    )));
                }
                let wp = tape.mul(cond_p, dp);
                let wq = tape.mul(cond_q, dq);
                let sp = tape.sum(wp);
                let sq = tape.sum(wq);
                let mp = tape.scale(sp, 1.0 / np as f64);
                let mq = tape.scale(sq, 1.0 / nq as f64);
                Ok(tape.sub(mp, mq))
            }
            CriticKind::Joint | CriticKind::Marginal => {
                let mp = tape.mean(dp);
                let mq = tape.mean(dq);
                Ok(tape.sub(mp, mq))
            }
            CriticKind::None => unreachable!("no network for CriticKind::None"),
        }
    }

    /// Critic outputs on a batch without recording a tape.
    pub fn outputs(&self, z: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let input = if self.kind == CriticKind::Joint {
            concat_cols(z, &cond.map(|x| x * self.label_scale))?
        } else {
            z.clone()
        };
        self.net.predict(&input)
    }
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rows() != b.rows() {
        return Err(Error::Dimension("row counts differ".into()));
    }
    let rows: Vec<Vec<f64>> = (0..a.rows())
        .map(|i| a.row(i).iter().chain(b.row(i)).copied().collect())
        .collect();
    Tensor::from_rows(&rows)
}

fn eval_scalar(build: impl FnOnce(&mut Tape) -> Result<Var>) -> Result<f64> {
    let mut tape = Tape::new();
    let v = build(&mut tape)?;
    Ok(tape.value(v).item())
}

/// Class-dependent `L_d`: `Σ_j [mean_i condP_ij D(zP_i)_j − mean_i condQ_ij D(zQ_i)_j]`.
pub fn critic_loss_class_dependent(
    critic: &CriticNet,
    z_p: &Tensor,
    z_q: &Tensor,
    cond_p: &Tensor,
    cond_q: &Tensor,
) -> Result<f64> {
    expect_kind(critic, CriticKind::ClassDependent)?;
    critic_loss(critic, z_p, z_q, cond_p, cond_q)
}

/// Joint `L_d`: `mean D([zP; s·yP]) − mean D([zQ; s·yQ])`.
pub fn critic_loss_joint(
    critic: &CriticNet,
    z_p: &Tensor,
    z_q: &Tensor,
    y_p: &Tensor,
    y_q: &Tensor,
) -> Result<f64> {
    expect_kind(critic, CriticKind::Joint)?;
    critic_loss(critic, z_p, z_q, y_p, y_q)
}

/// Marginal `L_d`: `mean D(zP) − mean D(zQ)`.
pub fn critic_loss_marginal(critic: &CriticNet, z_p: &Tensor, z_q: &Tensor) -> Result<f64> {
    expect_kind(critic, CriticKind::Marginal)?;
    let cp = Tensor::zeros(&[z_p.rows(), 1]);
    let cq = Tensor::zeros(&[z_q.rows(), 1]);
    critic_loss(critic, z_p, z_q, &cp, &cq)
}

fn expect_kind(critic: &CriticNet, kind: CriticKind) -> Result<()> {
    if critic.kind != kind {
        return Err(Error::InvalidParam(format!(
            "expected a {kind} critic, got {}",
            critic.kind
        )));
    }
    Ok(())
}

/// `L_d` for any critic kind, evaluated without gradients.
pub fn critic_loss(
    critic: &CriticNet,
    z_p: &Tensor,
    z_q: &Tensor,
    cond_p: &Tensor,
    cond_q: &Tensor,
) -> Result<f64> {
    eval_scalar(|t| {
        let vars = critic.net.register(t, false);
        let (a, b) = (t.constant(z_p.clone()), t.constant(z_q.clone()));
        let (c, d) = (t.constant(cond_p.clone()), t.constant(cond_q.clone()));
        critic.loss_on_tape(t, &vars, a, b, c, d)
    })
}

fn check_rows_on_simplex(p: &Tensor, name: &str) -> Result<()> {
    for i in 0..p.rows() {
        let r = p.row(i);
        if r.iter().any(|&x| !(x >= 0.0) || !x.is_finite())
            || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidParam(format!(
                "{name} row {i} is off the simplex"
            )));
        }
    }
    Ok(())
}

/// Mean `−log pred[true class]`, with probabilities floored at [`LOG_EPS`].
/// Also returns the number of rows that hit the floor.
pub fn cross_entropy_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, usize)> {
    if pred.shape() != target.shape() || pred.rows() == 0 {
        return Err(Error::Dimension(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    check_rows_on_simplex(pred, "prediction")?;
    let mut clamped = 0;
    let mut total = 0.0;
    for i in 0..pred.rows() {
        for (p, t) in pred.row(i).iter().zip(target.row(i)) {
            if *t > 0.0 {
                if *p < LOG_EPS {
                    clamped += 1;
                }
                total -= t * p.max(LOG_EPS).ln();
            }
        }
    }
    Ok((total / pred.rows() as f64, clamped))
}

/// Mean Shannon entropy (nats) of the rows.
pub fn entmin_loss(pred: &Tensor) -> Result<f64> {
    check_rows_on_simplex(pred, "prediction")?;
    if pred.rows() == 0 {
        return Ok(0.0);
    }
    let h: f64 = pred
        .data()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    Ok(h / pred.rows() as f64)
}

/// `−(1/count) Σ_i Σ_j t_ij log p_ij` where `t` has zero rows for
/// unlabeled samples.
pub fn cross_entropy_on_tape(tape: &mut Tape, probs: Var, targets: Var, count: usize) -> Var {
    let logp = tape.log_clamped(probs, LOG_EPS);
    let prod = tape.mul(targets, logp);
    let s = tape.sum(prod);
    tape.scale(s, -1.0 / count.max(1) as f64)
}

/// Mean entropy over the rows selected by `mask` (1 rows kept, 0 rows dropped).
pub fn entropy_on_tape(tape: &mut Tape, probs: Var, mask: Var, count: usize) -> Var {
    let logp = tape.log_clamped(probs, LOG_EPS);
    let plogp = tape.mul(probs, logp);
    let masked = tape.mul(mask, plogp);
    let s = tape.sum(masked);
    tape.scale(s, -1.0 / count.max(1) as f64)
}

/// Loss weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_classifier: f64,
    pub w_critic: f64,
    pub w_entmin: f64,
    /// Per-domain multipliers on the classification terms.
    pub domain_p: f64,
    pub domain_q: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        ObjectiveWeights {
            w_classifier: 1.0,
            w_critic: 0.1,
            w_entmin: 0.0,
            domain_p: 1.0,
            domain_q: 1.0,
        }
    }
}

/// A minibatch of raw inputs with partially observed labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(x: Tensor, labels: Vec<Option<usize>>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::Dimension("batch rows and labels differ".into()));
        }
        Ok(Batch { x, labels })
    }

    pub fn labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// One-hot rows for labeled samples, zero rows otherwise.
    pub fn one_hot(&self, k: usize) -> Tensor {
        let mut t = Tensor::zeros(&[self.labels.len(), k]);
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                t.data_mut()[i * k + c] = 1.0;
            }
        }
        t
    }

    /// Ones on unlabeled rows.
    pub fn unlabeled_mask(&self, k: usize) -> Tensor {
        let mut t = Tensor::zeros(&[self.labels.len(), k]);
        for (i, l) in self.labels.iter().enumerate() {
            if l.is_none() {
                t.data_mut()[i * k..(i + 1) * k].fill(1.0);
            }
        }
        t
    }

    /// Conditionals: known one-hot labels, `probs` rows for the rest.
    pub fn conditionals(&self, probs: &Tensor) -> Tensor {
        let k = probs.cols();
        let mut out = probs.clone();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(c) = l {
                let row = &mut out.data_mut()[i * k..(i + 1) * k];
                row.fill(0.0);
                row[*c] = 1.0;
            }
        }
        out
    }
}

/// Handles and values of one recorded objective.
#[derive(Debug)]
pub struct ObjectiveGraph {
    pub loss_min: Var,
    pub loss_max: Option<Var>,
    pub feature_vars: Vec<LayerVars>,
    pub classifier_vars: Vec<LayerVars>,
    pub loss_c_p: Option<f64>,
    pub loss_c_q: Option<f64>,
    pub loss_d: f64,
    pub entmin: f64,
}

/// Records `w_c(d_P·L_c^P + d_Q·L_c^Q) + w_d·L_d + w_ent·EntMin` for the
/// generator step. Classification terms only see labeled rows and are
/// skipped (reported as `None`) when a batch has none; EntMin averages
/// over unlabeled rows. The critic is frozen.
pub fn record_objective(
    tape: &mut Tape,
    model: &crate::trainer::ModelPair,
    critic: Option<&CriticNet>,
    batch_p: &Batch,
    batch_q: &Batch,
    weights: &ObjectiveWeights,
) -> Result<ObjectiveGraph> {
    let k = model.num_classes();
    let feature_vars = model.feature_extractor.register(tape, true);
    let classifier_vars = model.classifier.register(tape, true);
    let side = |tape: &mut Tape, b: &Batch| -> Result<(Var, Var)> {
        let x = tape.constant(b.x.clone());
        let z = model
            .feature_extractor
            .forward_with(tape, x, feature_vars.clone())?
            .output;
        let p = model
            .classifier
            .forward_with(tape, z, classifier_vars.clone())?
            .output;
        Ok((z, p))
    };
    let (zp, pp) = side(tape, batch_p)?;
    let (zq, pq) = side(tape, batch_q)?;

    let mut terms: Vec<Var> = Vec::new();
    let mut ce = |tape: &mut Tape, b: &Batch, probs: Var, dw: f64| -> Option<f64> {
        let n = b.labeled();
        if n == 0 {
            return None;
        }
        let t = tape.constant(b.one_hot(k));
        let l = cross_entropy_on_tape(tape, probs, t, n);
        let value = tape.value(l).item();
        if weights.w_classifier * dw != 0.0 {
            terms.push(tape.scale(l, weights.w_classifier * dw));
        }
        Some(value)
    };
    let loss_c_p = ce(tape, batch_p, pp, weights.domain_p);
    let loss_c_q = ce(tape, batch_q, pq, weights.domain_q);

    let unl =
        (batch_p.labels.len() - batch_p.labeled()) + (batch_q.labels.len() - batch_q.labeled());
    let mut entmin = 0.0;
    if unl > 0 {
        let mut parts = Vec::new();
        for (b, probs) in [(batch_p, pp), (batch_q, pq)] {
            let mask = tape.constant(b.unlabeled_mask(k));
            parts.push(entropy_on_tape(tape, probs, mask, unl));
        }
        let e = tape.add(parts[0], parts[1]);
        entmin = tape.value(e).item();
        if weights.w_entmin != 0.0 {
            terms.push(tape.scale(e, weights.w_entmin));
        }
    }

    let mut loss_d = 0.0;
    let mut loss_max = None;
    if let Some(c) = critic {
        let cond = |tape: &mut Tape, b: &Batch, probs: Var| {
            let known = tape.constant(b.one_hot(k));
            let mask = tape.constant(b.unlabeled_mask(k));
            let soft = tape.mul(mask, probs);
            tape.add(known, soft)
        };
        let cp = cond(tape, batch_p, pp);
        let cq = cond(tape, batch_q, pq);
        let cvars = c.net.register(tape, false);
        let ld = c.loss_on_tape(tape, &cvars, zp, zq, cp, cq)?;
        loss_d = tape.value(ld).item();
        loss_max = Some(ld);
        if weights.w_critic != 0.0 {
            terms.push(tape.scale(ld, weights.w_critic));
        }
    }

    let loss_min = match terms.split_first() {
        Some((&first, rest)) => rest.iter().fold(first, |acc, &t| tape.add(acc, t)),
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(ObjectiveGraph {
        loss_min,
        loss_max,
        feature_vars,
        classifier_vars,
        loss_c_p,
        loss_c_q,
        loss_d,
        entmin,
    })
}

/// `(loss_minimized, loss_maximized)` of the combined objective on one pair
/// of batches; the maximized part is `L_d` (0 without a critic).
pub fn total_objective(
    model: &crate::trainer::ModelPair,
    critic: Option<&CriticNet>,
    batch_p: &Batch,
    batch_q: &Batch,
    weights: &ObjectiveWeights,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let g = record_objective(&mut tape, model, critic, batch_p, batch_q, weights)?;
    Ok((tape.value(g.loss_min).item(), g.loss_d))
}
