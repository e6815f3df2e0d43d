//! Adversarial training of `F`, `C` against a domain critic, evaluation, and
//! persistence.

mod config;
mod model;
mod persist;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::TrainConfig;
pub use model::ModelPair;
pub use persist::{
    export_embeddings, load_checkpoint, save_checkpoint, MetricsLog, TrainerCheckpoint,
};

use crate::distributions::DatasetSplit;
use crate::nn::{Adam, Tape, Tensor};
use crate::objective::{record_objective, Batch, CriticKind, CriticNet, ObjectiveWeights};
use crate::ot::{self, EmpiricalJoint, Label};
use crate::{derive_seed, Error, Result};

/// One epoch of the metrics trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "loss_c_P")]
    pub loss_c_p: f64,
    #[serde(rename = "loss_c_Q")]
    pub loss_c_q: f64,
    pub loss_d: f64,
    #[serde(rename = "acc_P")]
    pub acc_p: f64,
    #[serde(rename = "acc_Q")]
    pub acc_q: f64,
    /// `null` when the monitor is disabled.
    pub w_dist: Option<f64>,
}

/// Evaluation summary of a model on two domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "acc_P")]
    pub acc_p: f64,
    #[serde(rename = "acc_Q")]
    pub acc_q: f64,
    pub acc_avg: f64,
    pub acc_min: f64,
    pub w_dist: f64,
    /// Cross-entropy over the labeled rows of each domain.
    #[serde(rename = "loss_c_P")]
    pub loss_c_p: f64,
    #[serde(rename = "loss_c_Q")]
    pub loss_c_q: f64,
    /// Critic value of `L_d` on the evaluated subsamples; `null` without a critic.
    pub loss_d: Option<f64>,
}

/// Training diagnostics that are not part of the per-epoch log.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainDiagnostics {
    /// Batches in which `L_d` never dropped across the critic steps.
    pub critic_ascent_batches: usize,
    pub critic_batches: usize,
    /// Extremes of the per-layer effective σ seen after critic steps.
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    /// Batches whose classification term was skipped for lack of labels.
    pub skipped_classification_terms: usize,
}

impl TrainDiagnostics {
    pub fn ascent_fraction(&self) -> Option<f64> {
        (self.critic_batches > 0)
            .then(|| self.critic_ascent_batches as f64 / self.critic_batches as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelPair,
    pub critic: Option<CriticNet>,
    pub log: MetricsLog,
    pub diagnostics: TrainDiagnostics,
}

/// Joint sample built from `(F(x), label)` with the known one-hot label on
/// labeled rows and the classifier's softmax elsewhere; uniform weights.
pub fn representation_joint(model: &ModelPair, data: &DatasetSplit) -> Result<EmpiricalJoint> {
    let z = model.embed(&data.features)?;
    let probs = model.classify(&z)?;
    let labels = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| match l {
            Some(c) => Label::Hard(*c),
            None => Label::Soft(probs.row(i).to_vec()),
        })
        .collect();
    EmpiricalJoint::uniform(z.row_vecs(), labels, model.num_classes())
}

fn subsample(data: &DatasetSplit, max: usize, seed: u64) -> DatasetSplit {
    if data.len() <= max {
        return data.clone();
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(max);
    idx.sort_unstable();
    data.subset(&idx)
}

/// Fraction of labeled rows classified correctly.
pub fn accuracy(model: &ModelPair, data: &DatasetSplit) -> Result<f64> {
    let idx = data.labeled_indices();
    if idx.is_empty() {
        return Err(Error::Contract(format!(
            "domain {} has no labeled points to score",
            data.domain
        )));
    }
    let sub = data.subset(&idx);
    let pred = model.predict(&sub.features)?;
    let hits = pred
        .iter()
        .zip(&sub.labels)
        .filter(|(p, l)| Some(**p) == **l)
        .count();
    Ok(hits as f64 / idx.len() as f64)
}

fn labeled_cross_entropy(model: &ModelPair, data: &DatasetSplit) -> Result<f64> {
    let sub = data.subset(&data.labeled_indices());
    let batch = Batch::new(sub.features, sub.labels)?;
    let probs = model.predict_proba(&batch.x)?;
    Ok(crate::objective::cross_entropy_loss(&probs, &batch.one_hot(model.num_classes()))?.0)
}

/// Settings for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub label_scale: f64,
    pub subsample: usize,
    pub subsample_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            label_scale: 1.0,
            subsample: 500,
            subsample_seed: 0,
        }
    }
}

/// Accuracies on the labeled rows and the exact joint W1 between the two
/// representation distributions (on fixed subsamples).
pub fn evaluate(
    model: &ModelPair,
    critic: Option<&CriticNet>,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
    opts: &EvalOptions,
) -> Result<Metrics> {
    let acc_p = accuracy(model, data_p)?;
    let acc_q = accuracy(model, data_q)?;
    let sp = subsample(data_p, opts.subsample, derive_seed(opts.subsample_seed, 1));
    let sq = subsample(data_q, opts.subsample, derive_seed(opts.subsample_seed, 2));
    let jp = representation_joint(model, &sp)?;
    let jq = representation_joint(model, &sq)?;
    let w_dist = ot::w1(&jp, &jq, opts.label_scale)?;
    let loss_d = match critic {
        Some(c) => {
            let cond = |j: &EmpiricalJoint| {
                Tensor::from_rows(&(0..j.len()).map(|i| j.conditional(i)).collect::<Vec<_>>())
            };
            let zp = Tensor::from_rows(jp.points())?;
            let zq = Tensor::from_rows(jq.points())?;
            let (cp, cq) = (cond(&jp)?, cond(&jq)?);
            let (cp, cq) = if c.kind == CriticKind::Marginal {
                (
                    Tensor::zeros(&[zp.rows(), 1]),
                    Tensor::zeros(&[zq.rows(), 1]),
                )
            } else {
                (cp, cq)
            };
            Some(crate::objective::critic_loss(c, &zp, &zq, &cp, &cq)?)
        }
        None => None,
    };
    Ok(Metrics {
        acc_p,
        acc_q,
        acc_avg: 0.5 * (acc_p + acc_q),
        acc_min: acc_p.min(acc_q),
        w_dist,
        loss_c_p: labeled_cross_entropy(model, data_p)?,
        loss_c_q: labeled_cross_entropy(model, data_q)?,
        loss_d,
    })
}

fn check_pair(p: &DatasetSplit, q: &DatasetSplit) -> Result<usize> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Contract(
            "both domains need at least one point".into(),
        ));
    }
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "domains have {} and {} input features",
            p.dim(),
            q.dim()
        )));
    }
    let k = p.num_classes().max(q.num_classes());
    if k < 2 {
        return Err(Error::Contract(
            "need labeled points from at least two classes".into(),
        ));
    }
    Ok(k)
}

fn batch(data: &DatasetSplit, perm: &[usize], start: usize, size: usize) -> Result<Batch> {
    let idx: Vec<usize> = (start..start + size)
        .map(|t| perm[t % perm.len()])
        .collect();
    let sub = data.subset(&idx);
    Batch::new(sub.features, sub.labels)
}

fn sigma_extremes(critic: &CriticNet) -> (f64, f64) {
    critic
        .net
        .layers
        .iter()
        .map(|l| crate::nn::top_singular_value(&l.effective_weight()))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s), hi.max(s))
        })
}

#[derive(Clone, Copy)]
struct Where {
    epoch: usize,
    batch: usize,
}

/// `n_critic` ascent steps on `L_d` with `F` and `C` frozen. Conditionals
/// are computed once per batch and held constant; the spectral estimates
/// are re-converged after every step.
#[allow(clippy::too_many_arguments)]
fn critic_phase(
    c: &mut CriticNet,
    model: &ModelPair,
    bp: &Batch,
    bq: &Batch,
    n_critic: usize,
    opt: &mut Adam,
    diag: &mut TrainDiagnostics,
    track_sigma: bool,
    at: Where,
) -> Result<()> {
    let zp = model.embed(&bp.x)?;
    let zq = model.embed(&bq.x)?;
    let (cp, cq) = if c.kind == CriticKind::Marginal {
        (
            Tensor::zeros(&[zp.rows(), 1]),
            Tensor::zeros(&[zq.rows(), 1]),
        )
    } else {
        (
            bp.conditionals(&model.classify(&zp)?),
            bq.conditionals(&model.classify(&zq)?),
        )
    };
    let mut trace = Vec::with_capacity(n_critic);
    for _ in 0..n_critic {
        let mut tape = Tape::new();
        let vars = c.net.register(&mut tape, true);
        let (a, b) = (tape.constant(zp.clone()), tape.constant(zq.clone()));
        let (ca, cb) = (tape.constant(cp.clone()), tape.constant(cq.clone()));
        let ld = c.loss_on_tape(&mut tape, &vars, a, b, ca, cb)?;
        let value = tape.value(ld).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "critic loss at epoch {}, batch {}",
                at.epoch, at.batch
            )));
        }
        trace.push(value);
        let neg = tape.scale(ld, -1.0);
        let mut grads = tape.backward(neg)?;
        let g = c.net.collect_grads(&mut grads, &vars);
        opt.step(c.net.params_mut(), &g);
        c.net.refine_spectral();
        if track_sigma {
            let (lo, hi) = sigma_extremes(c);
            diag.sigma_min = Some(diag.sigma_min.map_or(lo, |m| m.min(lo)));
            diag.sigma_max = Some(diag.sigma_max.map_or(hi, |m| m.max(hi)));
        }
    }
    diag.critic_batches += 1;
    if trace.windows(2).all(|w| w[1] >= w[0]) {
        diag.critic_ascent_batches += 1;
    }
    Ok(())
}

struct EpochTotals {
    c_p: (f64, usize),
    c_q: (f64, usize),
    d: (f64, usize),
}

/// Runs the configured number of epochs from an existing state.
#[allow(clippy::too_many_arguments)]
fn run_epochs(
    config: &TrainConfig,
    weights: &ObjectiveWeights,
    model: &mut ModelPair,
    critic: &mut Option<CriticNet>,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
    epochs: usize,
    stream: u64,
    track_sigma: bool,
) -> Result<(MetricsLog, TrainDiagnostics)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, stream));
    let mut opt = Adam::new(config.lr, config.beta1, config.beta2);
    let mut critic_opt = Adam::new(config.lr, config.critic_beta1, config.beta2);
    let mut log = MetricsLog::default();
    let mut diag = TrainDiagnostics::default();
    let monitor = (config.monitor_subsample > 0).then(|| {
        (
            subsample(
                data_p,
                config.monitor_subsample,
                derive_seed(config.seed, 31),
            ),
            subsample(
                data_q,
                config.monitor_subsample,
                derive_seed(config.seed, 32),
            ),
        )
    });
    let bs = config.batch_size;
    let longest = data_p.len().max(data_q.len());
    let n_batches = longest.div_ceil(bs);
    for epoch in 1..=epochs {
        let mut perm_p: Vec<usize> = (0..data_p.len()).collect();
        let mut perm_q: Vec<usize> = (0..data_q.len()).collect();
        perm_p.shuffle(&mut rng);
        perm_q.shuffle(&mut rng);
        let mut totals = EpochTotals {
            c_p: (0.0, 0),
            c_q: (0.0, 0),
            d: (0.0, 0),
        };
        for b in 0..n_batches {
            let start = b * bs;
            let size = bs.min(longest - start);
            let bp = batch(data_p, &perm_p, start, size)?;
            let bq = batch(data_q, &perm_q, start, size)?;

            if let Some(c) = critic.as_mut() {
                let ctx = Where { epoch, batch: b };
                critic_phase(
                    c,
                    model,
                    &bp,
                    &bq,
                    config.n_critic,
                    &mut critic_opt,
                    &mut diag,
                    track_sigma,
                    ctx,
                )?;
            }

            let mut tape = Tape::new();
            let graph = record_objective(&mut tape, model, critic.as_ref(), &bp, &bq, weights)?;
            let loss = tape.value(graph.loss_min).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective at epoch {epoch}, batch {b}: L_c^P={:?} L_c^Q={:?} L_d={} EntMin={}",
                    graph.loss_c_p, graph.loss_c_q, graph.loss_d, graph.entmin
                )));
            }
            for (slot, v) in [
                (&mut totals.c_p, graph.loss_c_p),
                (&mut totals.c_q, graph.loss_c_q),
            ] {
                match v {
                    Some(v) => {
                        slot.0 += v;
                        slot.1 += 1;
                    }
                    None => diag.skipped_classification_terms += 1,
                }
            }
            if critic.is_some() {
                totals.d.0 += graph.loss_d;
                totals.d.1 += 1;
            }
            let mut grads = tape.backward(graph.loss_min)?;
            let mut g = model
                .feature_extractor
                .collect_grads(&mut grads, &graph.feature_vars);
            g.extend(
                model
                    .classifier
                    .collect_grads(&mut grads, &graph.classifier_vars),
            );
            let mut params = model.feature_extractor.params_mut();
            params.extend(model.classifier.params_mut());
            opt.step(params, &g);
            if !model.all_finite() {
                return Err(Error::NonFinite(format!(
                    "model parameters after epoch {epoch}, batch {b}"
                )));
            }
        }
        if let Some(c) = critic.as_mut() {
            c.net.refine_spectral();
        }
        let mean = |(s, n): (f64, usize)| if n > 0 { s / n as f64 } else { 0.0 };
        let acc = |d: &DatasetSplit| {
            if d.labeled_count() > 0 {
                accuracy(model, d)
            } else {
                Ok(0.0)
            }
        };
        let w_dist = match &monitor {
            Some((mp, mq)) => Some(ot::w1(
                &representation_joint(model, mp)?,
                &representation_joint(model, mq)?,
                config.label_scale,
            )?),
            None => None,
        };
        log.records.push(EpochRecord {
            epoch,
            loss_c_p: mean(totals.c_p),
            loss_c_q: mean(totals.c_q),
            loss_d: mean(totals.d),
            acc_p: acc(data_p)?,
            acc_q: acc(data_q)?,
            w_dist,
        });
    }
    Ok((log, diag))
}

/// Builds fresh networks and runs the alternating min-max loop: per batch,
/// `n_critic` ascent steps on `L_d` over the critic (one power step each),
/// then one descent step on the combined objective over `F` and `C`.
pub fn train(
    config: &TrainConfig,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
) -> Result<TrainOutcome> {
    train_with_diagnostics(config, data_p, data_q, false)
}

/// [`train`] that additionally records spectral norms after every critic step.
pub fn train_with_diagnostics(
    config: &TrainConfig,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
    track_sigma: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    let k = check_pair(data_p, data_q)?;
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 10));
    let mut model = ModelPair::build(
        data_p.dim(),
        k,
        config.feature_hidden,
        config.feature_dim,
        config.classifier_hidden,
        config.leaky_slope,
        &mut init,
    )?;
    let mut critic = CriticNet::build(
        config.critic_kind,
        config.feature_dim,
        k,
        config.critic_hidden,
        config.label_scale,
        &mut init,
    )?;
    let weights = config.weights();
    let (log, diagnostics) = run_epochs(
        config,
        &weights,
        &mut model,
        &mut critic,
        data_p,
        data_q,
        config.epochs,
        11,
        track_sigma,
    )?;
    Ok(TrainOutcome {
        model,
        critic,
        log,
        diagnostics,
    })
}

/// Default classification weights: 0.75 on the domain with the higher
/// training error, 0.25 on the other (0.25/0.75 on ties).
pub fn default_domain_weights(
    model: &ModelPair,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
) -> Result<(f64, f64)> {
    let err_p = 1.0 - accuracy(model, data_p)?;
    let err_q = 1.0 - accuracy(model, data_q)?;
    Ok(if err_p > err_q {
        (0.75, 0.25)
    } else {
        (0.25, 0.75)
    })
}

/// One extra epoch without the critic term and with per-domain weights on
/// the classification losses.
pub fn fine_tune(
    model: &ModelPair,
    config: &TrainConfig,
    data_p: &DatasetSplit,
    data_q: &DatasetSplit,
    domain_weights: Option<(f64, f64)>,
) -> Result<ModelPair> {
    config.validate()?;
    check_pair(data_p, data_q)?;
    if model.input_dim() != data_p.dim() {
        return Err(Error::Dimension(
            "model input does not match the data".into(),
        ));
    }
    let (wp, wq) = match domain_weights {
        Some(w) => w,
        None => default_domain_weights(model, data_p, data_q)?,
    };
    if !(wp >= 0.0 && wq >= 0.0 && wp.is_finite() && wq.is_finite()) {
        return Err(Error::InvalidParam(
            "domain weights must be nonnegative".into(),
        ));
    }
    let weights = ObjectiveWeights {
        w_critic: 0.0,
        domain_p: wp,
        domain_q: wq,
        ..config.weights()
    };
    let mut tuned = model.clone();
    let mut cfg = config.clone();
    cfg.monitor_subsample = 0;
    run_epochs(
        &cfg, &weights, &mut tuned, &mut None, data_p, data_q, 1, 12, false,
    )?;
    Ok(tuned)
}
