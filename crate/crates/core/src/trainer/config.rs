use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::objective::{CriticKind, ObjectiveWeights};
use crate::{Error, Result};

/// Hyperparameters of one training run. Every field has a default, so a
/// config file only lists what it overrides; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub critic_kind: CriticKind,
    pub w_classifier: f64,
    pub w_critic: f64,
    pub w_entmin: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// First-moment decay of the critic's optimizer.
    pub critic_beta1: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_critic: usize,
    pub seed: u64,
    pub label_scale: f64,
    /// Width of the two hidden layers of the feature extractor.
    pub feature_hidden: usize,
    /// Dimension of the representation `z`.
    pub feature_dim: usize,
    pub classifier_hidden: usize,
    pub critic_hidden: usize,
    pub leaky_slope: f64,
    /// Points per domain in the evaluation transport problem.
    pub eval_subsample: usize,
    /// Points per domain for the per-epoch `w_dist` trace; 0 disables it.
    pub monitor_subsample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            critic_kind: CriticKind::ClassDependent,
            w_classifier: 1.0,
            w_critic: 0.1,
            w_entmin: 0.0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            critic_beta1: 0.5,
            epochs: 50,
            batch_size: 64,
            n_critic: 5,
            seed: 0,
            label_scale: 1.0,
            feature_hidden: 64,
            feature_dim: 16,
            classifier_hidden: 32,
            critic_hidden: 64,
            leaky_slope: crate::nn::DEFAULT_LEAKY_SLOPE,
            eval_subsample: 500,
            monitor_subsample: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        for (name, v) in [
            ("w_classifier", self.w_classifier),
            ("w_critic", self.w_critic),
            ("w_entmin", self.w_entmin),
            ("lr", self.lr),
            ("label_scale", self.label_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, b) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("critic_beta1", self.critic_beta1),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_critic", self.n_critic),
            ("feature_hidden", self.feature_hidden),
            ("feature_dim", self.feature_dim),
            ("classifier_hidden", self.classifier_hidden),
            ("critic_hidden", self.critic_hidden),
            ("eval_subsample", self.eval_subsample),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope <= 1.0) {
            return bad(format!(
                "leaky_slope must lie in [0, 1], got {}",
                self.leaky_slope
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            w_classifier: self.w_classifier,
            w_critic: if self.critic_kind == CriticKind::None {
                0.0
            } else {
                self.w_critic
            },
            w_entmin: self.w_entmin,
            domain_p: 1.0,
            domain_q: 1.0,
        }
    }

    /// Parses JSON (`.json`) or TOML (anything else).
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: TrainConfig = if is_json {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Parse {
                path: path.into(),
                line: e
                    .span()
                    .map_or(0, |s| text[..s.start].matches('\n').count() + 1),
                message: e.message().to_string(),
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        fs::write(&p, "critic_kind = \"marginal\"\nepochs = 3\n").unwrap();
        let c = TrainConfig::from_path(&p).unwrap();
        assert_eq!(c.critic_kind, CriticKind::Marginal);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"epoch": 3}"#).unwrap();
        assert!(TrainConfig::from_path(&p).is_err());
        fs::write(&p, r#"{"epochs": 0}"#).unwrap();
        assert!(matches!(
            TrainConfig::from_path(&p),
            Err(Error::InvalidParam(_))
        ));
    }
}
