use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, ModelPair};
use crate::distributions::DatasetSplit;
use crate::nn::{check_version, mlp_from_records, mlp_to_records, LayerRecord, CHECKPOINT_VERSION};
use crate::objective::{CriticKind, CriticNet};
use crate::{Error, Result};

/// Per-epoch training trace, stored as JSON lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(MetricsLog { records })
    }
}

/// On-disk bundle of a trained model and its critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerCheckpoint {
    pub version: String,
    pub feature_extractor: Vec<LayerRecord>,
    pub classifier: Vec<LayerRecord>,
    pub critic: Option<Vec<LayerRecord>>,
    pub critic_kind: CriticKind,
    pub label_scale: f64,
}

pub fn save_checkpoint(model: &ModelPair, critic: Option<&CriticNet>, path: &Path) -> Result<()> {
    let ckpt = TrainerCheckpoint {
        version: CHECKPOINT_VERSION.into(),
        feature_extractor: mlp_to_records(&model.feature_extractor),
        classifier: mlp_to_records(&model.classifier),
        critic: critic.map(|c| mlp_to_records(&c.net)),
        critic_kind: critic.map_or(CriticKind::None, |c| c.kind),
        label_scale: critic.map_or(1.0, |c| c.label_scale),
    };
    fs::write(path, serde_json::to_string_pretty(&ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelPair, Option<CriticNet>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    check_version(raw.get("version").and_then(|v| v.as_str()).unwrap_or(""))?;
    let ckpt: TrainerCheckpoint = serde_json::from_value(raw)?;
    let model = ModelPair::new(
        mlp_from_records(ckpt.feature_extractor)?,
        mlp_from_records(ckpt.classifier)?,
    )?;
    let critic = match (ckpt.critic, ckpt.critic_kind) {
        (None, CriticKind::None) => None,
        (Some(layers), kind) if kind != CriticKind::None => Some(CriticNet::from_net(
            kind,
            mlp_from_records(layers)?,
            ckpt.label_scale,
        )?),
        _ => {
            return Err(Error::Contract(
                "checkpoint critic layers and critic_kind disagree".into(),
            ))
        }
    };
    Ok((model, critic))
}

/// CSV rows `domain,label,z0,..` for every point; unlabeled rows get -1.
pub fn export_embeddings(model: &ModelPair, datasets: &[&DatasetSplit], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let d = model.feature_dim();
    let header: Vec<String> = ["domain".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("z{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for ds in datasets {
        let z = model.embed(&ds.features)?;
        for (i, label) in ds.labels.iter().enumerate() {
            let label = label.map_or(-1, |l| l as i64);
            write!(w, "{},{}", ds.domain, label).map_err(io)?;
            for v in z.row(i) {
                // Shortest representation that parses back to the same f64.
                write!(w, ",{v:?}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{gen_two_moons_domains, Domain};
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> ModelPair {
        ModelPair::build(2, 2, 8, 3, 5, 0.1, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = model();
        let c = CriticNet::build(
            CriticKind::Joint,
            3,
            2,
            6,
            2.0,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap()
        .unwrap();
        save_checkpoint(&m, Some(&c), &p).unwrap();
        let (m2, c2) = load_checkpoint(&p).unwrap();
        assert_eq!(m, m2);
        assert_eq!(Some(c), c2);
        let x = Tensor::from_rows(&[vec![0.3, -1.7], vec![2.0, 0.1]]).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), m2.predict_proba(&x).unwrap());
    }

    #[test]
    fn checkpoint_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        assert!(matches!(load_checkpoint(&p), Err(Error::Io { .. })));
        save_checkpoint(&model(), None, &p).unwrap();
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("jw-ckpt-1", "jw-ckpt-0");
        fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Version { .. })));
        fs::write(&p, "{ not json").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.csv");
        let (a, b) = gen_two_moons_domains(20, 35.0, 0.1, 0.1, 0.1, 0).unwrap();
        let m = model();
        export_embeddings(&m, &[&a, &b], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 41);
        assert_eq!(lines[0], "domain,label,z0,z1,z2");
        let z = m.embed(&a.features).unwrap();
        let first: Vec<f64> = lines[1]
            .split(',')
            .skip(2)
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(first, z.row(0));
        assert!(lines[1].starts_with(&format!("{},", Domain::P)));
    }

    #[test]
    fn metrics_log_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        let log = MetricsLog {
            records: vec![EpochRecord {
                epoch: 1,
                loss_c_p: 0.5,
                loss_c_q: 0.25,
                loss_d: 0.1,
                acc_p: 1.0,
                acc_q: 0.5,
                w_dist: None,
            }],
        };
        log.write_jsonl(&p).unwrap();
        let line = fs::read_to_string(&p).unwrap();
        assert!(line.contains("\"loss_c_P\":0.5") && line.contains("\"w_dist\":null"));
        assert_eq!(MetricsLog::read_jsonl(&p).unwrap(), log);
    }
}
