//! JSON parameter checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer, Mlp};
use super::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "jw-ckpt-1";

/// Serialized form of one [`DenseLayer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    /// `[out, in]`
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub u: Option<Vec<f64>>,
}

impl From<&DenseLayer> for LayerRecord {
    fn from(l: &DenseLayer) -> Self {
        LayerRecord {
            shape: [l.out_dim(), l.in_dim()],
            weights: l.weight.data().to_vec(),
            bias: l.bias.data().to_vec(),
            activation: l.activation,
            u: l.spectral_u.clone(),
        }
    }
}

impl TryFrom<LayerRecord> for DenseLayer {
    type Error = Error;

    fn try_from(r: LayerRecord) -> Result<Self> {
        let [out, inp] = r.shape;
        let weight = Tensor::matrix(out, inp, r.weights)?;
        let mut layer = DenseLayer::from_parts(weight, r.bias, r.activation)?;
        if let Some(u) = &r.u {
            if u.len() != out {
                return Err(Error::Dimension(format!(
                    "spectral vector of length {} for {} outputs",
                    u.len(),
                    out
                )));
            }
        }
        if !layer.weight.all_finite() || !layer.bias.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        layer.spectral_u = r.u;
        Ok(layer)
    }
}

pub fn mlp_to_records(mlp: &Mlp) -> Vec<LayerRecord> {
    mlp.layers.iter().map(LayerRecord::from).collect()
}

pub fn mlp_from_records(records: Vec<LayerRecord>) -> Result<Mlp> {
    Mlp::new(
        records
            .into_iter()
            .map(DenseLayer::try_from)
            .collect::<Result<_>>()?,
    )
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    version: String,
    layers: Vec<LayerRecord>,
}

/// Fails with [`Error::Version`] unless `found` is the supported tag.
pub fn check_version(found: &str) -> Result<()> {
    if found == CHECKPOINT_VERSION {
        Ok(())
    } else {
        Err(Error::Version {
            expected: CHECKPOINT_VERSION.into(),
            found: found.into(),
        })
    }
}

pub fn save_mlp(mlp: &Mlp, path: &Path) -> Result<()> {
    let file = NetworkFile {
        version: CHECKPOINT_VERSION.into(),
        layers: mlp_to_records(mlp),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?).map_err(|e| Error::io(path, e))
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("version").and_then(|v| v.as_str()).unwrap_or("");
    check_version(version)?;
    let file: NetworkFile = serde_json::from_value(raw)?;
    mlp_from_records(file.layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = Mlp::build(
            &[2, 7, 3],
            Activation::leaky(),
            Activation::Softmax,
            true,
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        save_mlp(&m, &p).unwrap();
        let back = load_mlp(&p).unwrap();
        assert_eq!(m, back);
        let x = Tensor::matrix(1, 2, vec![0.3, -1.7]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
    }

    #[test]
    fn wrong_version_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, r#"{"version":"jw-ckpt-0","layers":[]}"#).unwrap();
        assert!(matches!(load_mlp(&p), Err(Error::Version { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_mlp(Path::new("/nonexistent/ckpt.json")),
            Err(Error::Io { .. })
        ));
    }
}
