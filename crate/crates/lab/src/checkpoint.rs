//! JSON model checkpoints. Every parameter is stored as the hex encoding of
//! its IEEE-754 bit pattern, so a round trip is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uda_core::datasets::DatasetMeta;
use uda_core::nn::{Architecture, ModelBundle};
use uda_core::Tensor;

use crate::error::{LabError, Result};

pub const FORMAT: &str = "uda-lab-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    /// Big-endian hex of `f64::to_bits`, 16 digits per value.
    pub data: Vec<String>,
}

impl StoredTensor {
    pub fn encode(t: &Tensor) -> Self {
        StoredTensor { shape: t.shape().to_vec(), data: t.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect() }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let data = self
            .data
            .iter()
            .map(|s| u64::from_str_radix(s, 16).map(f64::from_bits).map_err(|e| LabError::format("checkpoint tensor", e)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Tensor::new(&self.shape, data)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    /// Dataset the model was trained on, when known.
    pub dataset: Option<DatasetMeta>,
    /// Student parameters (φ, g, discriminator) followed by the teacher's φ
    /// and g, in [`ModelBundle`] order.
    pub tensors: Vec<StoredTensor>,
}

fn all_params(b: &ModelBundle) -> Vec<&Tensor> {
    let mut v = b.student_params();
    if let Some(t) = &b.teacher {
        v.extend(t.phi.params());
        v.extend(t.classifier.params());
    }
    v
}

fn all_params_mut(b: &mut ModelBundle) -> Vec<&mut Tensor> {
    let ModelBundle { phi, classifier, discriminator, teacher } = b;
    let mut v = phi.params_mut();
    v.extend(classifier.params_mut());
    for m in discriminator.mlps_mut() {
        v.extend(m.params_mut());
    }
    if let Some(t) = teacher {
        v.extend(t.phi.params_mut());
        v.extend(t.classifier.params_mut());
    }
    v
}

impl Checkpoint {
    pub fn capture(bundle: &ModelBundle, architecture: &Architecture, dataset: Option<DatasetMeta>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            architecture: architecture.clone(),
            dataset,
            tensors: all_params(bundle).into_iter().map(StoredTensor::encode).collect(),
        }
    }

    /// Rebuilds the bundle from the architecture and stored tensors.
    pub fn restore(&self) -> Result<ModelBundle> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(LabError::format(
                "checkpoint",
                format!("unsupported format {} v{}", self.format, self.version),
            ));
        }
        let mut bundle = ModelBundle::new(&self.architecture, 0)?;
        let slots = all_params_mut(&mut bundle);
        if slots.len() != self.tensors.len() {
            return Err(LabError::format(
                "checkpoint",
                format!("expected {} tensors, found {}", slots.len(), self.tensors.len()),
            ));
        }
        for (k, (slot, stored)) in slots.into_iter().zip(&self.tensors).enumerate() {
            let t = stored.decode()?;
            if t.shape() != slot.shape() {
                return Err(LabError::format(
                    "checkpoint",
                    format!("tensor {k}: shape {:?} does not match {:?}", t.shape(), slot.shape()),
                ));
            }
            *slot = t;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| LabError::format("checkpoint", e))?;
        std::fs::write(path, s + "\n").map_err(|e| LabError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| LabError::format(path.display().to_string(), e))
    }
}
