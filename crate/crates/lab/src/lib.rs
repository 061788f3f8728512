//! Std companion to `uda-core`: CSV and JSON file formats, bit-exact model
//! checkpoints, config files with dotted overrides, a threaded metrics
//! writer, and the `uda-lab` command line.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod metrics;

pub use error::{LabError, Result};

use std::path::Path;

use uda_core::datasets::{DataModality, DatasetMeta, DomainPair};

use crate::checkpoint::Checkpoint;

/// Dataset for a checkpoint: the CSV at `data` when given, else regenerated
/// from the spec recorded in the checkpoint.
pub fn dataset_for(ckpt: &Checkpoint, data: Option<&Path>) -> Result<DomainPair> {
    let arch = &ckpt.architecture;
    match data {
        Some(path) => {
            let modality = match ckpt.dataset.as_ref().and_then(|m| m.spec.as_ref()) {
                Some(spec) => spec.modality(),
                None => DataModality::Points { dim: arch.input_dim },
            };
            let meta = ckpt.dataset.clone().unwrap_or(DatasetMeta { spec: None, seed: 0 });
            formats::load_pair(path, modality, arch.num_classes, meta)
        }
        None => {
            let meta = ckpt
                .dataset
                .as_ref()
                .ok_or_else(|| LabError::Config("checkpoint records no dataset; pass --data".into()))?;
            let spec = meta
                .spec
                .as_ref()
                .ok_or_else(|| LabError::Config("checkpoint records no dataset spec; pass --data".into()))?;
            Ok(spec.generate(meta.seed)?)
        }
    }
}
