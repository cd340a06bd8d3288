//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic, little-endian `u32` version, then a bincode payload.
//! Values are stored as `f64`, which holds every `f32` and `f64` exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Result, VamohError};
use crate::model::{ModelSpec, VamohModel};
use crate::params::ParamGroup;
use crate::pointcloud::RffEncoder;
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::train::Adam;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"VAMOHCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl StoredMatrix {
    pub fn from_matrix<T: Scalar>(m: &Matrix<T>) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: m.data().iter().map(|v| v.as_f64()).collect() }
    }

    pub fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| T::lit(v)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredParam {
    pub name: String,
    pub group: ParamGroup,
    pub value: StoredMatrix,
}

/// Everything needed to resume training or run inference.
///
/// Random streams are derived from `(seed, stream, index)`, so `seed` and
/// `global_step` together are the generator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: Vec<StoredParam>,
    pub rff_projection: StoredMatrix,
    pub rff_sigma: f64,
    pub flow_enabled: bool,
    pub epoch: usize,
    pub global_step: u64,
    pub seed: u64,
    /// TOML snapshot of the run configuration, when trained from one.
    pub config: Option<String>,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &VamohModel<T>, epoch: usize, seed: u64) -> Self {
        Self {
            spec: model.spec.clone(),
            params: model
                .params
                .entries()
                .iter()
                .map(|e| StoredParam { name: e.name.clone(), group: e.group, value: StoredMatrix::from_matrix(&e.value) })
                .collect(),
            rff_projection: StoredMatrix::from_matrix(model.rff.projection()),
            rff_sigma: model.rff.sigma(),
            flow_enabled: model.flow_enabled,
            epoch,
            global_step: 0,
            seed,
            config: None,
            optimizer: None,
        }
    }

    /// Rebuilds the model; every stored value is restored exactly.
    pub fn model<T: Scalar>(&self) -> Result<VamohModel<T>> {
        let mut model = VamohModel::<T>::new(self.spec.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(VamohError::Format(format!(
                "checkpoint has {} parameters, architecture has {}",
                self.params.len(),
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, stored) in ids.into_iter().zip(&self.params) {
            let entry = model.params.entry(id);
            if entry.name != stored.name || entry.group != stored.group {
                return Err(VamohError::Format(format!("checkpoint parameter {} does not match {}", stored.name, entry.name)));
            }
            let value = stored.value.to_matrix::<T>()?;
            if value.shape() != entry.value.shape() {
                return Err(VamohError::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    stored.name,
                    value.shape(),
                    entry.value.shape()
                )));
            }
            *model.params.get_mut(id) = value;
        }
        let projection = self.rff_projection.to_matrix::<T>()?;
        if projection.shape() != model.rff.projection().shape() {
            return Err(VamohError::Format("Fourier projection has the wrong shape".into()));
        }
        model.rff = RffEncoder::from_projection(projection, self.rff_sigma);
        model.flow_enabled = self.flow_enabled;
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let payload = bincode::serialize(self).map_err(|e| VamohError::Format(format!("checkpoint encoding: {e}")))?;
        out.extend(payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || bytes[..8] != CHECKPOINT_MAGIC {
            return Err(VamohError::Format("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("four bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(VamohError::Format(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        bincode::deserialize(&bytes[12..]).map_err(|e| VamohError::Format(format!("checkpoint decoding: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_foreign_and_future_files() {
        assert!(matches!(Checkpoint::from_bytes(b"hello world!"), Err(VamohError::Format(_))));
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported checkpoint version"));
    }
}
