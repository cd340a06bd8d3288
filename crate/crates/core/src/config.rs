//! Run configuration: TOML schema, dotted-path overrides, validation and hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::toy_likelihood;
use crate::encoder::PointConvLayerSpec;
use crate::error::{Result, VamohError};
use crate::likelihood::LikelihoodFamily;
use crate::model::ModelSpec;
use crate::tasks::CategoricalMode;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub train: TrainBlock,
    pub data: DataBlock,
    #[serde(default)]
    pub io: IoBlock,
    #[serde(default)]
    pub sampling: SamplingBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub dim_z: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Defaults to the synthesizer's family; required for container data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<LikelihoodFamily>,
    pub encoder: EncoderBlock,
    pub categorical_encoder: LayersBlock,
    pub hypernetwork: LayersBlock,
    pub generator: GeneratorBlock,
    pub flow: FlowBlock,
}

/// PointConv stages as parallel per-stage lists; `h_weights` is shared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderBlock {
    pub h_weights: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub centroids: Vec<usize>,
    pub out_channels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayersBlock {
    pub layers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    pub layers: Vec<usize>,
    pub rff: RffBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffBlock {
    pub m: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    #[serde(rename = "T")]
    pub t: usize,
    /// Defaults to a tenth of the epochs, rounded down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<usize>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub epochs: usize,
    pub bs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Global gradient-norm limit; `inf` disables clipping.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
}

fn default_mc_samples() -> usize {
    1
}

fn default_clip_norm() -> f64 {
    10.0
}

/// Either a toy synthesizer (`synth`, `n_samples`, `grid`) or a container `path`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.125
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoBlock {
    pub output_dir: PathBuf,
    /// Epochs between checkpoints; the final epoch is always saved.
    pub checkpoint_interval: usize,
}

impl Default for IoBlock {
    fn default() -> Self {
        Self { output_dir: PathBuf::from("runs"), checkpoint_interval: 1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingBlock {
    #[serde(default)]
    pub categorical_mode: CategoricalMode,
}

/// Coordinate and feature dimensions of each toy synthesizer.
pub fn toy_dims(name: &str) -> Result<(usize, usize)> {
    match name {
        "shapes2d" => Ok((2, 3)),
        "blobs" => Ok((2, 1)),
        "voxel-boxes" => Ok((3, 1)),
        other => Err(VamohError::UnknownDataset(other.into())),
    }
}

/// Sets `path` (dot-separated) in `root` to `raw`, read as a TOML value when
/// it parses as one and as a string otherwise.
pub fn apply_override(root: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(VamohError::Config(format!("malformed override path '{path}'")));
    }
    let value = parse_value(raw);
    let mut table = root;
    for key in &keys[..keys.len() - 1] {
        let entry = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| VamohError::Config(format!("override '{path}': '{key}' is not a table")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Splits `key=value`.
pub fn parse_override(arg: &str) -> Result<(&str, &str)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| VamohError::Config(format!("override '{arg}' is not of the form key=value")))
}

impl RunConfig {
    /// Parses and validates a TOML document after applying `overrides`.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut root: toml::Table =
            text.parse().map_err(|e: toml::de::Error| VamohError::Config(single_line(&e.to_string())))?;
        for o in overrides {
            let (k, v) = parse_override(o)?;
            apply_override(&mut root, k, v)?;
        }
        let cfg: Self = toml::Value::Table(root)
            .try_into()
            .map_err(|e: toml::de::Error| VamohError::Config(single_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VamohError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encoder_layers(&self) -> Result<Vec<PointConvLayerSpec>> {
        let e = &self.model.encoder;
        let n = e.centroids.len();
        if e.neighbors.len() != n || e.out_channels.len() != n {
            return Err(VamohError::Config(format!(
                "model.encoder lists differ in length: centroids {}, neighbors {}, out_channels {}",
                n,
                e.neighbors.len(),
                e.out_channels.len()
            )));
        }
        Ok((0..n)
            .map(|i| PointConvLayerSpec {
                centroids: e.centroids[i],
                neighbors: e.neighbors[i],
                h_weights: e.h_weights.clone(),
                out_channels: e.out_channels[i],
            })
            .collect())
    }

    pub fn likelihood(&self) -> Result<LikelihoodFamily> {
        match (self.model.likelihood, &self.data.synth) {
            (Some(f), _) => Ok(f),
            (None, Some(name)) => toy_likelihood(name),
            (None, None) => Err(VamohError::Config("model.likelihood is required for container data".into())),
        }
    }

    /// Model architecture for data of the given dimensions.
    pub fn model_spec(&self, coord_dim: usize, feature_dim: usize) -> Result<ModelSpec> {
        let m = &self.model;
        let spec = ModelSpec {
            coord_dim,
            feature_dim,
            dim_z: m.dim_z,
            k: m.k,
            generator_layers: m.generator.layers.clone(),
            hypernet_layers: m.hypernetwork.layers.clone(),
            categorical_layers: m.categorical_encoder.layers.clone(),
            rff_m: m.generator.rff.m,
            rff_sigma: m.generator.rff.sigma,
            likelihood: self.likelihood()?,
            encoder_layers: self.encoder_layers()?,
            flow_layers: m.flow.t,
            flow_init_scale: m.flow.init_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.bs,
            learning_rate: t.lr,
            warmup_epochs: self.model.flow.warmup_epochs.unwrap_or_else(|| TrainConfig::default_warmup(t.epochs)),
            dropout_alpha: t.alpha,
            mc_samples: t.mc_samples,
            seed: t.seed,
            gradient_clip_norm: t.clip_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VamohError::Config(m));
        if self.train.epochs == 0 {
            return bad("train.epochs must be positive".into());
        }
        self.train_config().validate()?;
        if self.model.encoder.h_weights.contains(&0) {
            return bad("model.encoder.h_weights entries must be positive".into());
        }
        let (coord_dim, feature_dim) = match (&self.data.synth, &self.data.path) {
            (Some(_), Some(_)) => return bad("data.synth and data.path are mutually exclusive".into()),
            (None, None) => return bad("data needs either synth or path".into()),
            (Some(name), None) => {
                let dims = toy_dims(name)?;
                let grid = self.data.grid.as_ref().ok_or_else(|| VamohError::Config("data.grid is required with data.synth".into()))?;
                if grid.len() != dims.0 || grid.contains(&0) {
                    return bad(format!("data.grid {grid:?} must list {} positive sizes for {name}", dims.0));
                }
                if self.data.n_samples.unwrap_or(0) == 0 {
                    return bad("data.n_samples must be positive with data.synth".into());
                }
                dims
            }
            (None, Some(_)) => (1, 1),
        };
        let first = self.encoder_layers()?.first().map_or(0, |l| l.centroids.max(l.neighbors));
        if let Some(grid) = self.data.grid.as_ref().filter(|_| self.data.synth.is_some()) {
            let points: usize = grid.iter().product();
            if points < first {
                return bad(format!("data.grid has {points} points but the first encoder stage needs {first}"));
            }
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return bad(format!("data.test_fraction must lie in [0, 1), got {}", self.data.test_fraction));
        }
        if self.io.checkpoint_interval == 0 {
            return bad("io.checkpoint_interval must be positive".into());
        }
        self.model_spec(coord_dim, feature_dim).map(|_| ())
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
