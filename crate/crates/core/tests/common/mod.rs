#![allow(dead_code)]

use std::path::PathBuf;

use vamoh::data::synthesize_toy_dataset;
use vamoh::encoder::PointConvLayerSpec;
use vamoh::{Dataset, GridSpec, LikelihoodFamily, ModelSpec, VamohModel};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// dim_z 4, K 2, T 2 on 4×4 RGB grids.
pub fn tiny_spec(k: usize) -> ModelSpec {
    ModelSpec {
        coord_dim: 2,
        feature_dim: 3,
        dim_z: 4,
        k,
        generator_layers: vec![6],
        hypernet_layers: vec![5],
        categorical_layers: vec![5],
        rff_m: 3,
        rff_sigma: 1.0,
        likelihood: LikelihoodFamily::DiscretizedLogistic,
        encoder_layers: vec![PointConvLayerSpec { centroids: 8, neighbors: 4, h_weights: vec![4], out_channels: 5 }],
        flow_layers: 2,
        flow_init_scale: 0.3,
    }
}

/// Slightly larger model for task-level checks on 8×8 grids.
pub fn small_spec(k: usize) -> ModelSpec {
    ModelSpec {
        coord_dim: 2,
        feature_dim: 3,
        dim_z: 6,
        k,
        generator_layers: vec![12, 12],
        hypernet_layers: vec![16],
        categorical_layers: vec![12],
        rff_m: 8,
        rff_sigma: 2.0,
        likelihood: LikelihoodFamily::DiscretizedLogistic,
        encoder_layers: vec![
            PointConvLayerSpec { centroids: 16, neighbors: 6, h_weights: vec![8], out_channels: 8 },
            PointConvLayerSpec { centroids: 4, neighbors: 4, h_weights: vec![8], out_channels: 8 },
        ],
        flow_layers: 3,
        flow_init_scale: 0.3,
    }
}

pub fn shapes(n: usize, side: usize, seed: u64) -> Dataset<f64> {
    let grid = GridSpec::new(vec![side, side]).unwrap();
    synthesize_toy_dataset("shapes2d", n, &grid, seed).unwrap()
}

pub fn model(spec: ModelSpec, seed: u64, flow_enabled: bool) -> VamohModel<f64> {
    let mut m = VamohModel::new(spec, seed).unwrap();
    m.flow_enabled = flow_enabled;
    m
}

/// Central difference of `f` along one parameter scalar.
pub fn central_difference(
    model: &mut VamohModel<f64>,
    id: vamoh::params::ParamId,
    index: usize,
    h: f64,
    f: &dyn Fn(&VamohModel<f64>) -> f64,
) -> f64 {
    let orig = model.params.get(id).data()[index];
    model.params.get_mut(id).data_mut()[index] = orig + h;
    let fp = f(model);
    model.params.get_mut(id).data_mut()[index] = orig - h;
    let fm = f(model);
    model.params.get_mut(id).data_mut()[index] = orig;
    (fp - fm) / (2.0 * h)
}

pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
