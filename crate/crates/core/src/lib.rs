//! Variational mixtures of hypernetwork-generated implicit neural
//! representations.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); the `*32` and `*64`
//! aliases below fix the scalar type.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod elbo;
pub mod encoder;
pub mod error;
pub mod flow;
pub mod graph;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod pointcloud;
pub mod render;
pub mod rng;
pub mod run;
pub mod scalar;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use data::{synthesize_toy_dataset, Dataset};
pub use elbo::ElboTerms;
pub use error::{Result, VamohError};
pub use likelihood::LikelihoodFamily;
pub use model::{ModelSpec, VamohModel};
pub use pointcloud::{GridSpec, PointCloud};
pub use scalar::Scalar;
pub use tasks::{CategoricalMode, TaskOptions};
pub use tensor::Matrix;
pub use train::{Adam, EpochMetrics, TrainConfig};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type PointCloud64 = PointCloud<f64>;
pub type PointCloud32 = PointCloud<f32>;
pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type Model64 = VamohModel<f64>;
pub type Model32 = VamohModel<f32>;
