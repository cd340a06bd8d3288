//! The full model: parameters, frozen Fourier features and the networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoded, MixtureDecoder};
use crate::encoder::{CategoricalEncoder, CategoricalPosterior, GaussianPosterior, PointConvLayerSpec, SetEncoder};
use crate::error::{Result, VamohError};
use crate::flow::{FlowParams, FlowPrior};
use crate::graph::{Graph, Var};
use crate::likelihood::LikelihoodFamily;
use crate::params::ParamStore;
use crate::pointcloud::{PointCloud, RffEncoder};
use crate::rng::{substream, STREAM_INIT};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Architecture of a model; everything needed to rebuild it from a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub coord_dim: usize,
    pub feature_dim: usize,
    pub dim_z: usize,
    pub k: usize,
    pub generator_layers: Vec<usize>,
    pub hypernet_layers: Vec<usize>,
    pub categorical_layers: Vec<usize>,
    pub rff_m: usize,
    pub rff_sigma: f64,
    pub likelihood: LikelihoodFamily,
    pub encoder_layers: Vec<PointConvLayerSpec>,
    pub flow_layers: usize,
    pub flow_init_scale: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("coord_dim", self.coord_dim),
            ("feature_dim", self.feature_dim),
            ("dim_z", self.dim_z),
            ("K", self.k),
            ("generator.rff.m", self.rff_m),
            ("flow.T", self.flow_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(VamohError::Config(format!("model.{name} must be positive")));
            }
        }
        if !(self.rff_sigma > 0.0 && self.rff_sigma.is_finite()) {
            return Err(VamohError::Config(format!("model.generator.rff.sigma must be positive, got {}", self.rff_sigma)));
        }
        if !(self.flow_init_scale >= 0.0 && self.flow_init_scale.is_finite()) {
            return Err(VamohError::Config(format!("model.flow.init_scale must be non-negative, got {}", self.flow_init_scale)));
        }
        for (name, list) in [
            ("generator.layers", &self.generator_layers),
            ("hypernetwork.layers", &self.hypernet_layers),
            ("categorical_encoder.layers", &self.categorical_layers),
        ] {
            if list.contains(&0) {
                return Err(VamohError::Config(format!("model.{name} entries must be positive")));
            }
        }
        if self.encoder_layers.is_empty() {
            return Err(VamohError::Config("model.encoder needs at least one stage".into()));
        }
        for (i, l) in self.encoder_layers.iter().enumerate() {
            l.validate()?;
            if i > 0 {
                let prev = self.encoder_layers[i - 1].centroids;
                if l.centroids > prev || l.neighbors > prev {
                    return Err(VamohError::Config(format!(
                        "model.encoder stage {i} needs at most {prev} centroids and neighbors"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Model parameters plus the network structure that reads them.
#[derive(Clone, Debug)]
pub struct VamohModel<T: Scalar> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
    pub rff: RffEncoder<T>,
    pub encoder_z: SetEncoder,
    pub encoder_c: CategoricalEncoder,
    pub decoder: MixtureDecoder,
    pub flow: FlowParams,
    /// Whether the planar layers take part in the prior.
    pub flow_enabled: bool,
}

impl<T: Scalar> VamohModel<T> {
    /// Builds and initializes a model from the `init` stream of `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, STREAM_INIT, 0);
        Self::with_rng(spec, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let rff = RffEncoder::sample(spec.rff_m, spec.coord_dim, spec.rff_sigma, rng)?;
        let rff_dim = rff.output_dim();
        let mut params = ParamStore::new();
        let encoder_z =
            SetEncoder::new(&mut params, &spec.encoder_layers, spec.coord_dim, spec.feature_dim, spec.dim_z, rng)?;
        let encoder_c = CategoricalEncoder::new(
            &mut params,
            spec.dim_z,
            rff_dim,
            spec.feature_dim,
            &spec.categorical_layers,
            spec.k,
            rng,
        );
        let decoder = MixtureDecoder::new(
            &mut params,
            spec.k,
            spec.dim_z,
            rff_dim,
            spec.feature_dim,
            &spec.generator_layers,
            &spec.hypernet_layers,
            &spec.categorical_layers,
            spec.likelihood,
            rng,
        )?;
        let flow = FlowParams::new(&mut params, spec.dim_z, spec.flow_layers, spec.flow_init_scale, rng)?;
        Ok(Self { spec, params, rff, encoder_z, encoder_c, decoder, flow, flow_enabled: false })
    }

    pub fn dim_z(&self) -> usize {
        self.spec.dim_z
    }

    pub fn num_components(&self) -> usize {
        self.spec.k
    }

    pub fn min_points(&self) -> usize {
        self.encoder_z.min_points()
    }

    /// Current prior as plain values.
    pub fn prior(&self) -> FlowPrior<T> {
        self.flow.values(&self.params, self.flow_enabled)
    }

    pub fn encode_coords(&self, coords: &Matrix<T>) -> Result<Matrix<T>> {
        if coords.cols() != self.spec.coord_dim {
            return Err(VamohError::Dimension(format!(
                "expected coordinates of dim {}, got {}",
                self.spec.coord_dim,
                coords.cols()
            )));
        }
        self.rff.encode_batch(coords)
    }

    fn check_cloud(&self, cloud: &PointCloud<T>) -> Result<()> {
        if cloud.coord_dim() != self.spec.coord_dim || cloud.feature_dim() != self.spec.feature_dim {
            return Err(VamohError::Dimension(format!(
                "model expects {}-d coordinates and {}-d features, got {} and {}",
                self.spec.coord_dim,
                self.spec.feature_dim,
                cloud.coord_dim(),
                cloud.feature_dim()
            )));
        }
        if cloud.len() < self.min_points() {
            return Err(VamohError::InsufficientPoints { needed: self.min_points(), got: cloud.len() });
        }
        Ok(())
    }

    pub fn encode_z(&self, cloud: &PointCloud<T>) -> Result<GaussianPosterior<T>> {
        self.check_cloud(cloud)?;
        self.encoder_z.encode(&self.params, cloud)
    }

    pub fn encode_c(&self, z: &[T], cloud: &PointCloud<T>) -> Result<CategoricalPosterior<T>> {
        if z.len() != self.spec.dim_z {
            return Err(VamohError::Dimension(format!("z of dim {} for dim_z {}", z.len(), self.spec.dim_z)));
        }
        self.check_cloud_dims(cloud)?;
        let mut g = Graph::inference(&self.params);
        let zv = g.constant(Matrix::row_vector(z));
        let rff = g.constant(self.encode_coords(cloud.coords())?);
        let lq = self.encoder_c.forward(&mut g, zv, rff, cloud.features())?;
        Ok(CategoricalPosterior::from_log_probs(g.value(lq)))
    }

    fn check_cloud_dims(&self, cloud: &PointCloud<T>) -> Result<()> {
        if cloud.coord_dim() != self.spec.coord_dim || cloud.feature_dim() != self.spec.feature_dim {
            return Err(VamohError::Dimension(format!(
                "model expects {}-d coordinates and {}-d features",
                self.spec.coord_dim, self.spec.feature_dim
            )));
        }
        Ok(())
    }

    /// Decoder outputs for latent `z` at arbitrary coordinates.
    pub fn decode(&self, z: &[T], coords: &Matrix<T>) -> Result<Decoded<T>> {
        if z.len() != self.spec.dim_z {
            return Err(VamohError::Dimension(format!("z of dim {} for dim_z {}", z.len(), self.spec.dim_z)));
        }
        let mut g = Graph::inference(&self.params);
        let zv = g.constant(Matrix::row_vector(z));
        let rff = g.constant(self.encode_coords(coords)?);
        let (mus, log_pi) = self.decoder.forward(&mut g, zv, rff);
        Ok(Decoded {
            mu: mus.iter().map(|&m| g.value(m).clone()).collect(),
            pi: g.value(log_pi).map(|v| v.exp()),
        })
    }

    /// Flattened INR parameters of component `k` for latent `z`.
    pub fn hypernet_forward(&self, z: &[T], k: usize) -> Result<Vec<T>> {
        if k >= self.spec.k {
            return Err(VamohError::InvalidParameter(format!("component {k} out of range for K = {}", self.spec.k)));
        }
        let mut g = Graph::inference(&self.params);
        let zv = g.constant(Matrix::row_vector(z));
        let theta = self.decoder.hypernet_forward(&mut g, zv, k);
        Ok(g.value(theta).data().to_vec())
    }

    /// Graph-level decode used by training: `(μ per component, log π)`.
    pub fn decode_graph(&self, g: &mut Graph<'_, T>, z: Var, rff: Var) -> (Vec<Var>, Var) {
        self.decoder.forward(g, z, rff)
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Scalar>(&self) -> VamohModel<U> {
        let mut params = ParamStore::new();
        for e in self.params.entries() {
            params.add(e.name.clone(), e.group, e.value.cast());
        }
        VamohModel {
            spec: self.spec.clone(),
            params,
            rff: RffEncoder::from_projection(self.rff.projection().cast(), self.rff.sigma()),
            encoder_z: self.encoder_z.clone(),
            encoder_c: self.encoder_c.clone(),
            decoder: self.decoder.clone(),
            flow: self.flow.clone(),
            flow_enabled: self.flow_enabled,
        }
    }
}
