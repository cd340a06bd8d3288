//! Hypernetworks, the shared INR template and the categorical prior network.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, VamohError};
use crate::graph::{Graph, Var};
use crate::likelihood::{LikelihoodFamily, INITIAL_SCALE};
use crate::nn::{Mlp, LEAKY_SLOPE};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Layer widths of the coordinate network every hypernetwork targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InrTemplate {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl InrTemplate {
    pub fn new(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        Self { input_dim, hidden: hidden.to_vec(), output_dim }
    }

    /// `(fan_in, fan_out)` of every layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Length of the flattened parameter vector: per layer, the row-major
    /// `fan_in×fan_out` weight followed by the bias.
    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Initial flattened parameters: hidden weights from `N(0, 2)` (He scale
    /// after the `1/√fan_in` factor), zero output weights and zero biases, so
    /// every output starts at exactly 0.5.
    pub fn base_parameters<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut out = Vec::with_capacity(self.param_count());
        for (l, &(fi, fo)) in shapes.iter().enumerate() {
            for _ in 0..fi * fo {
                let e: f64 = if l == last { 0.0 } else { StandardNormal.sample(rng) };
                out.push(e * std::f64::consts::SQRT_2);
            }
            out.extend(std::iter::repeat_n(0.0, fo));
        }
        out
    }

    /// Runs the network on `input` (`D×input_dim`) with flattened parameters
    /// `theta` (`1×param_count`). Weights are scaled by `1/√fan_in`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, theta: Var, input: Var) -> Var {
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        let mut h = input;
        let mut offset = 0;
        for (l, &(fi, fo)) in shapes.iter().enumerate() {
            let w = g.slice(theta, offset, fi, fo);
            let w = g.scale(w, T::one() / T::lit(fi as f64).sqrt());
            offset += fi * fo;
            let b = g.slice(theta, offset, 1, fo);
            offset += fo;
            let hw = g.matmul(h, w);
            h = g.add(hw, b);
            h = if l == last { g.sigmoid(h) } else { g.leaky_relu(h, T::lit(LEAKY_SLOPE)) };
        }
        h
    }
}

/// Gain of the hypernetwork head weights; the latent-dependent part of the
/// INR parameters starts small around a shared base network.
pub const HYPER_HEAD_GAIN: f64 = 0.1;

/// MLP from the latent to one component's INR parameters.
#[derive(Clone, Debug)]
pub struct HyperNetwork {
    pub mlp: Mlp,
}

impl HyperNetwork {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        k: usize,
        dim_z: usize,
        hidden: &[usize],
        template: &InrTemplate,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![dim_z];
        widths.extend(hidden);
        widths.push(template.param_count());
        let mlp =
            Mlp::with_output_gain(store, &format!("hyper.{k}"), ParamGroup::Hypernetwork(k), &widths, HYPER_HEAD_GAIN, rng);
        let base = template.base_parameters(rng);
        let bias = store.get_mut(mlp.output_layer().bias);
        for (b, v) in bias.data_mut().iter_mut().zip(base) {
            *b = T::lit(v);
        }
        Self { mlp }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var) -> Var {
        self.mlp.forward(g, z)
    }
}

/// Mixture weights at each coordinate given the latent.
#[derive(Clone, Debug)]
pub struct CategoricalPriorNet {
    pub mlp: Mlp,
}

impl CategoricalPriorNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rff_dim: usize,
        dim_z: usize,
        hidden: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![rff_dim + dim_z];
        widths.extend(hidden);
        widths.push(k);
        Self { mlp: Mlp::with_output_gain(store, "prior_c", ParamGroup::CategoricalPrior, &widths, 0.1, rng) }
    }

    /// Row-wise log-probabilities `D×K` from encoded coordinates and `z` (`1×dim_z`).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, rff: Var, z: Var) -> Var {
        let d = g.shape(rff).0;
        let zr = g.repeat_rows(z, d);
        let input = g.concat_cols(&[rff, zr]);
        let logits = self.mlp.forward(g, input);
        g.log_softmax(logits)
    }
}

/// Decoder outputs at a set of coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded<T> {
    /// One `D×n_y` matrix of likelihood parameters per component.
    pub mu: Vec<Matrix<T>>,
    /// `D×K` prior mixture weights.
    pub pi: Matrix<T>,
}

impl<T: Scalar> Decoded<T> {
    pub fn num_points(&self) -> usize {
        self.pi.rows()
    }

    pub fn num_components(&self) -> usize {
        self.pi.cols()
    }

    /// `Σ_k π_dk·μ_dk`.
    pub fn expectation(&self) -> Matrix<T> {
        let (d, c) = self.mu[0].shape();
        Matrix::from_fn(d, c, |i, j| (0..self.mu.len()).map(|k| self.pi.get(i, k) * self.mu[k].get(i, j)).sum())
    }

    /// `μ_{d,c_d}` for one component index per point.
    pub fn select(&self, components: &[usize]) -> Matrix<T> {
        let (d, c) = self.mu[0].shape();
        Matrix::from_fn(d, c, |i, j| self.mu[components[i]].get(i, j))
    }
}

/// `K` hypernetworks sharing one INR template, the categorical prior net and
/// the likelihood scales.
#[derive(Clone, Debug)]
pub struct MixtureDecoder {
    pub template: InrTemplate,
    pub hypernets: Vec<HyperNetwork>,
    pub prior_c: CategoricalPriorNet,
    pub family: LikelihoodFamily,
    /// `1×n_y` log scales of the discretized logistic.
    pub log_scale: ParamId,
}

impl MixtureDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        k: usize,
        dim_z: usize,
        rff_dim: usize,
        feature_dim: usize,
        generator_layers: &[usize],
        hypernet_layers: &[usize],
        categorical_layers: &[usize],
        family: LikelihoodFamily,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(VamohError::Config("model.K must be at least 1".into()));
        }
        let template = InrTemplate::new(rff_dim, generator_layers, feature_dim);
        let hypernets = (0..k).map(|i| HyperNetwork::new(store, i, dim_z, hypernet_layers, &template, rng)).collect();
        let prior_c = CategoricalPriorNet::new(store, rff_dim, dim_z, categorical_layers, k, rng);
        let log_scale = store.add(
            "likelihood.log_scale",
            ParamGroup::LikelihoodScale,
            Matrix::filled(1, feature_dim, T::lit(INITIAL_SCALE.ln())),
        );
        Ok(Self { template, hypernets, prior_c, family, log_scale })
    }

    pub fn num_components(&self) -> usize {
        self.hypernets.len()
    }

    /// `θ_k` as a `1×param_count` variable.
    pub fn hypernet_forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var, k: usize) -> Var {
        self.hypernets[k].forward(g, z)
    }

    /// Per-component parameters (`D×n_y` each) and prior log-weights (`D×K`).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var, rff: Var) -> (Vec<Var>, Var) {
        let mus = (0..self.num_components())
            .map(|k| {
                let theta = self.hypernet_forward(g, z, k);
                self.template.forward(g, theta, rff)
            })
            .collect();
        let log_pi = self.prior_c.forward(g, rff, z);
        (mus, log_pi)
    }
}
