//! Multilayer perceptrons over the graph, with parameters in a [`ParamStore`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{Graph, Var};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Slope of the leaky rectifier used by every hidden layer.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights from `N(0, gain² / fan_in)`, zero bias.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let std = gain / (fan_in as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| {
            let e: f64 = StandardNormal.sample(rng);
            T::lit(std * e)
        });
        let weight = store.add(format!("{name}.weight"), group, w);
        let bias = store.add(format!("{name}.bias"), group, Matrix::zeros(1, fan_out));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, w);
        g.add(h, b)
    }
}

/// Leaky-rectifier hidden layers followed by a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths` lists every layer width including input and output.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        widths: &[usize],
        rng: &mut R,
    ) -> Self {
        Self::with_output_gain(store, name, group, widths, 1.0, rng)
    }

    pub fn with_output_gain<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        widths: &[usize],
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i == last { output_gain } else { std::f64::consts::SQRT_2 };
                Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn output_layer(&self) -> &Linear {
        self.layers.last().expect("non-empty MLP")
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, T::lit(LEAKY_SLOPE));
            }
        }
        h
    }
}
