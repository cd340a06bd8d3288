//! Set encoder for the global latent and the per-point categorical encoder.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VamohError};
use crate::graph::{Graph, Var};
use crate::nn::{Linear, Mlp, LEAKY_SLOPE};
use crate::params::{ParamGroup, ParamStore};
use crate::pointcloud::PointCloud;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Bounds applied to the posterior log standard deviation.
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 7.0;

/// Floor applied to categorical posterior probabilities.
pub const CATEGORICAL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConvLayerSpec {
    pub centroids: usize,
    pub neighbors: usize,
    pub h_weights: Vec<usize>,
    pub out_channels: usize,
}

impl PointConvLayerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centroids == 0 || self.neighbors == 0 || self.out_channels == 0 {
            return Err(VamohError::Config(
                "model.encoder centroids, neighbors and out_channels must be positive".into(),
            ));
        }
        if self.h_weights.contains(&0) {
            return Err(VamohError::Config("model.encoder.h_weights entries must be positive".into()));
        }
        Ok(())
    }
}

fn dist2<T: Scalar>(coords: &Matrix<T>, i: usize, j: usize) -> T {
    coords.row(i).iter().zip(coords.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum()
}

/// Farthest-point sampling from a given first index. Ties go to the lower index.
pub fn farthest_point_sampling<T: Scalar>(coords: &Matrix<T>, count: usize, first: usize) -> Result<Vec<usize>> {
    let n = coords.rows();
    if count > n {
        return Err(VamohError::InsufficientPoints { needed: count, got: n });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if first >= n {
        return Err(VamohError::InvalidParameter(format!("start index {first} out of range for {n} points")));
    }
    let mut chosen = Vec::with_capacity(count);
    let mut taken = vec![false; n];
    let mut min_d = vec![T::infinity(); n];
    let mut next = first;
    while chosen.len() < count {
        chosen.push(next);
        taken[next] = true;
        let mut best: Option<(usize, T)> = None;
        for i in 0..n {
            let d = dist2(coords, i, next);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && best.is_none_or(|(_, bd)| min_d[i] > bd) {
                best = Some((i, min_d[i]));
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    Ok(chosen)
}

/// Farthest-point sampling whose first index is drawn from `rng`.
pub fn select_centroids<T: Scalar, R: Rng + ?Sized>(
    coords: &Matrix<T>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count > coords.rows() {
        return Err(VamohError::InsufficientPoints { needed: count, got: coords.rows() });
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let first = rng.random_range(0..coords.rows());
    farthest_point_sampling(coords, count, first)
}

/// Index of the point closest to the coordinate mean, lower index on ties.
/// Used as an order-independent starting point for the sampler.
pub fn central_point<T: Scalar>(coords: &Matrix<T>) -> usize {
    let n = coords.rows();
    let dim = coords.cols();
    let inv = T::one() / T::lit(n as f64);
    let mean: Vec<T> = (0..dim).map(|j| (0..n).map(|i| coords.get(i, j)).sum::<T>() * inv).collect();
    let mut best = (0, T::infinity());
    for i in 0..n {
        let d: T = coords.row(i).iter().zip(&mean).map(|(&a, &b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// The `k` nearest points of every centroid, ordered by `(distance, index)`.
pub fn group_neighbors<T: Scalar>(coords: &Matrix<T>, centroids: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let n = coords.rows();
    if k > n {
        return Err(VamohError::InsufficientPoints { needed: k, got: n });
    }
    let mut out = Vec::with_capacity(centroids.len());
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut d = vec![T::zero(); n];
    for &c in centroids {
        for (i, di) in d.iter_mut().enumerate() {
            *di = dist2(coords, i, c);
        }
        order.clear();
        order.extend(0..n);
        let cmp = |a: &usize, b: &usize| d[*a].partial_cmp(&d[*b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(b));
        if k < n {
            order.select_nth_unstable_by(k, cmp);
        }
        let mut nearest = order[..k].to_vec();
        nearest.sort_by(cmp);
        out.push(nearest);
    }
    Ok(out)
}

/// One PointConv stage: per-neighbour kernels from relative coordinates,
/// summed over each centroid's neighbourhood.
#[derive(Clone, Debug)]
pub struct PointConvLayer {
    pub spec: PointConvLayerSpec,
    pub in_channels: usize,
    pub coord_dim: usize,
    pub weight_net: Mlp,
}

impl PointConvLayer {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: &PointConvLayerSpec,
        coord_dim: usize,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut widths = vec![coord_dim];
        widths.extend(&spec.h_weights);
        widths.push(spec.out_channels * in_channels);
        let gain = 1.0 / ((spec.neighbors * in_channels) as f64).sqrt();
        let weight_net = Mlp::with_output_gain(store, name, ParamGroup::PosteriorZ, &widths, gain, rng);
        // Offsets are small, so random first-layer biases keep the kernel at
        // zero offset away from zero.
        if weight_net.layers.len() > 1 {
            let bias = store.get_mut(weight_net.layers[0].bias);
            for b in bias.data_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *b = T::lit(e);
            }
        }
        Ok(Self { spec: spec.clone(), in_channels, coord_dim, weight_net })
    }

    /// Applies the layer to features `h` (`n×in`) at `coords` with the given
    /// centroid indices and neighbourhoods. Returns `centroids×out`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        coords: &Matrix<T>,
        h: Var,
        centroids: &[usize],
        neighbors: &[Vec<usize>],
    ) -> Var {
        let k = neighbors.first().map_or(0, Vec::len);
        let mut rel = Matrix::zeros(centroids.len() * k, self.coord_dim);
        let mut flat = Vec::with_capacity(centroids.len() * k);
        for (j, (&c, nb)) in centroids.iter().zip(neighbors).enumerate() {
            for (t, &i) in nb.iter().enumerate() {
                let row = rel.row_mut(j * k + t);
                for (r, (&xi, &xc)) in row.iter_mut().zip(coords.row(i).iter().zip(coords.row(c))) {
                    *r = xi - xc;
                }
                flat.push(i);
            }
        }
        let rel = g.constant(rel);
        let w = self.weight_net.forward(g, rel);
        let hn = g.gather_rows(h, &flat);
        let y = g.batched_matvec(w, hn, self.spec.out_channels, self.in_channels);
        g.group_sum(y, k)
    }

    /// Centroids by farthest-point sampling from `first`, then neighbourhoods.
    pub fn plan<T: Scalar>(&self, coords: &Matrix<T>, first: usize) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
        let needed = self.spec.centroids.max(self.spec.neighbors);
        if coords.rows() < needed {
            return Err(VamohError::InsufficientPoints { needed, got: coords.rows() });
        }
        let centroids = farthest_point_sampling(coords, self.spec.centroids, first)?;
        let neighbors = group_neighbors(coords, &centroids, self.spec.neighbors)?;
        Ok((centroids, neighbors))
    }
}

/// Plain-value Gaussian posterior over the global latent.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> GaussianPosterior<T> {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![T::zero(); dim], log_std: vec![T::zero(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_valid(&self) -> bool {
        self.mean.len() == self.log_std.len()
            && self.mean.iter().chain(&self.log_std).all(|v| v.is_finite())
            && self.log_std.iter().all(|&s| s >= T::lit(LOG_STD_MIN) && s <= T::lit(LOG_STD_MAX))
    }

    /// `log q(z)`.
    pub fn log_prob(&self, z: &[T]) -> T {
        let half_ln_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        z.iter()
            .zip(self.mean.iter().zip(&self.log_std))
            .map(|(&z, (&m, &ls))| {
                let e = (z - m) / ls.exp();
                -T::lit(0.5) * e * e - ls - half_ln_2pi
            })
            .sum()
    }
}

/// Reparameterized draw `mean + exp(log_std)·ε`.
pub fn sample_posterior<T: Scalar, R: Rng + ?Sized>(post: &GaussianPosterior<T>, rng: &mut R) -> Vec<T> {
    post.mean
        .iter()
        .zip(&post.log_std)
        .map(|(&m, &ls)| {
            let e: f64 = StandardNormal.sample(rng);
            m + ls.exp() * T::lit(e)
        })
        .collect()
}

/// Standard normal noise, one row per sample.
pub fn standard_noise<T: Scalar, R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Matrix<T> {
    Matrix::from_fn(rows, dim, |_, _| {
        let e: f64 = StandardNormal.sample(rng);
        T::lit(e)
    })
}

/// Per-point posterior over mixture components.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalPosterior<T> {
    /// `D×K`, rows sum to one.
    pub probs: Matrix<T>,
}

impl<T: Scalar> CategoricalPosterior<T> {
    /// From row-wise log-probabilities, floored at [`CATEGORICAL_FLOOR`].
    pub fn from_log_probs(log_probs: &Matrix<T>) -> Self {
        let floor = T::lit(CATEGORICAL_FLOOR);
        Self { probs: log_probs.map(|v| v.exp().max(floor)) }
    }

    pub fn num_components(&self) -> usize {
        self.probs.cols()
    }
}

/// PointConv stack, mean pooling and affine heads for the latent posterior.
#[derive(Clone, Debug)]
pub struct SetEncoder {
    pub layers: Vec<PointConvLayer>,
    pub mean_head: Linear,
    pub log_std_head: Linear,
    pub dim_z: usize,
}

impl SetEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        specs: &[PointConvLayerSpec],
        coord_dim: usize,
        feature_dim: usize,
        dim_z: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(VamohError::Config("encoder needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut channels = feature_dim;
        for (i, spec) in specs.iter().enumerate() {
            layers.push(PointConvLayer::new(store, &format!("encoder_z.conv{i}"), spec, coord_dim, channels, rng)?);
            channels = spec.out_channels;
        }
        let mean_head = Linear::new(store, "encoder_z.mean", ParamGroup::PosteriorZ, channels, dim_z, 1.0, rng);
        let log_std_head = Linear::new(store, "encoder_z.log_std", ParamGroup::PosteriorZ, channels, dim_z, 0.1, rng);
        Ok(Self { layers, mean_head, log_std_head, dim_z })
    }

    /// Smallest cloud the encoder accepts.
    pub fn min_points(&self) -> usize {
        let first = &self.layers[0].spec;
        first.centroids.max(first.neighbors)
    }

    /// Posterior mean and clamped log standard deviation, each `1×dim_z`.
    ///
    /// Every stage starts its farthest-point sampling at the point nearest
    /// the coordinate mean, so the result does not depend on point order.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, cloud: &PointCloud<T>) -> Result<(Var, Var)> {
        if cloud.coord_dim() != self.layers[0].coord_dim || cloud.feature_dim() != self.layers[0].in_channels {
            return Err(VamohError::Dimension(format!(
                "encoder expects coords of dim {} and features of dim {}, got {} and {}",
                self.layers[0].coord_dim,
                self.layers[0].in_channels,
                cloud.coord_dim(),
                cloud.feature_dim()
            )));
        }
        let mut coords = cloud.coords().clone();
        let mut h = g.constant(cloud.features().clone());
        for layer in &self.layers {
            let (centroids, neighbors) = layer.plan(&coords, central_point(&coords))?;
            let y = layer.forward(g, &coords, h, &centroids, &neighbors);
            h = g.leaky_relu(y, T::lit(LEAKY_SLOPE));
            coords = coords.select_rows(&centroids);
        }
        let pooled = g.mean_rows(h);
        let mean = self.mean_head.forward(g, pooled);
        let raw = self.log_std_head.forward(g, pooled);
        let log_std = g.clamp(raw, T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        Ok((mean, log_std))
    }

    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, cloud: &PointCloud<T>) -> Result<GaussianPosterior<T>> {
        let mut g = Graph::inference(store);
        let (m, s) = self.forward(&mut g, cloud)?;
        Ok(GaussianPosterior { mean: g.value(m).data().to_vec(), log_std: g.value(s).data().to_vec() })
    }
}

/// Per-point MLP on `[z, rff(x), y]` emitting component logits.
#[derive(Clone, Debug)]
pub struct CategoricalEncoder {
    pub mlp: Mlp,
    pub dim_z: usize,
    pub rff_dim: usize,
    pub feature_dim: usize,
}

impl CategoricalEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        dim_z: usize,
        rff_dim: usize,
        feature_dim: usize,
        hidden: &[usize],
        k: usize,
        rng: &mut R,
    ) -> Self {
        let mut widths = vec![dim_z + rff_dim + feature_dim];
        widths.extend(hidden);
        widths.push(k);
        let mlp = Mlp::with_output_gain(store, "encoder_c", ParamGroup::PosteriorC, &widths, 0.1, rng);
        Self { mlp, dim_z, rff_dim, feature_dim }
    }

    /// Row-wise log-probabilities `D×K` given `z` (`1×dim_z`), encoded
    /// coordinates (`D×2m`) and features (`D×n_y`).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var, rff: Var, features: &Matrix<T>) -> Result<Var> {
        let (d, rcols) = g.shape(rff);
        if g.shape(z) != (1, self.dim_z) || rcols != self.rff_dim || features.shape() != (d, self.feature_dim) {
            return Err(VamohError::Dimension(format!(
                "categorical encoder expects z 1x{}, rff {}x{}, features {}x{}",
                self.dim_z, d, self.rff_dim, d, self.feature_dim
            )));
        }
        let zr = g.repeat_rows(z, d);
        let y = g.constant(features.clone());
        let input = g.concat_cols(&[zr, rff, y]);
        let logits = self.mlp.forward(g, input);
        Ok(g.log_softmax(logits))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pts(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn fps_exhausts_and_picks_diagonal() {
        let sq = pts(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(farthest_point_sampling(&sq, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(farthest_point_sampling(&sq, 2, 1).unwrap(), vec![1, 2]);
        let mut all = select_centroids(&sq, 4, &mut seeded(3)).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(select_centroids(&sq, 5, &mut seeded(3)).is_err());
    }

    #[test]
    fn single_centroid_is_the_seeded_draw() {
        let c = pts(&(0..10).map(|i| vec![i as f64 / 10.0]).collect::<Vec<_>>());
        let expected = seeded(11).random_range(0..10);
        assert_eq!(select_centroids(&c, 1, &mut seeded(11)).unwrap(), vec![expected]);
    }

    #[test]
    fn neighbors_break_ties_by_index() {
        let line = pts(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(group_neighbors(&line, &[1], 2).unwrap(), vec![vec![1, 0]]);
        assert_eq!(group_neighbors(&line, &[2, 3], 1).unwrap(), vec![vec![2], vec![3]]);
        let same = pts(&vec![vec![0.5, 0.5]; 6]);
        assert_eq!(group_neighbors(&same, &[4], 3).unwrap(), vec![vec![0, 1, 2]]);
        assert!(group_neighbors(&line, &[0], 5).is_err());
    }

    #[test]
    fn posterior_samples_have_unit_moments() {
        let post = GaussianPosterior::<f64>::standard(1);
        let mut rng = seeded(5);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_posterior(&post, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.05, "{mean} {var}");
    }

    #[test]
    fn tiny_std_collapses_to_mean() {
        let post = GaussianPosterior::<f64> { mean: vec![0.3, -1.2], log_std: vec![-7.0, -7.0] };
        let z = sample_posterior(&post, &mut seeded(1));
        let eps = standard_noise::<f64, _>(1, 2, &mut seeded(1));
        for i in 0..2 {
            let per_unit = (z[i] - post.mean[i]) / eps.get(0, i);
            assert!((per_unit - (-7.0f64).exp()).abs() < 1e-15);
            assert!(per_unit < 1e-3);
        }
        let a = sample_posterior(&GaussianPosterior::<f64>::standard(3), &mut seeded(9));
        let b = sample_posterior(&GaussianPosterior::<f64>::standard(3), &mut seeded(9));
        assert_eq!(a, b);
    }
}
