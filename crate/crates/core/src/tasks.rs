//! Reconstruction, super-resolution, completion, generation and mixture maps.
//!
//! Every entry point is a fixed number of forward passes on inference graphs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::Decoded;
use crate::encoder::sample_posterior;
use crate::error::{Result, VamohError};
use crate::model::VamohModel;
use crate::pointcloud::PointCloud;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// How per-point outputs combine the mixture components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMode {
    /// `Σ_k π_dk·μ_dk`.
    #[default]
    Expectation,
    /// `μ_{d,c_d}` with `c_d ~ Cat(π_d)`.
    Sample,
}

/// Which latent to decode from the posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    #[default]
    Mean,
    Sample,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOptions {
    pub latent: LatentMode,
    pub categorical: CategoricalMode,
}

impl TaskOptions {
    pub fn deterministic() -> Self {
        Self::default()
    }
}

/// Combines decoded components into features according to `mode`.
pub fn compose<T: Scalar, R: Rng + ?Sized>(decoded: &Decoded<T>, mode: CategoricalMode, rng: &mut R) -> Matrix<T> {
    match mode {
        CategoricalMode::Expectation => decoded.expectation(),
        CategoricalMode::Sample => {
            let comps: Vec<usize> = (0..decoded.num_points())
                .map(|d| {
                    let u = T::lit(rng.random::<f64>());
                    let row = decoded.pi.row(d);
                    let mut acc = T::zero();
                    for (k, &p) in row.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return k;
                        }
                    }
                    row.len() - 1
                })
                .collect();
            decoded.select(&comps)
        }
    }
}

/// Latent for an observed cloud.
pub fn infer_latent<T: Scalar, R: Rng + ?Sized>(
    model: &VamohModel<T>,
    cloud: &PointCloud<T>,
    mode: LatentMode,
    rng: &mut R,
) -> Result<Vec<T>> {
    let post = model.encode_z(cloud)?;
    Ok(match mode {
        LatentMode::Mean => post.mean,
        LatentMode::Sample => sample_posterior(&post, rng),
    })
}

/// Encodes `cloud` and decodes at `target`.
pub fn reconstruct<T: Scalar, R: Rng + ?Sized>(
    model: &VamohModel<T>,
    cloud: &PointCloud<T>,
    target: &Matrix<T>,
    rng: &mut R,
    opts: TaskOptions,
) -> Result<Matrix<T>> {
    let z = infer_latent(model, cloud, opts.latent, rng)?;
    let decoded = model.decode(&z, target)?;
    Ok(compose(&decoded, opts.categorical, rng))
}

/// Reconstruction on the grid refined `scale` times along every axis.
pub fn super_resolve<T: Scalar, R: Rng + ?Sized>(
    model: &VamohModel<T>,
    cloud: &PointCloud<T>,
    scale: usize,
    rng: &mut R,
    opts: TaskOptions,
) -> Result<Matrix<T>> {
    let grid = cloud.grid().ok_or_else(|| VamohError::InvalidParameter("super-resolution needs a gridded cloud".into()))?;
    let fine = grid.scaled(scale)?;
    reconstruct(model, cloud, &fine.coords(), rng, opts)
}

/// Reconstruction from observed points only; no values are imputed.
pub fn complete<T: Scalar, R: Rng + ?Sized>(
    model: &VamohModel<T>,
    partial: &PointCloud<T>,
    target: &Matrix<T>,
    rng: &mut R,
    opts: TaskOptions,
) -> Result<Matrix<T>> {
    reconstruct(model, partial, target, rng, opts)
}

/// Latents drawn from the prior, in order.
pub fn sample_latents<T: Scalar, R: Rng + ?Sized>(model: &VamohModel<T>, n: usize, rng: &mut R) -> Result<Vec<Vec<T>>> {
    let prior = model.prior();
    (0..n).map(|_| prior.sample(rng)).collect()
}

/// `n` unconditional samples decoded at `coords`.
pub fn generate<T: Scalar, R: Rng + ?Sized>(
    model: &VamohModel<T>,
    coords: &Matrix<T>,
    n: usize,
    rng: &mut R,
    mode: CategoricalMode,
) -> Result<Vec<Matrix<T>>> {
    let latents = sample_latents(model, n, rng)?;
    latents
        .iter()
        .map(|z| {
            let decoded = model.decode(z, coords)?;
            Ok(compose(&decoded, mode, rng))
        })
        .collect()
}

/// Categorical posterior at the posterior-mean latent.
pub fn posterior_assignments<T: Scalar>(model: &VamohModel<T>, cloud: &PointCloud<T>) -> Result<Matrix<T>> {
    let post = model.encode_z(cloud)?;
    Ok(model.encode_c(&post.mean, cloud)?.probs)
}

/// Per-point Shannon entropy (nats) of the categorical posterior.
pub fn entropy_map<T: Scalar>(model: &VamohModel<T>, cloud: &PointCloud<T>) -> Result<Vec<T>> {
    Ok(row_entropies(&posterior_assignments(model, cloud)?))
}

/// Per-point most likely component, numbered from 1.
pub fn segmentation_map<T: Scalar>(model: &VamohModel<T>, cloud: &PointCloud<T>) -> Result<Vec<usize>> {
    Ok(row_argmax(&posterior_assignments(model, cloud)?))
}

/// `−Σ_k p_k ln p_k` per row, clamped to `[0, ln K]`.
pub fn row_entropies<T: Scalar>(probs: &Matrix<T>) -> Vec<T> {
    let max = T::lit((probs.cols() as f64).ln());
    (0..probs.rows())
        .map(|d| {
            let h: T = probs.row(d).iter().filter(|&&p| p > T::zero()).map(|&p| -p * p.ln()).sum();
            h.max(T::zero()).min(max)
        })
        .collect()
}

/// Index (from 1) of each row's largest entry, lower index on ties.
pub fn row_argmax<T: Scalar>(probs: &Matrix<T>) -> Vec<usize> {
    (0..probs.rows())
        .map(|d| {
            let row = probs.row(d);
            let mut best = 0;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            best + 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_and_argmax_examples() {
        let uniform = Matrix::filled(2, 4, 0.25f64);
        for h in row_entropies(&uniform) {
            assert!((h - 4f64.ln()).abs() < 1e-12);
        }
        let one_hot = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(row_argmax(&one_hot), vec![2, 1]);
        assert_eq!(row_entropies(&one_hot), vec![0.0, 0.0]);
        assert_eq!(row_argmax(&Matrix::filled(3, 1, 1.0f64)), vec![1, 1, 1]);
        let tied = Matrix::from_rows(&[vec![0.4, 0.4, 0.2]]).unwrap();
        assert_eq!(row_argmax(&tied), vec![1]);
    }
}
