//! Point clouds, grids, Random Fourier Feature encoding and point dropout.
//!
//! Grid cells map to coordinates through their centers: along an axis of
//! resolution `R`, cell `i` sits at `(i + 0.5) / R * 2 - 1`, so every
//! coordinate lies strictly inside `[-1, 1]` and a coarse grid's cell centers
//! are a function of the resolution only.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VamohError};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Axis-aligned grid over `[-1, 1]^n`. Axis 0 varies slowest (row-major).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    shape: Vec<usize>,
}

impl GridSpec {
    pub fn new(shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&r| r == 0) {
            return Err(VamohError::Dimension(format!("invalid grid shape {shape:?}")));
        }
        Ok(Self { shape })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn num_points(&self) -> usize {
        self.shape.iter().product()
    }

    /// Grid with every axis resolution multiplied by `factor`.
    pub fn scaled(&self, factor: usize) -> Result<Self> {
        Self::new(self.shape.iter().map(|&r| r * factor).collect())
    }

    pub fn cell_center(resolution: usize, index: usize) -> f64 {
        (index as f64 + 0.5) / resolution as f64 * 2.0 - 1.0
    }

    /// Per-axis indices of flat cell `flat`.
    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for (axis, &r) in self.shape.iter().enumerate().rev() {
            idx[axis] = flat % r;
            flat /= r;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (&i, &r)| acc * r + i)
    }

    /// Cell-center coordinates of every cell, in flat order.
    pub fn coords<T: Scalar>(&self) -> Matrix<T> {
        let n = self.num_points();
        let mut out = Matrix::zeros(n, self.ndim());
        for flat in 0..n {
            for (axis, i) in self.unravel(flat).into_iter().enumerate() {
                out.set(flat, axis, T::lit(Self::cell_center(self.shape[axis], i)));
            }
        }
        out
    }

    /// Flat cell index whose center coincides with `coord`, if any.
    pub fn locate<T: Scalar>(&self, coord: &[T]) -> Option<usize> {
        if coord.len() != self.ndim() {
            return None;
        }
        let tol = 1e-9 + 8.0 * T::epsilon().as_f64();
        let mut idx = Vec::with_capacity(coord.len());
        for (&c, &r) in coord.iter().zip(&self.shape) {
            let c = c.as_f64();
            let i = ((c + 1.0) / 2.0 * r as f64 - 0.5).round();
            if i < 0.0 || i >= r as f64 {
                return None;
            }
            let i = i as usize;
            if (Self::cell_center(r, i) - c).abs() > tol {
                return None;
            }
            idx.push(i);
        }
        Some(self.ravel(&idx))
    }
}

/// Dense array on a grid: `shape` cells (row-major) times `channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrid<T> {
    pub shape: Vec<usize>,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> DenseGrid<T> {
    pub fn new(shape: Vec<usize>, channels: usize, data: Vec<T>) -> Result<Self> {
        let cells: usize = shape.iter().product();
        if data.len() != cells * channels {
            return Err(VamohError::Dimension(format!(
                "{} values do not fill grid {shape:?} with {channels} channels",
                data.len()
            )));
        }
        Ok(Self { shape, channels, data })
    }

    pub fn cell(&self, flat: usize) -> &[T] {
        &self.data[flat * self.channels..(flat + 1) * self.channels]
    }
}

/// Coordinates paired with features; the model's input and output currency.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    coords: Matrix<T>,
    features: Matrix<T>,
    grid: Option<GridSpec>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(coords: Matrix<T>, features: Matrix<T>) -> Result<Self> {
        if coords.rows() != features.rows() {
            return Err(VamohError::Dimension(format!(
                "{} coordinates but {} feature vectors",
                coords.rows(),
                features.rows()
            )));
        }
        if coords.rows() == 0 {
            return Err(VamohError::InsufficientPoints { needed: 1, got: 0 });
        }
        if let Some(c) = coords.data().iter().find(|c| !(c.abs() <= T::one())) {
            return Err(VamohError::InvalidParameter(format!("coordinate {c} outside [-1, 1]")));
        }
        Ok(Self { coords, features, grid: None })
    }

    /// Attaches a grid back-reference; the point count must match the grid.
    pub fn with_grid(mut self, grid: GridSpec) -> Result<Self> {
        if grid.num_points() != self.len() || grid.ndim() != self.coord_dim() {
            return Err(VamohError::Dimension(format!(
                "grid {:?} does not describe a {}-point cloud in {} dimensions",
                grid.shape(),
                self.len(),
                self.coord_dim()
            )));
        }
        self.grid = Some(grid);
        Ok(self)
    }

    pub fn coords(&self) -> &Matrix<T> {
        &self.coords
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }

    pub fn coord_dim(&self) -> usize {
        self.coords.cols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Sub-cloud of the given points, in the given order. Drops the grid.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.coords.select_rows(indices), self.features.select_rows(indices))
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud { coords: self.coords.cast(), features: self.features.cast(), grid: self.grid.clone() }
    }
}

pub fn grid_to_cloud<T: Scalar>(grid: &DenseGrid<T>, spec: &GridSpec) -> Result<PointCloud<T>> {
    if grid.shape != spec.shape() {
        return Err(VamohError::Dimension(format!(
            "array shape {:?} does not match grid {:?}",
            grid.shape,
            spec.shape()
        )));
    }
    let features = Matrix::from_vec(spec.num_points(), grid.channels, grid.data.clone())?;
    PointCloud::new(spec.coords(), features)?.with_grid(spec.clone())
}

/// Inverse of [`grid_to_cloud`], keyed by coordinate rather than point order.
pub fn cloud_to_grid<T: Scalar>(cloud: &PointCloud<T>, spec: &GridSpec) -> Result<DenseGrid<T>> {
    let n = spec.num_points();
    if cloud.len() != n {
        return Err(VamohError::CoordinateMismatch(format!(
            "{} points cannot fill a {n}-cell grid",
            cloud.len()
        )));
    }
    let ch = cloud.feature_dim();
    let mut data = vec![T::zero(); n * ch];
    let mut seen = vec![false; n];
    for i in 0..cloud.len() {
        let flat = spec.locate(cloud.coords().row(i)).ok_or_else(|| {
            VamohError::CoordinateMismatch(format!("point {i} is not a cell center of {:?}", spec.shape()))
        })?;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(VamohError::CoordinateMismatch(format!("cell {flat} covered twice")));
        }
        data[flat * ch..(flat + 1) * ch].copy_from_slice(cloud.features().row(i));
    }
    DenseGrid::new(spec.shape().to_vec(), ch, data)
}

/// Random Fourier Feature encoder with a frozen projection matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RffEncoder<T> {
    projection: Matrix<T>,
    sigma: f64,
}

impl<T: Scalar> RffEncoder<T> {
    /// Samples an `m × n_x` projection with entries from `N(0, sigma²)`.
    pub fn sample<R: Rng + ?Sized>(m: usize, n_x: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| VamohError::InvalidParameter(format!("rff sigma {sigma}: {e}")))?;
        let projection = Matrix::from_fn(m, n_x, |_, _| T::lit(normal.sample(rng)));
        Ok(Self { projection, sigma })
    }

    pub fn from_projection(projection: Matrix<T>, sigma: f64) -> Self {
        Self { projection, sigma }
    }

    pub fn projection(&self) -> &Matrix<T> {
        &self.projection
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn num_frequencies(&self) -> usize {
        self.projection.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.projection.rows()
    }

    /// `[cos(2π·Bx), sin(2π·Bx)]`.
    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(VamohError::Dimension(format!(
                "coordinate of dimension {} for an encoder expecting {}",
                x.len(),
                self.input_dim()
            )));
        }
        let m = self.num_frequencies();
        let mut out = vec![T::zero(); 2 * m];
        self.encode_into(x, &mut out);
        Ok(out)
    }

    fn encode_into(&self, x: &[T], out: &mut [T]) {
        let m = self.num_frequencies();
        let two_pi = T::PI() + T::PI();
        for j in 0..m {
            let arg: T = self.projection.row(j).iter().zip(x).map(|(&b, &xi)| b * xi).sum();
            let (s, c) = (two_pi * arg).sin_cos();
            out[j] = c;
            out[m + j] = s;
        }
    }

    /// Encodes every row of `coords` into a `D × 2m` matrix.
    pub fn encode_batch(&self, coords: &Matrix<T>) -> Result<Matrix<T>> {
        if coords.cols() != self.input_dim() {
            return Err(VamohError::Dimension(format!(
                "coordinates of dimension {} for an encoder expecting {}",
                coords.cols(),
                self.input_dim()
            )));
        }
        let mut out = Matrix::zeros(coords.rows(), self.output_dim());
        for i in 0..coords.rows() {
            self.encode_into(coords.row(i), out.row_mut(i));
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutPolicy {
    /// Upper bound of the per-batch drop probability, in `[0, 1)`.
    pub alpha: f64,
    /// Points that always survive; the first encoder layer's centroid count.
    pub min_retained: usize,
}

impl DropoutPolicy {
    pub fn new(alpha: f64, min_retained: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(VamohError::InvalidParameter(format!("dropout alpha {alpha} not in [0, 1)")));
        }
        Ok(Self { alpha, min_retained })
    }

    /// Draws the batch-level drop probability `p ~ U(0, alpha)`.
    pub fn draw_probability<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random::<f64>() * self.alpha
    }
}

/// Drops each point with probability `p`, then restores random dropped
/// points until `min_retained` survive. Retained points keep their order.
pub fn dropout_with_probability<T: Scalar, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    p: f64,
    min_retained: usize,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    if cloud.len() < min_retained {
        return Err(VamohError::InsufficientPoints { needed: min_retained, got: cloud.len() });
    }
    if p <= 0.0 {
        return Ok(cloud.clone());
    }
    let mut keep: Vec<bool> = (0..cloud.len()).map(|_| rng.random::<f64>() >= p).collect();
    let kept = keep.iter().filter(|&&k| k).count();
    if kept < min_retained {
        let mut dropped: Vec<usize> = (0..cloud.len()).filter(|&i| !keep[i]).collect();
        dropped.shuffle(rng);
        for &i in dropped.iter().take(min_retained - kept) {
            keep[i] = true;
        }
    }
    let indices: Vec<usize> = (0..cloud.len()).filter(|&i| keep[i]).collect();
    cloud.select(&indices)
}

/// Point dropout for a single cloud (a batch of one).
pub fn point_dropout<T: Scalar, R: Rng + ?Sized>(
    cloud: &PointCloud<T>,
    policy: &DropoutPolicy,
    rng: &mut R,
) -> Result<PointCloud<T>> {
    let p = policy.draw_probability(rng);
    dropout_with_probability(cloud, p, policy.min_retained, rng)
}

/// Point dropout with one probability shared by the whole batch.
pub fn point_dropout_batch<T: Scalar, R: Rng + ?Sized>(
    batch: &[PointCloud<T>],
    policy: &DropoutPolicy,
    rng: &mut R,
) -> Result<Vec<PointCloud<T>>> {
    let p = policy.draw_probability(rng);
    batch.iter().map(|c| dropout_with_probability(c, p, policy.min_retained, rng)).collect()
}
