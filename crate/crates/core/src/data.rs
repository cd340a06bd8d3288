//! Datasets of point clouds, the compressed array container and toy synthesizers.

use std::fs;
use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use ndarray::{Array1, Array3};
use ndarray_npy::{NpzReader, NpzWriter};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, VamohError};
use crate::likelihood::LikelihoodFamily;
use crate::pointcloud::{GridSpec, PointCloud};
use crate::rng::substream;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Names accepted by [`synthesize_toy_dataset`].
pub const TOY_DATASETS: [&str; 3] = ["shapes2d", "blobs", "voxel-boxes"];

/// A collection of clouds sharing coordinate and feature dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub clouds: Vec<PointCloud<T>>,
    pub grid: Option<GridSpec>,
    pub feature_range: (f64, f64),
}

impl<T: Scalar> Dataset<T> {
    pub fn new(clouds: Vec<PointCloud<T>>, grid: Option<GridSpec>, feature_range: (f64, f64)) -> Result<Self> {
        let first = clouds.first().ok_or_else(|| VamohError::Format("dataset has no clouds".into()))?;
        let (nx, ny) = (first.coord_dim(), first.feature_dim());
        if clouds.iter().any(|c| c.coord_dim() != nx || c.feature_dim() != ny) {
            return Err(VamohError::Dimension("clouds differ in coordinate or feature dimension".into()));
        }
        if let Some(g) = &grid {
            if g.ndim() != nx {
                return Err(VamohError::Dimension(format!("grid of {} axes for {nx}-d coordinates", g.ndim())));
            }
        }
        Ok(Self { clouds, grid, feature_range })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn coord_dim(&self) -> usize {
        self.clouds[0].coord_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.clouds[0].feature_dim()
    }

    /// Whether every feature lies in the support of `family`.
    pub fn check_family(&self, family: LikelihoodFamily) -> Result<()> {
        for (i, c) in self.clouds.iter().enumerate() {
            if let Some(v) = c.features().data().iter().find(|v| !family.accepts(v.as_f64())) {
                return Err(VamohError::Format(format!(
                    "cloud {i} has feature {v} outside the support of {}",
                    family.name()
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clouds: indices.iter().map(|&i| self.clouds[i].clone()).collect(),
            grid: self.grid.clone(),
            feature_range: self.feature_range,
        }
    }

    /// Seeded disjoint `(train, test)` split; the test part holds
    /// `round(test_fraction·N)` clouds.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(VamohError::Config(format!("data.test_fraction must lie in [0, 1), got {test_fraction}")));
        }
        let (train, test) = split_indices(self.len(), test_fraction, seed);
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// Per-point mean of the features over all clouds (grid data only).
    pub fn mean_features(&self) -> Matrix<T> {
        let mut acc = Matrix::zeros(self.clouds[0].len(), self.feature_dim());
        for c in &self.clouds {
            acc.add_assign(c.features());
        }
        acc.scale_assign(T::one() / T::lit(self.len() as f64));
        acc
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset { clouds: self.clouds.iter().map(PointCloud::cast).collect(), grid: self.grid.clone(), feature_range: self.feature_range }
    }

    /// Writes the container: `coords` (N×D×n_x), `features` (N×D×n_y),
    /// `grid_shape` (empty when not gridded) and `feature_range` (2 values).
    pub fn to_npz_bytes(&self) -> Result<Vec<u8>> {
        let d = self.clouds[0].len();
        if self.clouds.iter().any(|c| c.len() != d) {
            return Err(VamohError::Format("the container needs equally sized clouds".into()));
        }
        let (n, nx, ny) = (self.len(), self.coord_dim(), self.feature_dim());
        let coords = Array3::from_shape_fn((n, d, nx), |(i, p, j)| self.clouds[i].coords().get(p, j).as_f64());
        let feats = Array3::from_shape_fn((n, d, ny), |(i, p, j)| self.clouds[i].features().get(p, j).as_f64());
        let grid: Array1<i64> =
            self.grid.as_ref().map_or_else(Vec::new, |g| g.shape().iter().map(|&s| s as i64).collect()).into();
        let range = Array1::from(vec![self.feature_range.0, self.feature_range.1]);
        let mut npz = NpzWriter::new_compressed(Cursor::new(Vec::new()));
        let fmt = |e: ndarray_npy::WriteNpzError| VamohError::Format(e.to_string());
        npz.add_array("coords", &coords).map_err(fmt)?;
        npz.add_array("features", &feats).map_err(fmt)?;
        npz.add_array("grid_shape", &grid).map_err(fmt)?;
        npz.add_array("feature_range", &range).map_err(fmt)?;
        Ok(npz.finish().map_err(fmt)?.into_inner())
    }

    pub fn from_npz<R: Read + Seek>(reader: R) -> Result<Self> {
        let fmt = |e: ndarray_npy::ReadNpzError| VamohError::Format(e.to_string());
        let mut npz = NpzReader::new(reader).map_err(fmt)?;
        let coords: Array3<f64> = npz.by_name("coords").map_err(fmt)?;
        let feats: Array3<f64> = npz.by_name("features").map_err(fmt)?;
        let grid: Array1<i64> = npz.by_name("grid_shape").map_err(fmt)?;
        let range: Array1<f64> = npz.by_name("feature_range").map_err(fmt)?;
        let (n, d, nx) = coords.dim();
        let (fn_, fd, ny) = feats.dim();
        if (fn_, fd) != (n, d) {
            return Err(VamohError::Format(format!("coords {:?} and features {:?} disagree", coords.dim(), feats.dim())));
        }
        if range.len() != 2 {
            return Err(VamohError::Format("feature_range must hold two values".into()));
        }
        let grid = if grid.is_empty() {
            None
        } else {
            if grid.iter().any(|&s| s <= 0) {
                return Err(VamohError::Format("grid_shape entries must be positive".into()));
            }
            Some(GridSpec::new(grid.iter().map(|&s| s as usize).collect())?)
        };
        let mut clouds = Vec::with_capacity(n);
        for i in 0..n {
            let c = Matrix::from_fn(d, nx, |p, j| T::lit(coords[(i, p, j)]));
            let f = Matrix::from_fn(d, ny, |p, j| T::lit(feats[(i, p, j)]));
            let mut cloud = PointCloud::new(c, f)?;
            if let Some(g) = &grid {
                cloud = cloud.with_grid(g.clone())?;
            }
            clouds.push(cloud);
        }
        Self::new(clouds, grid, (range[0], range[1]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_npz_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_npz(fs::File::open(path)?)
    }
}

/// Writes to a temporary sibling file, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Seeded disjoint split of `0..n` into `(train, test)`, each sorted.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split", 0));
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Likelihood family matching a toy dataset's feature domain.
pub fn toy_likelihood(name: &str) -> Result<LikelihoodFamily> {
    match name {
        "shapes2d" => Ok(LikelihoodFamily::DiscretizedLogistic),
        "blobs" => Ok(LikelihoodFamily::ContinuousBernoulli),
        "voxel-boxes" => Ok(LikelihoodFamily::Bernoulli),
        other => Err(VamohError::UnknownDataset(other.into())),
    }
}

fn level<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0..=255u32) as f64 / 255.0
}

fn shapes2d<R: Rng + ?Sized>(coords: &Matrix<f64>, rng: &mut R) -> Vec<f64> {
    let bg = [level(rng), level(rng), level(rng)];
    let mut out: Vec<f64> = (0..coords.rows()).flat_map(|_| bg).collect();
    let shapes = rng.random_range(1..=2);
    for _ in 0..shapes {
        let color = [level(rng), level(rng), level(rng)];
        let cx = rng.random_range(-0.6..0.6);
        let cy = rng.random_range(-0.6..0.6);
        let circle = rng.random_bool(0.5);
        let (a, b) = (rng.random_range(0.2..0.6), rng.random_range(0.2..0.6));
        for p in 0..coords.rows() {
            let (x, y) = (coords.get(p, 0) - cx, coords.get(p, 1) - cy);
            let inside = if circle { x * x + y * y <= a * a } else { x.abs() <= a && y.abs() <= b };
            if inside {
                out[p * 3..p * 3 + 3].copy_from_slice(&color);
            }
        }
    }
    out
}

fn blobs<R: Rng + ?Sized>(coords: &Matrix<f64>, rng: &mut R) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| {
            (
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(0.2..0.5),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    (0..coords.rows())
        .map(|p| {
            let (x, y) = (coords.get(p, 0), coords.get(p, 1));
            let v: f64 = bumps
                .iter()
                .map(|&(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum();
            v.clamp(0.0, 1.0)
        })
        .collect()
}

fn voxel_boxes<R: Rng + ?Sized>(coords: &Matrix<f64>, rng: &mut R) -> Vec<f64> {
    let boxes: Vec<([f64; 3], [f64; 3])> = (0..rng.random_range(1..=2))
        .map(|_| {
            let c = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let h = [rng.random_range(0.15..0.5), rng.random_range(0.15..0.5), rng.random_range(0.15..0.5)];
            (c, h)
        })
        .collect();
    (0..coords.rows())
        .map(|p| {
            let inside = boxes.iter().any(|(c, h)| (0..3).all(|j| (coords.get(p, j) - c[j]).abs() <= h[j]));
            if inside {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Deterministic toy dataset on `grid`. `shapes2d` and `blobs` need a 2-D
/// grid, `voxel-boxes` a 3-D one.
pub fn synthesize_toy_dataset(name: &str, n_samples: usize, grid: &GridSpec, seed: u64) -> Result<Dataset<f64>> {
    let (ndim, channels) = match name {
        "shapes2d" => (2, 3),
        "blobs" => (2, 1),
        "voxel-boxes" => (3, 1),
        other => return Err(VamohError::UnknownDataset(other.into())),
    };
    if grid.ndim() != ndim {
        return Err(VamohError::Config(format!("{name} needs a {ndim}-d grid, got {:?}", grid.shape())));
    }
    if n_samples == 0 {
        return Err(VamohError::Config("data.n_samples must be positive".into()));
    }
    let coords = grid.coords::<f64>();
    let clouds = (0..n_samples)
        .map(|i| {
            let mut rng = substream(seed, name, i as u64);
            let feats = match name {
                "shapes2d" => shapes2d(&coords, &mut rng),
                "blobs" => blobs(&coords, &mut rng),
                _ => voxel_boxes(&coords, &mut rng),
            };
            let f = Matrix::from_vec(coords.rows(), channels, feats)?;
            PointCloud::new(coords.clone(), f)?.with_grid(grid.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(clouds, Some(grid.clone()), (0.0, 1.0))
}
