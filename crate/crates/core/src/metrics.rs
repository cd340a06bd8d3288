//! RMSE and PSNR on the 0..255 scale, and test-set reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, VamohError};
use crate::model::VamohModel;
use crate::pointcloud::PointCloud;
use crate::rng::{substream, STREAM_EVAL};
use crate::scalar::Scalar;
use crate::tasks::{reconstruct, TaskOptions};
use crate::tensor::Matrix;

/// Reported PSNR when the two feature sets coincide.
pub const PSNR_CAP: f64 = 99.0;

const PEAK: f64 = 255.0;

/// `sqrt(1/D Σ_d ‖y_d − ŷ_d‖²)` with features scaled by 255.
pub fn rmse<T: Scalar>(truth: &Matrix<T>, pred: &Matrix<T>) -> Result<f64> {
    if truth.shape() != pred.shape() {
        return Err(VamohError::Dimension(format!("rmse of {:?} against {:?}", truth.shape(), pred.shape())));
    }
    if truth.rows() == 0 {
        return Err(VamohError::Dimension("rmse of an empty set".into()));
    }
    let ss: f64 = truth
        .data()
        .iter()
        .zip(pred.data())
        .map(|(&a, &b)| {
            let d = (a.as_f64() - b.as_f64()) * PEAK;
            d * d
        })
        .sum();
    Ok((ss / truth.rows() as f64).sqrt())
}

/// `20·log10(255 / rmse)`, or [`PSNR_CAP`] when `rmse = 0`.
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse == 0.0 {
        PSNR_CAP
    } else {
        20.0 * (PEAK / rmse).log10()
    }
}

pub fn psnr<T: Scalar>(truth: &Matrix<T>, pred: &Matrix<T>) -> Result<f64> {
    Ok(psnr_from_rmse(rmse(truth, pred)?))
}

/// What is evaluated for each test cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    /// Encode the full cloud, decode at its coordinates.
    Reconstruct,
    /// Encode the points whose first coordinate is negative, decode everywhere.
    CompleteRightHalf,
}

impl EvalTask {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reconstruct => "reconstruct",
            Self::CompleteRightHalf => "complete_right_half",
        }
    }
}

/// Keeps the points whose first coordinate is negative.
pub fn left_half<T: Scalar>(cloud: &PointCloud<T>) -> Result<PointCloud<T>> {
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.coords().get(i, 0) < T::zero()).collect();
    cloud.select(&keep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub config_hash: String,
    pub psnr: Vec<f64>,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
}

impl EvalReport {
    pub fn from_values(task: &str, config_hash: &str, psnr: Vec<f64>) -> Self {
        let n = psnr.len();
        let mean = if n == 0 { f64::NAN } else { psnr.iter().sum::<f64>() / n as f64 };
        let mut sorted = psnr.clone();
        sorted.sort_by(f64::total_cmp);
        let median = match n {
            0 => f64::NAN,
            _ if n % 2 == 1 => sorted[n / 2],
            _ => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
        };
        let min = sorted.first().copied().unwrap_or(f64::NAN);
        Self { task: task.into(), config_hash: config_hash.into(), psnr, mean, median, min }
    }

    /// Key-value header followed by one `sample <i> psnr <v>` line per cloud.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "config_hash = {}", self.config_hash);
        let _ = writeln!(s, "samples = {}", self.psnr.len());
        let _ = writeln!(s, "psnr_mean = {:.6}", self.mean);
        let _ = writeln!(s, "psnr_median = {:.6}", self.median);
        let _ = writeln!(s, "psnr_min = {:.6}", self.min);
        for (i, p) in self.psnr.iter().enumerate() {
            let _ = writeln!(s, "sample {i} psnr {p:.6}");
        }
        s
    }
}

/// Runs `task` on every cloud with deterministic options and reports PSNR.
pub fn evaluate_testset<T: Scalar>(
    dataset: &Dataset<T>,
    model: &VamohModel<T>,
    task: EvalTask,
    seed: u64,
    config_hash: &str,
) -> Result<EvalReport> {
    let psnr: Result<Vec<f64>> = dataset
        .clouds
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let mut rng = substream(seed, STREAM_EVAL, i as u64);
            let observed = match task {
                EvalTask::Reconstruct => cloud.clone(),
                EvalTask::CompleteRightHalf => left_half(cloud)?,
            };
            let pred = reconstruct(model, &observed, cloud.coords(), &mut rng, TaskOptions::deterministic())?;
            psnr(cloud.features(), &pred)
        })
        .collect();
    Ok(EvalReport::from_values(task.name(), config_hash, psnr?))
}

/// PSNR of predicting every cloud by the per-point mean of `reference`.
pub fn mean_image_baseline<T: Scalar>(reference: &Dataset<T>, test: &Dataset<T>) -> Result<EvalReport> {
    let mean = reference.mean_features();
    let psnr: Result<Vec<f64>> = test.clouds.iter().map(|c| psnr(c.features(), &mean)).collect();
    Ok(EvalReport::from_values("mean_image", "", psnr?))
}
