//! Minibatch training with point dropout, flow warm-up and Adam.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::elbo::{cloud_seeds, neg_elbo_gradients, ElboTerms};
use crate::error::{Result, VamohError};
use crate::graph::Gradients;
use crate::model::VamohModel;
use crate::params::ParamStore;
use crate::pointcloud::{point_dropout_batch, DropoutPolicy, PointCloud};
use crate::rng::{substream, Rng, STREAM_DATA, STREAM_STEP};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_epochs: usize,
    pub dropout_alpha: f64,
    pub mc_samples: usize,
    pub seed: u64,
    pub gradient_clip_norm: f64,
}

impl TrainConfig {
    /// Warm-up of one tenth of the epochs, rounded down.
    pub fn default_warmup(epochs: usize) -> usize {
        epochs / 10
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VamohError::Config(m));
        if self.batch_size == 0 {
            return bad("train.bs must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.lr must be a non-negative number, got {}", self.learning_rate));
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!("model.flow.warmup_epochs {} exceeds train.epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(0.0..1.0).contains(&self.dropout_alpha) {
            return bad(format!("train.alpha must lie in [0, 1), got {}", self.dropout_alpha));
        }
        if self.mc_samples == 0 {
            return bad("train.mc_samples must be positive".into());
        }
        if !(self.gradient_clip_norm > 0.0) {
            return bad(format!("train.clip_norm must be positive, got {}", self.gradient_clip_norm));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn update<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let p = params.get_mut(id);
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi.as_f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let delta = lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *pi -= T::lit(delta);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm().as_f64();
    if norm > max_norm {
        grads.scale(T::lit(max_norm / norm));
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub terms: ElboTerms,
    pub grad_norm: f64,
    pub retained_points: usize,
}

/// Dropout, negative-ELBO gradient, clipping and one Adam update.
pub fn train_step<T: Scalar>(
    model: &mut VamohModel<T>,
    opt: &mut Adam,
    batch: &[PointCloud<T>],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<StepMetrics> {
    let policy = DropoutPolicy::new(config.dropout_alpha, model.min_points())?;
    let reduced = point_dropout_batch(batch, &policy, rng)?;
    let seeds = cloud_seeds(reduced.len(), rng);
    let (terms, mut grads) = neg_elbo_gradients(&reduced, model, &seeds, config.mc_samples)?;
    if let Some(id) = grads.first_non_finite() {
        return Err(VamohError::NonFinite {
            term: "gradient".into(),
            detail: format!("parameter {}", model.params.entry(id).name),
        });
    }
    let grad_norm = clip_global_norm(&mut grads, config.gradient_clip_norm);
    opt.update(&mut model.params, &grads, config.learning_rate);
    if let Some(e) = model.params.entries().iter().find(|e| !e.value.all_finite()) {
        return Err(VamohError::NonFinite { term: "parameter update".into(), detail: e.name.clone() });
    }
    Ok(StepMetrics { terms, grad_norm, retained_points: reduced.iter().map(PointCloud::len).sum() })
}

/// One line of the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recon: f64,
    pub kl_z: f64,
    pub kl_c: f64,
    pub elbo: f64,
    pub wallclock: f64,
}

impl EpochMetrics {
    /// The record without its timing field, for reproducibility comparisons.
    pub fn terms(&self) -> (usize, f64, f64, f64, f64) {
        (self.epoch, self.recon, self.kl_z, self.kl_c, self.elbo)
    }
}

/// Training progress handed to the per-epoch callback.
pub struct EpochEnd<'a, T: Scalar> {
    pub epoch: usize,
    pub model: &'a VamohModel<T>,
    pub optimizer: &'a Adam,
    pub metrics: &'a EpochMetrics,
}

/// Shuffled order of `n` items for `epoch`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, STREAM_DATA, epoch as u64));
    order
}

/// Runs `config.epochs` epochs from `start_epoch`. The flow prior is disabled
/// for epochs before `warmup_epochs`. `on_epoch` runs after every epoch.
pub fn train_loop<T: Scalar>(
    model: &mut VamohModel<T>,
    opt: &mut Adam,
    data: &[PointCloud<T>],
    config: &TrainConfig,
    start_epoch: usize,
    mut on_epoch: impl FnMut(EpochEnd<'_, T>) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if data.is_empty() {
        return Err(VamohError::InvalidParameter("training set is empty".into()));
    }
    let started = Instant::now();
    let mut log = Vec::with_capacity(config.epochs.saturating_sub(start_epoch));
    let batches_per_epoch = data.len().div_ceil(config.batch_size);
    for epoch in start_epoch..config.epochs {
        model.flow_enabled = epoch >= config.warmup_epochs;
        let order = epoch_order(config.seed, epoch, data.len());
        let mut terms = Vec::with_capacity(batches_per_epoch);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<PointCloud<T>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let step = (epoch * batches_per_epoch + b) as u64;
            let mut rng = substream(config.seed, STREAM_STEP, step);
            terms.push(train_step(model, opt, &batch, config, &mut rng)?.terms);
        }
        let mean = ElboTerms::mean(&terms);
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            recon: mean.recon,
            kl_z: mean.kl_z,
            kl_c: mean.kl_c,
            elbo: mean.elbo,
            wallclock: started.elapsed().as_secs_f64(),
        };
        on_epoch(EpochEnd { epoch: epoch + 1, model, optimizer: opt, metrics: &metrics })?;
        log.push(metrics);
    }
    model.flow_enabled = config.epochs > config.warmup_epochs;
    Ok(log)
}

/// Snapshot of parameter values, for comparisons in tests and tools.
pub fn parameter_snapshot<T: Scalar>(params: &ParamStore<T>) -> Vec<Matrix<T>> {
    params.entries().iter().map(|e| e.value.clone()).collect()
}
