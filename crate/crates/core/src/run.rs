//! End-to-end runs driven by a [`RunConfig`]: data preparation, training with
//! metric logs and checkpoints, and test-set evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{synthesize_toy_dataset, write_atomic, Dataset};
use crate::error::{Result, VamohError};
use crate::metrics::{evaluate_testset, EvalReport, EvalTask};
use crate::model::VamohModel;
use crate::pointcloud::GridSpec;
use crate::render::save_curve;
use crate::train::{train_loop, Adam, EpochMetrics};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const CURVE_FILE: &str = "elbo.png";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

/// The configured dataset, synthesized or loaded.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset<f64>> {
    let data = match (&cfg.data.synth, &cfg.data.path) {
        (Some(name), _) => {
            let grid = GridSpec::new(cfg.data.grid.clone().unwrap_or_default())?;
            synthesize_toy_dataset(name, cfg.data.n_samples.unwrap_or(0), &grid, cfg.train.seed)?
        }
        (None, Some(path)) => Dataset::load(path)?,
        (None, None) => return Err(VamohError::Config("data needs either synth or path".into())),
    };
    data.check_family(cfg.likelihood()?)?;
    Ok(data)
}

/// `(train, test)` split of the configured dataset.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset<f64>, Dataset<f64>)> {
    load_data(cfg)?.split(cfg.data.test_fraction, cfg.train.seed)
}

/// A model freshly initialized for `data`.
pub fn init_model(cfg: &RunConfig, data: &Dataset<f64>) -> Result<VamohModel<f64>> {
    VamohModel::new(cfg.model_spec(data.coord_dim(), data.feature_dim())?, cfg.train.seed)
}

#[derive(Serialize)]
struct MetricRecord {
    epoch: usize,
    recon: f64,
    kl_z: f64,
    kl_c: f64,
    elbo: f64,
}

/// One metric-log line; timing is kept out so that logs are reproducible.
pub fn metrics_line(m: &EpochMetrics) -> String {
    let r = MetricRecord { epoch: m.epoch, recon: m.recon, kl_z: m.kl_z, kl_c: m.kl_c, elbo: m.elbo };
    serde_json::to_string(&r).expect("metric record serializes")
}

fn timing_line(m: &EpochMetrics) -> String {
    serde_json::json!({ "epoch": m.epoch, "wallclock": m.wallclock }).to_string()
}

pub struct TrainOutcome {
    pub model: VamohModel<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub output_dir: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Trains under `cfg`, writing the config snapshot, metric log, periodic and
/// final checkpoints and an ELBO curve to `output_dir`. With `resume`, the
/// model and optimizer continue from that checkpoint's epoch.
pub fn train_run(cfg: &RunConfig, output_dir: &Path, resume: Option<&Checkpoint>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, _) = prepare_data(cfg)?;
    let tc = cfg.train_config();
    let (mut model, mut opt, start) = match resume {
        Some(ck) => {
            let model = ck.model::<f64>()?;
            let opt = ck.optimizer.clone().unwrap_or_else(|| Adam::new(&model.params));
            (model, opt, ck.epoch)
        }
        None => {
            let model = init_model(cfg, &train)?;
            let opt = Adam::new(&model.params);
            (model, opt, 0)
        }
    };
    if model.spec.coord_dim != train.coord_dim() || model.spec.feature_dim != train.feature_dim() {
        return Err(VamohError::Dimension("checkpoint does not match the configured data".into()));
    }
    fs::create_dir_all(output_dir)?;
    let snapshot = cfg.to_toml_string();
    write_atomic(&output_dir.join(CONFIG_FILE), snapshot.as_bytes())?;
    let open = |name: &str| -> Result<BufWriter<File>> {
        let f = fs::OpenOptions::new().create(true).append(start > 0).write(true).truncate(start == 0).open(output_dir.join(name))?;
        Ok(BufWriter::new(f))
    };
    let mut metrics_log = open(METRICS_FILE)?;
    let mut timing_log = open(TIMING_FILE)?;
    let batches = train.len().div_ceil(tc.batch_size) as u64;
    let interval = cfg.io.checkpoint_interval;
    let mut history: Vec<f64> = Vec::new();
    let log = train_loop(&mut model, &mut opt, &train.clouds, &tc, start, |end| {
        writeln!(metrics_log, "{}", metrics_line(end.metrics))?;
        writeln!(timing_log, "{}", timing_line(end.metrics))?;
        metrics_log.flush()?;
        timing_log.flush()?;
        history.push(end.metrics.elbo);
        if end.epoch % interval == 0 || end.epoch == tc.epochs {
            let mut ck = Checkpoint::from_model(end.model, end.epoch, tc.seed);
            ck.global_step = end.epoch as u64 * batches;
            ck.config = Some(snapshot.clone());
            ck.optimizer = Some(end.optimizer.clone());
            ck.save(&output_dir.join(checkpoint_name(end.epoch)))?;
            if end.epoch == tc.epochs {
                ck.save(&output_dir.join(FINAL_CHECKPOINT))?;
            }
        }
        Ok(())
    })?;
    if !history.is_empty() {
        save_curve(&history, &output_dir.join(CURVE_FILE))?;
    }
    Ok(TrainOutcome {
        model,
        metrics: log,
        output_dir: output_dir.to_path_buf(),
        final_checkpoint: output_dir.join(FINAL_CHECKPOINT),
    })
}

/// PSNR report on the configured test split.
pub fn evaluate_run(cfg: &RunConfig, model: &VamohModel<f64>, task: EvalTask) -> Result<EvalReport> {
    let (_, test) = prepare_data(cfg)?;
    evaluate_testset(&test, model, task, cfg.train.seed, &cfg.hash())
}
