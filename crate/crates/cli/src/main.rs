use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vamoh::checkpoint::Checkpoint;
use vamoh::config::RunConfig;
use vamoh::data::{synthesize_toy_dataset, Dataset};
use vamoh::metrics::{evaluate_testset, left_half, EvalTask};
use vamoh::pointcloud::{GridSpec, PointCloud};
use vamoh::render::{save_entropy, save_samples, save_segmentation, Layout};
use vamoh::rng::{substream, STREAM_EVAL, STREAM_PRIOR};
use vamoh::tasks::{self, CategoricalMode, LatentMode, TaskOptions};
use vamoh::tensor::Matrix;
use vamoh::{Model64, Result, VamohError};

/// Environment variable that overrides the output directory.
const OUTPUT_DIR_ENV: &str = "VAMOH_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "vamoh", version, about = "Mixture-of-INR variational autoencoder over point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Expectation,
    Sample,
}

impl From<Mode> for CategoricalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Expectation => CategoricalMode::Expectation,
            Mode::Sample => CategoricalMode::Sample,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Reconstruct,
    CompleteRightHalf,
}

#[derive(clap::Args)]
struct Input {
    /// Checkpoint to load.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset container; defaults to the test split of the checkpoint's run.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated cloud indices; defaults to the first eight.
    #[arg(long, value_delimiter = ',')]
    indices: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; overrides the environment and the run config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// How mixture components are combined; defaults to the run config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Decode a posterior sample instead of the posterior mean.
    #[arg(long)]
    sample_latent: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dotted-path override such as `train.epochs=1`; repeatable.
        #[arg(long = "override", short = 'o')]
        overrides: Vec<String>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode latents drawn from the prior.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Resolution multiplier along every axis.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Base grid, e.g. `16,16`; defaults to the run config.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode clouds and decode them at their own coordinates.
    Reconstruct(Input),
    /// Encode clouds and decode them on a finer grid.
    Superres {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 2)]
        scale: usize,
    },
    /// Encode part of each cloud and decode everywhere.
    Complete {
        #[command(flatten)]
        input: Input,
        /// Fraction of points kept at random; ignored with `--left-half`.
        #[arg(long, default_value_t = 0.5)]
        keep: f64,
        /// Keep the points whose first coordinate is negative.
        #[arg(long)]
        left_half: bool,
    },
    /// Entropy and segmentation maps of the categorical posterior.
    Maps(Input),
    /// PSNR report on a test set.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "reconstruct")]
        task: Task,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report path; defaults to `eval_<task>.txt` in the output directory.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a toy dataset container.
    Synth {
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, value_delimiter = ',', default_value = "16,16")]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Container path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &VamohError) -> u8 {
    match e {
        VamohError::Config(_) | VamohError::UnknownDataset(_) => 2,
        _ => 1,
    }
}

fn error_kind(e: &VamohError) -> &'static str {
    match e {
        VamohError::Config(_) => "config",
        VamohError::UnknownDataset(_) => "unknown_dataset",
        VamohError::Dimension(_) | VamohError::CoordinateMismatch(_) => "dimension",
        VamohError::InsufficientPoints { .. } => "insufficient_points",
        VamohError::DegenerateLayer { .. } => "degenerate_layer",
        VamohError::NonConvergence { .. } => "non_convergence",
        VamohError::InvalidParameter(_) => "invalid_parameter",
        VamohError::NonFinite { .. } => "non_finite",
        VamohError::Format(_) => "format",
        VamohError::NoGradient(_) => "no_gradient",
        VamohError::Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {}", error_kind(&e), msg);
            ExitCode::from(exit_code(&e))
        }
    }
}

/// `--out`, then the environment, then the run config, then `runs`.
fn output_dir(flag: Option<&Path>, config: Option<&RunConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.map_or_else(|| PathBuf::from("runs"), |c| c.io.output_dir.clone())
}

struct Loaded {
    checkpoint: Checkpoint,
    config: Option<RunConfig>,
    model: Model64,
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let checkpoint = Checkpoint::load(path)?;
    let config = checkpoint.config.as_deref().map(|t| RunConfig::from_toml_str(t, &[])).transpose()?;
    let model = checkpoint.model::<f64>()?;
    Ok(Loaded { checkpoint, config, model })
}

fn input_data(data: Option<&Path>, config: Option<&RunConfig>) -> Result<Dataset<f64>> {
    match (data, config) {
        (Some(p), _) => Dataset::load(p),
        (None, Some(cfg)) => Ok(vamoh::run::prepare_data(cfg)?.1),
        (None, None) => Err(VamohError::Config("--data is required for checkpoints without a run config".into())),
    }
}

fn pick(data: &Dataset<f64>, indices: &[usize]) -> Result<Vec<PointCloud<f64>>> {
    let chosen: Vec<usize> = if indices.is_empty() { (0..data.len().min(8)).collect() } else { indices.to_vec() };
    chosen
        .iter()
        .map(|&i| {
            data.clouds.get(i).cloned().ok_or_else(|| {
                VamohError::InvalidParameter(format!("cloud index {i} out of range for {} clouds", data.len()))
            })
        })
        .collect()
}

fn options(input: &Input, config: Option<&RunConfig>) -> TaskOptions {
    TaskOptions {
        latent: if input.sample_latent { LatentMode::Sample } else { LatentMode::Mean },
        categorical: input.mode.map(Into::into).or(config.map(|c| c.sampling.categorical_mode)).unwrap_or_default(),
    }
}

/// Saves decoded feature sets as a container and, when gridded, a PNG.
fn write_outputs(dir: &Path, stem: &str, coords: &Matrix<f64>, outputs: &[Matrix<f64>], grid: Option<&GridSpec>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let clouds: Result<Vec<PointCloud<f64>>> = outputs
        .iter()
        .map(|f| {
            let c = PointCloud::new(coords.clone(), f.clone())?;
            match grid {
                Some(g) => c.with_grid(g.clone()),
                None => Ok(c),
            }
        })
        .collect();
    Dataset::new(clouds?, grid.cloned(), (0.0, 1.0))?.save(&dir.join(format!("{stem}.npz")))?;
    if let Some(g) = grid.filter(|g| g.ndim() <= 3 && g.ndim() >= 2) {
        save_samples(outputs, g, Layout::default(), &dir.join(format!("{stem}.png")))?;
    }
    println!("wrote {}", dir.join(format!("{stem}.npz")).display());
    Ok(())
}

fn same_coords(clouds: &[PointCloud<f64>]) -> bool {
    clouds.windows(2).all(|w| w[0].coords() == w[1].coords())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, overrides, resume } => {
            let cfg = RunConfig::load(&config, &overrides)?;
            let dir = output_dir(None, Some(&cfg));
            let resume = resume.as_deref().map(Checkpoint::load).transpose()?;
            let outcome = vamoh::run::train_run(&cfg, &dir, resume.as_ref())?;
            if let Some(last) = outcome.metrics.last() {
                println!("{}", vamoh::run::metrics_line(last));
            }
            println!("wrote {}", outcome.final_checkpoint.display());
            Ok(())
        }
        Command::Generate { ckpt, n, scale, seed, grid, mode, out } => {
            let loaded = load_checkpoint(&ckpt)?;
            let cfg = loaded.config.as_ref();
            let shape = if grid.is_empty() {
                cfg.and_then(|c| c.data.grid.clone())
                    .ok_or_else(|| VamohError::Config("--grid is required for checkpoints without a run config".into()))?
            } else {
                grid
            };
            let grid = GridSpec::new(shape)?.scaled(scale)?;
            let coords = grid.coords::<f64>();
            let mode = mode.map(Into::into).or(cfg.map(|c| c.sampling.categorical_mode)).unwrap_or_default();
            let mut rng = substream(seed, STREAM_PRIOR, 0);
            let samples = tasks::generate(&loaded.model, &coords, n, &mut rng, mode)?;
            write_outputs(&output_dir(out.as_deref(), cfg), "generate", &coords, &samples, Some(&grid))
        }
        Command::Reconstruct(input) => {
            let loaded = load_checkpoint(&input.ckpt)?;
            let cfg = loaded.config.as_ref();
            let data = input_data(input.data.as_deref(), cfg)?;
            let clouds = pick(&data, &input.indices)?;
            let opts = options(&input, cfg);
            let mut rng = substream(input.seed, STREAM_EVAL, 0);
            let outs: Result<Vec<Matrix<f64>>> =
                clouds.iter().map(|c| tasks::reconstruct(&loaded.model, c, c.coords(), &mut rng, opts)).collect();
            let grid = data.grid.as_ref().filter(|_| same_coords(&clouds));
            write_outputs(&output_dir(input.out.as_deref(), cfg), "reconstruct", clouds[0].coords(), &outs?, grid)
        }
        Command::Superres { input, scale } => {
            let loaded = load_checkpoint(&input.ckpt)?;
            let cfg = loaded.config.as_ref();
            let data = input_data(input.data.as_deref(), cfg)?;
            let grid = data.grid.clone().ok_or_else(|| VamohError::InvalidParameter("super-resolution needs gridded data".into()))?;
            let fine = grid.scaled(scale)?;
            let clouds = pick(&data, &input.indices)?;
            let opts = options(&input, cfg);
            let mut rng = substream(input.seed, STREAM_EVAL, 0);
            let outs: Result<Vec<Matrix<f64>>> =
                clouds.iter().map(|c| tasks::super_resolve(&loaded.model, c, scale, &mut rng, opts)).collect();
            write_outputs(&output_dir(input.out.as_deref(), cfg), "superres", &fine.coords(), &outs?, Some(&fine))
        }
        Command::Complete { input, keep, left_half: left } => {
            if !(keep > 0.0 && keep <= 1.0) {
                return Err(VamohError::Config(format!("--keep must lie in (0, 1], got {keep}")));
            }
            let loaded = load_checkpoint(&input.ckpt)?;
            let cfg = loaded.config.as_ref();
            let data = input_data(input.data.as_deref(), cfg)?;
            let clouds = pick(&data, &input.indices)?;
            let opts = options(&input, cfg);
            let mut rng = substream(input.seed, STREAM_EVAL, 0);
            let mut outs = Vec::with_capacity(clouds.len());
            for c in &clouds {
                let partial = if left {
                    left_half(c)?
                } else {
                    let count = ((c.len() as f64 * keep).round() as usize).max(loaded.model.min_points()).min(c.len());
                    let mut idx = rand::seq::index::sample(&mut rng, c.len(), count).into_vec();
                    idx.sort_unstable();
                    c.select(&idx)?
                };
                outs.push(tasks::complete(&loaded.model, &partial, c.coords(), &mut rng, opts)?);
            }
            let grid = data.grid.as_ref().filter(|_| same_coords(&clouds));
            write_outputs(&output_dir(input.out.as_deref(), cfg), "complete", clouds[0].coords(), &outs, grid)
        }
        Command::Maps(input) => {
            let loaded = load_checkpoint(&input.ckpt)?;
            let cfg = loaded.config.as_ref();
            let data = input_data(input.data.as_deref(), cfg)?;
            let clouds = pick(&data, &input.indices)?;
            let dir = output_dir(input.out.as_deref(), cfg);
            std::fs::create_dir_all(&dir)?;
            let mut entropy = Vec::with_capacity(clouds.len());
            let mut segments = Vec::with_capacity(clouds.len());
            for c in &clouds {
                entropy.push(tasks::entropy_map(&loaded.model, c)?);
                segments.push(tasks::segmentation_map(&loaded.model, c)?);
            }
            let k = loaded.model.num_components();
            let column = |v: Vec<f64>| Matrix::from_vec(v.len(), 1, v);
            let as_sets = |maps: Vec<Vec<f64>>, range: (f64, f64)| -> Result<Dataset<f64>> {
                let sets: Result<Vec<PointCloud<f64>>> =
                    clouds.iter().zip(maps).map(|(c, m)| PointCloud::new(c.coords().clone(), column(m)?)).collect();
                Dataset::new(sets?, None, range)
            };
            let seg_values: Vec<Vec<f64>> = segments.iter().map(|s| s.iter().map(|&i| i as f64).collect()).collect();
            as_sets(entropy.clone(), (0.0, (k as f64).ln()))?.save(&dir.join("entropy.npz"))?;
            as_sets(seg_values, (1.0, k as f64))?.save(&dir.join("segmentation.npz"))?;
            if let Some(g) = data.grid.as_ref().filter(|_| same_coords(&clouds)) {
                save_entropy(&entropy, k, g, Layout::default(), &dir.join("entropy.png"))?;
                save_segmentation(&segments, g, Layout::default(), &dir.join("segmentation.png"))?;
            }
            println!("wrote {}", dir.join("entropy.npz").display());
            Ok(())
        }
        Command::Eval { ckpt, data, task, seed, report, out } => {
            let loaded = load_checkpoint(&ckpt)?;
            let cfg = loaded.config.as_ref();
            let test = input_data(data.as_deref(), cfg)?;
            let task = match task {
                Task::Reconstruct => EvalTask::Reconstruct,
                Task::CompleteRightHalf => EvalTask::CompleteRightHalf,
            };
            let hash = cfg.map(RunConfig::hash).unwrap_or_default();
            let rep = evaluate_testset(&test, &loaded.model, task, seed, &hash)?;
            let path = match report {
                Some(p) => p,
                None => output_dir(out.as_deref(), cfg).join(format!("eval_{}.txt", task.name())),
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            vamoh::data::write_atomic(&path, rep.to_text().as_bytes())?;
            println!(
                "task {} epoch {} psnr_mean {:.4} psnr_median {:.4} psnr_min {:.4}",
                rep.task, loaded.checkpoint.epoch, rep.mean, rep.median, rep.min
            );
            Ok(())
        }
        Command::Synth { name, n, grid, seed, out } => {
            let grid = GridSpec::new(grid).map_err(|e| VamohError::Config(e.to_string()))?;
            let data = synthesize_toy_dataset(&name, n, &grid, seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            data.save(&out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
