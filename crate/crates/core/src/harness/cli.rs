//! `pca-seg` subcommands. [`run`] returns the process exit code: 0 on
//! success, 1 for usage or configuration errors, 2 for runtime failures.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use super::plan::{merge_config, DataSource, ExperimentPlan, LoadedData};
use super::runner::run_experiment;
use super::svg::emit_learning_curve;
use crate::data::{generate_synthetic, save_dataset, Dataset, DatasetSplit, Manifest, Normalization, SplitIds, SynthConfig};
use crate::error::{Error, Result};
use crate::networks::{output_geometry, parse_layers, read_checkpoint, receptive_field, DiscriminatorSpec, Granularity, LEAKY_ALPHA};
use crate::trainer::{evaluate_normalized, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "pca-seg", version, about = "Semi-supervised segmentation with patch confidence adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train one configuration.
    Train(TrainArgs),
    /// Score a checkpoint's segmenter on one partition.
    Eval(EvalArgs),
    /// Run an experiment plan (the six-row ablation by default).
    Experiment(ExperimentArgs),
    /// Print the receptive field and decision-map size of a discriminator.
    Geometry(GeometryArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset directory written by `gen-data`; defaults to the built-in
    /// synthetic set.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Labeled share of the training pool.
    #[arg(long, default_value_t = 0.1)]
    labeled_fraction: f64,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match &self.data {
            Some(path) => DataSource::Directory {
                path: path.clone(),
                split_seed: 0,
            },
            None => DataSource::default(),
        }
    }

    fn load(&self) -> Result<DatasetSplit> {
        LoadedData::load(&self.source())?.split(self.labeled_fraction)
    }
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generator settings as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    labeled_fraction: f64,
    #[arg(long, default_value_t = 30)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training config as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Partition {
    Labeled,
    Unlabeled,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum NormArg {
    None,
    UnitRange,
    Zscore,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::None => Normalization::None,
            NormArg::UnitRange => Normalization::UnitRange,
            NormArg::Zscore => Normalization::Zscore,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Partition,
    /// Must match the normalisation used in training.
    #[arg(long, value_enum, default_value = "unit-range")]
    normalization: NormArg,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Plan as JSON; defaults to the six-row ablation.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides every run's iteration count.
    #[arg(long)]
    iterations: Option<usize>,
    /// Comma-separated seeds for every run.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Dataset directory to use instead of the plan's data source.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GranularityArg {
    Image,
    Patch,
    Pixel,
}

#[derive(Debug, Args)]
struct GeometryArgs {
    /// Layers as `out:kernel:stride:pad`, comma separated.
    #[arg(long, default_value = "32:4:2:1,64:4:2:1,1:4:2:1")]
    layers: String,
    /// Square input side length.
    #[arg(long, default_value_t = 256)]
    input: usize,
    #[arg(long, value_enum, default_value = "patch")]
    granularity: GranularityArg,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    if let Some(c) = a.count {
        cfg.count = c;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.noise_sigma {
        cfg.noise_sigma = n;
    }
    let samples = generate_synthetic(&cfg)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = SplitIds::new(&ids, a.labeled_fraction, a.split_seed, a.val, a.test)?;
    let manifest = Manifest {
        hw: cfg.hw,
        classes: cfg.classes,
        ids,
        split: Some(split),
        synth: Some(cfg),
    };
    let count = samples.len();
    save_dataset(&a.out, &Dataset { manifest, samples })?;
    println!("wrote {count} samples to {}", a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => {
            let v: serde_json::Value = read_json(p)?;
            merge_config(&TrainConfig::default(), &v)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.total_iterations = n;
    }
    cfg.validate()?;
    let data = a.data.load()?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let out = train(&cfg, &data, Some(&a.out))?;
    if !out.log.rows.is_empty() {
        emit_learning_curve(&out.log, &a.out.join("curve.svg"))?;
    }
    let report = evaluate_normalized(&out.best_segmenter, &data.test, cfg.normalization)?;
    fs::write(a.out.join("report.csv"), report.to_csv())?;
    println!(
        "best iteration {} val dsc {} test dsc {:.4}",
        out.best_iter,
        out.best_val_dsc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        report.mean.dsc
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let data = a.data.load()?;
    let samples = match a.split {
        Partition::Labeled => &data.labeled,
        Partition::Unlabeled => &data.unlabeled,
        Partition::Val => &data.val,
        Partition::Test => &data.test,
    };
    let report = evaluate_normalized(&ckpt.segmenter, samples, a.normalization.into())?;
    let csv = report.to_csv();
    if let Some(p) = &a.out {
        fs::write(p, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn experiment_cmd(a: &ExperimentArgs) -> Result<()> {
    let mut plan: ExperimentPlan = match &a.plan {
        Some(p) => read_json(p)?,
        None => ExperimentPlan::ablation(),
    };
    if let Some(n) = a.iterations {
        plan.base.total_iterations = n;
        for r in &mut plan.runs {
            if let Some(obj) = r.overrides.as_object_mut() {
                obj.remove("total_iterations");
            }
        }
    }
    if let Some(seeds) = &a.seeds {
        plan.set_seeds(seeds);
    }
    if let Some(path) = &a.data {
        plan.data = DataSource::Directory {
            path: path.clone(),
            split_seed: 0,
        };
    }
    let table = run_experiment(&plan, &a.out)?;
    print!("{}", table.to_csv());
    Ok(())
}

/// `rf=<n> out=<h>x<w>` for a layer stack on a square input. Image
/// granularity has no per-cell field and prints `rf=-`.
pub fn geometry_line(layers: &str, input: usize, granularity: Granularity) -> Result<String> {
    let spec = DiscriminatorSpec {
        granularity,
        in_channels: 1,
        layers: parse_layers(layers)?,
        activation_alpha: LEAKY_ALPHA,
    };
    let (h, w) = output_geometry(&spec, (input, input))?;
    let rf = match granularity {
        Granularity::Image => "-".to_string(),
        _ => receptive_field(&spec)?.to_string(),
    };
    Ok(format!("rf={rf} out={h}x{w}"))
}

fn geometry_cmd(a: &GeometryArgs) -> Result<()> {
    let g = match a.granularity {
        GranularityArg::Image => Granularity::Image,
        GranularityArg::Patch => Granularity::Patch,
        GranularityArg::Pixel => Granularity::Pixel,
    };
    println!("{}", geometry_line(&a.layers, a.input, g)?);
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Experiment(a) => experiment_cmd(a),
        Command::Geometry(a) => geometry_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
