//! Command-line entry points. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

pub use config::RunConfig;

use crate::adaptive::{calibrate, predict_adaptive, CalibrationReport};
use crate::data::image_io::read_luminance;
use crate::data::synthetic::{class_dir_name, generate_synthetic_dataset};
use crate::data::{
    load_dataset, preprocess, stratified_split, synthetic_class_names, write_dataset, Dataset, LabeledSample, Split,
    SplitManifest, DEFAULT_RATIOS,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, noise_sweep, write_sweep_csv, SweepPathway};
use crate::explain::{gradcam, write_saliency};
use crate::model::{load_checkpoint, Network, Variant};
use crate::training::{run_ablation, train, TrainConfig};

pub const THREADS_ENV: &str = "CORTINET_THREADS";

#[derive(Parser, Debug)]
#[command(name = "cortinet", version, about = "Dual-stream wavelet CNN classifier")]
struct Cli {
    /// Worker threads (default: CORTINET_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a stratified split of a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write metrics of a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train, validation, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Split manifest (default: split.csv beside the checkpoint).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Classify images with the calibrated pathway.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Calibration report (default: calibration.txt beside the checkpoint).
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Also write predictions.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Measure structural-pathway accuracy and fix the inference pathway.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value = "validation")]
        split: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Use every image of this dataset directory instead of a split.
        #[arg(long)]
        calibration_data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Structural Grad-CAM maps and overlays.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target class (default: the structural prediction).
        #[arg(long)]
        class: Option<usize>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Accuracy under increasing noise.
    NoiseSweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        noise_kind: Option<String>,
        /// Comma-separated noise levels.
        #[arg(long)]
        sigmas: Option<String>,
        /// structural, fused, adaptive or all.
        #[arg(long, default_value = "all")]
        pathway: String,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic dataset tree.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        side: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate ablation variants.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated variants (default: all four).
        #[arg(long, default_value = "raw_pixel,structural_only,detail_only,full")]
        variants: String,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let outcome = configure_threads(cli.threads).and_then(|_| dispatch(cli.command));
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `cortinet --help` for usage");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CmdResult {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::Usage("thread count must be at least 1".into()));
        }
        // a pool that already exists (repeated in-process runs) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &common.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        config.train.seed = seed;
    }
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.set(k, v)?;
    }
    config.validate()?;
    Ok(config)
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::Train { data, out, common } => cmd_train(&data, &out, &run_config(&common)?),
        Command::Eval {
            data,
            checkpoint,
            out,
            split,
            manifest,
            common,
        } => cmd_eval(&data, &checkpoint, &out, &split, manifest.as_deref(), run_config(&common)?),
        Command::Predict {
            checkpoint,
            calibration,
            out,
            inputs,
        } => cmd_predict(&checkpoint, calibration.as_deref(), out.as_deref(), &inputs),
        Command::Calibrate {
            data,
            checkpoint,
            out,
            gamma,
            split,
            manifest,
            calibration_data,
            common,
        } => {
            let mut config = run_config(&common)?;
            if let Some(g) = gamma {
                config.set("gamma", &g.to_string())?;
                config.validate()?;
            }
            let source = match &calibration_data {
                Some(dir) => SetSource::Directory(dir),
                None => SetSource::Split(&split, manifest.as_deref()),
            };
            cmd_calibrate(&data, &checkpoint, &out, source, config)
        }
        Command::Gradcam {
            checkpoint,
            out,
            class,
            inputs,
        } => cmd_gradcam(&checkpoint, &out, class, &inputs),
        Command::NoiseSweep {
            data,
            checkpoint,
            out,
            noise_kind,
            sigmas,
            pathway,
            gamma,
            manifest,
            common,
        } => {
            let mut config = run_config(&common)?;
            if let Some(k) = noise_kind {
                config.set("noise_kind", &k)?;
            }
            if let Some(s) = sigmas {
                config.set("sigmas", &s)?;
            }
            if let Some(g) = gamma {
                config.set("gamma", &g.to_string())?;
            }
            config.validate()?;
            let pathways = match pathway.as_str() {
                "all" => vec![SweepPathway::Structural, SweepPathway::Fused, SweepPathway::Adaptive],
                p => vec![p.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?],
            };
            cmd_noise_sweep(&data, &checkpoint, &out, manifest.as_deref(), &pathways, config)
        }
        Command::SynthData {
            out,
            per_class,
            side,
            common,
        } => {
            let mut config = run_config(&common)?;
            if let Some(n) = per_class {
                config.per_class = n;
            }
            if let Some(s) = side {
                config.image_side = s;
            }
            cmd_synth_data(&out, &config)
        }
        Command::Ablation {
            data,
            out,
            variants,
            common,
        } => {
            let variants = variants
                .split(',')
                .map(|v| v.parse::<Variant>())
                .collect::<Result<Vec<_>>>()?;
            cmd_ablation(&data, &out, &variants, &run_config(&common)?)
        }
    }
}

/// Loads a dataset and resizes every image to the model input size.
fn load_for_model(dir: &Path, input_side: usize, num_classes: usize) -> Result<Dataset> {
    let mut ds = load_dataset(dir)?;
    if ds.num_classes() != num_classes {
        return Err(Error::Dataset(format!(
            "{} has {} classes but the model expects {num_classes}",
            dir.display(),
            ds.num_classes()
        )));
    }
    ds.samples = ds.samples.par_iter().map(|s| preprocess(s, input_side)).collect();
    Ok(ds)
}

fn split_datasets(ds: &Dataset, seed: u64, out: &Path) -> Result<[Vec<LabeledSample>; 3]> {
    let manifest = stratified_split(&ds.samples, DEFAULT_RATIOS, seed)?;
    manifest.save(&out.join("split.csv"))?;
    Ok([
        manifest.select(&ds.samples, Split::Train)?,
        manifest.select(&ds.samples, Split::Validation)?,
        manifest.select(&ds.samples, Split::Test)?,
    ])
}

fn select_split(ds: &Dataset, split: &str, manifest: Option<&Path>, checkpoint: &Path) -> Result<Vec<LabeledSample>> {
    if split == "all" {
        return Ok(ds.samples.clone());
    }
    let which = Split::parse(split).map_err(|e| Error::Config(e.to_string()))?;
    let path = manifest.map_or_else(|| sibling(checkpoint, "split.csv"), Path::to_path_buf);
    SplitManifest::load(&path)?.select(&ds.samples, which)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn train_config_for(config: &RunConfig, checkpoint_dir: &Path) -> TrainConfig {
    TrainConfig {
        checkpoint_dir: Some(checkpoint_dir.to_path_buf()),
        ..config.train.clone()
    }
}

fn cmd_train(data: &Path, out: &Path, config: &RunConfig) -> CmdResult {
    config.write_effective(out)?;
    let ds = load_for_model(data, config.model.input_side, config.model.num_classes)?;
    let [train_set, val_set, _] = split_datasets(&ds, config.seed(), out)?;
    let net = Network::build(&config.model, config.seed())?;
    let outcome = train(net, &train_set, &val_set, &train_config_for(config, out))?;
    outcome.history.save(&out.join("history.csv"))?;
    let best = &outcome.history.records[outcome.best_epoch - 1];
    println!(
        "best epoch {} of {}: val_loss {} val_acc {}",
        outcome.best_epoch,
        outcome.history.records.len(),
        best.val_loss,
        best.val_acc
    );
    Ok(())
}

/// Loads a checkpoint and records its model configuration in `config`.
fn load_model(checkpoint: &Path, config: &mut RunConfig) -> Result<Network> {
    let net = load_checkpoint(checkpoint)?;
    config.model = net.config().clone();
    Ok(net)
}

fn cmd_eval(
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    split: &str,
    manifest: Option<&Path>,
    mut config: RunConfig,
) -> CmdResult {
    let net = load_model(checkpoint, &mut config)?;
    config.write_effective(out)?;
    let ds = load_for_model(data, config.model.input_side, config.model.num_classes)?;
    let set = select_split(&ds, split, manifest, checkpoint)?;
    let report = evaluate(&net, &set, &ds.class_names)?;
    report.write(out)?;
    println!("{split}: {} samples, accuracy {}", set.len(), report.overall_accuracy);
    Ok(())
}

enum SetSource<'a> {
    Split(&'a str, Option<&'a Path>),
    Directory(&'a Path),
}

fn cmd_calibrate(data: &Path, checkpoint: &Path, out: &Path, source: SetSource, mut config: RunConfig) -> CmdResult {
    let net = load_model(checkpoint, &mut config)?;
    config.write_effective(out)?;
    let (input_side, k) = (config.model.input_side, config.model.num_classes);
    let set = match source {
        SetSource::Directory(dir) => load_for_model(dir, input_side, k)?.samples,
        SetSource::Split(split, manifest) => {
            select_split(&load_for_model(data, input_side, k)?, split, manifest, checkpoint)?
        }
    };
    let report = calibrate(&net, &set, config.gamma)?;
    report.save(&out.join("calibration.txt"))?;
    println!(
        "a_a {} over {} samples, gamma {}: {}",
        report.a_a, report.n_c, report.gamma, report.decision
    );
    Ok(())
}

fn read_input(path: &Path, side: usize) -> Result<LabeledSample> {
    let image = read_luminance(path)?;
    let sample = LabeledSample {
        image,
        label: 0,
        source: path.display().to_string(),
    };
    Ok(preprocess(&sample, side))
}

fn cmd_predict(checkpoint: &Path, calibration: Option<&Path>, out: Option<&Path>, inputs: &[PathBuf]) -> CmdResult {
    let net = load_checkpoint(checkpoint)?;
    let report_path = calibration.map_or_else(|| sibling(checkpoint, "calibration.txt"), Path::to_path_buf);
    if !report_path.exists() {
        return Err(Failure::Runtime(Error::InvalidArgument(format!(
            "adaptive prediction needs a calibration report; {} does not exist (run `cortinet calibrate`)",
            report_path.display()
        ))));
    }
    let report = CalibrationReport::load(&report_path)?;
    let side = net.config().input_side;
    let mut csv = String::from("input,label,pathway,probabilities\n");
    for path in inputs {
        let sample = read_input(path, side)?;
        let p = predict_adaptive(&net, &sample.image, &report)?;
        let probs: Vec<String> = p.probabilities.data().iter().map(|v| v.to_string()).collect();
        let line = format!("{},{},{}", p.label, p.pathway, probs.join(";"));
        println!("{line}");
        writeln!(csv, "{},{line}", path.display()).unwrap();
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        std::fs::write(dir.join("predictions.csv"), csv).map_err(Error::from)?;
    }
    Ok(())
}

fn cmd_gradcam(checkpoint: &Path, out: &Path, class: Option<usize>, inputs: &[PathBuf]) -> CmdResult {
    let mut config = RunConfig::default();
    let net = load_model(checkpoint, &mut config)?;
    config.write_effective(out)?;
    let side = config.model.input_side;
    for path in inputs {
        let sample = read_input(path, side)?;
        let target = match class {
            Some(c) => c,
            None => {
                let input = net.prepare(&sample.image)?;
                match net.predict_structural(&input) {
                    Ok(z) => z.argmax(),
                    Err(_) => net.predict(&input)?.primary.argmax(),
                }
            }
        };
        let map = gradcam(&net, &sample.image, target)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        write_saliency(&map, &sample.image, out, stem)?;
        println!("{}: class {target}", path.display());
    }
    Ok(())
}

fn cmd_noise_sweep(
    data: &Path,
    checkpoint: &Path,
    out: &Path,
    manifest: Option<&Path>,
    pathways: &[SweepPathway],
    mut config: RunConfig,
) -> CmdResult {
    let net = load_model(checkpoint, &mut config)?;
    config.write_effective(out)?;
    let ds = load_for_model(data, config.model.input_side, config.model.num_classes)?;
    let test = select_split(&ds, "test", manifest, checkpoint)?;
    let validation = select_split(&ds, "validation", manifest, checkpoint)?;
    let mut rows = Vec::new();
    for &pathway in pathways {
        if pathway != SweepPathway::Fused && !net.has_structural_head() {
            log::warn!("skipping {pathway} pathway: {} model has no structural head", net.config().variant);
            continue;
        }
        rows.extend(noise_sweep(
            &net,
            &test,
            config.noise_kind,
            &config.sigmas,
            pathway,
            Some((&validation, config.gamma)),
            config.seed(),
        )?);
    }
    write_sweep_csv(&rows, &out.join("noise_sweep.csv"))?;
    for r in &rows {
        println!("{} sigma {} {}: {}", r.noise_kind, r.sigma, r.pathway, r.accuracy);
    }
    Ok(())
}

fn cmd_synth_data(out: &Path, config: &RunConfig) -> CmdResult {
    let samples = generate_synthetic_dataset(config.per_class, config.image_side, config.seed())?;
    write_dataset(out, &synthetic_class_names(), &samples)?;
    config.write_effective(out)?;
    println!(
        "{} images in {} classes under {} (e.g. {})",
        samples.len(),
        synthetic_class_names().len(),
        out.display(),
        class_dir_name(0)
    );
    Ok(())
}

fn cmd_ablation(data: &Path, out: &Path, variants: &[Variant], config: &RunConfig) -> CmdResult {
    config.write_effective(out)?;
    let ds = load_for_model(data, config.model.input_side, config.model.num_classes)?;
    let [train_set, val_set, test_set] = split_datasets(&ds, config.seed(), out)?;
    let mut summary = String::from("variant,parameters,val_accuracy,test_accuracy,noisy_test_accuracy\n");
    for &variant in variants {
        let dir = out.join(variant.name());
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        let result = run_ablation(
            variant,
            &train_set,
            &val_set,
            &test_set,
            &ds.class_names,
            &config.model,
            &train_config_for(config, &dir),
        )?;
        result.outcome.history.save(&dir.join("history.csv"))?;
        result.report.write(&dir)?;
        let net = &result.outcome.network;
        let noisy = noise_sweep(
            net,
            &test_set,
            crate::data::NoiseKind::Gaussian,
            &[config.ablation_sigma],
            SweepPathway::Fused,
            None,
            config.seed(),
        )?;
        let val_acc = result.outcome.history.records[result.outcome.best_epoch - 1].val_acc;
        writeln!(
            summary,
            "{variant},{},{val_acc},{},{}",
            net.parameter_count(),
            result.report.overall_accuracy,
            noisy[0].accuracy
        )
        .unwrap();
        println!("{variant}: test accuracy {}", result.report.overall_accuracy);
    }
    std::fs::write(out.join("ablation.csv"), summary).map_err(Error::from)?;
    Ok(())
}
