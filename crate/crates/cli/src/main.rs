//! Command-line pipeline for spiking wafer-map classification.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

mod config;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use wafer2spike::checkpoint::{load_checkpoint, save_checkpoint};
use wafer2spike::data::{
    augment_minority, generate_synthetic, import_csv, load_wfm, resize_nearest, save_wfm, split,
    to_sample, uniform_counts, ClassLabel, Dataset, SplitSpec, WaferMap,
};
use wafer2spike::energy::{estimate_network_energy, power_dnn_mj, FiringStats};
use wafer2spike::layers::Network;
use wafer2spike::metrics::MetricsBundle;
use wafer2spike::tensor::Tensor;
use wafer2spike::train::{evaluate, train_with_hook, TrainConfig, TrainSample};

#[derive(Parser)]
#[command(
    name = "wafer2spike",
    about = "Spiking neural network training and inference for wafer-map defect classification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset (WFM1).
    Synth(SynthArgs),
    /// Convert a CSV dataset to WFM1.
    Import(ImportArgs),
    /// Balance minority classes with D4 transforms.
    Augment(AugmentArgs),
    /// Partition a dataset into ratio parts.
    Split(SplitArgs),
    /// Train a network from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Estimate inference energy from measured firing rates.
    Energy(EnergyArgs),
    /// Summarize a dataset or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Maps generated per class (9 classes).
    #[arg(long)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output WFM1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// Input CSV: height,width,label,cells rows.
    #[arg(long)]
    csv: PathBuf,
    /// Output WFM1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input WFM1 file.
    #[arg(long)]
    data: PathBuf,
    /// Per-class target count; classes at or above it are left alone.
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Reuse transform results when a class lacks distinct ones.
    #[arg(long)]
    allow_repeats: bool,
    /// Output WFM1 file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Input WFM1 file.
    #[arg(long)]
    data: PathBuf,
    /// Comma- or colon-separated ratios, e.g. "0.8,0.2" or "8:2";
    /// normalized to sum to 1.
    #[arg(long)]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shuffle globally instead of per class.
    #[arg(long)]
    no_stratify: bool,
    /// Output directory for part1.wfm, part2.wfm, ...
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override [data].input.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Override [output].dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override [train].epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override [train].batch_size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override [train].learning_rate.
    #[arg(long)]
    lr: Option<f32>,
    /// Override [train].seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// WFM1 dataset to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Which part of the dataset to use: "none" (all), "train" (first part),
    /// or "test" (last part). Parts come from --ratios.
    #[arg(long, default_value = "none")]
    split: String,
    /// Ratios used when --split is train or test, e.g. "0.8,0.2".
    #[arg(long, default_value = "0.8,0.2")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_stratify: bool,
    /// Directory for metrics.txt and confusion.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

#[derive(Args)]
struct EnergyArgs {
    /// Checkpoint to measure (omit when using --flops).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset providing the firing-rate sample.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Simulation steps; defaults to the checkpoint's trained value.
    #[arg(long, short = 'T')]
    time_steps: Option<usize>,
    /// Cap on the number of maps measured (0 = all).
    #[arg(long, default_value_t = 256)]
    sample_limit: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Directory for energy.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Baseline mode: convert a conventional FLOP count to millijoules and
    /// exit (no checkpoint needed).
    #[arg(long)]
    flops: Option<f64>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct InspectArgs {
    /// Summarize a WFM1 dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Summarize a W2S1 checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Failures are split into configuration/usage problems (exit 2) and runtime
/// failures (exit 1).
enum CliError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

trait IntoCli<T> {
    /// Classify an error as a usage/config problem (exit 2).
    fn config_err(self) -> CliResult<T>;
    /// Classify an error as a runtime failure (exit 1).
    fn runtime_err(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> IntoCli<T> for std::result::Result<T, E> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.into()))
    }
    fn runtime_err(self) -> CliResult<T> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Import(a) => cmd_import(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Energy(a) => cmd_energy(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn require_input(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(anyhow!(
            "{what} {} does not exist or is not a file",
            path.display()
        )))
    }
}

fn parse_ratios(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = text
        .split([',', ':'])
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .with_context(|| format!("bad ratio component {p:?}"))
        })
        .collect::<Result<_>>()?;
    let sum: f64 = parts.iter().sum();
    if parts.is_empty() || sum <= 0.0 {
        bail!("ratios {text:?} must contain positive numbers");
    }
    Ok(parts.iter().map(|r| r / sum).collect())
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    let dataset = generate_synthetic(&uniform_counts(a.per_class), a.seed).runtime_err()?;
    save_wfm(&dataset, &a.out).runtime_err()?;
    println!(
        "wrote {} synthetic maps ({} per class, seed {}) to {}",
        dataset.len(),
        a.per_class,
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn cmd_import(a: ImportArgs) -> CliResult<()> {
    require_input(&a.csv, "CSV file")?;
    let dataset = import_csv(&a.csv).config_err()?;
    save_wfm(&dataset, &a.out).runtime_err()?;
    println!("imported {} maps to {}", dataset.len(), a.out.display());
    Ok(())
}

fn cmd_augment(a: AugmentArgs) -> CliResult<()> {
    require_input(&a.data, "data file")?;
    let dataset = load_wfm(&a.data).config_err()?;
    let counts = dataset.class_counts();
    let targets: Vec<(ClassLabel, usize)> = ClassLabel::ALL
        .iter()
        .filter(|&&label| {
            let have = counts[label.code() as usize];
            have > 0 && have < a.target
        })
        .map(|&label| (label, a.target))
        .collect();
    for &label in &ClassLabel::ALL {
        if counts[label.code() as usize] == 0 {
            println!("note: class {label} has no templates and cannot be augmented");
        }
    }
    let (augmented, repeated) =
        augment_minority(&dataset, &targets, a.seed, a.allow_repeats).runtime_err()?;
    if repeated {
        println!("note: some transform results were reused to reach the target");
    }
    save_wfm(&augmented, &a.out).runtime_err()?;
    let after = augmented.class_counts();
    println!(
        "augmented {} -> {} maps, per-class counts {:?}, wrote {}",
        dataset.len(),
        augmented.len(),
        after,
        a.out.display()
    );
    Ok(())
}

fn cmd_split(a: SplitArgs) -> CliResult<()> {
    require_input(&a.data, "data file")?;
    let dataset = load_wfm(&a.data).config_err()?;
    let ratios = parse_ratios(&a.ratios).config_err()?;
    let spec = SplitSpec { ratios, seed: a.seed, stratified: !a.no_stratify };
    let parts = split(&dataset, &spec).config_err()?;
    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .runtime_err()?;
    for (i, part) in parts.iter().enumerate() {
        let path = a.out.join(format!("part{}.wfm", i + 1));
        save_wfm(part, &path).runtime_err()?;
        println!("part{}: {} maps -> {}", i + 1, part.len(), path.display());
    }
    Ok(())
}

/// Resizes maps to the model's input extent and normalizes them to samples.
fn dataset_to_samples(dataset: &Dataset, height: usize, width: usize) -> Result<Vec<TrainSample>> {
    dataset
        .maps
        .iter()
        .map(|map| {
            let fitted: WaferMap;
            let map = if map.height() == height && map.width() == width {
                map
            } else if height == width {
                fitted = resize_nearest(map, height)?;
                &fitted
            } else {
                bail!(
                    "map is {}×{} but the model wants {height}×{width}; \
                     non-square model inputs cannot be resized",
                    map.height(),
                    map.width()
                );
            };
            Ok(to_sample(map))
        })
        .collect()
}

fn write_metrics_report(
    out_dir: &Path,
    bundle: &MetricsBundle,
    confusion: &wafer2spike::metrics::ConfusionMatrix,
    mean_loss: Option<f64>,
) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let metrics_path = out_dir.join("metrics.txt");
    let mut text = String::new();
    text.push_str(&format!(
        "{:<12} {:>7} {:>10} {:>10} {:>10} {:>10}\n",
        "class", "count", "accuracy", "recall", "precision", "f1"
    ));
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.4}"),
        None => "null".to_string(),
    };
    for (i, stats) in bundle.per_class.iter().enumerate() {
        let label = ClassLabel::from_code(i as u8).expect("nine classes");
        text.push_str(&format!(
            "{:<12} {:>7} {:>10} {:>10} {:>10} {:>10}\n",
            label.name(),
            confusion.row_sum(i),
            fmt(stats.accuracy_onevall),
            fmt(stats.recall),
            fmt(stats.precision),
            fmt(stats.f1),
        ));
    }
    text.push_str(&format!(
        "overall_accuracy {} ({} of {})\n",
        fmt(bundle.overall_accuracy),
        confusion.trace(),
        confusion.total()
    ));
    if let Some(loss) = mean_loss {
        text.push_str(&format!("mean_loss {loss}\n"));
    }
    fs::write(&metrics_path, &text)
        .with_context(|| format!("cannot write {}", metrics_path.display()))?;
    print!("{text}");

    let confusion_path = out_dir.join("confusion.csv");
    let mut csv = String::from("truth\\prediction");
    for c in 0..confusion.classes() {
        csv.push(',');
        csv.push_str(ClassLabel::from_code(c as u8).expect("nine classes").name());
    }
    csv.push('\n');
    for t in 0..confusion.classes() {
        csv.push_str(ClassLabel::from_code(t as u8).expect("nine classes").name());
        for p in 0..confusion.classes() {
            csv.push_str(&format!(",{}", confusion.count(t, p)));
        }
        csv.push('\n');
    }
    fs::write(&confusion_path, &csv)
        .with_context(|| format!("cannot write {}", confusion_path.display()))?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    require_input(&a.config, "config file")?;
    let mut cfg = RunConfig::load(&a.config).config_err()?;
    if let Some(data) = a.data {
        cfg.data.input = Some(data);
    }
    if let Some(out) = a.out {
        cfg.output.dir = out;
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch) = a.batch_size {
        cfg.train.batch_size = batch;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }

    let Some(input) = cfg.data.input.clone() else {
        return Err(CliError::Config(anyhow!(
            "no training data: set [data].input in the config or pass --data"
        )));
    };
    require_input(&input, "training data")?;
    let net_config = cfg.network_config().config_err()?;
    let train_config = cfg.train_config().config_err()?;
    train_config.validate().config_err()?;

    let dataset = load_wfm(&input).config_err()?;
    if dataset.is_empty() {
        return Err(CliError::Config(anyhow!(
            "training data {} contains no maps",
            input.display()
        )));
    }

    // Optional split: first part trains, last part is the held-out report set.
    let (train_set, eval_set) = match &cfg.data.ratios {
        Some(ratios) if ratios.len() >= 2 => {
            // Accept weights like [8, 2] as well as normalized fractions.
            let sum: f64 = ratios.iter().sum();
            if sum <= 0.0 {
                return Err(CliError::Config(anyhow!(
                    "data.ratios must contain positive numbers"
                )));
            }
            let spec = SplitSpec {
                ratios: ratios.iter().map(|r| r / sum).collect(),
                seed: cfg.data.seed,
                stratified: cfg.data.stratified,
            };
            let mut parts = split(&dataset, &spec).config_err()?;
            let eval = parts.pop().expect("two or more parts");
            let train = parts.remove(0);
            (train, Some(eval))
        }
        _ => (dataset, None),
    };

    let h = net_config.input_height;
    let w = net_config.input_width;
    let train_samples = dataset_to_samples(&train_set, h, w).config_err()?;
    let eval_samples = match &eval_set {
        Some(set) => Some(dataset_to_samples(set, h, w).config_err()?),
        None => None,
    };

    let out_dir = cfg.output.dir.clone();
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .runtime_err()?;
    let log_path = out_dir.join("train_log.txt");
    let mut log = fs::File::create(&log_path)
        .with_context(|| format!("cannot create {}", log_path.display()))
        .runtime_err()?;

    let mut net = Network::init(net_config, train_config.seed).config_err()?;
    println!(
        "training on {} maps ({} held out), {} epochs, batch {}",
        train_samples.len(),
        eval_samples.as_ref().map_or(0, Vec::len),
        train_config.epochs,
        train_config.batch_size
    );

    train_with_hook(&train_samples, &mut net, &train_config, |epoch, net, report| {
        let line = format!(
            "epoch={} mean_loss={} train_accuracy={} wall_seconds={:.3}",
            report.epoch, report.mean_loss, report.train_accuracy, report.wall_seconds
        );
        println!("{line}");
        // The log and checkpoint are flushed every epoch so an interrupted
        // run keeps its partial artifacts.
        writeln!(log, "{line}").map_err(|e| {
            wafer2spike::Error::io(&log_path, e)
        })?;
        log.flush().map_err(|e| wafer2spike::Error::io(&log_path, e))?;
        save_checkpoint(net, out_dir.join(format!("model_epoch{epoch}.w2s")))?;
        Ok(true)
    })
    .runtime_err()?;

    let (report_samples, report_name) = match &eval_samples {
        Some(s) => (s.as_slice(), "held-out"),
        None => (train_samples.as_slice(), "training"),
    };
    println!("evaluating on the {report_name} set ({} maps)", report_samples.len());
    let eval = evaluate(report_samples, &net, &train_config).runtime_err()?;
    write_metrics_report(&out_dir, &eval.metrics, &eval.confusion, Some(eval.mean_loss))
        .runtime_err()?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    require_input(&a.checkpoint, "checkpoint")?;
    require_input(&a.data, "data file")?;
    let net = load_checkpoint(&a.checkpoint).config_err()?;
    let dataset = load_wfm(&a.data).config_err()?;

    let part = match a.split.as_str() {
        "none" => dataset,
        which @ ("train" | "test") => {
            let ratios = parse_ratios(&a.ratios).config_err()?;
            let spec = SplitSpec { ratios, seed: a.seed, stratified: !a.no_stratify };
            let mut parts = split(&dataset, &spec).config_err()?;
            if which == "train" {
                parts.remove(0)
            } else {
                parts.pop().expect("validated ratios give at least one part")
            }
        }
        other => {
            return Err(CliError::Config(anyhow!(
                "--split must be none, train, or test (got {other:?})"
            )));
        }
    };
    if part.is_empty() {
        return Err(CliError::Config(anyhow!("evaluation set is empty")));
    }

    let samples = dataset_to_samples(&part, net.config.input_height, net.config.input_width)
        .config_err()?;
    let cfg = TrainConfig {
        time_steps: net.config.time_steps,
        batch_size: a.batch_size,
        ..TrainConfig::default()
    };
    let eval = evaluate(&samples, &net, &cfg).runtime_err()?;
    write_metrics_report(&a.out, &eval.metrics, &eval.confusion, Some(eval.mean_loss))
        .runtime_err()?;
    Ok(())
}

fn cmd_energy(a: EnergyArgs) -> CliResult<()> {
    if let Some(flops) = a.flops {
        let mj = power_dnn_mj(flops);
        println!("{flops} FLOPs -> {mj} mJ at 12.5 pJ/FLOP (conventional execution)");
        return Ok(());
    }
    let Some(checkpoint) = &a.checkpoint else {
        return Err(CliError::Config(anyhow!(
            "energy needs --checkpoint and --data (or --flops for baseline conversion)"
        )));
    };
    let Some(data) = &a.data else {
        return Err(CliError::Config(anyhow!("energy needs --data alongside --checkpoint")));
    };
    require_input(checkpoint, "checkpoint")?;
    require_input(data, "data file")?;
    let net = load_checkpoint(checkpoint).config_err()?;
    let dataset = load_wfm(data).config_err()?;
    if dataset.is_empty() {
        return Err(CliError::Config(anyhow!("data file {} is empty", data.display())));
    }
    let time_steps = a.time_steps.unwrap_or(net.config.time_steps);
    let samples =
        dataset_to_samples(&dataset, net.config.input_height, net.config.input_width)
            .config_err()?;
    let limit = if a.sample_limit == 0 { samples.len() } else { a.sample_limit.min(samples.len()) };

    // Measure firing rates batch by batch and pool the spike counts.
    let mut pooled: Vec<FiringStats> = Vec::new();
    let activation = wafer2spike::lif::SpikeActivation::default();
    let mut at = 0;
    while at < limit {
        let end = (at + a.batch_size).min(limit);
        let batch = &samples[at..end];
        let mut data_vec =
            Vec::with_capacity(batch.len() * net.config.input_height * net.config.input_width);
        for s in batch {
            data_vec.extend_from_slice(s.input.data());
        }
        let inputs = Tensor::from_vec(
            &[batch.len(), 1, net.config.input_height, net.config.input_width],
            data_vec,
        )
        .runtime_err()?;
        let stats =
            wafer2spike::energy::measure_firing_rates(&net, &inputs, time_steps, &activation)
                .runtime_err()?;
        if pooled.is_empty() {
            pooled = stats;
        } else {
            for (acc, s) in pooled.iter_mut().zip(stats) {
                acc.spikes += s.spikes;
                acc.samples += s.samples;
            }
        }
        at = end;
    }

    let report = estimate_network_energy(&net.config, &pooled, time_steps).runtime_err()?;
    print!("{}", report.table());
    println!(
        "measured over {limit} maps, T={time_steps}; spiking total {:.6} mJ, with encoder {:.6} mJ",
        report.spiking_millijoules, report.total_millijoules
    );
    fs::create_dir_all(&a.out)
        .with_context(|| format!("cannot create {}", a.out.display()))
        .runtime_err()?;
    let csv_path = a.out.join("energy.csv");
    fs::write(&csv_path, report.csv())
        .with_context(|| format!("cannot write {}", csv_path.display()))
        .runtime_err()?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> CliResult<()> {
    if let Some(data) = &a.data {
        require_input(data, "data file")?;
        let dataset = load_wfm(data).config_err()?;
        println!("dataset {}: {} maps", data.display(), dataset.len());
        let counts = dataset.class_counts();
        for label in ClassLabel::ALL {
            println!("  {:<12} {}", label.name(), counts[label.code() as usize]);
        }
        if let Some(map) = dataset.maps.first() {
            println!("  extent of first map: {}×{}", map.height(), map.width());
        }
        return Ok(());
    }
    if let Some(checkpoint) = &a.checkpoint {
        require_input(checkpoint, "checkpoint")?;
        let net = load_checkpoint(checkpoint).config_err()?;
        let c = &net.config;
        println!("checkpoint {}:", checkpoint.display());
        println!("  input {}×{}", c.input_height, c.input_width);
        println!(
            "  encoder {} maps, {}×{} kernel",
            c.encoder_maps, c.encoder_kernel, c.encoder_kernel
        );
        for (i, conv) in c.conv_layers.iter().enumerate() {
            println!(
                "  conv{} {} channels, {}×{} kernel, stride {}, padding {}",
                i + 1,
                conv.out_channels,
                conv.kernel,
                conv.kernel,
                conv.stride,
                conv.padding
            );
        }
        println!("  fc {} units, {} classes, T={}", c.fc_units, c.classes, c.time_steps);
        println!("  v_thr {} v_reset {}", c.v_thr, c.v_reset);
        let param_count: usize = net.parameters().iter().map(|t| t.len()).sum();
        println!("  {param_count} learnable parameters");
        return Ok(());
    }
    unreachable!("clap enforces exactly one of --data/--checkpoint");
}
