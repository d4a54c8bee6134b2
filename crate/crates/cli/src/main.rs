//! Command-line driver: initialize networks from data, train them, and
//! sweep sample counts or balance weights, appending CSV results.

use std::collections::HashMap;
use std::env;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sylvinit::dataio::{load_cifar10, load_cifar100, synth_blobs, LabeledDataset, Split};
use sylvinit::latent::LatentCodeKind;
use sylvinit::layerwise::{initialize, stratified_subset, InitConfig, InitReport};
use sylvinit::nnet::{
    evaluate, load_network_spec, load_params, random_init, save_params, small_cnn, train,
    InitScheme, Network, TrainConfig,
};

const REPORT_HEADER: &str = "layer,d_i,d_o,n_used,code,residual,objective,clipped,seconds";
const RECORD_HEADER: &str =
    "method,dataset,shot,seed,initial_accuracy,final_accuracy,init_seconds,train_seconds";
const CURVE_HEADER: &str = "epoch,wall_seconds,test_accuracy";
const BENCH_HEADER: &str = "per_class_samples,init_seconds,initial_accuracy";
const SWEEP_HEADER: &str = "lambda,initial_accuracy,final_accuracy";

#[derive(Parser)]
#[command(
    name = "sylvinit",
    version,
    about = "Data-driven, gradient-free neural network weight initialization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Initialize a network from data; write parameters and a layer report.
    Init(InitArgs),
    /// Initialize, train, and append an experiment record.
    Train(TrainArgs),
    /// Measure initialization time and initial accuracy per sample count.
    Bench(BenchArgs),
    /// Sweep the encoding-loss weight and record accuracies.
    SweepLambda(SweepArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Sylvester,
    HeUniform,
    HeNormal,
    XavierUniform,
    XavierNormal,
}

impl Scheme {
    fn name(self) -> &'static str {
        match self {
            Scheme::Sylvester => "sylvester",
            Scheme::HeUniform => "he-uniform",
            Scheme::HeNormal => "he-normal",
            Scheme::XavierUniform => "xavier-uniform",
            Scheme::XavierNormal => "xavier-normal",
        }
    }

    fn random(self) -> Option<InitScheme> {
        match self {
            Scheme::Sylvester => None,
            Scheme::HeUniform => Some(InitScheme::HeUniform),
            Scheme::HeNormal => Some(InitScheme::HeNormal),
            Scheme::XavierUniform => Some(InitScheme::XavierUniform),
            Scheme::XavierNormal => Some(InitScheme::XavierNormal),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    #[value(name = "cifar10")]
    Cifar10,
    #[value(name = "cifar100")]
    Cifar100,
    #[value(name = "blobs")]
    Blobs,
}

impl DatasetKind {
    fn name(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Blobs => "blobs",
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Dataset to load or generate.
    #[arg(long, value_enum, default_value = "blobs")]
    dataset: DatasetKind,
    /// Directory with CIFAR binaries; falls back to SYLVINIT_DATA_DIR.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Architecture JSON; defaults to the built-in small CNN.
    #[arg(long)]
    arch: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    blob_classes: usize,
    #[arg(long, default_value_t = 8)]
    blob_side: usize,
    #[arg(long, default_value_t = 1)]
    blob_channels: usize,
    /// Generated training images per class.
    #[arg(long, default_value_t = 100)]
    blob_per_class: usize,
    /// Generated test images per class.
    #[arg(long, default_value_t = 100)]
    blob_test_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    blob_spread: f64,
    /// Blob data seed, independent of --seed so seed sweeps share a dataset.
    #[arg(long, default_value_t = 7)]
    blob_seed: u64,
}

impl DataArgs {
    fn resolved_data_dir(&self) -> Option<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| env::var_os("SYLVINIT_DATA_DIR").map(PathBuf::from))
    }

    fn load(&self) -> Result<(LabeledDataset, LabeledDataset), CliError> {
        match self.dataset {
            DatasetKind::Blobs => {
                let total = self.blob_per_class + self.blob_test_per_class;
                let all = synth_blobs(
                    self.blob_classes,
                    self.blob_side,
                    self.blob_channels,
                    total,
                    self.blob_spread,
                    self.blob_seed,
                )?;
                Ok(all.split_per_class(self.blob_per_class)?)
            }
            DatasetKind::Cifar10 => {
                let dir = self.require_data_dir()?;
                Ok((
                    load_cifar10(&dir, Split::Train)?,
                    load_cifar10(&dir, Split::Test)?,
                ))
            }
            DatasetKind::Cifar100 => {
                let dir = self.require_data_dir()?;
                Ok((
                    load_cifar100(&dir, Split::Train)?,
                    load_cifar100(&dir, Split::Test)?,
                ))
            }
        }
    }

    fn require_data_dir(&self) -> Result<PathBuf, CliError> {
        self.resolved_data_dir().ok_or_else(|| {
            CliError::Runtime(
                "no data directory: pass --data-dir or set SYLVINIT_DATA_DIR".into(),
            )
        })
    }

    fn network(&self, data: &LabeledDataset) -> Result<Network, CliError> {
        let (_, h, w, c) = data.images.dims();
        let spec = match &self.arch {
            Some(path) => {
                let spec = load_network_spec(path)?;
                if spec.input_dims != (h, w, c) || spec.num_classes != data.num_classes {
                    return Err(CliError::Runtime(format!(
                        "architecture expects input {:?} with {} classes, dataset '{}' provides {:?} with {}",
                        spec.input_dims,
                        spec.num_classes,
                        data.name,
                        (h, w, c),
                        data.num_classes
                    )));
                }
                spec
            }
            None => small_cnn((h, w, c), data.num_classes),
        };
        Ok(Network::new(spec)?)
    }
}

#[derive(Args, Clone)]
struct InitFlags {
    #[arg(long, value_enum, default_value = "sylvester")]
    scheme: Scheme,
    /// Encoding-loss weight of the layer objective.
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    /// Per-class size of the initialization subset.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    /// Receptive-field columns kept per image for conv layers.
    #[arg(long, default_value_t = 16)]
    patches_per_image: usize,
    /// Latent code: a bare kind sets the hidden-layer default, and
    /// layer=kind entries override single layers.
    #[arg(long = "code", value_name = "KIND|LAYER=KIND", value_delimiter = ',')]
    codes: Vec<String>,
    /// Restrict initialization to these layers.
    #[arg(long = "layers", value_delimiter = ',')]
    layers: Vec<String>,
    /// Denominator clip threshold; derived from the operands when unset.
    #[arg(long)]
    eps: Option<f64>,
}

impl InitFlags {
    fn init_config(&self, seed: u64) -> Result<InitConfig, CliError> {
        let mut default_code = None;
        let mut layer_codes = HashMap::new();
        for item in &self.codes {
            if let Some((layer, kind)) = item.split_once('=') {
                if layer.is_empty() {
                    return Err(CliError::Usage(format!("missing layer name in '{item}'")));
                }
                let kind: LatentCodeKind = kind
                    .parse()
                    .map_err(|e: sylvinit::Error| CliError::Usage(e.to_string()))?;
                if layer_codes.insert(layer.to_string(), kind).is_some() {
                    return Err(CliError::Usage(format!("layer '{layer}' given two codes")));
                }
            } else {
                let kind = item
                    .parse()
                    .map_err(|e: sylvinit::Error| CliError::Usage(e.to_string()))?;
                if default_code.replace(kind).is_some() {
                    return Err(CliError::Usage("default code given twice".into()));
                }
            }
        }
        Ok(InitConfig {
            lambda: self.lambda,
            per_class_samples: self.per_class,
            patch_samples_per_image: self.patches_per_image,
            default_code,
            layer_codes,
            eps: self.eps,
            seed,
            layer_filter: if self.layers.is_empty() {
                None
            } else {
                Some(self.layers.iter().cloned().collect())
            },
            ..InitConfig::default()
        })
    }
}

#[derive(Args)]
struct TrainFlags {
    /// Per-class training-set cap; "full" uses every sample.
    #[arg(long, default_value = "full")]
    shot: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Epochs at which the learning rate drops by --decay-factor.
    #[arg(long, value_delimiter = ',')]
    decay_epochs: Vec<usize>,
    #[arg(long, default_value_t = 10.0)]
    decay_factor: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

impl TrainFlags {
    fn parse_shot(&self) -> Result<Option<usize>, CliError> {
        if self.shot == "full" {
            return Ok(None);
        }
        self.shot.parse::<usize>().map(Some).map_err(|_| {
            CliError::Usage(format!("--shot takes a count or 'full', got '{}'", self.shot))
        })
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            decay_epochs: self.decay_epochs.clone(),
            decay_factor: self.decay_factor,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    init: InitFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Layer report CSV destination.
    #[arg(long, default_value = "init_report.csv")]
    out: PathBuf,
    /// Parameter file destination.
    #[arg(long, default_value = "params.bin")]
    params_out: PathBuf,
    /// Replace existing CSV output instead of appending.
    #[arg(long)]
    overwrite: bool,
    /// Print per-layer solve and activation statistics.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    init: InitFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Start from this parameter file instead of initializing.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Experiment record CSV destination.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Per-epoch accuracy curve CSV destination.
    #[arg(long)]
    curve_out: Option<PathBuf>,
    /// Save the trained parameters here.
    #[arg(long)]
    save_params: Option<PathBuf>,
    /// Replace existing CSV output instead of appending.
    #[arg(long)]
    overwrite: bool,
    /// Print per-layer solve and activation statistics.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    init: InitFlags,
    /// Per-class sample counts to benchmark.
    #[arg(long, value_delimiter = ',', default_value = "10,100,300")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "bench.csv")]
    out: PathBuf,
    /// Replace existing CSV output instead of appending.
    #[arg(long)]
    overwrite: bool,
    /// Print per-layer solve and activation statistics.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    init: InitFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Encoding-loss weights to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,10,100")]
    lambdas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "lambda_sweep.csv")]
    out: PathBuf,
    /// Replace existing CSV output instead of appending.
    #[arg(long)]
    overwrite: bool,
    /// Print per-layer solve and activation statistics.
    #[arg(long)]
    verbose: bool,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<sylvinit::Error> for CliError {
    fn from(e: sylvinit::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Writes `header` and `rows`, or appends just `rows` when the file
/// already has content and `overwrite` is off.
fn write_csv(path: &Path, header: &str, rows: &[String], overwrite: bool) -> Result<(), CliError> {
    let append = !overwrite && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let mut text = String::new();
    if !append {
        text.push_str(header);
        text.push('\n');
    }
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    if append {
        fs::OpenOptions::new()
            .append(true)
            .open(path)?
            .write_all(text.as_bytes())?;
    } else {
        fs::write(path, text)?;
    }
    Ok(())
}

fn report_rows(report: &InitReport) -> Vec<String> {
    report.to_csv().lines().skip(1).map(str::to_string).collect()
}

fn print_report(report: &InitReport) {
    for r in &report.layers {
        println!(
            "layer {}: d_i {} d_o {} n {} code {} residual {:.3e} clipped {} input-std {:.6} ({:.3}s)",
            r.layer, r.d_i, r.d_o, r.n_used, r.code, r.residual, r.clipped, r.input_act_std,
            r.seconds
        );
    }
}

/// Initializes `net` per the scheme flag; random schemes produce a report
/// with no solver rows.
fn scheme_init(
    net: &mut Network,
    data: &LabeledDataset,
    flags: &InitFlags,
    seed: u64,
    lambda_override: Option<f64>,
    per_class_override: Option<usize>,
) -> Result<InitReport, CliError> {
    match flags.scheme.random() {
        None => {
            let mut cfg = flags.init_config(seed)?;
            if let Some(lambda) = lambda_override {
                cfg.lambda = lambda;
            }
            if let Some(per_class) = per_class_override {
                cfg.per_class_samples = per_class;
            }
            // A fresh network is all zeros; with a layer filter the
            // unsolved layers must still carry signal, so they get a
            // baseline random init first.
            if cfg.layer_filter.is_some() {
                random_init(net, InitScheme::HeUniform, seed);
            }
            Ok(initialize(net, data, &cfg)?)
        }
        Some(scheme) => {
            let start = Instant::now();
            random_init(net, scheme, seed);
            Ok(InitReport {
                layers: Vec::new(),
                total_seconds: start.elapsed().as_secs_f64(),
            })
        }
    }
}

fn cmd_init(args: InitArgs) -> Result<(), CliError> {
    let (train_set, _) = args.data.load()?;
    let mut net = args.data.network(&train_set)?;
    let report = scheme_init(&mut net, &train_set, &args.init, args.seed, None, None)?;
    save_params(&net, &args.params_out)?;
    write_csv(&args.out, REPORT_HEADER, &report_rows(&report), args.overwrite)?;
    if args.verbose {
        print_report(&report);
    }
    println!(
        "{}: initialized {} layer(s) in {:.3} s; report {}, params {}",
        args.init.scheme.name(),
        report.layers.len(),
        report.total_seconds,
        args.out.display(),
        args.params_out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let (full_train, test) = args.data.load()?;
    let shot = args.train.parse_shot()?;
    let (train_set, shot_label) = match shot {
        Some(n) => (stratified_subset(&full_train, n, args.seed)?, n.to_string()),
        None => (full_train, "full".to_string()),
    };
    let mut net = args.data.network(&train_set)?;
    let (method, init_seconds) = match &args.params {
        Some(path) => {
            load_params(&mut net, path)?;
            ("file".to_string(), 0.0)
        }
        None => {
            let report = scheme_init(&mut net, &train_set, &args.init, args.seed, None, None)?;
            if args.verbose {
                print_report(&report);
            }
            (args.init.scheme.name().to_string(), report.total_seconds)
        }
    };

    let initial = evaluate(&net, &test)?;
    let cfg = args.train.train_config(args.seed);
    let stats = train(&mut net, &train_set, Some(&test), &cfg)?;
    let train_seconds = stats.last().map(|s| s.wall_seconds).unwrap_or(0.0);
    let final_accuracy = stats
        .last()
        .and_then(|s| s.test_accuracy)
        .unwrap_or(initial);

    let row = format!(
        "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
        method,
        args.data.dataset.name(),
        shot_label,
        args.seed,
        initial,
        final_accuracy,
        init_seconds,
        train_seconds
    );
    write_csv(&args.out, RECORD_HEADER, &[row], args.overwrite)?;

    if let Some(curve) = &args.curve_out {
        let mut rows = vec![format!("0,{:.6},{:.6}", 0.0, initial)];
        for s in &stats {
            rows.push(format!(
                "{},{:.6},{:.6}",
                s.epoch + 1,
                s.wall_seconds,
                s.test_accuracy.unwrap_or(initial)
            ));
        }
        write_csv(curve, CURVE_HEADER, &rows, args.overwrite)?;
    }
    if let Some(path) = &args.save_params {
        save_params(&net, path)?;
    }
    println!(
        "{} on {} shot {}: initial {:.4}, final {:.4} (init {:.3} s, train {:.3} s)",
        method,
        args.data.dataset.name(),
        shot_label,
        initial,
        final_accuracy,
        init_seconds,
        train_seconds
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.counts.is_empty() {
        return Err(CliError::Usage("--counts needs at least one entry".into()));
    }
    let (train_set, test) = args.data.load()?;
    let mut rows = Vec::new();
    for &count in &args.counts {
        let mut net = args.data.network(&train_set)?;
        let report = scheme_init(&mut net, &train_set, &args.init, args.seed, None, Some(count))?;
        if args.verbose {
            print_report(&report);
        }
        let accuracy = evaluate(&net, &test)?;
        println!(
            "count {count}: init {:.3} s, initial accuracy {accuracy:.4}",
            report.total_seconds
        );
        rows.push(format!(
            "{},{:.6},{:.6}",
            count, report.total_seconds, accuracy
        ));
    }
    write_csv(&args.out, BENCH_HEADER, &rows, args.overwrite)
}

fn cmd_sweep_lambda(args: SweepArgs) -> Result<(), CliError> {
    if args.lambdas.is_empty() {
        return Err(CliError::Usage("--lambdas needs at least one entry".into()));
    }
    let (full_train, test) = args.data.load()?;
    let shot = args.train.parse_shot()?;
    let train_set = match shot {
        Some(n) => stratified_subset(&full_train, n, args.seed)?,
        None => full_train,
    };
    let mut rows = Vec::new();
    for &lambda in &args.lambdas {
        let mut net = args.data.network(&train_set)?;
        let report =
            scheme_init(&mut net, &train_set, &args.init, args.seed, Some(lambda), None)?;
        if args.verbose {
            print_report(&report);
        }
        let initial = evaluate(&net, &test)?;
        let final_accuracy = if args.train.epochs > 0 {
            let cfg = args.train.train_config(args.seed);
            let stats = train(&mut net, &train_set, Some(&test), &cfg)?;
            stats
                .last()
                .and_then(|s| s.test_accuracy)
                .unwrap_or(initial)
        } else {
            initial
        };
        println!("lambda {lambda}: initial {initial:.4}, final {final_accuracy:.4}");
        rows.push(format!("{},{:.6},{:.6}", lambda, initial, final_accuracy));
    }
    write_csv(&args.out, SWEEP_HEADER, &rows, args.overwrite)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(args) => cmd_init(args),
        Command::Train(args) => cmd_train(args),
        Command::Bench(args) => cmd_bench(args),
        Command::SweepLambda(args) => cmd_sweep_lambda(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
