use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sicnn::analysis::{self, Direction, FilterSet};
use sicnn::data::{self, synth, DatasetSplit};
use sicnn::model::{load_checkpoint, ColumnSpec};
use sicnn::train::{self, TrainMode, TrainOptions, TrainPlan};
use sicnn::transform::column_transform;
use sicnn::{Error, Model, NetworkConfig, Tensor};

/// Scale-invariant multi-column CNN: data preparation, training and analysis.
#[derive(Parser)]
#[command(name = "sicnn", version, arg_required_else_help = true)]
struct Cli {
    /// Network and optimizer settings as `key=value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.05`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a CIFAR-10 directory (or write a synthetic one) and build the scaled test set.
    PrepareData(PrepareArgs),
    /// Train from scratch or incrementally.
    Train(TrainArgs),
    /// Error rates of a checkpoint on a split.
    Eval(EvalArgs),
    /// Invariance-by-scaling study; prints a JSON report.
    Invariance(InvarianceArgs),
    /// Column-specialization analyses.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Print the transformation of one canonical filter.
    TransformFilter(TransformArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// CIFAR-10 binary directory; written to when --synthetic is given.
    #[arg(long)]
    data: PathBuf,
    /// Generate the synthetic shape dataset instead of reading CIFAR-10.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 50_000)]
    train_n: usize,
    #[arg(long, default_value_t = 10_000)]
    test_n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Scratch,
    Inc1,
    Inc2,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Scratch)]
    mode: ModeArg,
    /// `1` (baseline), `6` (3,5,7 and mirrored), or explicit tokens like `3,5,7f`.
    #[arg(long)]
    columns: Option<String>,
    /// Epochs at the initial learning rate.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Epochs after the first tenfold learning-rate drop.
    #[arg(long, default_value_t = 0)]
    fine1: usize,
    /// Epochs after the second drop.
    #[arg(long, default_value_t = 0)]
    fine2: usize,
    /// Train on the first N/10 images of each class.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Trained baseline checkpoint (required for inc2).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Continue a run from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Evaluate on the test and scaled test splits after every epoch.
    #[arg(long)]
    eval_each_epoch: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    Scaled,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum FilterSource {
    Random,
    Checkpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Up,
    Down,
}

#[derive(Args)]
struct InvarianceArgs {
    #[arg(long, value_enum, default_value_t = FilterSource::Random)]
    filters: FilterSource,
    /// Checkpoint(s) whose first-layer filters are measured; repeatable.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DirectionArg::Up)]
    direction: DirectionArg,
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Take images from this CIFAR directory's test batch instead of the bundled natural-image crops.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of random filters.
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Top-activating scaled-test images per column for one feature.
    Top {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Conv block, zero-based; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        feature: usize,
        #[arg(long, default_value_t = 16)]
        k: usize,
        /// Write one PPM mosaic per column here.
        #[arg(long)]
        ppm_dir: Option<PathBuf>,
    },
    /// Max activation of a last-layer feature against object zoom (CSV).
    Curve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Test image index.
        #[arg(long)]
        index: usize,
        #[arg(long, default_value_t = 0)]
        feature: usize,
    },
    /// Probability of the true class against object zoom (CSV).
    Prob {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        index: usize,
    },
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long, default_value_t = 5)]
    from: usize,
    #[arg(long)]
    to: usize,
    #[arg(long)]
    flip: bool,
    /// Comma-separated filter taps, row-major; a centered delta if omitted.
    #[arg(long, allow_hyphen_values = true)]
    filter: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Ingestion { .. } | Error::Checkpoint { .. } | Error::Io(_) => 2,
        Error::Diverged { .. } | Error::UndefinedMetric(_) | Error::OperatorConstruction { .. } => 3,
        _ => 1,
    }
}

fn network_config(cli_config: Option<&Path>, overrides: &[String]) -> sicnn::Result<NetworkConfig> {
    let mut cfg = match cli_config {
        Some(path) => NetworkConfig::from_text(&fs::read_to_string(path)?)?,
        None => NetworkConfig::baseline(),
    };
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_columns(spec: &str, layers: usize, canonical: usize) -> sicnn::Result<Vec<ColumnSpec>> {
    match spec.trim() {
        "1" => Ok(vec![ColumnSpec::uniform(canonical, layers, false)]),
        "6" => Ok(NetworkConfig::sicnn6().columns),
        list => list.split(',').map(|t| ColumnSpec::parse(t, layers)).collect(),
    }
}

fn print_json(value: &impl serde::Serialize) -> sicnn::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_splits(dir: &Path) -> sicnn::Result<(DatasetSplit, DatasetSplit)> {
    data::load_batch_dir(dir)
}

fn run(cli: Cli) -> sicnn::Result<()> {
    let config = || network_config(cli.config.as_deref(), &cli.overrides);
    match cli.command {
        Command::PrepareData(a) => prepare(a),
        Command::Train(a) => train_cmd(a, config()?),
        Command::Eval(a) => {
            let model: Model<f32> = load_checkpoint(&a.checkpoint)?;
            let (train_split, test) = load_splits(&a.data)?;
            let split = match a.split {
                SplitArg::Train => train_split,
                SplitArg::Test => test,
                SplitArg::Scaled => data::make_scaled_test_set(&test)?,
            };
            print_json(&train::evaluate(&model, &split, 250)?)
        }
        Command::Invariance(a) => invariance_cmd(a),
        Command::Analyze { what } => analyze_cmd(what),
        Command::TransformFilter(a) => transform_cmd(a),
    }
}

fn prepare(a: PrepareArgs) -> sicnn::Result<()> {
    if a.synthetic {
        log::info!("writing {} + {} synthetic images to {}", a.train_n, a.test_n, a.data.display());
        synth::write_cifar_dir(&a.data, a.train_n, a.test_n, a.seed)?;
    }
    let (train_split, test) = if a.synthetic {
        data::load_batch_dir(&a.data)?
    } else {
        data::load_cifar10(&a.data)?
    };
    let scaled = data::make_scaled_test_set(&test)?;
    data::write_batch_file(&a.data.join("scaled_test_batch.bin"), &scaled)?;
    data::write_tag_file(&a.data.join("scaled_test_batch.tags"), &scaled)?;
    print_json(&json!({
        "train": train_split.len(),
        "test": test.len(),
        "scaled_test": scaled.len(),
    }))
}

fn train_cmd(a: TrainArgs, mut cfg: NetworkConfig) -> sicnn::Result<()> {
    if let Some(cols) = &a.columns {
        cfg.columns = parse_columns(cols, cfg.conv_layers(), cfg.canonical_side)?;
        cfg.validate()?;
    }
    let (full_train, test) = load_splits(&a.data)?;
    let train_split = match a.subset {
        Some(n) => full_train.first_n_per_class(n.div_ceil(cfg.classes)),
        None => full_train,
    };
    let plan = TrainPlan {
        epochs_main: a.epochs,
        epochs_fine1: a.fine1,
        epochs_fine2: a.fine2,
        mode: match a.mode {
            ModeArg::Scratch => TrainMode::FromScratch,
            ModeArg::Inc1 => TrainMode::Inc1,
            ModeArg::Inc2 => TrainMode::Inc2,
        },
        ..TrainPlan::from_config(&cfg, a.epochs, a.seed)
    };
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.txt"), cfg.to_text())?;
    let scaled = if a.eval_each_epoch {
        Some(data::make_scaled_test_set(&test)?)
    } else {
        None
    };
    let mut metrics = io::BufWriter::new(fs::File::create(a.out.join("metrics.jsonl"))?);
    let mut opts = TrainOptions {
        metrics: Some(&mut metrics),
        checkpoint_dir: Some(a.out.clone()),
        ..Default::default()
    };
    if let Some(s) = &scaled {
        opts.eval_splits = vec![("test".into(), &test), ("scaled".into(), s)];
    }
    log::info!(
        "training {} column(s) on {} images, {} epochs",
        cfg.columns.len(),
        train_split.len(),
        plan.total_epochs()
    );
    let report = match plan.mode {
        TrainMode::FromScratch => {
            let mut model = match &a.resume {
                Some(path) => load_checkpoint(path)?,
                None => Model::build(cfg, a.seed)?,
            };
            train::train(&mut model, &plan, &train_split, &mut opts)?
        }
        TrainMode::Inc1 => train::train_inc1(&cfg, &plan, &train_split, &mut opts)?.1,
        TrainMode::Inc2 => {
            let path = a
                .baseline
                .as_ref()
                .ok_or_else(|| Error::Config("--mode inc2 needs --baseline <checkpoint>".into()))?;
            let baseline: Model<f32> = load_checkpoint(path)?;
            train::train_inc2(&baseline, &cfg, &plan, &train_split, &mut opts)?.1
        }
    };
    drop(opts);
    metrics.flush()?;
    train::write_report(&report, &a.out.join("report.json"))?;
    log::info!(
        "done in {:.1}s, normalized cost {:.2}",
        report.wall_seconds,
        report.normalized_cost
    );
    Ok(())
}

fn invariance_cmd(a: InvarianceArgs) -> sicnn::Result<()> {
    let images = match &a.data {
        Some(dir) => load_splits(dir)?.1,
        None => data::natural_fixture(),
    };
    let n = a.n.min(images.len());
    if n == 0 {
        return Err(Error::InvalidArgument("no images to measure".into()));
    }
    let images = images.images.slice_outer(0, n);
    let sets = match a.filters {
        FilterSource::Random => vec![FilterSet::random(a.count, a.seed)],
        FilterSource::Checkpoint => {
            if a.checkpoint.is_empty() {
                return Err(Error::Config("--filters checkpoint needs --checkpoint <file>".into()));
            }
            a.checkpoint
                .iter()
                .map(|p| {
                    let model: Model<f32> = load_checkpoint(p)?;
                    FilterSet::from_model(&p.display().to_string(), &model)
                })
                .collect::<sicnn::Result<Vec<_>>>()?
        }
    };
    let direction = match a.direction {
        DirectionArg::Up => Direction::ScaleUp,
        DirectionArg::Down => Direction::ScaleDown,
    };
    print_json(&analysis::invariance_study(&images, &sets, direction)?)
}

fn analyze_cmd(what: AnalyzeCommand) -> sicnn::Result<()> {
    match what {
        AnalyzeCommand::Top { checkpoint, data: dir, layer, feature, k, ppm_dir } => {
            let model: Model<f32> = load_checkpoint(&checkpoint)?;
            let scaled = data::make_scaled_test_set(&load_splits(&dir)?.1)?;
            let block = layer.unwrap_or(model.config().conv_layers() - 1);
            let tops = analysis::top_activations(&model, &scaled, block, feature, k)?;
            if let Some(out) = ppm_dir {
                fs::create_dir_all(&out)?;
                for top in &tops {
                    let path = out.join(format!("top_col{}_feat{feature}.ppm", top.column));
                    analysis::write_ppm_grid(&path, &scaled, &top.ids, 4)?;
                }
            }
            print_json(&tops)
        }
        AnalyzeCommand::Curve { checkpoint, data: dir, index, feature } => {
            let model: Model<f32> = load_checkpoint(&checkpoint)?;
            let image = test_image(&dir, index)?.0;
            print!("{}", analysis::response_csv(&analysis::response_curve(&model, &image, feature)?));
            Ok(())
        }
        AnalyzeCommand::Prob { checkpoint, data: dir, index } => {
            let model: Model<f32> = load_checkpoint(&checkpoint)?;
            let (image, label) = test_image(&dir, index)?;
            print!("{}", analysis::probability_csv(&analysis::probability_curve(&model, &image, label)?));
            Ok(())
        }
    }
}

fn test_image(dir: &Path, index: usize) -> sicnn::Result<(Tensor<f32>, usize)> {
    let test = load_splits(dir)?.1;
    if index >= test.len() {
        return Err(Error::InvalidArgument(format!("index {index} of {} test images", test.len())));
    }
    Ok((test.image(index), test.labels[index]))
}

fn transform_cmd(a: TransformArgs) -> sicnn::Result<()> {
    let len = a.from * a.from;
    let taps: Vec<f64> = match &a.filter {
        Some(text) => text
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| Error::Config(format!("bad filter tap `{v}`"))))
            .collect::<sicnn::Result<_>>()?,
        None => (0..len).map(|i| if i == len / 2 { 1.0 } else { 0.0 }).collect(),
    };
    if taps.len() != len {
        return Err(Error::Config(format!("{} taps given for a {}x{} filter", taps.len(), a.from, a.from)));
    }
    let q = column_transform(a.from, a.to, a.flip)?;
    let out = q.apply(&taps);
    for row in out.chunks(a.to) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.6}")).collect();
        println!("{}", cells.join(" "));
    }
    Ok(())
}
