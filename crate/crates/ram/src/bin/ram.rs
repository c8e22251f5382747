use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ram::dataset::{load_idx, load_idx_images, ImageSample};
use ram::glimpse::{retina, write_pgm, GlimpseConfig, Location};
use ram::report::{plot_accuracy_vs_time, read_metrics_csv, summary_table, MetricsSink};
use ram::sweep::{compare, discover_run_dirs, render_trend, run_sweep, RunResult, SweepSpec};
use ram::synth::write_idx_dataset;
use ram::training::{train, DataSplit, RunConfig, RunStatus};

/// Recurrent attention model trainer and hyperparameter sweep harness.
#[derive(Parser)]
#[command(name = "ram", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics + checkpoint.
    Train(TrainArgs),
    /// Linear search over one hyperparameter against a baseline config.
    Sweep(SweepArgs),
    /// Aggregate a sweep directory into tables, trends and figures.
    Report(ReportArgs),
    /// Render the scales of a single glimpse to PGM files.
    GlimpseDebug(GlimpseDebugArgs),
    /// Generate a synthetic digit corpus in IDX format.
    SynthData(SynthArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding the IDX files (train-images-idx3-ubyte etc.).
    #[arg(long)]
    data_dir: PathBuf,
    /// Use at most this many training samples.
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use at most this many test samples.
    #[arg(long)]
    test_limit: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration JSON (hyperparameters + augmentation + run knobs).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for metrics, result.json and checkpoints.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Override the augmentation canvas size.
    #[arg(long)]
    canvas: Option<usize>,
    /// Override the maximum rotation (degrees).
    #[arg(long)]
    rotation_max: Option<f64>,
    /// Override the additive pixel noise std.
    #[arg(long)]
    pixel_noise_std: Option<f64>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit a checkpoint every k epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON: parameter, values, seeds, epochs_override.
    #[arg(long)]
    spec: PathBuf,
    /// Baseline run configuration JSON.
    #[arg(long)]
    baseline: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Sweep output directory.
    #[arg(long)]
    out: PathBuf,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep output directory to aggregate.
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write summary.csv, trends.txt and accuracy_vs_time.svg.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GlimpseDebugArgs {
    /// IDX images file and sample index, e.g. data/t10k-images-idx3-ubyte#7
    #[arg(long)]
    image: String,
    /// Normalized location "x,y" in [-1,1].
    #[arg(long)]
    loc: String,
    #[arg(long, default_value_t = 12)]
    bandwidth: usize,
    #[arg(long, default_value_t = 4)]
    scales: usize,
    #[arg(long, default_value = "glimpse-debug")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10000)]
    train: usize,
    #[arg(long, default_value_t = 2000)]
    test: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn find_idx(dir: &Path, stems: &[&str]) -> Result<PathBuf> {
    for stem in stems {
        let p = dir.join(stem);
        if p.exists() {
            return Ok(p);
        }
    }
    bail!("none of {stems:?} found in {}", dir.display())
}

fn load_split(args: &DataArgs) -> Result<DataSplit> {
    let dir = &args.data_dir;
    let train_images = find_idx(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?;
    let train_labels = find_idx(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?;
    let test_images = find_idx(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?;
    let test_labels = find_idx(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?;
    let mut train: Vec<ImageSample> = load_idx(&train_images, &train_labels)?;
    let mut test: Vec<ImageSample> = load_idx(&test_images, &test_labels)?;
    if let Some(n) = args.train_limit {
        train.truncate(n);
    }
    if let Some(n) = args.test_limit {
        test.truncate(n);
    }
    Ok(DataSplit { train, test })
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(v) = args.canvas {
        cfg.augment.canvas_size = v;
    }
    if let Some(v) = args.rotation_max {
        cfg.augment.rotation_max = v;
    }
    if let Some(v) = args.pixel_noise_std {
        cfg.augment.pixel_noise_std = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.checkpoint_every.is_some() {
        cfg.checkpoint_every = args.checkpoint_every;
    }
    cfg.out_dir = Some(args.out.clone());

    let data = load_split(&args.data)?;
    println!(
        "training {}: {} train / {} test, {} epochs",
        cfg.run_id,
        data.train.len(),
        data.test.len(),
        cfg.hyper.epochs
    );
    let mut sink = MetricsSink::create(&args.out)?;
    let outcome = train(&cfg, &data, Some(&mut sink))?;
    outcome.params.save(&args.out.join("checkpoint.json"))?;

    let result = RunResult {
        swept: None,
        seed: cfg.seed,
        config: cfg.hyper.clone(),
        final_accuracy: outcome.final_accuracy,
        best_accuracy: outcome.best_accuracy,
        wall_seconds: outcome.wall_seconds,
        train_seconds: outcome.train_seconds,
        seconds_per_epoch: if outcome.epochs_run > 0 {
            outcome.train_seconds / outcome.epochs_run as f64
        } else {
            0.0
        },
        epochs_run: outcome.epochs_run,
        status: outcome.status,
    };
    std::fs::write(
        args.out.join("result.json"),
        serde_json::to_string_pretty(&result)?,
    )?;
    println!(
        "status {}: final accuracy {:.4}, best {:.4}, {:.1}s wall ({:.1}s training)",
        outcome.status,
        outcome.final_accuracy,
        outcome.best_accuracy,
        outcome.wall_seconds,
        outcome.train_seconds
    );
    Ok(if outcome.status == RunStatus::Completed {
        0
    } else {
        2
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let spec = SweepSpec::load(&args.spec)?;
    let baseline = load_run_config(&args.baseline)?;
    let data = load_split(&args.data)?;
    println!(
        "sweeping {} over {} values x {} seeds ({} parallel)",
        spec.parameter,
        spec.values.len(),
        spec.seeds.len(),
        args.parallel
    );
    let results = run_sweep(&spec, &baseline, &data, &args.out, args.parallel)?;
    summary_table(&results, &args.out.join("summary.csv"))?;
    let report = compare(&results);
    std::fs::write(args.out.join("trends.txt"), render_trend(&report))?;
    std::fs::write(
        args.out.join("trends.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    print!("{}", render_trend(&report));
    let bad = results
        .iter()
        .filter(|r| r.status != RunStatus::Completed)
        .count();
    Ok(if bad == 0 { 0 } else { 2 })
}

fn cmd_report(args: ReportArgs) -> Result<i32> {
    std::fs::create_dir_all(&args.out)?;
    let dirs = discover_run_dirs(&args.input)?;
    if dirs.is_empty() {
        bail!("no runs with result.json under {}", args.input.display());
    }
    let mut results = Vec::new();
    let mut streams = Vec::new();
    for dir in &dirs {
        let text = std::fs::read_to_string(dir.join("result.json"))?;
        let result: RunResult = serde_json::from_str(&text)?;
        let label = match &result.swept {
            Some(s) => format!("{}={} seed={}", s.param, s.value, result.seed),
            None => format!("seed={}", result.seed),
        };
        results.push(result);
        let metrics = dir.join("metrics.csv");
        if metrics.exists() {
            streams.push((label, read_metrics_csv(&metrics)?));
        }
    }
    summary_table(&results, &args.out.join("summary.csv"))?;
    let report = compare(&results);
    std::fs::write(args.out.join("trends.txt"), render_trend(&report))?;
    let plot = plot_accuracy_vs_time(&streams, &args.out.join("accuracy_vs_time.svg"))?;
    for label in &plot.skipped {
        eprintln!("warning: stream {label} has no records, skipped");
    }
    println!(
        "report over {} runs -> {} (plotted {} curves)",
        results.len(),
        args.out.display(),
        plot.plotted
    );
    Ok(0)
}

fn cmd_glimpse_debug(args: GlimpseDebugArgs) -> Result<i32> {
    let (path, index) = args
        .image
        .rsplit_once('#')
        .ok_or_else(|| anyhow!("--image wants <idx-file>#<sample-index>"))?;
    let index: usize = index.parse().context("sample index")?;
    let images = load_idx_images(Path::new(path))?;
    let (pixels, rows, cols) = images
        .get(index)
        .ok_or_else(|| anyhow!("file has {} images, asked for #{index}", images.len()))?;

    let (x, y) = args
        .loc
        .split_once(',')
        .ok_or_else(|| anyhow!("--loc wants x,y"))?;
    let loc = Location::new(x.trim().parse()?, y.trim().parse()?);

    let cfg = GlimpseConfig::new(1, args.scales, args.bandwidth)?;
    let obs = retina(pixels, *cols, *rows, loc, &cfg);
    std::fs::create_dir_all(&args.out)?;
    for s in 1..=cfg.num_scales {
        let out = args.out.join(format!("scale{s}.pgm"));
        write_pgm(&out, obs.patch(s), cfg.bandwidth)?;
        println!("wrote {}", out.display());
    }
    println!(
        "location ({:.3}, {:.3}) -> pixel {:?}, sensor {} values",
        loc.x,
        loc.y,
        loc.to_pixel(*cols, *rows),
        obs.flat.len()
    );
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let paths = write_idx_dataset(&args.out, args.train, args.test, args.seed)?;
    println!(
        "wrote {} train / {} test samples under {}",
        args.train,
        args.test,
        args.out.display()
    );
    println!("  {}", paths.train_images.display());
    println!("  {}", paths.test_images.display());
    Ok(0)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train(args) => cmd_train(args)?,
        Command::Sweep(args) => cmd_sweep(args)?,
        Command::Report(args) => cmd_report(args)?,
        Command::GlimpseDebug(args) => cmd_glimpse_debug(args)?,
        Command::SynthData(args) => cmd_synth(args)?,
    };
    std::process::exit(code);
}
