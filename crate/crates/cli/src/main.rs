//! `dmf` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime or data error. Every
//! error is a single line on stderr prefixed with `dmf: `.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use dmf_core::controller::{ControllerConfig, DecaySchedule, Strategy};
use dmf_core::filter::{bilateral_filter, BilateralConfig};
use dmf_core::harness::{self, AuxLoss, RunConfig, SceneParams};
use dmf_core::maps::ClassMask;
use dmf_core::metrics::{counts_from_labels, evaluate, Scores};
use dmf_core::pgm::{self, Raster};

#[derive(Parser, Debug)]
#[command(name = "dmf", version, about = "Adaptive multi-loss weighting toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the synthetic segmentation model and write trace + report.
    Train(TrainArgs),
    /// Recompute weight trajectories from a trace's loss columns.
    Replay(ReplayArgs),
    /// Apply the bilateral filter to a PGM image.
    Filter(FilterArgs),
    /// Write a synthetic dataset as PGM scene/mask pairs.
    GenData(GenDataArgs),
    /// Score predicted masks against ground-truth masks.
    Eval(EvalArgs),
    /// Run every strategy/auxiliary combination and the fixed baseline
    /// over several seeds.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct RunFlags {
    /// key=value run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gamma0: Option<f64>,
    /// Decay rate; defaults to reaching 5% of gamma0 at half the run.
    #[arg(long)]
    tau: Option<f64>,
    /// Loss-history capacity.
    #[arg(long)]
    history: Option<usize>,
    #[arg(long)]
    warmup: Option<u64>,
    /// Bayesian priors, e.g. `0.5,0.25,0.25`.
    #[arg(long)]
    priors: Option<String>,
    #[arg(long = "sigma-s")]
    sigma_s: Option<f64>,
    #[arg(long = "sigma-r")]
    sigma_r: Option<f64>,
    /// Skip bilateral preprocessing.
    #[arg(long = "no-filter")]
    no_filter: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    strategy: Option<String>,
    /// tversky, focal, cbdice or none.
    #[arg(long)]
    aux: Option<String>,
    /// Uniform constant weights instead of the adaptive controller.
    #[arg(long = "fixed-weights")]
    fixed_weights: bool,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// CSV with `step` and `loss_<name>` columns.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, default_value = "variance")]
    strategy: String,
    #[arg(long)]
    priors: Option<String>,
    #[arg(long, default_value_t = 64)]
    history: usize,
    #[arg(long, default_value_t = 5)]
    warmup: u64,
    #[arg(long, default_value_t = 0.0)]
    gamma0: f64,
    #[arg(long, default_value_t = 0.0)]
    tau: f64,
    /// Directory for `replay.csv`; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long = "sigma-s", default_value_t = 3.0)]
    sigma_s: f64,
    #[arg(long = "sigma-r", default_value_t = 0.1)]
    sigma_r: f64,
    /// Window half-width; ceil(2 * sigma-s) when omitted.
    #[arg(long)]
    radius: Option<usize>,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predicted mask (repeat for several pairs).
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    /// Ground-truth mask, paired with --pred in order.
    #[arg(long, required = true)]
    mask: Vec<PathBuf>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Runs seeds 1..=N.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[command(flatten)]
    run: RunFlags,
}

enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn parse_priors(raw: &str) -> CliResult<Vec<f64>> {
    let values = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("invalid --priors '{raw}'")))?;
    let sum: f64 = values.iter().sum();
    if values.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(usage(format!("--priors must be non-negative and sum to 1, got '{raw}'")));
    }
    Ok(values)
}

fn run_config(flags: &RunFlags) -> CliResult<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_kv(&text).map_err(usage)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = flags.gamma0 {
        cfg.gamma0 = v;
    }
    if let Some(v) = flags.tau {
        cfg.tau = Some(v);
    }
    if let Some(v) = flags.history {
        cfg.history = v;
    }
    if let Some(v) = flags.warmup {
        cfg.warmup = v;
    }
    if let Some(raw) = &flags.priors {
        cfg.priors = Some(parse_priors(raw)?);
    }
    if flags.no_filter {
        cfg.filter = None;
    } else {
        if let Some(v) = flags.sigma_s {
            cfg.filter.get_or_insert_with(BilateralConfig::default).sigma_s = v;
        }
        if let Some(v) = flags.sigma_r {
            cfg.filter.get_or_insert_with(BilateralConfig::default).sigma_r = v;
        }
    }
    if let Some(v) = flags.steps {
        cfg.steps = v;
    }
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.scenes {
        cfg.scenes = v;
    }
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut cfg = run_config(&args.run)?;
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse().map_err(usage)?;
    }
    if let Some(a) = &args.aux {
        cfg.aux = a.parse::<AuxLoss>().map_err(usage)?;
    }
    if args.fixed_weights {
        cfg.fixed_weights = true;
    }
    cfg.validate().map_err(usage)?;

    let outcome = harness::train(&cfg).map_err(|e| anyhow!(e))?;
    let out = &args.run.out;
    write(&out.join("config.txt"), cfg.to_kv())?;
    write(&out.join("trace.csv"), outcome.trace.to_csv())?;
    let report = format!(
        "split,{}\ntest,{}\nvalidation,{}\n",
        Scores::csv_header(),
        outcome.test.csv_row(),
        outcome.validation.csv_row()
    );
    write(&out.join("report.csv"), &report)?;
    println!(
        "{}: test dice {:.4}, iou {:.4}, cb_dice {:.4} -> {}",
        cfg.label(),
        outcome.test.dice,
        outcome.test.iou,
        outcome.test.cb_dice,
        out.display()
    );
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> CliResult<()> {
    let strategy: Strategy = args.strategy.parse().map_err(usage)?;
    let priors = args.priors.as_deref().map(parse_priors).transpose()?;
    let decay = DecaySchedule::new(args.gamma0, args.tau).map_err(usage)?;
    let cfg = ControllerConfig {
        strategy,
        priors,
        history_capacity: args.history,
        warmup_steps: args.warmup,
        decay,
        ..ControllerConfig::default()
    };
    let text = fs::read_to_string(&args.trace)
        .with_context(|| format!("reading {}", args.trace.display()))?;
    let log = harness::replay(&text, &cfg).map_err(|e| match e {
        harness::HarnessError::Controller(c) => usage(c),
        other => CliError::Runtime(anyhow!(other)),
    })?;
    match &args.out {
        Some(dir) => write(&dir.join("replay.csv"), log.to_csv())?,
        None => print!("{}", log.to_csv()),
    }
    Ok(())
}

fn cmd_filter(args: FilterArgs) -> CliResult<()> {
    let mut cfg = BilateralConfig::new(args.sigma_s, args.sigma_r).map_err(usage)?;
    if let Some(r) = args.radius {
        cfg = cfg.with_radius(r);
    }
    let img = pgm::read_image(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let out = bilateral_filter(&img, &cfg).map_err(|e| anyhow!(e))?;
    if let Some(parent) = args.output.parent() {
        fs::create_dir_all(parent).ok();
    }
    pgm::write_image(&out, &args.output)
        .with_context(|| format!("writing {}", args.output.display()))?;
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if args.size < 8 {
        return Err(usage("--size must be at least 8"));
    }
    let mut params = SceneParams {
        width: args.size,
        height: args.size,
        ..SceneParams::default()
    };
    if let Some(c) = args.contrast {
        params.contrast = c;
    }
    let scenes = harness::generate_dataset(args.count, args.seed, &params);
    harness::export_dataset(&scenes, &args.out).map_err(|e| anyhow!(e))?;
    Ok(())
}

fn read_mask(path: &Path) -> anyhow::Result<(ClassMask, (usize, usize))> {
    let r = Raster::read(path).with_context(|| format!("reading {}", path.display()))?;
    let m = pgm::binary_mask_from_raster(&r)?;
    Ok((m, (r.width, r.height)))
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    if args.pred.len() != args.mask.len() {
        return Err(usage(format!(
            "{} --pred files but {} --mask files",
            args.pred.len(),
            args.mask.len()
        )));
    }
    let mut csv = format!("pair,{}\n", Scores::csv_header());
    let mut all = Vec::new();
    for (k, (p, m)) in args.pred.iter().zip(&args.mask).enumerate() {
        let (pred, pdim) = read_mask(p)?;
        let (truth, tdim) = read_mask(m)?;
        if pdim != tdim {
            return Err(anyhow!(
                "{} is {}x{} but {} is {}x{}",
                p.display(),
                pdim.0,
                pdim.1,
                m.display(),
                tdim.0,
                tdim.1
            )
            .into());
        }
        let counts = counts_from_labels(pred.labels(), &truth).map_err(|e| anyhow!(e))?;
        let report = evaluate(&counts, &truth).map_err(|e| anyhow!(e))?;
        csv.push_str(&format!("{k},{}\n", report.summary.csv_row()));
        all.push(report.summary);
    }
    csv.push_str(&format!("mean,{}\n", Scores::mean(&all).csv_row()));
    match &args.out {
        Some(path) => write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    if args.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cfg = run_config(&args.run)?;
    cfg.validate().map_err(usage)?;
    let seeds: Vec<u64> = (1..=args.seeds).collect();
    let cmp = harness::compare(&cfg, &seeds).map_err(|e| anyhow!(e))?;
    let table = cmp.to_table();
    write(&args.run.out.join("comparison.md"), &table)?;
    write(&args.run.out.join("comparison.csv"), cmp.to_csv())?;
    print!("{table}");
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Filter(a) => cmd_filter(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("dmf: usage error: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("dmf: usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("dmf: error: {e:#}");
            ExitCode::from(2)
        }
    }
}
