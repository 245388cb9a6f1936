use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use proplace::data::{blobs, moons, MinMaxScaler};
use proplace::experiment::{prepare, run_prepared, ExperimentConfig, ExplainPool, Outcome};
use proplace::interval::{abstraction, certify_delta_robust};
use proplace::{Dataset, ModelShiftSet, ReluNetwork};

#[derive(Parser)]
#[command(name = "proplace", version, about = "Robust, plausible counterfactual explanations for ReLU classifiers")]
struct Cli {
    /// Worker threads for parallel work (0 = one per core).
    #[arg(long, global = true, env = "PROPLACE_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale a raw CSV to [0, 1] and write the half / train / test splits.
    Prepare {
        /// CSV with a header row and a `label` column.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, env = "PROPLACE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "PROPLACE_TRAIN_FRACTION", default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, env = "PROPLACE_OUT", default_value = "prepared")]
        out: PathBuf,
    },
    /// Train a network on every row of a CSV and save it as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, env = "PROPLACE_SEED", default_value_t = 0)]
        seed: u64,
        /// Output model file.
        #[arg(long, env = "PROPLACE_OUT", default_value = "model.json")]
        out: PathBuf,
    },
    /// Train, explain class-0 inputs, evaluate, and write a report.
    Run(RunArgs),
    /// Check whether points stay class 1 under every bounded model shift.
    Certify {
        /// Model JSON file.
        #[arg(long)]
        model: PathBuf,
        /// File with one point per line (comma or space separated, brackets allowed).
        #[arg(long, conflicts_with = "point")]
        points: Option<PathBuf>,
        /// A single comma-separated point.
        #[arg(long, allow_hyphen_values = true)]
        point: Option<String>,
        #[arg(long, env = "PROPLACE_DELTA")]
        delta: f64,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Write a bundled synthetic dataset.
    GenData {
        #[arg(long, value_enum, default_value_t = Shape::Moons)]
        shape: Shape,
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Noise level (moons) or cluster spread (blobs).
        #[arg(long, default_value_t = 0.15)]
        noise: f64,
        #[arg(long, env = "PROPLACE_SEED", default_value_t = 7)]
        seed: u64,
        #[arg(long, env = "PROPLACE_OUT", default_value = "moons2d.csv")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Moons,
    Blobs,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Hidden layer widths, comma separated.
    #[arg(long, env = "PROPLACE_HIDDEN", value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, env = "PROPLACE_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "PROPLACE_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "PROPLACE_LR")]
    lr: Option<f64>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Dataset CSV; rescaled to [0, 1] first if it is not already.
    #[arg(long)]
    data: PathBuf,
    /// JSON experiment configuration; flags override its fields.
    #[arg(long, env = "PROPLACE_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, env = "PROPLACE_DELTA")]
    delta: Option<f64>,
    #[arg(long, env = "PROPLACE_K")]
    k: Option<usize>,
    #[arg(long, env = "PROPLACE_SIGMA")]
    sigma: Option<f64>,
    #[arg(long, env = "PROPLACE_T")]
    t: Option<f64>,
    #[arg(long, env = "PROPLACE_MAX_ITERS")]
    max_iters: Option<usize>,
    /// Per-MILP time limit in seconds.
    #[arg(long, env = "PROPLACE_TIME_LIMIT")]
    time_limit: Option<f64>,
    #[arg(long, env = "PROPLACE_N_EXPLAIN")]
    n_explain: Option<usize>,
    /// Draw inputs from the test split or from the whole dataset.
    #[arg(long, env = "PROPLACE_POOL", value_enum)]
    pool: Option<PoolArg>,
    #[arg(long, env = "PROPLACE_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "PROPLACE_OUT", default_value = "results")]
    out: PathBuf,
    /// Write every MILP in LP format into this directory.
    #[arg(long, env = "PROPLACE_DUMP_LP")]
    dump_lp: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolArg {
    Test,
    All,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every requested instance ended acceptably.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Prepare { data, seed, train_fraction, out } => cmd_prepare(&data, seed, train_fraction, &out).map(|_| true),
        Command::Train { data, train, seed, out } => cmd_train(&data, &train, seed, &out).map(|_| true),
        Command::Run(args) => cmd_run(&args),
        Command::Certify { model, points, point, delta, json } => {
            cmd_certify(&model, points.as_deref(), point.as_deref(), delta, json).map(|_| true)
        }
        Command::GenData { shape, n, noise, seed, out } => {
            let data = match shape {
                Shape::Moons => moons(n, noise, seed)?,
                Shape::Blobs => blobs(n, noise, seed)?,
            };
            create_parent(&out)?;
            data.write_csv(&out)?;
            info!("wrote {} rows to {}", data.len(), out.display());
            Ok(true)
        }
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn scale(data: &Dataset) -> Result<(Dataset, MinMaxScaler)> {
    let scaler = MinMaxScaler::fit(data)?;
    for name in scaler.constant_features() {
        warn!("feature {name} is constant; it is scaled to 0");
    }
    Ok((scaler.transform(data)?, scaler))
}

fn cmd_prepare(path: &Path, seed: u64, train_fraction: f64, out: &Path) -> Result<()> {
    let raw = read_dataset(path)?;
    let (scaled, scaler) = scale(&raw)?;
    let (first, second) = scaled.split_halves(seed);
    let (train, test) = first.train_test_split(train_fraction, seed)?;
    fs::create_dir_all(out)?;
    scaled.write_csv(out.join("scaled.csv"))?;
    first.write_csv(out.join("first_half.csv"))?;
    second.write_csv(out.join("second_half.csv"))?;
    train.write_csv(out.join("train.csv"))?;
    test.write_csv(out.join("test.csv"))?;
    write_json(&out.join("scaler.json"), &scaler)?;
    info!(
        "{} rows: halves {}/{}, first half split {}/{} -> {}",
        scaled.len(),
        first.len(),
        second.len(),
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn apply_train_args(config: &mut proplace::TrainConfig, args: &TrainArgs) {
    if let Some(h) = &args.hidden {
        config.hidden_layers = h.clone();
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
}

fn cmd_train(path: &Path, args: &TrainArgs, seed: u64, out: &Path) -> Result<()> {
    let data = read_dataset(path)?;
    let mut config = ExperimentConfig::default().train;
    apply_train_args(&mut config, args);
    config.seed = seed;
    let net = proplace::nn::train(&data, &config)?;
    create_parent(out)?;
    net.save(out)?;
    info!("accuracy on {}: {:.4}; model written to {}", path.display(), proplace::nn::accuracy(&net, &data), out.display());
    Ok(())
}

fn run_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    apply_train_args(&mut config.train, &args.train);
    let p = &mut config.proplace;
    if let Some(v) = args.delta {
        p.delta = v;
    }
    if let Some(v) = args.k {
        p.k = v;
    }
    if let Some(v) = args.sigma {
        p.sigma = v;
    }
    if let Some(v) = args.t {
        p.t = v;
    }
    if let Some(v) = args.max_iters {
        p.max_iters = v;
    }
    if let Some(v) = args.time_limit {
        p.milp_time_limit = v;
    }
    if let Some(v) = args.n_explain {
        config.n_explain = v;
    }
    if let Some(v) = args.pool {
        config.pool = match v {
            PoolArg::Test => ExplainPool::Test,
            PoolArg::All => ExplainPool::All,
        };
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let config = run_config(args)?;
    let mut data = read_dataset(&args.data)?;
    if data.ensure_unit_range().is_err() {
        warn!("{} is not scaled to [0, 1]; applying min-max scaling", args.data.display());
        data = scale(&data)?.0;
    }
    let start = Instant::now();
    let prepared = prepare(&data, &config)?;
    info!("trained original model and {} retrained models in {:.1?}", prepared.retrained.len(), start.elapsed());
    let report = run_prepared(&data, &prepared, &config, args.dump_lp.as_deref())?;
    info!("explained {} inputs in {:.1?}", report.instances.len(), start.elapsed());
    if let Some(note) = &report.note {
        warn!("{note}");
    }

    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("report.json"), &report)?;
    prepared.model.save(args.out.join("model.json"))?;
    let traces = args.out.join("traces");
    fs::create_dir_all(&traces)?;
    for inst in &report.instances {
        write_json(&traces.join(format!("row{}.json", inst.row)), inst)?;
    }
    let table = match &report.metrics {
        Some(m) => m.to_table("proplace"),
        None => "no counterfactuals were produced\n".to_string(),
    };
    fs::write(args.out.join("metrics.txt"), &table)?;
    print!("{table}");

    for inst in &report.instances {
        match &inst.outcome {
            Outcome::Explained { result } if !result.certified => warn!("row {}: counterfactual did not certify", inst.row),
            Outcome::Infeasible { error } => info!("row {}: {error}", inst.row),
            Outcome::Failed { error } => warn!("row {}: {error}", inst.row),
            _ => {}
        }
    }
    Ok(report.all_acceptable())
}

fn parse_point(line: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace() || c == '[' || c == ']')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().with_context(|| format!("not a number: {s:?}")))
        .collect()
}

#[derive(Serialize)]
struct Verdict {
    point: Vec<f64>,
    robust: bool,
    worst_logit: f64,
    lower: f64,
    upper: f64,
}

fn cmd_certify(model: &Path, points: Option<&Path>, point: Option<&str>, delta: f64, json: bool) -> Result<()> {
    let net = ReluNetwork::load(model).with_context(|| format!("loading {}", model.display()))?;
    let shifts = ModelShiftSet::new(delta)?;
    let list: Vec<Vec<f64>> = match (points, point) {
        (Some(p), _) => fs::read_to_string(p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(parse_point)
            .collect::<Result<_>>()?,
        (None, Some(s)) => vec![parse_point(s)?],
        (None, None) => bail!("give --point or --points"),
    };
    let inet = abstraction(&net, &shifts);
    let solver = proplace::ProplaceConfig::default().solver();
    let mut verdicts = Vec::with_capacity(list.len());
    for x in list {
        let bounds = inet.propagate(&x)?;
        let cert = certify_delta_robust(&net, &shifts, &x, &solver)?;
        verdicts.push(Verdict { point: x, robust: cert.robust, worst_logit: cert.worst_logit, lower: bounds.l, upper: bounds.u });
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&verdicts)?);
    } else {
        for v in &verdicts {
            println!(
                "{:?}: {} worst_logit={} interval=[{}, {}]",
                v.point,
                if v.robust { "robust" } else { "not robust" },
                v.worst_logit,
                v.lower,
                v.upper
            );
        }
    }
    Ok(())
}
