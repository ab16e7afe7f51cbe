//! `d2dra`: generate channel datasets, label them exhaustively, train the
//! neural allocators, evaluate schemes and benchmark decision time.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use d2dra::channel::generate_dataset;
use d2dra::evaluation::{bench, bench_csv, evaluate, summary_table, write_reports, BenchSettings, EvalContext};
use d2dra::io::{
    attach_labels, decode_labels, encode_dataset, encode_labels, encode_stats, read_dataset, read_stats, sha256_hex, write_atomic,
};
use d2dra::models::bundle::{load_bundle, Bundle, Manifest};
use d2dra::oracle::Oracle;
use d2dra::runconfig::RunConfig;
use d2dra::stats::compute_stats;
use d2dra::training::{init_model, save_run, train};
use d2dra::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "d2dra", version, about = "D2D underlay resource allocation toolkit")]
struct Cli {
    /// Run configuration file with [system], [train] and [eval] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration entry, e.g. `--set system.n_tps=2`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Worker threads for sample-parallel stages; 1 gives the reference
    /// bit-reproducible mode.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample channel realizations and write the dataset and stats files.
    GenData(GenData),
    /// Label every sample of a dataset by exhaustive search.
    Label(Label),
    /// Train a centralized or distributed model (CT then FT).
    Train(Train),
    /// Evaluate schemes on a dataset and write metric tables.
    Eval(Eval),
    /// Time hard decisions as the number of pairs grows.
    Bench(Bench),
}

#[derive(Debug, Args)]
struct GenData {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the dataset path with a `.stats` extension.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Label {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// `sum-se` or `sum-ee`; overrides `train.objective`.
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Debug, Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    /// Stats file; defaults to the dataset path with a `.stats` extension,
    /// or statistics of the dataset itself when that file is absent.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Label file; required when CT runs (`epochs_ct > 0`, `zeta_ct > 0`).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// `centralized` or `distributed`; overrides `train.mode`.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Debug, Args)]
struct Eval {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated schemes; overrides `eval.schemes`.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Training run directory of a centralized model.
    #[arg(long)]
    centralized: Option<PathBuf>,
    /// Training run directory of a distributed model.
    #[arg(long)]
    distributed: Option<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Debug, Args)]
struct Bench {
    /// Comma-separated pair counts.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    n_list: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Samples timed per network.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Samples timed per oracle.
    #[arg(long, default_value_t = 3)]
    oracle_samples: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) => 2,
        Error::MissingDependency(_) | Error::MissingLabels(_) => 3,
        Error::BudgetExceeded { .. } => 4,
        _ => 1,
    }
}

fn load_config(cli: &Cli, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = cli.set.clone();
    for (key, value) in flags {
        if let Some(v) = value {
            overrides.push(format!("{key}={v:?}"));
        }
    }
    RunConfig::parse_with(&text, &overrides)
}

fn default_stats_path(data: &Path) -> PathBuf {
    data.with_extension("stats")
}

fn gen_data(cfg: &RunConfig, args: &GenData) -> Result<()> {
    if args.count == 0 {
        return Err(Error::InvalidConfig("--count must be at least 1".into()));
    }
    let sys = &cfg.system;
    let samples = generate_dataset(sys, args.count);
    let bytes = encode_dataset(&samples, sys.n_tps, sys.n_channels)?;
    write_atomic(&args.out, &bytes)?;
    let stats_path = args.stats_out.clone().unwrap_or_else(|| default_stats_path(&args.out));
    // a single sample has no spread; the stats file needs at least two
    if samples.len() >= 2 {
        write_atomic(&stats_path, &encode_stats(&compute_stats(&samples)?))?;
    }
    println!("samples {}", samples.len());
    println!("sha256 {}", sha256_hex(&bytes));
    Ok(())
}

fn read_dataset_for(cfg: &RunConfig, path: &Path) -> Result<Vec<d2dra::channel::ChannelSample>> {
    let data = read_dataset(path).map_err(|e| match e {
        Error::Io(io) => Error::MissingDependency(format!("cannot read dataset {}: {io}", path.display())),
        other => other,
    })?;
    if (data.n_tps, data.n_channels) != (cfg.system.n_tps, cfg.system.n_channels) {
        return Err(Error::InvalidConfig(format!(
            "dataset is N={}, K={} but the configuration says N={}, K={}",
            data.n_tps, data.n_channels, cfg.system.n_tps, cfg.system.n_channels
        )));
    }
    Ok(data.samples)
}

fn label(cfg: &RunConfig, args: &Label) -> Result<()> {
    let samples = read_dataset_for(cfg, &args.data)?;
    let oracle = Oracle { objective: cfg.train.objective, budget: cfg.eval.oracle_budget as u128 };
    let labels = oracle.label_all(&samples, &cfg.system)?;
    write_atomic(&args.out, &encode_labels(&labels, cfg.system.n_tps, cfg.system.n_channels)?)?;
    let feasible = labels.iter().filter(|l| l.feasible).count();
    let mean = labels.iter().map(|l| if l.feasible { l.optimal_sum_se } else { 0.0 }).sum::<f64>() / labels.len().max(1) as f64;
    println!("samples {}", labels.len());
    println!("feasible_fraction {}", feasible as f64 / labels.len().max(1) as f64);
    println!("mean_optimal_sum_se {mean}");
    Ok(())
}

fn train_cmd(cfg: &RunConfig, args: &Train) -> Result<()> {
    let samples = read_dataset_for(cfg, &args.data)?;
    let stats_path = args.stats.clone().unwrap_or_else(|| default_stats_path(&args.data));
    let stats = if stats_path.exists() || args.stats.is_some() {
        read_stats(&stats_path).map_err(|e| match e {
            Error::Io(io) => Error::MissingDependency(format!("cannot read stats {}: {io}", stats_path.display())),
            other => other,
        })?
    } else {
        compute_stats(&samples)?
    };
    let labels = match &args.labels {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::MissingDependency(format!("cannot read labels {}: {e}", p.display())))?;
            let (n, k, records) = decode_labels(&bytes)?;
            if (n, k) != (cfg.system.n_tps, cfg.system.n_channels) {
                return Err(Error::InvalidConfig("label file dimensions do not match the configuration".into()));
            }
            Some(attach_labels(records, &samples, &cfg.system)?)
        }
        None => None,
    };
    let tc = &cfg.train;
    let outcome = train(&samples, &stats, labels.as_deref(), init_model(tc, &cfg.system)?, &cfg.system, tc)?;
    let stats_bytes = encode_stats(&stats);
    let manifest = Manifest::new(&outcome.model, tc.objective, &cfg.system, tc.seed, &stats_bytes);
    save_run(&args.out_dir, &cfg.to_text(), &outcome, &manifest, &stats_bytes)?;
    println!("epochs {}", outcome.history.len());
    if let Some(last) = outcome.history.last() {
        println!("final_{}_loss {}", last.phase.as_str(), last.terms.total);
    }
    println!("bundle {}", args.out_dir.display());
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, args: &Eval) -> Result<()> {
    let samples = read_dataset_for(cfg, &args.data)?;
    let load = |p: &Option<PathBuf>| -> Result<Option<Bundle>> { p.as_deref().map(|d| load_bundle(d, &cfg.system)).transpose() };
    let centralized = load(&args.centralized)?;
    let distributed = load(&args.distributed)?;
    let ctx = EvalContext {
        config: &cfg.system,
        objective: cfg.train.objective,
        centralized: centralized.as_ref(),
        distributed: distributed.as_ref(),
        oracle_budget: cfg.eval.oracle_budget as u128,
    };
    let mut reports = Vec::new();
    for scheme in cfg.eval.schemes()? {
        reports.push(evaluate(scheme, &samples, &ctx)?);
    }
    write_reports(&args.out_dir, &reports)?;
    print!("{}", summary_table(&reports));
    Ok(())
}

fn bench_cmd(cfg: &RunConfig, args: &Bench) -> Result<()> {
    let settings = BenchSettings {
        arch: cfg.train.architecture(),
        samples: args.samples.max(1),
        oracle_samples: args.oracle_samples.max(1),
        oracle_budget: cfg.eval.oracle_budget as u128,
    };
    let rows = bench(&cfg.system, &args.n_list, &settings)?;
    let csv = bench_csv(&rows);
    write_atomic(&args.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let flags: Vec<(&str, Option<String>)> = match &cli.command {
        Command::Label(a) => vec![("train.objective", a.objective.clone())],
        Command::Train(a) => vec![("train.mode", a.mode.clone()), ("train.objective", a.objective.clone())],
        Command::Eval(a) => vec![("train.objective", a.objective.clone())],
        _ => Vec::new(),
    };
    let mut cfg = load_config(cli, &flags)?;
    if let Command::Eval(Eval { schemes: Some(s), .. }) = &cli.command {
        cfg.eval.schemes = s.clone();
        cfg.validate()?;
    }
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::GenData(a) => gen_data(&cfg, a),
        Command::Label(a) => label(&cfg, a),
        Command::Train(a) => train_cmd(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Bench(a) => bench_cmd(&cfg, a),
    }
}

fn main() -> ExitCode {
    let defaults = format!(
        "Exit codes: 0 ok, 2 configuration error, 3 missing dependency, 4 search budget exceeded.\n\n\
         Default configuration (every key may be set in --config or with --set):\n\n{}",
        RunConfig::default().to_text()
    );
    let matches = Cli::command().after_long_help(defaults).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
