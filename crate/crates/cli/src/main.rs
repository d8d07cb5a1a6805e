use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arraycalib::dof;
use arraycalib::error::Error;
use arraycalib::evaluation::procrustes_align;
use arraycalib::io::{self, Format, RunConfig};
use arraycalib::pipeline::localize;
use arraycalib::scenario::{self, ScenarioConfig};
use arraycalib::sdr::ClarabelBackend;
use arraycalib::sweep::{self, SweepConfig};
use arraycalib::SyncMode;
use clap::{Args, Parser, Subcommand};

const EXIT_SOLVER: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "arraycalib", version, about = "Joint receiver/source localization from unsynchronized TOA data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize receivers and sources from a TOA matrix.
    Localize(LocalizeArgs),
    /// Generate a synthetic instance.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo sweep over array size and noise level.
    Sweep(SweepArgs),
    /// Count degrees of freedom for a configuration.
    Dof(DofArgs),
}

#[derive(Args)]
struct LocalizeArgs {
    /// TOA file (CSV or JSON).
    toa: PathBuf,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// none | receivers-synced | sources-synced | one-known
    #[arg(long)]
    mode: Option<SyncMode>,
    #[arg(long = "dim")]
    dim: Option<usize>,
    /// Propagation speed for CSV input (m/s).
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    known_distances: Option<PathBuf>,
    #[arg(long)]
    distance_bounds: Option<PathBuf>,
    /// Known per-source emission delays (s).
    #[arg(long)]
    constant_offset: Option<PathBuf>,
    /// Ground truth for evaluation; defaults to `truth.json` next to the input.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory for `result.json`; prints to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON scenario configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "dim")]
    dim: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// TOA noise standard deviation (s).
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    missing: Option<f64>,
    /// Side whose times are known.
    #[arg(long)]
    mode: Option<SyncMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// JSON sweep configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; `ARRAYCALIB_WORKERS` takes precedence when set.
    #[arg(long)]
    workers: Option<usize>,
    /// Also write per-trial errors to `trials.csv`.
    #[arg(long)]
    raw: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DofArgs {
    m: usize,
    k: usize,
    d: usize,
    #[arg(default_value = "none")]
    mode: SyncMode,
    #[arg(long, default_value = "text")]
    format: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver(_) | Error::NoSolution(_) => EXIT_SOLVER,
        Error::Config(_) | Error::Generation(_) => EXIT_CONFIG,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Localize(a) => run_localize(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Dof(a) => run_dof(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_or_write(out: Option<&Path>, name: &str, value: &serde_json::Value) -> Result<(), Error> {
    match out {
        Some(dir) => io::write_json(&dir.join(name), value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
            Ok(())
        }
    }
}

fn run_localize(a: LocalizeArgs) -> Result<(), Error> {
    let mut config: RunConfig = match &a.config {
        Some(p) => io::read_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.mode {
        config.mode = v;
    }
    if let Some(v) = a.dim {
        config.d = v;
    }
    if let Some(v) = a.speed {
        config.speed = v;
    }
    if a.seed.is_some() {
        config.seed = a.seed;
    }
    if let Some(p) = &a.out {
        config.out = Some(p.clone());
    }
    if let Some(p) = &a.known_distances {
        config.known_distances = io::read_known_distances(p)?;
    }
    if let Some(p) = &a.distance_bounds {
        config.distance_bounds = io::read_distance_bounds(p)?;
    }
    if let Some(p) = &a.constant_offset {
        config.constant_offset = Some(io::read_delays(p)?);
    }
    config.validate()?;

    let format = a.format.unwrap_or_else(|| Format::from_path(&a.toa));
    let toa = io::read_toa(&a.toa, format, config.speed)?;
    let truth_path = a.truth.clone().or_else(|| {
        let p = a.toa.with_file_name("truth.json");
        p.exists().then_some(p)
    });
    let truth = truth_path.as_deref().map(io::read_truth).transpose()?;

    let options = config.options();
    let mut backend = ClarabelBackend::new(options.solver.clone());
    let result = localize(&toa, &options, &mut backend)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let evaluation = match &truth {
        Some(t) => Some(procrustes_align(&result.points, &t.points()?)?),
        None => None,
    };
    if let Some(e) = &evaluation {
        eprintln!("E_rs = {:.3e} m, E_r = {:.3e} m", e.e_rs, e.e_r);
    }
    let doc = io::results_json(&result, evaluation.as_ref());
    print_or_write(config.out.as_deref(), "result.json", &doc)
}

fn run_simulate(a: SimulateArgs) -> Result<(), Error> {
    let mut config: ScenarioConfig = match &a.config {
        Some(p) => io::read_config(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(v) = a.dim {
        config.d = v;
        if config.volume.len() < v {
            config.volume.resize(v, 10.0);
        }
    }
    if let Some(v) = a.m {
        config.m = v;
    }
    if let Some(v) = a.k {
        config.k = v;
    }
    if let Some(v) = a.noise {
        config.noise_sigma = v;
    }
    if let Some(v) = a.missing {
        config.missing_fraction = v;
    }
    if let Some(v) = a.mode {
        config.sync = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.validate()?;
    let instance = scenario::generate(&config)?;

    let toa_path = a.out.join(format!("toa.{}", a.format.extension()));
    io::write_toa(&toa_path, &instance.toa, a.format)?;
    io::write_json(
        &a.out.join("truth.json"),
        &io::TruthFile::new(&instance.truth, Some(&instance.timing)),
    )?;
    if !instance.known_distances.is_empty() {
        io::write_json(&a.out.join("known_distances.json"), &instance.known_distances)?;
    }
    io::write_json(&a.out.join("scenario.json"), &config)?;
    eprintln!(
        "wrote {}×{} instance ({} missing) to {}",
        instance.toa.m(),
        instance.toa.k(),
        instance.toa.missing().len(),
        a.out.display()
    );
    Ok(())
}

fn worker_count(flag: Option<usize>) -> Result<usize, Error> {
    if let Ok(v) = std::env::var("ARRAYCALIB_WORKERS") {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("ARRAYCALIB_WORKERS must be a positive integer, got '{v}'"))),
        };
    }
    match flag {
        Some(0) => Err(Error::Config("--workers must be positive".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn run_sweep(a: SweepArgs) -> Result<(), Error> {
    let mut config: SweepConfig = match &a.config {
        Some(p) => io::read_config(p)?,
        None => SweepConfig::default(),
    };
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.trials {
        config.trials = v;
    }
    let workers = worker_count(a.workers)?;
    let result = sweep::run_sweep(&config, workers)?;
    std::fs::create_dir_all(&a.out)?;
    sweep::write_summary_csv(std::fs::File::create(a.out.join("summary.csv"))?, &result.cells)?;
    if a.raw {
        sweep::write_trials_csv(std::fs::File::create(a.out.join("trials.csv"))?, &result.records)?;
    }
    let failures: usize = result.cells.iter().map(|c| c.failures).sum();
    eprintln!(
        "{} trials on {} workers, {failures} failed; tables in {}",
        result.records.len(),
        workers,
        a.out.display()
    );
    Ok(())
}

fn run_dof(a: DofArgs) -> Result<(), Error> {
    if !(2..=3).contains(&a.d) {
        return Err(Error::InvalidDimension(format!("dimension must be 2 or 3, got {}", a.d)));
    }
    let report = dof::report(a.m, a.k, a.d, a.mode);
    match a.format.as_str() {
        "json" => println!(
            "{}",
            serde_json::to_string_pretty(&report).expect("report serializes")
        ),
        "text" => println!("{report}"),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    }
    Ok(())
}
