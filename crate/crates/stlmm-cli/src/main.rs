//! Command-line interface for skew-t linear mixed models: fit models to
//! long-format CSV data, simulate the named study designs, run Monte Carlo
//! studies, and export density grids.
//!
//! Exit codes: 0 success, 1 usage or data errors, 2 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stlmm::sim::{McConfig, Scenario};

use stlmm_cli::commands::{self, FitFlags, Outcome};
use stlmm_cli::config::{build_fit_config, parse_family, parse_init, parse_structure, FileConfig};
use stlmm_cli::ingest::{self, IngestSpec};

#[derive(Parser)]
#[command(name = "stlmm", version, about = "Skew-t linear mixed models: fitting, simulation, and study tooling")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to long-format CSV data and write a JSON report.
    Fit(FitArgs),
    /// Generate a dataset from a named scenario.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo study and write the summary table.
    McStudy(McArgs),
    /// Evaluate a bivariate density on a grid and write it as CSV.
    DensityGrid(GridArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV (header required, one observation per row).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output report path (JSON).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Model family: n, t, sn, st.
    #[arg(long)]
    family: Option<String>,
    /// Skewness rank r.
    #[arg(long)]
    r: Option<usize>,
    /// Shape structure: full or sdb.
    #[arg(long)]
    structure: Option<String>,
    /// Response column name.
    #[arg(long)]
    response: Option<String>,
    /// Fixed-effect columns, comma separated ("1" = intercept).
    #[arg(long, value_delimiter = ',')]
    fixed: Option<Vec<String>>,
    /// Random-effect columns, comma separated ("1" = intercept).
    #[arg(long, value_delimiter = ',')]
    random: Option<Vec<String>>,
    /// Subject id column name.
    #[arg(long)]
    subject: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    nu_min: Option<u32>,
    #[arg(long)]
    nu_max: Option<u32>,
    /// Initialization: normal-plus-grid, sn-warmstart, hybrid, best-of.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Compute Louis standard errors.
    #[arg(long)]
    se_louis: bool,
    /// Compute numerical-Hessian standard errors (slow).
    #[arg(long)]
    se_numeric: bool,
    /// Include per-subject random-effect estimates in the report.
    #[arg(long)]
    random_effects: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario name (see --help for the list).
    #[arg(long)]
    scenario: String,
    /// Number of subjects.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replica index folded into the seed stream.
    #[arg(long, default_value_t = 0)]
    replica: u64,
    /// Output CSV path.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Optional truth sidecar path (JSON).
    #[arg(long)]
    truth_output: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    scenario: String,
    /// Number of subjects per replica.
    #[arg(long)]
    n: Option<usize>,
    /// Desk-scale default; use --full for the 500-replica reproduction.
    #[arg(long, default_value_t = 100)]
    replicas: usize,
    /// Run the full 500-replica study.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Compute Louis standard errors per replica (default on).
    #[arg(long, default_value_t = true)]
    se_louis: bool,
    /// Compute numerical-Hessian standard errors per replica (slow).
    #[arg(long)]
    se_numeric: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Scenario whose random-effect distribution is evaluated.
    #[arg(long)]
    scenario: Option<String>,
    /// JSON file with explicit (mu, omega, delta, nu) parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 101)]
    nx: usize,
    #[arg(long, default_value_t = 101)]
    ny: usize,
    #[arg(long)]
    x_min: Option<f64>,
    #[arg(long)]
    x_max: Option<f64>,
    #[arg(long)]
    y_min: Option<f64>,
    #[arg(long)]
    y_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // keep clap's rendering but own the exit-code contract
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let threads = std::env::var("STLMM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let body = || match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::DidNotConverge) => ExitCode::from(2),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    };
    match threads {
        Some(n) => stlmm::par::with_thread_cap(n, body),
        None => body(),
    }
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig, String> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let raw = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            serde_json::from_str(&raw).map_err(|e| format!("bad config {}: {e}", p.display()))
        }
    }
}

fn env_seed() -> Option<u64> {
    std::env::var("STLMM_SEED").ok().and_then(|v| v.parse().ok())
}

fn run(cli: Cli) -> Result<Outcome, String> {
    let file = load_file_config(&cli.config)?;
    match cli.command {
        Command::Fit(args) => run_fit(args, file),
        Command::Simulate(args) => run_simulate(args, file),
        Command::McStudy(args) => run_mc(args, file),
        Command::DensityGrid(args) => run_grid(args, file),
    }
}

fn run_fit(args: FitArgs, file: FileConfig) -> Result<Outcome, String> {
    let input = args
        .input
        .or(file.input.map(PathBuf::from))
        .ok_or("missing --input")?;
    let output = args
        .output
        .or(file.output.map(PathBuf::from))
        .ok_or("missing --output")?;
    let family = parse_family(
        args.family
            .or(file.model.family.clone())
            .ok_or("missing --family")?
            .as_str(),
    )?;
    let structure = parse_structure(
        args.structure
            .or(file.model.structure.clone())
            .unwrap_or_else(|| "full".into())
            .as_str(),
    )?;
    let spec = IngestSpec {
        subject: args.subject.or(file.model.subject.clone()).ok_or("missing --subject")?,
        response: args.response.or(file.model.response.clone()).ok_or("missing --response")?,
        fixed: args.fixed.or(file.model.fixed.clone()).ok_or("missing --fixed")?,
        random: args.random.or(file.model.random.clone()).ok_or("missing --random")?,
    };
    let data = ingest::ingest_long_csv(&input, &spec)?;
    if data.q() > 4 && structure == stlmm::model::DeltaStructure::Diagonal {
        return Err(format!("skewness rank {} exceeds the supported maximum of 4", data.q()));
    }
    let r = args.r.or(file.model.r).unwrap_or(1);
    if r > 4 {
        return Err(format!("skewness rank {r} exceeds the supported maximum of 4"));
    }
    let mut fitter = file.fitter.clone();
    if args.tolerance.is_some() {
        fitter.tolerance = args.tolerance;
    }
    if args.max_iter.is_some() {
        fitter.max_iter = args.max_iter;
    }
    if args.nu_min.is_some() {
        fitter.nu_min = args.nu_min;
    }
    if args.nu_max.is_some() {
        fitter.nu_max = args.nu_max;
    }
    let seed = env_seed()
        .or(args.seed)
        .or(fitter.seed)
        .unwrap_or(0);
    let mut config = build_fit_config(family, structure, r, &fitter, seed);
    if let Some(init) = args.init.or(file.fitter.init.clone()) {
        config.init = parse_init(&init)?;
    }
    let flags = FitFlags {
        se_louis: args.se_louis || file.flags.se_louis.unwrap_or(false),
        se_numeric: args.se_numeric || file.flags.se_numeric.unwrap_or(false),
        random_effects: args.random_effects || file.flags.random_effects.unwrap_or(false),
    };
    commands::cmd_fit(&data, &config, &flags, &output)
}

fn run_simulate(args: SimulateArgs, file: FileConfig) -> Result<Outcome, String> {
    let seed = env_seed().or(args.seed).or(file.fitter.seed).unwrap_or(0);
    let scenario = Scenario::from_name(&args.scenario, args.n, seed).map_err(|e| e.to_string())?;
    let output = args
        .output
        .or(file.output.map(PathBuf::from))
        .ok_or("missing --output")?;
    commands::cmd_simulate(
        &args.scenario,
        &scenario,
        args.replica,
        &output,
        args.truth_output.as_deref(),
    )?;
    Ok(Outcome::Success)
}

fn run_mc(args: McArgs, file: FileConfig) -> Result<Outcome, String> {
    let seed = env_seed().or(args.seed).or(file.fitter.seed).unwrap_or(0);
    let scenario = Scenario::from_name(&args.scenario, args.n, seed).map_err(|e| e.to_string())?;
    let output = args
        .output
        .or(file.output.map(PathBuf::from))
        .ok_or("missing --output")?;
    let truth = scenario
        .true_theta()
        .map_err(|_| format!("scenario {} has no regression design; mc-study needs study1 or study2", args.scenario))?;
    let mut fitter = file.fitter.clone();
    if args.tolerance.is_some() {
        fitter.tolerance = args.tolerance;
    }
    if args.max_iter.is_some() {
        fitter.max_iter = args.max_iter;
    }
    let mut config = McConfig {
        fit: build_fit_config(truth.family, truth.structure, truth.r(), &fitter, seed),
        compute_se_louis: args.se_louis,
        compute_se_numeric: args.se_numeric || file.flags.se_numeric.unwrap_or(false),
    };
    config.fit.init = match args.init.or(file.fitter.init.clone()) {
        Some(name) => parse_init(&name)?,
        None => stlmm::InitStrategy::BestOf,
    };
    if config.fit.init == stlmm::InitStrategy::TrueValues {
        config.fit.true_theta = Some(truth);
    }
    let replicas = if args.full { 500 } else { args.replicas };
    let summary = commands::cmd_mc_study(&scenario, replicas, &config, &output)?;
    eprintln!(
        "mc-study: {} of {} replicas usable ({} fit failures, {} non-converged, {} Hessian failures)",
        summary.n_ok,
        summary.replicas_requested,
        summary.n_fit_failures,
        summary.n_nonconverged,
        summary.n_hessian_failures
    );
    Ok(Outcome::Success)
}

fn run_grid(args: GridArgs, file: FileConfig) -> Result<Outcome, String> {
    let output = args
        .output
        .or(file.output.map(PathBuf::from))
        .ok_or("missing --output")?;
    let params = match (&args.scenario, &args.params) {
        (Some(name), None) => {
            let seed = env_seed().or(args.seed).unwrap_or(0);
            Scenario::from_name(name, None, seed)
                .map_err(|e| e.to_string())?
                .random_effect_params()
        }
        (None, Some(path)) => {
            let raw = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            let parsed: commands::ParamsFile =
                serde_json::from_str(&raw).map_err(|e| format!("bad params {}: {e}", path.display()))?;
            parsed.into_params()?
        }
        _ => return Err("density-grid needs exactly one of --scenario or --params".into()),
    };
    let grid = match (args.x_min, args.x_max, args.y_min, args.y_max) {
        (Some(x_min), Some(x_max), Some(y_min), Some(y_max)) => Some(stlmm::sim::GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            nx: args.nx,
            ny: args.ny,
        }),
        (None, None, None, None) => None,
        _ => return Err("grid bounds must be given all together or not at all".into()),
    };
    commands::cmd_density_grid(&params, grid, args.nx, args.ny, &output)?;
    Ok(Outcome::Success)
}
