//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::control::{ControlConfig, FeedbackControl};
use crate::cost::{monte_carlo_cost, McOptions};
use crate::dynamics::{csv_error, csv_header, simulate, validate_model, HybridModel, SimulationSetup};
use crate::error::{Error, Result};
use crate::exec::{with_workers, Exec};
use crate::solver::{solve, CandidateSpec, GridSpec};
use crate::verify::{resolve_start, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "hybridopt", version, about = "Controlled regime-switching diffusions")]
pub struct Cli {
    /// Worker threads (default: machine parallelism).
    #[arg(long, env = "HYBRIDOPT_WORKERS", global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the Lipschitz, rate-bound and cost hypotheses by sampling.
    Validate(ValidateArgs),
    /// Simulate paths to CSV or JSON.
    Simulate(SimulateArgs),
    /// Monte Carlo estimate of the expected cost of a control.
    Cost(CostArgs),
    /// Solve for the value function on a grid and write the artifact.
    Solve(SolveArgs),
    /// Run a verification suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// Control file; defaults to the Dirac at the centre of the action set.
    #[arg(long)]
    pub control: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long)]
    pub control: Option<PathBuf>,
    #[arg(long)]
    pub antithetic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 21)]
    pub grid_nx: usize,
    #[arg(long, default_value_t = 20)]
    pub grid_nt: usize,
    #[arg(long, default_value_t = 5)]
    pub quad_order: usize,
    #[arg(long, default_value_t = 1)]
    pub mu_atoms: usize,
    #[arg(long, default_value_t = 1)]
    pub mu_levels: usize,
    #[arg(long, default_value_t = 2)]
    pub nu_atoms: usize,
    #[arg(long, default_value_t = 1)]
    pub nu_levels: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run only the named checks.
    #[arg(long = "check")]
    pub checks: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    if cli.workers == Some(0) {
        return Err(Error::Usage("--workers must be at least 1".into()));
    }
    let workers = cli.workers;
    with_workers(workers, move || match cli.command {
        Command::Validate(a) => cmd_validate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Cost(a) => cmd_cost(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Verify(a) => cmd_verify(&a),
    })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{} does not exist", path.display())))
    }
}

fn load_model(path: &Path) -> Result<HybridModel> {
    require_file(path)?;
    HybridModel::load(path)
}

fn load_control(model: &HybridModel, path: Option<&Path>) -> Result<FeedbackControl> {
    match path {
        Some(p) => {
            require_file(p)?;
            ControlConfig::load(p)?.build(model, p.parent().unwrap_or(Path::new(".")))
        }
        None => Ok(FeedbackControl::constant(model.default_measure(), model.default_measure())),
    }
}

/// Writes via a temporary file in the target directory and renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some(p) = out {
        write_atomic(p, format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn setup_for(model: &HybridModel, dt: f64) -> Result<SimulationSetup> {
    let start = resolve_start(model, None)?;
    Ok(SimulationSetup::new(0.0, model.horizon(), dt, start.x, start.regime))
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let report = validate_model(&model, a.samples, a.seed)?;
    emit(a.out.as_deref(), &serde_json::to_value(&report)?)?;
    Ok(if report.all_pass() { EXIT_OK } else { EXIT_HYPOTHESIS })
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let control = load_control(&model, a.control.as_deref())?;
    let setup = setup_for(&model, a.dt)?;
    if a.paths == 0 {
        return Err(Error::Usage("--paths must be at least 1".into()));
    }
    let paths = Exec::Parallel.map(a.paths, |p| simulate(&model, &control, &setup, a.seed, p));
    let completed = paths.iter().filter(|p| p.is_ok()).count();
    let mut ok = Vec::with_capacity(paths.len());
    for p in paths {
        match p {
            Ok(p) => ok.push(p),
            Err(Error::Simulation { path, step, message, .. }) => {
                return Err(Error::Simulation {
                    path,
                    step,
                    completed,
                    message,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let bytes = match a.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(csv_header(model.state_dim())).map_err(csv_error)?;
            for (k, p) in ok.iter().enumerate() {
                p.write_csv_rows(&mut w, k)?;
            }
            w.into_inner().map_err(|e| Error::Io(e.into_error()))?
        }
        Format::Json => {
            let records: Vec<_> = ok.iter().enumerate().map(|(k, p)| p.to_record(k)).collect();
            serde_json::to_vec(&json!({ "seed": a.seed, "paths": records }))?
        }
    };
    write_atomic(&a.out, &bytes)?;
    eprintln!("wrote {} paths to {}", ok.len(), a.out.display());
    Ok(EXIT_OK)
}

pub fn cmd_cost(a: &CostArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    let control = load_control(&model, a.control.as_deref())?;
    let setup = setup_for(&model, a.dt)?;
    let est = monte_carlo_cost(
        &model,
        &control,
        &setup,
        a.paths,
        a.seed,
        McOptions {
            antithetic: a.antithetic,
            exec: Exec::Parallel,
        },
    )?;
    emit(a.out.as_deref(), &serde_json::to_value(est)?)?;
    Ok(EXIT_OK)
}

pub fn cmd_solve(a: &SolveArgs) -> Result<i32> {
    let model_bytes = {
        require_file(&a.model)?;
        std::fs::read(&a.model)?
    };
    let model = HybridModel::from_json(&String::from_utf8_lossy(&model_bytes))?;
    let spec = GridSpec::new(a.grid_nt, a.grid_nx, a.quad_order);
    let cands = CandidateSpec {
        mu_atoms: a.mu_atoms,
        mu_levels: a.mu_levels,
        nu_atoms: a.nu_atoms,
        nu_levels: a.nu_levels,
    };
    let (mu, nu) = cands.build(model.action_set())?;
    let mut grid = solve(&model, &spec, &mu, &nu, Exec::Parallel)?;

    let mut hasher = Sha256::new();
    hasher.update(&model_bytes);
    hasher.update(serde_json::to_vec(&json!({ "grid": spec, "candidates": cands }))?);
    let hash = hex(&hasher.finalize());
    grid.config_hash = Some(hash.clone());
    write_atomic(&a.out, grid.to_json()?.as_bytes())?;

    let mut starts = model.start_points().to_vec();
    if starts.is_empty() {
        starts.push(resolve_start(&model, None)?);
    }
    let values: Vec<_> = starts
        .iter()
        .map(|s| {
            json!({
                "x": s.x,
                "regime": s.regime + 1,
                "value": grid.value_at(0, &s.x, s.regime),
            })
        })
        .collect();
    emit(
        None,
        &json!({
            "artifact": a.out.display().to_string(),
            "config_hash": hash,
            "clamped_queries": grid.clamped_queries,
            "values": values,
        }),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<i32> {
    require_file(&a.config)?;
    let config = VerifyConfig::load(&a.config)?;
    if config.checks.is_empty() {
        eprintln!("warning: {} declares no checks", a.config.display());
    }
    let base = a.config.parent().unwrap_or(Path::new("."));
    let report = config.run(base, &a.checks, Exec::Parallel)?;
    emit(a.out.as_deref(), &serde_json::to_value(&report)?)?;
    Ok(if report.pass { EXIT_OK } else { EXIT_VERIFICATION })
}
