//! `worldline` command-line driver.

mod run;
mod spec;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use worldline::{Estimator, Reduction, Susceptibility};

use spec::{Command, ExperimentSpec, Format, GeometryKind, Preset};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] worldline::Error),
    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    /// 2 for anything rejected before computing, 3 for numerical failures.
    fn exit_code(&self) -> u8 {
        use worldline::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::InvalidArgument(_) | E::Domain(_) | E::Unsupported(_)) => 2,
            CliError::Core(E::Numerical { .. } | E::Table(_)) => 3,
            CliError::Core(E::Io(_)) | CliError::Output(_) => 1,
        }
    }
}

fn parse_count(s: &str) -> Result<u64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s}"))?;
    if v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(format!("expected a positive whole number, got {s}"))
    }
}

fn parse_chi(s: &str) -> Result<Susceptibility, String> {
    s.parse().map_err(|e: worldline::Error| e.to_string())
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: worldline::Error| e.to_string())
}

fn parse_reduction(s: &str) -> Result<Reduction, String> {
    s.parse().map_err(|e: worldline::Error| e.to_string())
}

/// Worldline Monte Carlo for TE Casimir and Casimir-Polder energies of
/// planar dielectrics.
///
/// Values are layered: built-in defaults, then --preset, then --config, then
/// flags. Every flag can also be set through WORLDLINE_<FLAG> (for example
/// WORLDLINE_N_PATHS=1e6).
#[derive(Debug, Parser)]
#[command(name = "worldline", version)]
struct Cli {
    /// What to run; may instead come from the config file or preset.
    #[arg(value_enum)]
    command: Option<Command>,
    /// TOML or JSON spec, or the .meta.json sidecar of an earlier run.
    #[arg(long, env = "WORLDLINE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, value_enum, env = "WORLDLINE_PRESET")]
    preset: Option<Preset>,
    /// Single susceptibility (a number or inf).
    #[arg(long, value_parser = parse_chi, env = "WORLDLINE_CHI", conflicts_with = "chi_list")]
    chi: Option<Susceptibility>,
    /// Comma-separated susceptibilities evaluated on shared paths.
    #[arg(long, value_parser = parse_chi, value_delimiter = ',', env = "WORLDLINE_CHI_LIST")]
    chi_list: Option<Vec<Susceptibility>>,
    /// Points per path; a comma list for convergence sweeps.
    #[arg(long, value_delimiter = ',', env = "WORLDLINE_N_STEPS")]
    n_steps: Option<Vec<usize>>,
    /// Number of paths; scientific notation such as 1e6 is accepted.
    #[arg(long, value_parser = parse_count, env = "WORLDLINE_N_PATHS")]
    n_paths: Option<u64>,
    #[arg(long, env = "WORLDLINE_SEED")]
    seed: Option<u64>,
    /// trapezoid, interpolation, dirichlet, mgf-segment or sojourn-sample.
    #[arg(long, value_parser = parse_estimator, env = "WORLDLINE_ESTIMATOR")]
    estimator: Option<Estimator>,
    #[arg(long, value_enum, env = "WORLDLINE_GEOMETRY")]
    geometry: Option<GeometryKind>,
    /// Atom-interface distance, or gap width.
    #[arg(long, env = "WORLDLINE_DISTANCE")]
    distance: Option<f64>,
    /// Source-point sampling scale for gap runs.
    #[arg(long, env = "WORLDLINE_D0")]
    d0: Option<f64>,
    /// Inverse temperature for thermal runs.
    #[arg(long, env = "WORLDLINE_BETA")]
    beta: Option<f64>,
    /// Highest Matsubara index; chosen from the tail bound when absent.
    #[arg(long, env = "WORLDLINE_N_MAX")]
    n_max: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "WORLDLINE_WORKERS")]
    workers: Option<usize>,
    /// ordered (bit-reproducible) or free.
    #[arg(long, value_parser = parse_reduction, env = "WORLDLINE_REDUCTION")]
    reduction: Option<Reduction>,
    /// Output file; stdout when absent. A .meta.json sidecar is written next to it.
    #[arg(long, env = "WORLDLINE_OUTPUT")]
    output: Option<PathBuf>,
    #[arg(long, value_enum, env = "WORLDLINE_FORMAT")]
    format: Option<Format>,
    /// Saved sojourn tables (see the tables command).
    #[arg(long, env = "WORLDLINE_TABLES")]
    tables: Option<PathBuf>,
}

fn effective_spec(cli: &Cli) -> Result<ExperimentSpec, CliError> {
    let mut base = ExperimentSpec::default();
    if let Some(p) = cli.preset {
        p.apply(&mut base);
    }
    let mut s = match &cli.config {
        Some(path) => spec::overlay(&base, path)?,
        None => base,
    };
    if let Some(c) = cli.command {
        s.subcommand = c;
    } else if cli.config.is_none() && cli.preset.is_none() {
        return Err(CliError::Config("no command given".into()));
    }
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = &cli.$f { s.$f = v.clone().into(); } )* };
    }
    set!(n_steps, n_paths, seed, estimator, distance, workers, reduction, format);
    if let Some(c) = cli.chi {
        s.chi = vec![c];
    }
    if let Some(c) = &cli.chi_list {
        s.chi = c.clone();
    }
    if cli.geometry.is_some() {
        s.geometry = cli.geometry;
    }
    for (dst, src) in [(&mut s.d0, cli.d0), (&mut s.beta, cli.beta)] {
        if src.is_some() {
            *dst = src;
        }
    }
    if cli.n_max.is_some() {
        s.n_max = cli.n_max;
    }
    if cli.output.is_some() {
        s.output = cli.output.clone();
    }
    if cli.tables.is_some() {
        s.tables = cli.tables.clone();
    }
    s.validate()?;
    Ok(s)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = effective_spec(&cli).and_then(|s| run::execute(&s));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("worldline: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
