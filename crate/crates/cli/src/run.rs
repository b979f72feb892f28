//! Dispatch of a validated spec and emission of rows plus the JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use worldline::analytic::{eta_te, eta_te_prime, gamma_te};
use worldline::engine::{
    convergence_sweep, estimate_casimir, estimate_cp, write_csv, ConvergenceRow, CpMode, SlopeFit,
};
use worldline::stats::weighted_loglog_slope;
use worldline::thermal::{cp_thermal, cp_zero_t, free_energy_thermal, free_energy_zero_t, ThermalResult};
use worldline::{
    accelerated, DielectricProfile, DispersionModel, Estimator, PhysicalConstants, RunConfig, RunResult,
    SojournTables, Susceptibility, ThermalConfig,
};

use crate::spec::{Command, ExperimentSpec, Format, GeometryKind};
use crate::CliError;

/// Rows ready to write plus the run-specific part of the sidecar.
struct Artifacts {
    csv: Vec<u8>,
    json: Value,
    extra: Value,
}

fn out_err(e: impl std::fmt::Display) -> CliError {
    CliError::Output(e.to_string())
}

fn csv_rows<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(out_err)?;
    }
    w.into_inner().map_err(out_err)
}

fn constants(spec: &ExperimentSpec) -> PhysicalConstants {
    PhysicalConstants { dim: spec.dim, ..PhysicalConstants::natural() }
}

fn profile(spec: &ExperimentSpec, chi: Susceptibility, n_steps: usize) -> RunConfig {
    let geometry = match (spec.geometry(), spec.subcommand) {
        (GeometryKind::Gap, _) => DielectricProfile::Gap { d1: 0.0, d2: spec.distance, chi1: chi, chi2: chi },
        (GeometryKind::HalfSpace, Command::CpEmbedded) => DielectricProfile::HalfSpace { boundary: -spec.distance, chi },
        (GeometryKind::HalfSpace, _) => DielectricProfile::HalfSpace { boundary: spec.distance, chi },
    };
    RunConfig {
        geometry,
        dim: spec.dim,
        n_steps,
        n_paths: spec.n_paths,
        estimator: spec.estimator,
        d0: spec.d0,
        seed: spec.seed,
        chi_sweep: spec.chi.clone(),
        workers: spec.workers,
        reduction: spec.reduction,
        quadrature_nodes: spec.quadrature_nodes,
    }
}

fn load_tables(spec: &ExperimentSpec) -> Result<Option<SojournTables>, CliError> {
    match &spec.tables {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok(Some(SojournTables::load(std::io::BufReader::new(f))?))
        }
        None => Ok(None),
    }
}

fn estimates(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let k = constants(spec);
    let cfg = profile(spec, spec.chi[0], spec.n_steps[0]);
    let tables = load_tables(spec)?;
    let rows = match (spec.subcommand, spec.estimator, &tables) {
        (Command::Casimir, Estimator::SojournSample, Some(t)) => accelerated::estimate_casimir_sojourn_sampled(&cfg, &k, Some(t))?,
        (Command::Casimir, ..) => estimate_casimir(&cfg, &k)?,
        (c, e, t) => {
            let mode = if c == Command::CpEmbedded { CpMode::Embedded } else { CpMode::Vacuum };
            match (e, t) {
                (Estimator::SojournSample, Some(t)) => accelerated::estimate_cp_sojourn_sampled(&cfg, &k, mode, Some(t))?,
                _ => estimate_cp(&cfg, &k, mode)?,
            }
        }
    };
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows)?;
    Ok(Artifacts { csv, json: serde_json::to_value(&rows).map_err(out_err)?, extra: json!({ "rows": rows_summary(&rows) }) })
}

fn rows_summary(rows: &[RunResult]) -> Vec<Value> {
    rows.iter()
        .map(|r| {
            json!({
                "chi": r.chi, "estimator": r.estimator, "normalized": r.normalized,
                "normalized_std_error": r.normalized_std_error, "z_score": r.z_score(),
            })
        })
        .collect()
}

fn convergence(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let k = constants(spec);
    let n_max = *spec.n_steps.iter().max().expect("validated");
    match spec.geometry() {
        GeometryKind::HalfSpace => {
            let cfg = profile(spec, spec.chi[0], n_max);
            let tables = load_tables(spec)?;
            let t = convergence_sweep(&cfg, &k, &spec.n_steps, &spec.chi, tables.as_ref())?;
            Ok(Artifacts {
                csv: csv_rows(&t.rows)?,
                json: serde_json::to_value(&t.rows).map_err(out_err)?,
                extra: json!({ "fits": t.fits, "reference_normalized": t.reference_normalized }),
            })
        }
        GeometryKind::Gap => {
            // Independent runs per N; errors are measured against the oracle directly.
            let mut ns = spec.n_steps.clone();
            ns.sort_unstable();
            ns.dedup();
            let mut by_n = Vec::new();
            for &n in &ns {
                by_n.push(estimate_casimir(&profile(spec, spec.chi[0], n), &k)?);
            }
            let mut rows = Vec::new();
            let mut fits = Vec::new();
            for (ci, chi) in spec.chi.iter().enumerate() {
                let oracle = gamma_te(chi.as_f64(), chi.as_f64())?.value;
                let mut errs = Vec::new();
                let mut sigs = Vec::new();
                for (run, &n) in by_n.iter().zip(&ns) {
                    let r = &run[ci];
                    let norm = r.normalized.unwrap_or(f64::NAN);
                    let nse = r.normalized_std_error.unwrap_or(f64::NAN);
                    errs.push(norm / oracle - 1.0);
                    sigs.push(nse / oracle);
                    rows.push(ConvergenceRow {
                        chi: chi.to_string(),
                        estimator: r.estimator,
                        n_steps: n,
                        n_paths: r.n_paths,
                        normalized: norm,
                        normalized_std_error: nse,
                        relative_error: norm / oracle - 1.0,
                        std_error: nse / oracle,
                        direct_relative_error: norm / oracle - 1.0,
                        direct_std_error: nse / oracle,
                    });
                }
                let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
                fits.push(SlopeFit {
                    chi: chi.to_string(),
                    estimator: spec.estimator,
                    slope: weighted_loglog_slope(&xs, &errs, &sigs),
                    slope_below: None,
                    slope_above: None,
                });
            }
            Ok(Artifacts {
                csv: csv_rows(&rows)?,
                json: serde_json::to_value(&rows).map_err(out_err)?,
                extra: json!({ "fits": fits }),
            })
        }
    }
}

#[derive(Serialize)]
struct AnalyticRow {
    chi: String,
    eta_te: f64,
    eta_te_prime: f64,
    gamma_te: f64,
}

fn analytic(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let rows = spec
        .chi
        .iter()
        .map(|c| {
            let x = c.as_f64();
            Ok(AnalyticRow {
                chi: c.to_string(),
                eta_te: eta_te(x)?.value,
                eta_te_prime: eta_te_prime(x)?.value,
                gamma_te: gamma_te(x, x)?.value,
            })
        })
        .collect::<Result<Vec<_>, worldline::Error>>()?;
    Ok(Artifacts { csv: csv_rows(&rows)?, json: serde_json::to_value(&rows).map_err(out_err)?, extra: Value::Null })
}

#[derive(Serialize)]
struct ThermalRow {
    route: &'static str,
    beta: f64,
    n_max: usize,
    value: f64,
    std_error: f64,
    truncation_bound: f64,
    truncation_warning: bool,
    n_paths: u64,
    seed: u64,
}

fn thermal(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let k = constants(spec);
    let beta = spec.beta.expect("validated");
    let dispersion = spec.dispersion.unwrap_or(DispersionModel::Constant { chi0: spec.chi[0].as_f64() });
    let cfg = RunConfig { chi_sweep: Vec::new(), ..profile(spec, spec.chi[0], spec.n_steps[0]) };
    let tc = match spec.n_max {
        Some(n_max) => ThermalConfig { beta, n_max, constants: k },
        None => ThermalConfig::with_default_modes(beta, spec.distance, k),
    };
    let (hot, zero) = match spec.geometry() {
        GeometryKind::HalfSpace => (cp_thermal(&cfg, &dispersion, &tc)?, cp_zero_t(&cfg, &dispersion, &k)?),
        GeometryKind::Gap => (free_energy_thermal(&cfg, &dispersion, &tc)?, free_energy_zero_t(&cfg, &dispersion, &k)?),
    };
    if hot.truncation_warning {
        eprintln!("worldline: warning: Matsubara tail bound {:e} exceeds tolerance; raise --n-max", hot.truncation_bound);
    }
    let row = |route, beta, n_max, r: &ThermalResult| ThermalRow {
        route,
        beta,
        n_max,
        value: r.value,
        std_error: r.std_error,
        truncation_bound: r.truncation_bound,
        truncation_warning: r.truncation_warning,
        n_paths: r.n_paths,
        seed: spec.seed,
    };
    let rows = [row("thermal", beta, tc.n_max, &hot), row("zero_t", f64::INFINITY, 0, &zero)];
    Ok(Artifacts {
        csv: csv_rows(&rows)?,
        json: serde_json::to_value(&rows).map_err(out_err)?,
        extra: json!({ "dispersion": dispersion, "modes": hot.modes }),
    })
}

fn tables(spec: &ExperimentSpec) -> Result<Artifacts, CliError> {
    let path = spec.output.as_ref().expect("validated");
    let started = Instant::now();
    let t = SojournTables::build(&worldline::sojourn::GridSpec::default())?;
    let built = started.elapsed().as_secs_f64();
    let mut bytes = Vec::new();
    t.save(&mut bytes)?;
    let back = SojournTables::load(bytes.as_slice())?;
    if back.spec != t.spec {
        return Err(worldline::Error::Table("reloaded grid differs".into()).into());
    }
    std::fs::write(path, &bytes).map_err(out_err)?;
    println!("tables: {} bytes, quantile error {:.2e}, built in {built:.1} s", bytes.len(), t.quantile_error);
    Ok(Artifacts {
        csv: Vec::new(),
        json: Value::Null,
        extra: json!({ "grid": t.spec, "quantile_error": t.quantile_error, "bytes": bytes.len(), "build_seconds": built }),
    })
}

fn oracles(spec: &ExperimentSpec) -> Value {
    if spec.dim != 4 {
        return Value::Null;
    }
    let f = |c: &Susceptibility| -> Option<f64> {
        let x = c.as_f64();
        match (spec.subcommand, spec.geometry()) {
            (Command::CpEmbedded, _) => eta_te_prime(x).ok().map(|r| r.value),
            (Command::Casimir, _) | (_, GeometryKind::Gap) => gamma_te(x, x).ok().map(|r| r.value),
            _ => eta_te(x).ok().map(|r| r.value),
        }
    };
    spec.chi.iter().map(|c| json!({ "chi": c, "value": f(c) })).collect()
}

/// `path` with ".meta.json" in place of its extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn execute(spec: &ExperimentSpec) -> Result<(), CliError> {
    let started = Instant::now();
    let art = match spec.subcommand {
        Command::CpVacuum | Command::CpEmbedded | Command::Casimir => estimates(spec)?,
        Command::Convergence => convergence(spec)?,
        Command::Analytic => analytic(spec)?,
        Command::Thermal => thermal(spec)?,
        Command::Tables => tables(spec)?,
    };
    let sidecar = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "spec": spec,
        "seed": spec.seed,
        "wall_time": started.elapsed().as_secs_f64(),
        "oracles": oracles(spec),
        "result": art.extra,
    });
    let body = match spec.format {
        Format::Csv => art.csv,
        Format::Json => serde_json::to_vec_pretty(&art.json).map_err(out_err)?,
    };
    match (&spec.output, spec.subcommand) {
        (Some(p), Command::Tables) => write_file(&sidecar_path(p), &serde_json::to_vec_pretty(&sidecar).map_err(out_err)?),
        (Some(p), _) => {
            write_file(p, &body)?;
            write_file(&sidecar_path(p), &serde_json::to_vec_pretty(&sidecar).map_err(out_err)?)
        }
        (None, _) => std::io::stdout().lock().write_all(&body).map_err(out_err),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}
