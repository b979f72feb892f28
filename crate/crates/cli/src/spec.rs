//! Experiment specification: defaults, presets, config files and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use worldline::{DispersionModel, Estimator, Reduction, Susceptibility};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    CpVacuum,
    CpEmbedded,
    Casimir,
    Convergence,
    Analytic,
    Tables,
    Thermal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeometryKind {
    #[default]
    HalfSpace,
    Gap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

/// Everything needed to reproduce a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub subcommand: Command,
    /// Unset means a gap for casimir runs and a half-space otherwise.
    pub geometry: Option<GeometryKind>,
    /// Atom-interface distance, or the gap width.
    pub distance: f64,
    /// Susceptibility sweep; in a gap both bodies share each value.
    pub chi: Vec<Susceptibility>,
    /// Points per path; a list only for convergence sweeps.
    pub n_steps: Vec<usize>,
    pub n_paths: u64,
    pub seed: u64,
    pub estimator: Estimator,
    pub d0: Option<f64>,
    pub dim: u32,
    pub quadrature_nodes: usize,
    pub beta: Option<f64>,
    pub n_max: Option<usize>,
    pub dispersion: Option<DispersionModel>,
    pub workers: usize,
    pub reduction: Reduction,
    pub output: Option<PathBuf>,
    pub format: Format,
    /// Saved sojourn tables to load instead of building them.
    pub tables: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            subcommand: Command::CpVacuum,
            geometry: None,
            distance: 1.0,
            chi: vec![Susceptibility::Finite(1.0)],
            n_steps: vec![1000],
            n_paths: 100_000,
            seed: 0,
            estimator: Estimator::Trapezoid,
            d0: None,
            dim: 4,
            quadrature_nodes: 64,
            beta: None,
            n_max: None,
            dispersion: None,
            workers: 1,
            reduction: Reduction::Ordered,
            output: None,
            format: Format::Csv,
            tables: None,
        }
    }
}

fn chis(xs: &[f64]) -> Vec<Susceptibility> {
    xs.iter().map(|&c| Susceptibility::new(c).expect("preset chi")).collect()
}

/// Half-decade susceptibility grid from 1e-2 to 1e6.
fn decade_grid() -> Vec<f64> {
    (-4..=12).map(|k| 10f64.powf(k as f64 / 2.0)).collect()
}

impl Preset {
    /// Figure reproductions at desk scale: the paper's chi lists with
    /// N and path counts reduced by several orders of magnitude.
    pub fn apply(self, s: &mut ExperimentSpec) {
        let conv_n: Vec<usize> = (5..=12).map(|p| 1usize << p).collect();
        match self {
            Preset::Fig2 => {
                let mut c = decade_grid();
                c.push(f64::INFINITY);
                *s = ExperimentSpec { subcommand: Command::CpVacuum, chi: chis(&c), n_steps: vec![1000], n_paths: 1_000_000, ..s.clone() };
            }
            Preset::Fig3 => {
                *s = ExperimentSpec { subcommand: Command::CpEmbedded, chi: chis(&decade_grid()), n_steps: vec![1000], n_paths: 100_000, ..s.clone() };
            }
            Preset::Fig4 => {
                let mut c = decade_grid();
                c.push(f64::INFINITY);
                *s = ExperimentSpec {
                    subcommand: Command::Casimir,
                    geometry: Some(GeometryKind::Gap),
                    chi: chis(&c),
                    n_steps: vec![1000],
                    n_paths: 1_000_000,
                    ..s.clone()
                };
            }
            Preset::Fig5 => {
                *s = ExperimentSpec {
                    subcommand: Command::Convergence,
                    geometry: Some(GeometryKind::HalfSpace),
                    chi: chis(&[1.0, 1e2, 1e4, 1e6, f64::INFINITY]),
                    n_steps: conv_n,
                    n_paths: 1_000_000,
                    ..s.clone()
                };
            }
            Preset::Fig6 => {
                *s = ExperimentSpec {
                    subcommand: Command::Convergence,
                    geometry: Some(GeometryKind::Gap),
                    chi: chis(&[1.0, 1e2, 1e4, 1e6, f64::INFINITY]),
                    n_steps: conv_n,
                    n_paths: 100_000,
                    ..s.clone()
                };
            }
        }
    }
}

/// Reads a TOML or JSON file and lays its keys over `base`. A run sidecar
/// (an object with `spec` and `version`) contributes its `spec`.
pub fn overlay(base: &ExperimentSpec, path: &Path) -> Result<ExperimentSpec, CliError> {
    let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let file: serde_json::Value = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).map_err(|e| bad(e.to_string()))?,
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?,
        _ => return Err(bad("config files must end in .toml or .json".into())),
    };
    let file = match file {
        serde_json::Value::Object(mut m) if m.contains_key("spec") && m.contains_key("version") => m.remove("spec").unwrap(),
        other => other,
    };
    let serde_json::Value::Object(keys) = file else {
        return Err(bad("expected a table of settings".into()));
    };
    let mut merged = serde_json::to_value(base).map_err(|e| bad(e.to_string()))?;
    let target = merged.as_object_mut().expect("spec serializes to an object");
    for (k, v) in keys {
        target.insert(k, v);
    }
    serde_json::from_value(merged).map_err(|e| bad(e.to_string()))
}

impl ExperimentSpec {
    pub fn geometry(&self) -> GeometryKind {
        self.geometry.unwrap_or(if self.subcommand == Command::Casimir { GeometryKind::Gap } else { GeometryKind::HalfSpace })
    }

    /// Structural checks that need no numerics.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |m: &str| Err(CliError::Config(m.to_string()));
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return fail("distance must be positive");
        }
        if self.chi.is_empty() {
            return fail("chi list is empty");
        }
        if self.n_steps.is_empty() || self.n_steps.contains(&0) {
            return fail("n_steps must be positive");
        }
        let single = !matches!(self.subcommand, Command::Convergence | Command::Analytic | Command::Tables);
        if single && self.n_steps.len() != 1 {
            return fail("only convergence takes an N list");
        }
        if self.n_paths == 0 {
            return fail("n_paths must be at least 1");
        }
        match self.subcommand {
            Command::Casimir if self.geometry() != GeometryKind::Gap => fail("casimir runs need the gap geometry"),
            Command::CpVacuum | Command::CpEmbedded if self.geometry() != GeometryKind::HalfSpace => {
                fail("cp runs need the half-space geometry")
            }
            Command::Thermal if self.beta.is_none() => fail("thermal runs need beta"),
            Command::Thermal if self.chi.len() != 1 && self.dispersion.is_none() => {
                fail("thermal runs take one chi or a dispersion model")
            }
            Command::Tables if self.output.is_none() => fail("tables needs an output path"),
            _ => Ok(()),
        }
    }
}
