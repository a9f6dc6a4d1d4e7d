//! Batch front end: JSON experiment configs in, reports and plot-ready tables out.
//!
//! Every file written embeds the SHA-256 of the effective configuration
//! (after command-line overrides) and a format tag.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::airy::{build_eta_star, find_a0, AiryProfile};
use crate::asymptotics::{config_hash, run_sweep, SweepSpec, DEFAULT_TAIL_WINDOW, SWEEP_FORMAT};
use crate::discrete::{discrete_sweep, evolve_discrete, mass_fractions, nearest_neighbor_mutation, DiscreteTraitSystem};
use crate::eigen::sigma_star_curve;
use crate::error::{Error, Result};
use crate::grid::{integrate_trait, SpatialField, SpatialGrid};
use crate::habitat::Habitat;
use crate::logistic::{solve_theta, DEFAULT_TOL};
use crate::solver::{evolve, existence_mu1, solve_steady_state, Checkpoint, ModelConfig};

/// Tag written into every JSON report.
pub const REPORT_FORMAT: &str = "dispersal-report-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Steady,
    Evolve,
    Sweep,
    EigenCurve,
    Airy,
    Discrete,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Steady => "steady",
            Mode::Evolve => "evolve",
            Mode::Sweep => "sweep",
            Mode::EigenCurve => "eigen-curve",
            Mode::Airy => "airy",
            Mode::Discrete => "discrete",
        }
    }
}

fn default_grid() -> SpatialGrid {
    SpatialGrid::unit_interval(96).expect("default grid")
}
fn default_alpha_lo() -> f64 {
    0.5
}
fn default_alpha_hi() -> f64 {
    2.0
}
fn default_epsilon() -> f64 {
    0.04
}
fn default_epsilons() -> Vec<f64> {
    vec![0.08, 0.04, 0.02, 0.01]
}
fn default_dt() -> f64 {
    0.2
}
fn default_t_end() -> f64 {
    100.0
}
fn default_tail_window() -> [f64; 2] {
    [DEFAULT_TAIL_WINDOW.0, DEFAULT_TAIL_WINDOW.1]
}
fn default_mass_level() -> f64 {
    0.99
}
fn default_eigen_alphas() -> Vec<f64> {
    vec![0.5, 0.75, 1.0, 1.5, 2.0]
}
fn default_a1() -> f64 {
    1.0
}
fn default_samples() -> usize {
    401
}
fn default_species() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn default_discrete_tol() -> f64 {
    1e-10
}

/// Experiment configuration. All fields are optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default = "default_grid")]
    pub grid: SpatialGrid,
    #[serde(default)]
    pub habitat: Habitat,
    #[serde(default = "default_alpha_lo")]
    pub alpha_lo: f64,
    #[serde(default = "default_alpha_hi")]
    pub alpha_hi: f64,
    /// Single ε for steady and evolve.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// ε list for sweeps.
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    /// Trait cells; layer-resolving default when absent.
    #[serde(default)]
    pub trait_cells: Option<usize>,
    /// Admit constant `m`.
    #[serde(default)]
    pub trivial: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_tail_window")]
    pub tail_window: [f64; 2],
    #[serde(default = "default_mass_level")]
    pub mass_level: f64,
    #[serde(default = "default_eigen_alphas")]
    pub eigen_alphas: Vec<f64>,
    /// Selection gradient for the airy mode; `null` derives it from `m`.
    #[serde(default = "a1_default_option")]
    pub a1: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Diffusivities of the discrete species.
    #[serde(default = "default_species")]
    pub species: Vec<f64>,
    /// Row-major mutation matrix; nearest-neighbour default when absent.
    #[serde(default)]
    pub mutation: Option<Vec<f64>>,
    #[serde(default = "default_discrete_tol")]
    pub discrete_tol: f64,
    /// Reserved for randomized inputs; no current mode draws random numbers.
    #[serde(default)]
    pub seed: u64,
}

fn a1_default_option() -> Option<f64> {
    Some(default_a1())
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ExperimentSpec {
    /// Parses JSON, reporting the failing field path on schema violations.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Canonical JSON of the effective configuration.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn hash(&self) -> String {
        config_hash(self.canonical().as_bytes())
    }

    pub fn habitat_field(&self) -> Result<SpatialField> {
        self.habitat.sample(Arc::new(self.grid.clone()))
    }

    pub fn model_config(&self, epsilon: f64) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(self.habitat_field()?, self.alpha_lo, self.alpha_hi, epsilon, self.trait_cells, self.trivial)?;
        c.dt = self.dt;
        Ok(c)
    }
}

#[derive(Debug, Parser)]
#[command(name = "dispersal", version, about = "Steady states and small-mutation asymptotics of dispersal-trait populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Run the invariant suite on a checkpoint and exit.
    #[arg(long, value_name = "CHECKPOINT")]
    pub check: Option<PathBuf>,
}

/// Flags overriding config fields.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,
    #[arg(long)]
    pub trait_cells: Option<usize>,
    /// Admit constant `m`.
    #[arg(long)]
    pub trivial: bool,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub a1: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Positive steady state at one ε.
    Steady(Overrides),
    /// Time integration from the trait-flat density.
    Evolve(Overrides),
    /// ε sweep with scaling-law fits.
    Sweep(Overrides),
    /// σ*(α) and its derivative.
    EigenCurve(Overrides),
    /// A₀ and the boundary-layer profile η*.
    Airy(Overrides),
    /// Discrete-trait equilibria and an ε = 0 invasion run.
    Discrete(Overrides),
    /// Use the mode named in the config file.
    Run(Overrides),
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(v) = self.epsilon {
            spec.epsilon = v;
        }
        if let Some(v) = &self.epsilons {
            spec.epsilons = v.clone();
        }
        if let Some(v) = self.trait_cells {
            spec.trait_cells = Some(v);
        }
        if self.trivial {
            spec.trivial = true;
        }
        if let Some(v) = self.dt {
            spec.dt = v;
        }
        if let Some(v) = self.t_end {
            spec.t_end = v;
        }
        if let Some(v) = self.a1 {
            spec.a1 = Some(v);
        }
    }
}

/// Files written by one run.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, dir: &Path, name: &str, contents: &str) -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        self.files.push(path);
        Ok(())
    }
}

fn header(spec: &ExperimentSpec, format: &str) -> String {
    format!("# format={format}\n# config_sha256={}\n", spec.hash())
}

fn report(spec: &ExperimentSpec, mode: Mode, body: serde_json::Value) -> Result<String> {
    Ok(serde_json::to_string_pretty(&json!({
        "format": REPORT_FORMAT,
        "mode": mode.name(),
        "config_sha256": spec.hash(),
        "config": spec,
        "result": body,
    }))?)
}

/// Runs `mode` with the effective config, writing into `out`.
pub fn run(spec: &ExperimentSpec, mode: Mode, out: &Path, threads: usize) -> Result<Artifacts> {
    std::fs::create_dir_all(out)?;
    let mut art = Artifacts::default();
    match mode {
        Mode::Steady => run_steady(spec, out, &mut art)?,
        Mode::Evolve => run_evolve(spec, out, &mut art)?,
        Mode::Sweep => run_sweep_mode(spec, out, threads, &mut art)?,
        Mode::EigenCurve => run_eigen(spec, out, &mut art)?,
        Mode::Airy => run_airy(spec, out, &mut art)?,
        Mode::Discrete => run_discrete(spec, out, &mut art)?,
    }
    Ok(art)
}

fn run_steady(spec: &ExperimentSpec, out: &Path, art: &mut Artifacts) -> Result<()> {
    let config = spec.model_config(spec.epsilon)?;
    let state = solve_steady_state(&config)?;
    let checks = state.checks(&config);
    let failures = checks.failures();
    let cp = Checkpoint::new(&config, &state);
    art.write(out, "checkpoint.json", &cp.to_json()?)?;
    let mut csv = header(spec, "steady-uhat-v1");
    csv.push_str("x,u_hat,v\n");
    for i in 0..state.u_hat.values.len() {
        let p = config.spatial().point(i);
        csv.push_str(&format!("{:e},{:e},{:e}\n", p[0], state.u_hat.values[i], state.v.values[i]));
    }
    art.write(out, "steady_uhat.csv", &csv)?;
    let body = json!({
        "epsilon": config.epsilon,
        "trait_cells": config.traits.cells(),
        "residual_inf": state.residual_inf,
        "iterations": state.iterations,
        "sup_u": state.u.sup(),
        "min_u": state.u.min(),
        "checks": checks,
        "failures": failures,
    });
    art.write(out, "steady.json", &report(spec, Mode::Steady, body)?)?;
    if !failures.is_empty() {
        return Err(Error::Invariant(failures.join("; ")));
    }
    Ok(())
}

fn run_evolve(spec: &ExperimentSpec, out: &Path, art: &mut Artifacts) -> Result<()> {
    let config = spec.model_config(spec.epsilon)?;
    let mut u = config.uniform_guess();
    let samples = 20usize;
    let mut csv = header(spec, "evolve-v1");
    csv.push_str("t,total_mass,sup_u\n");
    csv.push_str(&format!("{:e},{:e},{:e}\n", 0.0, u.total_mass(), u.sup()));
    for k in 1..=samples {
        u = evolve(&config, &u, spec.t_end / samples as f64, spec.dt)?;
        csv.push_str(&format!("{:e},{:e},{:e}\n", spec.t_end * k as f64 / samples as f64, u.total_mass(), u.sup()));
    }
    art.write(out, "evolve.csv", &csv)?;
    let u_hat = integrate_trait(&u);
    let body = json!({
        "epsilon": config.epsilon,
        "t_end": spec.t_end,
        "dt": spec.dt,
        "total_mass": u.total_mass(),
        "sup_u": u.sup(),
        "u_hat": u_hat.values,
    });
    art.write(out, "evolve.json", &report(spec, Mode::Evolve, body)?)
}

fn run_sweep_mode(spec: &ExperimentSpec, out: &Path, threads: usize, art: &mut Artifacts) -> Result<()> {
    if spec.epsilons.is_empty() {
        return Err(Error::Config {
            path: "epsilons".into(),
            message: "sweep needs at least one ε".into(),
        });
    }
    let sweep = SweepSpec {
        m: spec.habitat_field()?,
        alpha_lo: spec.alpha_lo,
        alpha_hi: spec.alpha_hi,
        epsilons: spec.epsilons.clone(),
        trait_cells: spec.trait_cells,
        tail_window: (spec.tail_window[0], spec.tail_window[1]),
        mass_level: spec.mass_level,
        config_hash: spec.hash(),
    };
    let report = run_sweep(&sweep, threads)?;
    art.write(out, "sweep.csv", &report.to_csv())?;
    art.write(out, "sweep.json", &report.to_json()?)?;
    let failures: Vec<String> = report
        .records
        .iter()
        .flat_map(|r| r.checks.failures().into_iter().map(move |f| format!("ε = {}: {f}", r.epsilon)))
        .collect();
    if !failures.is_empty() {
        return Err(Error::Invariant(failures.join("; ")));
    }
    Ok(())
}

fn run_eigen(spec: &ExperimentSpec, out: &Path, art: &mut Artifacts) -> Result<()> {
    let m = spec.habitat_field()?;
    let theta = solve_theta(spec.alpha_lo, &m, &m.grid, DEFAULT_TOL)?;
    let curve = sigma_star_curve(&m, &theta, &spec.eigen_alphas)?;
    let mut csv = header(spec, "eigen-curve-v1");
    csv.push_str("alpha,sigma,derivative\n");
    for i in 0..curve.alphas.len() {
        csv.push_str(&format!("{:e},{:e},{:e}\n", curve.alphas[i], curve.sigma[i], curve.derivative[i]));
    }
    art.write(out, "eigen_curve.csv", &csv)?;
    let increasing = curve.is_increasing();
    art.write(
        out,
        "eigen_curve.json",
        &report(spec, Mode::EigenCurve, json!({ "curve": curve, "increasing": increasing }))?,
    )
}

fn run_airy(spec: &ExperimentSpec, out: &Path, art: &mut Artifacts) -> Result<()> {
    let a0 = find_a0()?;
    let a1 = match spec.a1 {
        Some(v) => v,
        None => {
            let m = spec.habitat_field()?;
            let theta = solve_theta(spec.alpha_lo, &m, &m.grid, DEFAULT_TOL)?;
            sigma_star_curve(&m, &theta, &[])?.sigma1
        }
    };
    let eta = build_eta_star(a1, AiryProfile::default_s_max(a1, a0), spec.samples.max(2))?;
    let mut csv = header(spec, "airy-v1");
    csv.push_str("s,eta\n");
    for (s, e) in eta.s.iter().zip(&eta.eta) {
        csv.push_str(&format!("{s:e},{e:e}\n"));
    }
    art.write(out, "eta.csv", &csv)?;
    let body = json!({
        "A0": a0,
        "a1": a1,
        "a0": eta.a0,
        "normalization": eta.normalization,
        "total_mass": eta.total_mass(),
        "ode_residual_inf": eta.ode_residual_inf(),
        "derivative_at_zero": eta.eval_derivative(0.0),
        "band_k_99": eta.quantile(0.99)?,
    });
    art.write(out, "airy.json", &report(spec, Mode::Airy, body)?)
}

fn run_discrete(spec: &ExperimentSpec, out: &Path, art: &mut Artifacts) -> Result<()> {
    let m = spec.habitat_field()?;
    let k = spec.species.len();
    let mutation = spec.mutation.clone().unwrap_or_else(|| nearest_neighbor_mutation(k));
    let positive: Vec<f64> = spec.epsilons.iter().copied().filter(|e| *e > 0.0).collect();
    let mut sweep = discrete_sweep(&spec.species, &mutation, &m, &positive, spec.discrete_tol, &spec.hash())?;
    sweep.format = SWEEP_FORMAT.into();
    art.write(out, "discrete.csv", &sweep.to_csv())?;
    // Invasion of the slowest species into the fastest at ε = 0.
    let mut invasion = serde_json::Value::Null;
    if k >= 2 {
        let pair = vec![spec.species[0], spec.species[k - 1]];
        let sys = DiscreteTraitSystem::with_default_mutation(pair, 0.0, m.clone())?;
        let resident = solve_theta(spec.species[k - 1], &m, &m.grid, DEFAULT_TOL)?.theta;
        let u0 = vec![resident.map(|v| 0.01 * v), resident];
        let u = evolve_discrete(&sys, &u0, spec.t_end, spec.dt)?;
        invasion = json!({ "t_end": spec.t_end, "mass_fractions": mass_fractions(&u) });
    }
    art.write(
        out,
        "discrete.json",
        &report(spec, Mode::Discrete, json!({ "sweep": sweep, "invasion": invasion }))?,
    )
}

/// Loads a checkpoint and evaluates the steady-state identities and `μ₁`.
pub fn check_checkpoint(path: &Path) -> Result<serde_json::Value> {
    let cp = Checkpoint::load(path)?;
    let (config, state) = cp.restore()?;
    let checks = state.checks(&config);
    let failures = checks.failures();
    let mu1 = existence_mu1(&config)?;
    let value = json!({
        "format": REPORT_FORMAT,
        "checkpoint": path.display().to_string(),
        "checks": checks,
        "mu1": mu1,
        "failures": failures,
    });
    if !failures.is_empty() {
        return Err(Error::Invariant(failures.join("; ")));
    }
    Ok(value)
}

/// Exit status for an error: 2 for configuration problems, 3 for I/O, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Json(_) | Error::Habitat(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

/// Entry point shared by the binary and tests.
pub fn execute(cli: Cli) -> Result<Vec<PathBuf>> {
    if let Some(path) = &cli.check {
        let value = check_checkpoint(path)?;
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(Vec::new());
    }
    let mut spec = match &cli.config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    let Some(command) = cli.command else {
        return Err(Error::Config {
            path: "mode".into(),
            message: "no subcommand given".into(),
        });
    };
    let (mode, overrides) = match command {
        Command::Steady(o) => (Mode::Steady, o),
        Command::Evolve(o) => (Mode::Evolve, o),
        Command::Sweep(o) => (Mode::Sweep, o),
        Command::EigenCurve(o) => (Mode::EigenCurve, o),
        Command::Airy(o) => (Mode::Airy, o),
        Command::Discrete(o) => (Mode::Discrete, o),
        Command::Run(o) => (
            spec.mode.ok_or_else(|| Error::Config {
                path: "mode".into(),
                message: "`run` needs a mode in the config".into(),
            })?,
            o,
        ),
    };
    overrides.apply(&mut spec);
    spec.mode = Some(mode);
    let art = run(&spec, mode, &cli.out, cli.threads.max(1))?;
    Ok(art.files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_errors_carry_the_field_path() {
        let err = ExperimentSpec::from_json(r#"{"grid": {"extents": [1.0], "cells": ["x"]}}"#).unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("grid.cells"), "{path}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentSpec::from_json(r#"{"epsilonn": 0.1}"#), Err(Error::Config { .. })));
        let err = ExperimentSpec::from_json(r#"{"habitat": {"preset": "cosine", "amp": 1}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref path, .. } if path.starts_with("habitat")), "{err:?}");
    }

    #[test]
    fn defaults_are_desk_scale() {
        let spec = ExperimentSpec::default();
        assert_eq!(spec.grid, SpatialGrid::unit_interval(96).unwrap());
        assert_eq!(spec.habitat, Habitat::Cosine { amplitude: 0.5 });
        assert_eq!(spec.epsilons, vec![0.08, 0.04, 0.02, 0.01]);
        assert!(!spec.trivial);
    }

    #[test]
    fn hash_tracks_overrides() {
        let mut spec = ExperimentSpec::default();
        let before = spec.hash();
        assert_eq!(before, ExperimentSpec::default().hash());
        Overrides {
            epsilon: Some(0.02),
            ..Default::default()
        }
        .apply(&mut spec);
        assert_ne!(before, spec.hash());
    }

    #[test]
    fn constant_habitat_needs_the_flag() {
        let mut spec = ExperimentSpec::from_json(r#"{"habitat": {"preset": "one"}}"#).unwrap();
        assert!(matches!(spec.model_config(0.1), Err(Error::Habitat(_))));
        spec.trivial = true;
        assert!(spec.model_config(0.1).is_ok());
    }
}
