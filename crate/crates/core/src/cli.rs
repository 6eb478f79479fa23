//! Command-line front end: subcommands, pipelines, gates and exit codes.
//!
//! Every run writes the effective configuration, one JSON summary per stage, CSV
//! tables, `summary.json` with the gate verdicts, and `manifest.json`. Failures
//! write `error.json` instead of the missing stage outputs.

use std::fmt::Display;
use std::io;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::discretization::assemble_linearized;
use crate::dispersion::{lambda_roots_with, minimal_speed_with, DispersionCurve, DispersionOptions, RootPair, ROOT_TOL};
use crate::evolution::{RecenterPolicy, StepOptions, Stepper};
use crate::experiments::{decay_fit, monotone_decreasing, rate_prediction, stability_run, PerturbationSpec, StabilityOptions};
use crate::grid::Grid;
use crate::medium::{
    check_bound_m, check_condition_c, check_sublinearity_with, validate_ellipticity, x_samples, Medium, DERIVATIVE_TOL,
};
use crate::report::{csv_table, eigenfunction_csv, render_json, snapshots_binary, trajectory_csv, OutputDir};
use crate::spectral::{principal_eig_floquet_with, principal_eig_with, EigenOptions, EigenResult};
use crate::waves::{
    build_front_initial, construct_wave, line_grid, predicted_shift, stability_of_p, steady_state, uniqueness_experiment,
    SeedShape, SteadyState, WaveOptions, WaveRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "pulsewave", version, about = "Pulsating traveling waves of KPP equations in periodic media")]
pub struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true, env = "PULSEWAVE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true, env = "PULSEWAVE_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent experiment cells.
    #[arg(long, global = true, env = "PULSEWAVE_WORKERS")]
    pub workers: Option<usize>,
    /// Base seed for randomized perturbations.
    #[arg(long, global = true, env = "PULSEWAVE_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Structural checks of the medium, written as a JSON certificate.
    Validate,
    /// Principal eigenpairs of the linearizations at 0 and at p.
    Eigen,
    /// Sampled dispersion curve and its minimum.
    Dispersion,
    /// Minimal speed c* and the decay-rate roots of each target speed.
    Speed,
    /// Front construction at every target speed.
    Wave,
    /// Perturbation decay of every front.
    Stability,
    /// Two differently seeded fronts agree up to a shift.
    Uniqueness,
    /// validate → speed → wave → stability → uniqueness.
    Full,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Eigen => "eigen",
            Command::Dispersion => "dispersion",
            Command::Speed => "speed",
            Command::Wave => "wave",
            Command::Stability => "stability",
            Command::Uniqueness => "uniqueness",
            Command::Full => "full",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// `message` starts with `kind` when the library error carries one.
    #[error("{message}")]
    Numerical { kind: String, message: String },
    #[error("cannot write outputs: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        }
    }

    pub fn kind(&self) -> String {
        match self {
            CliError::Config(ConfigError::Validation(_)) => "ValidationError".into(),
            CliError::Config(_) => "ParseError".into(),
            CliError::Numerical { kind, .. } => kind.clone(),
            CliError::Io(_) => "OutputError".into(),
        }
    }

    fn report(&self) -> Value {
        let details = match self {
            CliError::Config(ConfigError::Validation(v)) => json!(v),
            CliError::Config(ConfigError::Parse { line, column, field, message }) => {
                json!({ "line": line, "column": column, "field": field, "message": message })
            }
            _ => Value::Null,
        };
        json!({ "error": self.kind(), "message": self.to_string(), "details": details, "exit_code": self.exit_code() })
    }
}

/// Wraps a library error, keeping its `Kind:` prefix as the report kind when present.
fn numerical(e: impl Display) -> CliError {
    let message = e.to_string();
    let kind = match message.split_once(':') {
        Some((head, _)) if !head.is_empty() && !head.contains(' ') && head.starts_with(|c: char| c.is_ascii_uppercase()) => head.to_string(),
        _ => "NumericalFailure".to_string(),
    };
    CliError::Numerical { kind, message }
}

#[derive(Debug, Clone)]
struct Gate {
    name: String,
    passed: bool,
    detail: String,
}

/// Parses the command line and runs it. Returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            emit_error(&e, cli.out.as_deref());
            return e.exit_code();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build() {
        Ok(p) => p,
        Err(e) => {
            let e = numerical(e);
            emit_error(&e, Some(&cfg.out));
            return e.exit_code();
        }
    };
    pool.install(|| run(cli.command, &cfg))
}

/// Config from the file named on the command line, with flag and environment overrides applied.
pub fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| {
        ConfigError::Validation(vec!["no configuration given (--config or PULSEWAVE_CONFIG)".into()])
    })?;
    let mut cfg = parse_config(path)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit_error(e: &CliError, out: Option<&std::path::Path>) {
    eprintln!("pulsewave: {e}");
    if let Some(dir) = out {
        if let Ok(mut o) = OutputDir::create(dir) {
            let _ = o.write_text("error.json", "json", &render_json(&e.report()));
            let _ = o.finish();
        }
    }
}

/// Runs `command` on a validated config and writes every artifact under `cfg.out`.
pub fn run(command: Command, cfg: &ExperimentConfig) -> i32 {
    let mut out = match OutputDir::create(&cfg.out) {
        Ok(o) => o,
        Err(e) => {
            let e = CliError::Io(e);
            eprintln!("pulsewave: {e}");
            return e.exit_code();
        }
    };
    let result = Session::new(cfg, &mut out).and_then(|mut s| {
        s.echo_config()?;
        s.execute(command)?;
        Ok(s.gates)
    });
    let code = match result {
        Ok(gates) => {
            let passed = gates.iter().all(|g| g.passed);
            for g in gates.iter().filter(|g| !g.passed) {
                eprintln!("pulsewave: gate {} failed ({})", g.name, g.detail);
            }
            let code = if passed { EXIT_OK } else { EXIT_GATE };
            let summary = json!({
                "command": command.name(),
                "passed": passed,
                "exit_code": code,
                "gates": gates.iter().map(|g| json!({ "name": g.name, "passed": g.passed, "detail": g.detail })).collect::<Vec<_>>(),
            });
            match out.write_text("summary.json", "json", &render_json(&summary)) {
                Ok(_) => code,
                Err(e) => {
                    eprintln!("pulsewave: {e}");
                    EXIT_NUMERICAL
                }
            }
        }
        Err(e) => {
            eprintln!("pulsewave: {e}");
            let _ = out.write_text("error.json", "json", &render_json(&e.report()));
            e.exit_code()
        }
    };
    match out.finish() {
        Ok(_) => code,
        Err(e) => {
            eprintln!("pulsewave: {e}");
            code.max(EXIT_NUMERICAL)
        }
    }
}

#[derive(Default)]
struct Certificate {
    checks: serde_json::Map<String, Value>,
    all: bool,
    failed: Vec<String>,
    started: bool,
}

impl Certificate {
    fn record(&mut self, name: &str, passed: bool, mut v: Value) -> bool {
        if !self.started {
            self.all = true;
            self.started = true;
        }
        self.all &= passed;
        if !passed {
            self.failed.push(name.to_string());
        }
        v["passed"] = json!(passed);
        self.checks.insert(name.into(), v);
        passed
    }

    fn failure(&mut self, name: &str, e: &dyn Display) -> bool {
        let e = numerical(e);
        self.record(name, false, json!({ "error": e.kind(), "message": e.to_string() }))
    }
}

struct Session<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a mut OutputDir,
    medium: Medium,
    cell: Grid,
    gates: Vec<Gate>,
    curve: Option<DispersionCurve>,
    steady: Option<SteadyState>,
    mu_bar1: Option<f64>,
    waves: Vec<WaveRecord>,
}

impl<'a> Session<'a> {
    fn new(cfg: &'a ExperimentConfig, out: &'a mut OutputDir) -> Result<Self, CliError> {
        let medium = cfg.build_medium().map_err(|e| ConfigError::Validation(vec![format!("medium: {e}")]))?;
        let cell = cfg.cell().map_err(|e| ConfigError::Validation(vec![format!("grid: {e}")]))?;
        Ok(Self { cfg, out, medium, cell, gates: Vec::new(), curve: None, steady: None, mu_bar1: None, waves: Vec::new() })
    }

    fn execute(&mut self, command: Command) -> Result<(), CliError> {
        match command {
            Command::Validate => self.validate(),
            Command::Eigen => self.eigen(),
            Command::Dispersion => self.dispersion(),
            Command::Speed => self.speed(),
            Command::Wave => self.wave(),
            Command::Stability => self.stability(),
            Command::Uniqueness => self.uniqueness(),
            Command::Full => {
                self.validate()?;
                if !self.gates.iter().all(|g| g.passed) {
                    log::warn!("medium failed validation; later stages skipped");
                    return Ok(());
                }
                self.speed()?;
                self.wave()?;
                self.stability()?;
                self.uniqueness()
            }
        }
    }

    fn gate(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.gates.push(Gate { name: name.into(), passed, detail: detail.into() });
    }

    fn write_json(&mut self, name: &str, v: &Value) -> Result<(), CliError> {
        self.out.write_text(name, "json", &render_json(v))?;
        Ok(())
    }

    fn write_csv(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.out.write_text(name, "csv", text)?;
        Ok(())
    }

    fn echo_config(&mut self) -> Result<(), CliError> {
        self.out.write_text("config.effective.json", "json", &self.cfg.effective_json())?;
        Ok(())
    }

    fn eig_options(&self) -> EigenOptions {
        let s = &self.cfg.solver;
        EigenOptions { tol: s.eig_tol, residual_gate: s.residual_gate, max_iter: s.max_iter }
    }

    fn dispersion_options(&self) -> DispersionOptions {
        let s = &self.cfg.solver;
        DispersionOptions {
            eig: self.eig_options(),
            floquet_dt: self.medium.time_period().map(|tp| tp / s.floquet_steps as f64),
            scan: s.scan,
            rel_width: s.rel_width,
            widen: true,
        }
    }

    fn step_options(&self) -> StepOptions {
        StepOptions { dt: self.cfg.grid.dt.value(), u_max: None }
    }

    fn curve(&mut self) -> Result<DispersionCurve, CliError> {
        if self.curve.is_none() {
            let [lo, hi] = self.cfg.solver.lambda_range;
            log::info!("dispersion curve on [{lo}, {hi}]");
            let c = minimal_speed_with(&self.medium, &self.cell, (lo, hi), &self.dispersion_options()).map_err(numerical)?;
            self.curve = Some(c);
        }
        Ok(self.curve.clone().expect("just computed"))
    }

    fn steady(&mut self) -> Result<SteadyState, CliError> {
        if self.steady.is_none() {
            log::info!("positive steady state");
            self.steady = Some(steady_state(&self.medium, &self.cell).map_err(numerical)?);
        }
        Ok(self.steady.clone().expect("just computed"))
    }

    fn mu_bar1(&mut self) -> Result<f64, CliError> {
        if self.mu_bar1.is_none() {
            let s = self.steady()?;
            self.mu_bar1 = Some(stability_of_p(&self.medium, &self.cell, &s).map_err(numerical)?.eigenvalue);
        }
        Ok(self.mu_bar1.expect("just computed"))
    }

    /// Principal eigenpair of the linearization at 0; `μ₁ > 0` means 0 is unstable.
    fn zero_state_eig(&self) -> Result<EigenResult, CliError> {
        if self.medium.is_time_dependent() {
            let o = self.dispersion_options();
            let dt = o.floquet_dt.expect("time-dependent media have a period");
            let f = principal_eig_floquet_with(&self.medium, &self.cell, 0.0, 0.0, dt, &o.eig).map_err(numerical)?;
            // the Floquet result is in the elliptic (−L) convention
            Ok(EigenResult { eigenvalue: -f.eig.eigenvalue, ..f.eig })
        } else {
            let zero = vec![0.0; self.cell.len()];
            let op = assemble_linearized(&self.cell, &self.medium, None, &zero).map_err(numerical)?;
            principal_eig_with(&op, &self.eig_options()).map_err(numerical)
        }
    }

    fn one_dimensional(&self, stage: &str) -> Result<(), CliError> {
        if self.medium.dim() != 1 {
            return Err(CliError::Numerical {
                kind: "Unsupported".into(),
                message: format!("Unsupported: the {stage} stage runs on one-dimensional media"),
            });
        }
        Ok(())
    }

    fn validate(&mut self) -> Result<(), CliError> {
        let s = &self.cfg.solver;
        let n = s.samples;
        let mut cert = Certificate::default();
        let m = &self.medium;
        let elliptic = match validate_ellipticity(m, n) {
            Ok(est) => cert.record("ellipticity", true, json!({ "estimate": est })),
            Err(e) => cert.failure("ellipticity", &e),
        };
        let bound = check_bound_m(m, s.bound_ceiling);
        match &bound {
            Ok(b) => cert.record("bound_m", true, json!({ "m": b })),
            Err(e) => cert.failure("bound_m", e),
        };
        let top = *bound.as_ref().unwrap_or(&1.0);
        let u_grid: Vec<f64> = (1..=64).map(|k| top * k as f64 / 64.0).collect();
        match m.check_periodicity(n, &u_grid) {
            Ok(()) => cert.record("periodicity", true, json!({})),
            Err(e) => cert.failure("periodicity", &e),
        };
        let sub = check_sublinearity_with(m, &u_grid, n);
        let witness = sub.witness.map(|(x, a, b)| json!({ "x": x, "s": a, "s_prime": b }));
        cert.record("sublinearity", sub.holds, json!({ "witness": witness }));
        let mut excess = f64::NEG_INFINITY;
        for (t, x) in m.sample_points(n) {
            let at0 = m.f_u(t, x, 0.0);
            for &u in &u_grid {
                excess = excess.max(m.f_u(t, x, u) - at0);
            }
        }
        cert.record("derivative_bound", excess <= DERIVATIVE_TOL, json!({ "max_excess": excess, "tolerance": DERIVATIVE_TOL }));
        cert.record("strict_sublinearity", check_condition_c(m, &u_grid, &x_samples(m, n)), json!({}));

        if elliptic {
            match self.zero_state_eig() {
                Ok(e) => cert.record("zero_unstable", e.eigenvalue > 0.0, json!({ "mu1": e.eigenvalue, "residual": e.residual })),
                Err(e) => cert.failure("zero_unstable", &e),
            };
        }
        // p only exists for autonomous media that passed everything else
        if cert.all && !self.medium.is_time_dependent() {
            match self.steady().and_then(|p| Ok((self.mu_bar1()?, p))) {
                Ok((mb, p)) => cert.record(
                    "steady_state_stable",
                    mb < 0.0,
                    json!({ "mu_bar1": mb, "p_min": p.min(), "p_max": p.max(), "residual": p.residual, "uniqueness_witness": p.uniqueness_witness }),
                ),
                Err(e) => cert.failure("steady_state_stable", &e),
            };
        }
        let failed: Vec<String> = cert.failed.clone();
        let all = cert.all;
        self.write_json("validate.json", &json!({ "passed": all, "samples": n, "checks": Value::Object(cert.checks) }))?;
        let detail = if failed.is_empty() { "all checks pass".to_string() } else { format!("failed: {}", failed.join(", ")) };
        self.gate("validate", all, detail);
        Ok(())
    }

    fn eigen(&mut self) -> Result<(), CliError> {
        let z = self.zero_state_eig()?;
        self.write_csv("eigen/eigenfunction_zero.csv", &eigenfunction_csv(&z.eigenfunction))?;
        let mut report = json!({
            "zero_state": { "mu1": z.eigenvalue, "residual": z.residual, "iterations": z.iterations },
        });
        self.gate("eigen.zero_unstable", z.eigenvalue > 0.0, format!("μ₁ = {:e}", z.eigenvalue));
        if !self.medium.is_time_dependent() {
            let p = self.steady()?;
            let e = stability_of_p(&self.medium, &self.cell, &p).map_err(numerical)?;
            self.mu_bar1 = Some(e.eigenvalue);
            self.write_csv("eigen/eigenfunction_p.csv", &eigenfunction_csv(&e.eigenfunction))?;
            self.write_csv("eigen/steady_state.csv", &eigenfunction_csv(&p.p))?;
            report["steady_state"] = json!({
                "mu_bar1": e.eigenvalue,
                "residual": e.residual,
                "iterations": e.iterations,
                "p_min": p.min(),
                "p_max": p.max(),
                "p_residual": p.residual,
            });
            self.gate("eigen.p_stable", e.eigenvalue < 0.0, format!("μ̄₁ = {:e}", e.eigenvalue));
        }
        self.write_json("eigen/eigen.json", &report)
    }

    fn dispersion(&mut self) -> Result<(), CliError> {
        let c = self.curve()?;
        let csv = csv_table(&["lambda", "mu0", "c_of_lambda"], c.samples.iter().map(|s| vec![s.lambda, s.mu0, s.c]));
        self.write_csv("dispersion/dispersion.csv", &csv)?;
        let summary = json!({
            "c_star": c.c_star,
            "lambda_star": c.lambda_star,
            "residuals": { "star": c.residual_star, "max": c.residual_max },
            "lambda_range": [c.lambda_range.0, c.lambda_range.1],
            "fine_scan_fallback": c.fine_scan_fallback,
        });
        self.write_json("dispersion/dispersion.json", &summary)?;
        let gate = self.cfg.solver.residual_gate;
        self.gate("dispersion.residual", c.residual_max <= gate, format!("max eigen-residual {:e} (gate {gate:e})", c.residual_max));
        Ok(())
    }

    fn targets(&mut self) -> Result<Vec<f64>, CliError> {
        let c_star = self.curve()?.c_star;
        let w = &self.cfg.wave;
        Ok(w.speed_factors.iter().map(|f| f * c_star).chain(w.speeds.iter().copied()).collect())
    }

    fn roots(&mut self, c: f64) -> Result<RootPair, CliError> {
        let curve = self.curve()?;
        if (c - curve.c_star).abs() <= ROOT_TOL {
            return Ok(RootPair::critical(&curve));
        }
        lambda_roots_with(&self.medium, &self.cell, c, &curve, &self.dispersion_options()).map_err(numerical)
    }

    fn speed(&mut self) -> Result<(), CliError> {
        let curve = self.curve()?;
        let mut speeds = Vec::new();
        for c in self.targets()? {
            let r = self.roots(c)?;
            speeds.push(json!({ "c": c, "lambda1": r.lambda1, "lambda2": r.lambda2, "mu_mid": r.mu_mid }));
        }
        let summary = json!({
            "c_star": curve.c_star,
            "lambda_star": curve.lambda_star,
            "residual_star": curve.residual_star,
            "speeds": speeds,
        });
        self.write_json("speed.json", &summary)?;
        let gate = self.cfg.solver.residual_gate;
        self.gate("speed.residual", curve.residual_star <= gate, format!("c* = {}, residual {:e}", curve.c_star, curve.residual_star));
        Ok(())
    }

    fn wave_options(&self) -> WaveOptions {
        let (g, w) = (&self.cfg.grid, &self.cfg.wave);
        WaveOptions {
            window_periods: g.window_periods,
            boundary: g.boundary,
            t_end: w.t_end,
            record_every: w.record_every,
            pulsating_from: w.pulsating_from,
            theta: w.theta,
            epsilon_fraction: w.epsilon_fraction,
            dt: g.dt.value(),
            ..WaveOptions::default()
        }
    }

    fn build_waves(&mut self) -> Result<(), CliError> {
        if !self.waves.is_empty() {
            return Ok(());
        }
        self.one_dimensional("wave")?;
        let targets = self.targets()?;
        let (curve, steady) = (self.curve()?, self.steady()?);
        let opts = self.wave_options();
        let medium = &self.medium;
        log::info!("constructing {} fronts", targets.len());
        let waves: Result<Vec<WaveRecord>, _> =
            targets.par_iter().map(|&c| construct_wave(medium, &steady, &curve, c, &opts)).collect();
        self.waves = waves.map_err(numerical)?;
        Ok(())
    }

    fn wave(&mut self) -> Result<(), CliError> {
        self.build_waves()?;
        let sup_p = self.steady()?.max();
        let (gate_rel, tol) = (self.cfg.wave.residual_gate, self.cfg.wave.speed_tolerance);
        let waves = self.waves.clone();
        for (i, w) in waves.iter().enumerate() {
            let dir = format!("wave/{i:02}");
            let prof = w.profile();
            let ax = prof.grid.axis(0);
            let rows = (0..prof.len()).map(|k| vec![ax.position(k) + w.c_meas * prof.t, ax.cell_position(k), prof.values[k]]);
            self.write_csv(&format!("{dir}/profile.csv"), &csv_table(&["xi", "x_mod_L", "w"], rows))?;
            let front = csv_table(&["t", "X"], w.speed.series.iter().map(|&(t, x)| vec![t, x]));
            self.write_csv(&format!("{dir}/front.csv"), &front)?;
            if self.cfg.wave.dump_trajectory {
                let snaps = &w.trajectory.snapshots;
                self.write_csv(&format!("{dir}/trajectory.csv"), &trajectory_csv(snaps))?;
                let same_shape = snaps.iter().all(|f| f.grid.same_shape(&snaps[0].grid));
                if same_shape {
                    let (bytes, sidecar) = snapshots_binary(snaps).map_err(numerical)?;
                    self.out.write(&format!("{dir}/trajectory.bin"), "bin", &bytes)?;
                    self.out.write_text(&format!("{dir}/trajectory.json"), "json", &sidecar)?;
                }
            }
            let fit = w.fit.as_ref().ok();
            let summary = json!({
                "c_target": w.c_target,
                "c_meas": w.c_meas,
                "pulsating_residual": w.pulsating_residual,
                "xi0": w.xi0.xi0,
                "B": fit.map(|f| f.b),
                "lambda_fit": fit.map(|f| f.lambda_fit),
                "fit_r2": fit.map(|f| f.r2),
                "fit_error": w.fit.as_ref().err().map(|e| e.to_string()),
                "critical": w.seed.critical,
                "lambda_seed": w.seed.lambda,
                "speed_r2": w.speed.r2,
                "theta_sensitivity": w.speed.theta_sensitivity.iter().map(|&(th, c)| json!([th, c])).collect::<Vec<_>>(),
                "recenters": w.recenters.len(),
                "dt": w.trajectory.dt,
            });
            self.write_json(&format!("{dir}/summary.json"), &summary)?;
            let gate = gate_rel * sup_p;
            self.gate(
                format!("wave[{i}].pulsating"),
                w.pulsating_residual <= gate,
                format!("residual {:e} (gate {gate:e})", w.pulsating_residual),
            );
            let rel = (w.c_meas - w.c_target).abs() / w.c_target;
            self.gate(format!("wave[{i}].speed"), rel <= tol, format!("c_meas {} vs {} (rel {rel:e})", w.c_meas, w.c_target));
        }
        Ok(())
    }

    fn stability(&mut self) -> Result<(), CliError> {
        self.build_waves()?;
        let steady = self.steady()?;
        let mu_bar1 = self.mu_bar1()?;
        let cfg = self.cfg;
        let st = &cfg.stability;
        let line = line_grid(&steady, cfg.grid.window_periods, cfg.grid.boundary).map_err(numerical)?;
        let stepper = Stepper::new(&self.medium, &line, self.step_options(), Some(steady.p.values.clone())).map_err(numerical)?;
        let opts = StabilityOptions { duration: st.duration, record_every: st.record_every, residual_gate: cfg.wave.residual_gate };
        let cells: Vec<(usize, usize, PerturbationSpec)> = (0..self.waves.len())
            .flat_map(|i| {
                st.perturbations.iter().enumerate().map(move |(j, p)| (i, j, PerturbationSpec { seed: cfg.seed.wrapping_add(p.seed), ..*p }))
            })
            .collect();
        log::info!("{} stability cells", cells.len());
        let waves = &self.waves;
        let runs: Result<Vec<_>, _> = cells.par_iter().map(|(i, _, spec)| stability_run(&waves[*i], &stepper, spec, &opts)).collect();
        let runs = runs.map_err(numerical)?;
        let dim = self.medium.dim();
        let n_half = dim as f64 / 2.0;
        for ((i, j, spec), run) in cells.iter().zip(runs) {
            let w = self.waves[*i].clone();
            let e = &run.series;
            let csv = csv_table(&["t", "E_left", "E_right", "E_global"], e.rows());
            let name = format!("stability/{i:02}_{j:02}");
            self.write_csv(&format!("{name}.csv"), &csv)?;
            let fit = decay_fit(e, dim);
            let mut report = json!({
                "c_target": w.c_target,
                "c_meas": w.c_meas,
                "perturbation": serde_json::to_value(spec).expect("serializable"),
                "clamp_count": run.clamp_count,
                "weighted_l1": run.weighted_l1,
                "min_difference": e.min_difference,
                "mu_bar1": mu_bar1,
                "r2_exponential": fit.exponential.as_ref().ok().map(|f| f.r2),
                "r2_algebraic": fit.algebraic.as_ref().ok().map(|f| f.r2),
                "slope_fit": fit.algebraic.as_ref().ok().map(|f| f.value),
                "mu_fit": fit.exponential.as_ref().ok().map(|f| f.value),
            });
            let (passed, detail) = if w.seed.critical {
                let alg = fit.algebraic.clone().map_err(numerical)?;
                let mono = monotone_decreasing(&e.t, &e.global, alg.window, 0.0);
                let bound = -st.algebraic_factor * n_half;
                let ok = alg.value <= bound && mono;
                report["r2"] = json!(alg.r2);
                report["window"] = json!([alg.window.0, alg.window.1]);
                report["prediction"] = json!(-n_half);
                report["monotone"] = json!(mono);
                report["verdict"] = json!(if ok { "algebraic" } else { "not_algebraic" });
                (ok, format!("slope {} (needs ≤ {bound}), monotone {mono}", alg.value))
            } else {
                let exp = fit.exponential.clone().map_err(numerical)?;
                let roots = self.roots(w.c_target)?;
                let lambdas = if st.lambdas.is_empty() { vec![0.5 * (roots.lambda1 + roots.lambda2)] } else { st.lambdas.clone() };
                let mut preds = Vec::new();
                for &l in &lambdas {
                    preds.push(rate_prediction(&self.medium, &self.cell, w.c_target, l, mu_bar1, &roots).map_err(numerical)?);
                }
                let best = preds.iter().map(|p| p.rate).fold(f64::NEG_INFINITY, f64::max);
                let ok = exp.value >= st.rate_factor * best && exp.r2 >= st.r2_gate;
                report["r2"] = json!(exp.r2);
                report["window"] = json!([exp.window.0, exp.window.1]);
                report["prediction"] = json!(best);
                report["predictions"] = json!(preds
                    .iter()
                    .map(|p| json!({ "lambda": p.lambda, "mu_c": p.mu_c, "half_mu_bar": p.half_mu_bar, "rate": p.rate }))
                    .collect::<Vec<_>>());
                report["verdict"] = json!(if ok { "exponential" } else { "not_exponential" });
                (ok, format!("μ_fit {} vs prediction {best} (R² {})", exp.value, exp.r2))
            };
            self.write_json(&format!("{name}.json"), &report)?;
            self.gate(format!("stability[{i},{j}]"), passed, detail);
        }
        Ok(())
    }

    fn uniqueness(&mut self) -> Result<(), CliError> {
        self.one_dimensional("uniqueness")?;
        let u = &self.cfg.uniqueness;
        let curve = self.curve()?;
        let steady = self.steady()?;
        let c = u.speed_factor * curve.c_star;
        let line = line_grid(&steady, self.cfg.grid.window_periods, self.cfg.grid.boundary).map_err(numerical)?;
        let shape1 = SeedShape::default();
        let shape2 = SeedShape { amplitude: u.amplitude, shift: u.shift };
        let a = build_front_initial(&self.medium, &line, c, &steady, &curve, shape1).map_err(numerical)?;
        let b = build_front_initial(&self.medium, &line, c, &steady, &curve, shape2).map_err(numerical)?;
        let stepper = Stepper::new(&self.medium, &line, self.step_options(), Some(steady.p.values.clone())).map_err(numerical)?;
        // the alignment uses the measured speed of the discrete front
        let c_meas = match self.waves.iter().find(|w| (w.c_target - c).abs() <= 1e-12 * c) {
            Some(w) => w.c_meas,
            None => construct_wave(&self.medium, &steady, &curve, c, &self.wave_options()).map_err(numerical)?.c_meas,
        };
        let policy = RecenterPolicy::new(a.lambda);
        let r = uniqueness_experiment(&a.field, &b.field, &stepper, c_meas, u.t_end, u.max_shift, Some(&policy)).map_err(numerical)?;
        let want = predicted_shift(shape1, shape2, a.lambda);
        let h = line.axis(0).h();
        let summary = json!({
            "c": c,
            "c_meas": c_meas,
            "distance": r.distance,
            "distance_unaligned": r.distance_unaligned,
            "shift": r.shift,
            "predicted_shift": want,
            "h": h,
            "lambda": a.lambda,
        });
        self.write_json("uniqueness.json", &summary)?;
        let (dg, sg) = (u.distance_gate, u.shift_gate_cells * h);
        self.gate("uniqueness.distance", r.distance <= dg, format!("aligned distance {:e} (gate {dg:e})", r.distance));
        self.gate("uniqueness.shift", (r.shift - want).abs() <= sg, format!("shift {} vs predicted {want} (gate {sg:e})", r.shift));
        Ok(())
    }
}
