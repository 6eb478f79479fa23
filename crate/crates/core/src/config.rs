//! Experiment configuration: a TOML file with one section per pipeline stage.
//!
//! Every field except `[medium]` has a default; [`parse_config`] fills them in,
//! validates the whole tree and reports every violation at once. The effective
//! configuration renders back to canonical JSON via [`ExperimentConfig::effective_json`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::experiments::{PerturbationKind, PerturbationSpec, Sign};
use crate::grid::{BoundaryRule, Grid, MIN_WINDOW_PERIODS};
use crate::medium::{Coefficient, DiffusionField, Medium, MediumError, Nonlinearity, ReactionTable};
use crate::report::{read_csv_table, to_json};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("ParseError at line {line}, column {column} (near `{field}`): {message}")]
    Parse { line: usize, column: usize, field: String, message: String },
    #[error("ValidationError: {}", .0.join("; "))]
    Validation(Vec<String>),
}

/// Time step: derived from the stability budget, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DtChoice {
    #[default]
    Auto,
    Fixed(f64),
}

impl DtChoice {
    pub fn value(self) -> Option<f64> {
        match self {
            DtChoice::Auto => None,
            DtChoice::Fixed(v) => Some(v),
        }
    }
}

impl Serialize for DtChoice {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            DtChoice::Auto => s.serialize_str("auto"),
            DtChoice::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for DtChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(DtChoice::Fixed(v)),
            Raw::Int(v) => Ok(DtChoice::Fixed(v as f64)),
            Raw::Word(w) if w == "auto" => Ok(DtChoice::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("dt must be \"auto\" or a number, got {w:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionConfig {
    /// `f = u(μ(t,x) − u)`.
    KppLogistic {
        #[serde(default = "unit")]
        capacity: Coefficient,
    },
    /// CSV with columns `x_index, u, f, f_u`; x nodes uniform over one period.
    /// Relative paths resolve against the config file's directory.
    Tabulated { file: PathBuf },
}

impl Default for ReactionConfig {
    fn default() -> Self {
        ReactionConfig::KppLogistic { capacity: unit() }
    }
}

fn unit() -> Coefficient {
    Coefficient::constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub periods: Vec<f64>,
    #[serde(default)]
    pub time_period: Option<f64>,
    /// `a(t,x)` in 1D, `A₁₁` in 2D.
    #[serde(default = "unit")]
    pub diffusion: Coefficient,
    /// `A₂₂`; defaults to `diffusion` in 2D.
    #[serde(default)]
    pub diffusion_x2: Option<Coefficient>,
    /// `A₁₂`. Accepted only so that it can be rejected with a clear message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_x12: Option<Coefficient>,
    #[serde(default)]
    pub reaction: ReactionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Nodes per period on every axis.
    pub n: usize,
    pub window_periods: usize,
    pub boundary: BoundaryRule,
    pub dt: DtChoice,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 256, window_periods: 40, boundary: BoundaryRule::ClampToLimits, dt: DtChoice::Auto }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub eig_tol: f64,
    pub residual_gate: f64,
    pub max_iter: usize,
    pub lambda_range: [f64; 2],
    pub scan: usize,
    /// Relative bracket width of the golden-section search for λ*.
    pub rel_width: f64,
    /// Steps per time period for Floquet maps.
    pub floquet_steps: usize,
    /// Sample density of the medium checks, per period per axis.
    pub samples: usize,
    /// Ceiling of the search for the bound M.
    pub bound_ceiling: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eig_tol: 1e-10,
            residual_gate: 1e-9,
            max_iter: 100_000,
            lambda_range: [0.05, 8.0],
            scan: 64,
            rel_width: 1e-6,
            floquet_steps: 1024,
            samples: 64,
            bound_ceiling: 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveConfig {
    /// Absolute target speeds.
    pub speeds: Vec<f64>,
    /// Target speeds as multiples of c* (≥ 1).
    pub speed_factors: Vec<f64>,
    pub t_end: f64,
    pub record_every: f64,
    pub pulsating_from: f64,
    pub theta: f64,
    pub epsilon_fraction: f64,
    /// Pulsating residual gate relative to `sup p`.
    pub residual_gate: f64,
    /// Relative tolerance of `c_meas` against the target.
    pub speed_tolerance: f64,
    /// Also dump every snapshot (CSV and binary with sidecar).
    pub dump_trajectory: bool,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            speeds: Vec::new(),
            speed_factors: vec![1.25],
            t_end: 60.0,
            record_every: 0.25,
            pulsating_from: 50.0,
            theta: 0.5,
            epsilon_fraction: 0.05,
            residual_gate: 1e-2,
            speed_tolerance: 0.02,
            dump_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub duration: f64,
    pub record_every: f64,
    /// Decay rates of the weight for the predicted rate; empty means the midpoint of `[λ₁, λ₂]`.
    pub lambdas: Vec<f64>,
    pub perturbations: Vec<PerturbationSpec>,
    /// Gate on the measured exponential rate, relative to the prediction.
    pub rate_factor: f64,
    pub r2_gate: f64,
    /// At c*, the log–log slope must be ≤ −algebraic_factor·n/2.
    pub algebraic_factor: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            duration: 40.0,
            record_every: 0.25,
            lambdas: Vec::new(),
            perturbations: vec![PerturbationSpec::bump(0.1, Sign::Positive)],
            rate_factor: 0.8,
            r2_gate: 0.99,
            algebraic_factor: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessConfig {
    /// Speed as a multiple of c* (> 1).
    pub speed_factor: f64,
    pub t_end: f64,
    /// Second seed: amplitude and displacement relative to the first.
    pub amplitude: f64,
    pub shift: f64,
    pub max_shift: f64,
    pub distance_gate: f64,
    /// Allowed error of the recovered shift, in grid cells.
    pub shift_gate_cells: f64,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        Self { speed_factor: 1.25, t_end: 60.0, amplitude: 2.0, shift: 0.75, max_shift: 3.0, distance_gate: 1e-2, shift_gate_cells: 1.0 }
    }
}

fn default_workers() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("pulsewave-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub medium: MediumConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub wave: WaveConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub uniqueness: UniquenessConfig,
}

/// Reads, parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Parses `text`; relative data-file paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    if let ReactionConfig::Tabulated { file } = &mut cfg.medium.reaction {
        if file.is_relative() {
            *file = base.join(&*file);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let (line, column, field) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            let field = text.get(span.clone()).unwrap_or("").lines().next().unwrap_or("").trim().to_string();
            (line, column, field)
        }
        None => (0, 0, String::new()),
    };
    ConfigError::Parse { line, column, field, message: e.message().trim().to_string() }
}

struct Violations(Vec<String>);

impl Violations {
    fn check(&mut self, ok: bool, msg: impl fmt::Display) {
        if !ok {
            self.0.push(msg.to_string());
        }
    }

    fn positive(&mut self, name: &str, v: f64) {
        self.check(v > 0.0 && v.is_finite(), format!("{name} must be positive and finite, got {v}"));
    }
}

impl ExperimentConfig {
    /// Every violation of the documented invariants, collected in one pass.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Violations(Vec::new());
        let m = &self.medium;
        v.check((1..=2).contains(&m.periods.len()), format!("medium.periods must have one or two entries, got {}", m.periods.len()));
        for (i, &l) in m.periods.iter().enumerate() {
            v.positive(&format!("medium.periods[{i}]"), l);
        }
        if let Some(tp) = m.time_period {
            v.positive("medium.time_period", tp);
        }
        if m.periods.len() == 1 && m.diffusion_x2.is_some() {
            v.0.push("medium.diffusion_x2 given for a one-dimensional medium".into());
        }
        if let ReactionConfig::Tabulated { file } = &m.reaction {
            if !file.is_file() {
                v.0.push(format!("medium.reaction.file {} does not exist", file.display()));
            }
        }
        // medium-level checks only once the shape is sane
        if v.0.is_empty() {
            if let Err(e) = self.build_medium() {
                v.0.push(format!("medium: {e}"));
            }
        }

        let g = &self.grid;
        v.check(
            g.n.is_power_of_two() && (32..=4096).contains(&g.n),
            format!("grid.n must be a power of two in [32, 4096], got {}", g.n),
        );
        v.check(g.window_periods >= MIN_WINDOW_PERIODS, format!("grid.window_periods must be at least {MIN_WINDOW_PERIODS}, got {}", g.window_periods));
        if let DtChoice::Fixed(dt) = g.dt {
            v.positive("grid.dt", dt);
        }

        let s = &self.solver;
        v.positive("solver.eig_tol", s.eig_tol);
        v.positive("solver.residual_gate", s.residual_gate);
        v.positive("solver.rel_width", s.rel_width);
        v.positive("solver.bound_ceiling", s.bound_ceiling);
        v.check(s.max_iter > 0, "solver.max_iter must be positive");
        v.check(s.scan >= 3, format!("solver.scan must be at least 3, got {}", s.scan));
        v.check(s.floquet_steps >= 2 && s.floquet_steps % 2 == 0, format!("solver.floquet_steps must be even and at least 2, got {}", s.floquet_steps));
        v.check(s.samples >= 2, format!("solver.samples must be at least 2, got {}", s.samples));
        let [lo, hi] = s.lambda_range;
        v.check(lo > 0.0 && hi > lo && hi.is_finite(), format!("solver.lambda_range must satisfy 0 < lo < hi, got [{lo}, {hi}]"));

        let w = &self.wave;
        for (i, &c) in w.speeds.iter().enumerate() {
            v.positive(&format!("wave.speeds[{i}]"), c);
        }
        for (i, &f) in w.speed_factors.iter().enumerate() {
            v.check(f >= 1.0 && f.is_finite(), format!("wave.speed_factors[{i}] must be ≥ 1, got {f}"));
        }
        v.check(!(w.speeds.is_empty() && w.speed_factors.is_empty()), "wave needs at least one speed or speed factor");
        v.positive("wave.t_end", w.t_end);
        v.positive("wave.record_every", w.record_every);
        v.check(w.pulsating_from >= 0.0 && w.pulsating_from < w.t_end, format!("wave.pulsating_from must lie in [0, t_end), got {}", w.pulsating_from));
        v.check(w.theta > 0.0 && w.theta < 1.0, format!("wave.theta must lie in (0, 1), got {}", w.theta));
        v.check(w.epsilon_fraction > 0.0 && w.epsilon_fraction < 1.0, format!("wave.epsilon_fraction must lie in (0, 1), got {}", w.epsilon_fraction));
        v.positive("wave.residual_gate", w.residual_gate);
        v.positive("wave.speed_tolerance", w.speed_tolerance);

        let st = &self.stability;
        v.positive("stability.duration", st.duration);
        v.positive("stability.record_every", st.record_every);
        for (i, &l) in st.lambdas.iter().enumerate() {
            v.positive(&format!("stability.lambdas[{i}]"), l);
        }
        v.check(!st.perturbations.is_empty(), "stability.perturbations must not be empty");
        for (i, p) in st.perturbations.iter().enumerate() {
            v.positive(&format!("stability.perturbations[{i}].amplitude"), p.amplitude);
            match p.kind {
                PerturbationKind::CompactBump => v.positive(&format!("stability.perturbations[{i}].width"), p.width),
                PerturbationKind::WeightedTail => v.positive(&format!("stability.perturbations[{i}].decay"), p.decay),
            }
        }
        v.positive("stability.rate_factor", st.rate_factor);
        v.check(st.r2_gate > 0.0 && st.r2_gate <= 1.0, format!("stability.r2_gate must lie in (0, 1], got {}", st.r2_gate));
        v.positive("stability.algebraic_factor", st.algebraic_factor);

        let u = &self.uniqueness;
        v.check(u.speed_factor > 1.0 && u.speed_factor.is_finite(), format!("uniqueness.speed_factor must exceed 1, got {}", u.speed_factor));
        v.positive("uniqueness.t_end", u.t_end);
        v.positive("uniqueness.amplitude", u.amplitude);
        v.positive("uniqueness.max_shift", u.max_shift);
        v.positive("uniqueness.distance_gate", u.distance_gate);
        v.positive("uniqueness.shift_gate_cells", u.shift_gate_cells);
        v.check(self.workers >= 1, "workers must be at least 1");

        if v.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(v.0))
        }
    }

    pub fn dim(&self) -> usize {
        self.medium.periods.len()
    }

    pub fn build_medium(&self) -> Result<Medium, MediumError> {
        let m = &self.medium;
        if m.diffusion_x12.as_ref().is_some_and(|c| *c != Coefficient::default()) {
            return Err(MediumError::OffDiagonalUnsupported);
        }
        let diffusion = if m.periods.len() == 2 {
            DiffusionField::Diagonal([m.diffusion.clone(), m.diffusion_x2.clone().unwrap_or_else(|| m.diffusion.clone())])
        } else {
            DiffusionField::Scalar(m.diffusion.clone())
        };
        let reaction = match &m.reaction {
            ReactionConfig::KppLogistic { capacity } => Nonlinearity::KppLogistic { capacity: capacity.clone() },
            ReactionConfig::Tabulated { file } => Nonlinearity::Tabulated(load_table(file)?),
        };
        Medium::new(&m.periods, m.time_period, diffusion, reaction)
    }

    /// The periodicity cell with `grid.n` nodes per period.
    pub fn cell(&self) -> Result<Grid, crate::grid::GridError> {
        Grid::periodic(&self.medium.periods, self.grid.n)
    }

    /// Canonical JSON of the effective configuration (defaults filled in).
    pub fn effective_json(&self) -> String {
        to_json(self)
    }
}

/// Reads a reaction table CSV (`x_index, u, f, f_u`). Every x node must list the same u nodes.
pub fn load_table(path: &Path) -> Result<ReactionTable, MediumError> {
    let bad = |m: String| MediumError::Invalid(format!("{}: {m}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let (header, mut rows) = read_csv_table(&text).map_err(bad)?;
    if header != ["x_index", "u", "f", "f_u"] {
        return Err(bad(format!("expected columns x_index,u,f,f_u, found {}", header.join(","))));
    }
    if rows.iter().any(|r| r[0] < 0.0 || r[0].fract() != 0.0) {
        return Err(bad("x_index must be a non-negative integer".into()));
    }
    rows.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let nx = rows.last().map_or(0, |r| r[0] as usize + 1);
    if nx == 0 || rows.len() % nx != 0 {
        return Err(bad("every x_index needs the same number of rows".into()));
    }
    let nu = rows.len() / nx;
    let u: Vec<f64> = rows[..nu].iter().map(|r| r[1]).collect();
    for (k, r) in rows.iter().enumerate() {
        if r[0] as usize != k / nu || r[1] != u[k % nu] {
            return Err(bad("x_index values must be 0..nx with identical u nodes".into()));
        }
    }
    let f = rows.iter().map(|r| r[2]).collect();
    let fu = rows.iter().map(|r| r[3]).collect();
    ReactionTable::new(nx, u, f, fu)
}
