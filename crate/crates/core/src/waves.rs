//! The positive periodic steady state `p`, pulsating fronts built by evolution from
//! exponentially decaying seeds, and the diagnostics run on them: measured speed,
//! pulsating residual, `ξ₀` and the weight `W`, tail asymptotics, and uniqueness up to
//! translation.
//!
//! Fronts move towards −x₁. With `ξ = x₁ + ct` the profile satisfies
//! `u(t + L/c, x) = u(t, x + L·e₁)`.

use std::ops::ControlFlow;

use serde::Serialize;
use thiserror::Error;

use crate::discretization::{assemble_divergence, assemble_linearized, DiscretizationError};
use crate::dispersion::{front_eigenfunction, lambda_roots, DispersionCurve, DispersionError, ROOT_TOL};
use crate::evolution::{
    divisor_step, evolve_with, front_position, invariant_bound, monotonicity_budget, EvolutionError, RecenterEvent,
    RecenterPolicy, StepOptions, Stepper, Trajectory, SCHEME,
};
use crate::grid::{BoundaryRule, Field, Grid, GridError};
use crate::linalg::Tridiag;
use crate::medium::Medium;
use crate::optimize::{fit_line, golden_section};
use crate::spectral::{principal_eig, EigenResult, SpectralError};

pub const STEADY_TOL: f64 = 1e-10;
pub const STEADY_RESIDUAL_GATE: f64 = 1e-8;
pub const DEFAULT_THETA: f64 = 0.5;
pub const THETAS: [f64; 3] = [0.25, 0.5, 0.75];
/// Front positions closer than this many periods to a window end invalidate the record.
pub const EDGE_PERIODS: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveError {
    #[error("ZeroUnstableViolated: μ₁ = {0} ≤ 0, the zero state is not linearly unstable")]
    ZeroUnstableViolated(f64),
    #[error("NoConvergence: {0}")]
    NoConvergence(String),
    #[error("time-periodic media have no stationary steady state")]
    TimeDependent,
    #[error("FrontLeftWindow: front at {x} is within {edge} periods of [{lo}, {hi}] at t = {t}")]
    FrontLeftWindow { t: f64, x: f64, lo: f64, hi: f64, edge: f64 },
    #[error("InsufficientRecord: {0}")]
    InsufficientRecord(String),
    #[error("NotConverged: no ξ₀ with |w − p| < {0} behind it inside the window")]
    NotConverged(f64),
    #[error("InsufficientDecayRegion: {periods:.2} periods available, 8 needed")]
    InsufficientDecayRegion { periods: f64 },
    #[error("SubcriticalSpeed: c = {c} < c* = {c_star}")]
    SubcriticalSpeed { c: f64, c_star: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// `p` on the periodicity cell.
    pub p: Field,
    /// `sup |∇·(A∇p) + f(x,p)|`.
    pub residual: f64,
    /// Sup-distance between the limits reached from below and from above.
    pub uniqueness_witness: f64,
    /// Principal eigenvalue of the linearization at 0.
    pub mu1: f64,
    /// Evolution time until successive unit-time snapshots agreed to 10⁻¹⁰.
    pub settle_time: f64,
}

impl SteadyState {
    pub fn min(&self) -> f64 {
        self.p.min()
    }

    pub fn max(&self) -> f64 {
        self.p.max()
    }
}

fn steady_residual(d: &crate::discretization::DiscreteOperator, medium: &Medium, grid: &Grid, p: &[f64]) -> Vec<f64> {
    let dp = d.apply(p);
    (0..grid.len()).map(|k| dp[k] + medium.f(0.0, grid.cell_position(k), p[k])).collect()
}

/// Newton iterations on `D·p + f(p) = 0` (one-dimensional cells); keeps the input if a
/// step fails to reduce the residual.
fn newton_polish(medium: &Medium, grid: &Grid, p: &mut [f64]) -> Result<f64, WaveError> {
    let d = assemble_divergence(grid, medium, None)?;
    let sup = |r: &[f64]| r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut res = steady_residual(&d, medium, grid, p);
    let mut best = sup(&res);
    if grid.dim() != 1 {
        return Ok(best);
    }
    for _ in 0..8 {
        if best <= 1e-13 {
            break;
        }
        let jac = assemble_linearized(grid, medium, None, p)?;
        let t: Tridiag = jac.to_tridiag().expect("one-dimensional operator");
        let Some(fac) = t.factor() else { break };
        let mut delta = vec![0.0; p.len()];
        fac.solve(&res, &mut delta);
        let trial: Vec<f64> = p.iter().zip(&delta).map(|(a, b)| a - b).collect();
        let r2 = steady_residual(&d, medium, grid, &trial);
        let s2 = sup(&r2);
        if !(s2 < best) {
            break;
        }
        p.copy_from_slice(&trial);
        res = r2;
        best = s2;
    }
    Ok(best)
}

fn settle(medium: &Medium, grid: &Grid, u0: f64, stepper: &Stepper) -> Result<(Vec<f64>, f64), WaveError> {
    let per_unit = stepper.steps_between(0.0, 1.0)?;
    let mut u = Field::constant(grid, u0);
    let mut last = u.clone();
    let t_cap = 5000.0;
    let mut settled = None;
    evolve_with(vec![u.clone()], stepper, t_cap, None, |s, f| {
        if s > 0 && s % per_unit == 0 {
            if f[0].sup_distance(&last) < STEADY_TOL {
                settled = Some(f[0].t);
                u = f[0].clone();
                return ControlFlow::Break(());
            }
            last = f[0].clone();
        }
        ControlFlow::Continue(())
    })?;
    let _ = medium;
    match settled {
        Some(t) => Ok((u.values, t)),
        None => Err(WaveError::NoConvergence(format!("steady state not reached by t = {t_cap}"))),
    }
}

/// Evolves from `0.1·max μ` and from the bound `M` until unit-time snapshots agree to
/// 10⁻¹⁰, then polishes both limits by Newton's method on the discrete steady equation.
pub fn steady_state(medium: &Medium, grid: &Grid) -> Result<SteadyState, WaveError> {
    if medium.is_time_dependent() {
        return Err(WaveError::TimeDependent);
    }
    if !grid.is_periodic_cell() {
        return Err(WaveError::Grid(GridError::Incompatible("steady states live on the periodicity cell".into())));
    }
    let zero = vec![0.0; grid.len()];
    let mu1 = principal_eig(&assemble_linearized(grid, medium, None, &zero)?)?.eigenvalue;
    if mu1 <= 0.0 {
        return Err(WaveError::ZeroUnstableViolated(mu1));
    }
    let upper = invariant_bound(medium);
    let dt = divisor_step(monotonicity_budget(medium, upper));
    let stepper = Stepper::new(medium, grid, StepOptions { dt: Some(dt), u_max: Some(upper) }, None)?;
    let low = 0.1 * medium.capacity_bound().min(upper);
    let (mut a, ta) = settle(medium, grid, low, &stepper)?;
    let (mut b, tb) = settle(medium, grid, upper, &stepper)?;
    let residual = newton_polish(medium, grid, &mut a)?;
    newton_polish(medium, grid, &mut b)?;
    let witness = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let p = Field::new(grid.clone(), a, 0.0);
    if !(p.min() > 0.0) {
        return Err(WaveError::NoConvergence("steady state is not positive".into()));
    }
    Ok(SteadyState { p, residual, uniqueness_witness: witness, mu1, settle_time: ta.max(tb) })
}

/// `μ̄₁`: principal eigenvalue of `∇·(A∇·) + f_u(x, p(x))`.
pub fn stability_of_p(medium: &Medium, grid: &Grid, steady: &SteadyState) -> Result<EigenResult, WaveError> {
    Ok(principal_eig(&assemble_linearized(grid, medium, None, &steady.p.values)?)?)
}

/// Shape of a front seed `min(p, A·e^{λ(x₁ − x_c − shift)}·v(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedShape {
    pub amplitude: f64,
    /// Extra displacement along x₁ (length units).
    pub shift: f64,
}

impl Default for SeedShape {
    fn default() -> Self {
        Self { amplitude: 1.0, shift: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontSeed {
    pub field: Field,
    /// Decay rate of the seed: `λ₁(c)`, or `λ*` at the critical speed.
    pub lambda: f64,
    /// Front eigenfunction `v` on the periodicity cell.
    pub v: Vec<f64>,
    /// Speed used for the eigenfunction (c, or c* when critical).
    pub c_eff: f64,
    pub critical: bool,
    /// `x_c` of the unit-amplitude seed.
    pub anchor: f64,
}

/// Decay rate and eigenfunction for fronts of speed `c`.
pub fn front_decay(medium: &Medium, cell: &Grid, c: f64, curve: &DispersionCurve) -> Result<(f64, EigenResult, f64, bool), WaveError> {
    if c < curve.c_star - ROOT_TOL {
        return Err(WaveError::SubcriticalSpeed { c, c_star: curve.c_star });
    }
    if c > curve.c_star + ROOT_TOL {
        let roots = lambda_roots(medium, cell, c, curve)?;
        let v = front_eigenfunction(medium, cell, c, roots.lambda1)?;
        Ok((roots.lambda1, v, c, false))
    } else {
        let v = front_eigenfunction(medium, cell, curve.c_star, curve.lambda_star)?;
        Ok((curve.lambda_star, v, curve.c_star, true))
    }
}

/// Seed on `line` for speed `c`; the unit-amplitude seed has its `θ = 0.5` level at the
/// window centre.
pub fn build_front_initial(
    medium: &Medium,
    line: &Grid,
    c: f64,
    steady: &SteadyState,
    curve: &DispersionCurve,
    shape: SeedShape,
) -> Result<FrontSeed, WaveError> {
    let cell = steady.p.grid.clone();
    let (lambda, v, c_eff, critical) = front_decay(medium, &cell, c, curve)?;
    Ok(seed_from(line, steady, lambda, &v.eigenfunction.values, c_eff, critical, shape))
}

pub fn seed_from(
    line: &Grid,
    steady: &SteadyState,
    lambda: f64,
    v: &[f64],
    c_eff: f64,
    critical: bool,
    shape: SeedShape,
) -> FrontSeed {
    let ax = line.axis(0);
    let mid = ax.len() / 2;
    let k0 = line.flat([mid, 0]);
    let c0 = line.cell_flat(k0);
    let x0 = ax.position(mid);
    let anchor = x0 - (0.5 * steady.p.values[c0] / v[c0]).ln() / lambda;
    let values = (0..line.len())
        .map(|k| {
            let x = line.position(k)[0];
            let c = line.cell_flat(k);
            let p = steady.p.values[c];
            (shape.amplitude * (lambda * (x - anchor - shape.shift)).exp() * v[c]).min(p).max(0.0)
        })
        .collect();
    let mut field = Field::new(line.clone(), values, 0.0);
    clamp_line(&mut field, &steady.p.values);
    FrontSeed { field, lambda, v: v.to_vec(), c_eff, critical, anchor }
}

fn clamp_line(field: &mut Field, p: &[f64]) {
    for k in 0..field.len() {
        if field.grid.is_clamped(k) {
            let idx = field.grid.unflat(k);
            let low_end = field.grid.axes().iter().enumerate().any(|(d, a)| a.is_clamped(idx[d]) && idx[d] == 0);
            field.values[k] = if low_end { 0.0 } else { p[field.grid.cell_flat(k)] };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedMeasurement {
    pub c_meas: f64,
    pub theta: f64,
    pub r2: f64,
    /// `(t, X(t))` for every snapshot.
    pub series: Vec<(f64, f64)>,
    /// `(θ, c_meas(θ))` for θ ∈ {0.25, 0.5, 0.75}.
    pub theta_sensitivity: Vec<(f64, f64)>,
}

fn position_series(tr: &Trajectory, p: &[f64], theta: f64, edge_periods: f64) -> Result<Vec<(f64, f64)>, WaveError> {
    let mut out = Vec::with_capacity(tr.snapshots.len());
    for f in &tr.snapshots {
        let ax = f.grid.axis(0);
        let (lo, hi) = (ax.position(0), ax.position(ax.len() - 1));
        let edge = edge_periods * ax.period;
        match front_position(f, Some(p), theta) {
            Some(x) if x - lo >= edge && hi - x >= edge => out.push((f.t, x)),
            Some(x) => return Err(WaveError::FrontLeftWindow { t: f.t, x, lo, hi, edge: edge_periods }),
            None => return Err(WaveError::FrontLeftWindow { t: f.t, x: f64::NAN, lo, hi, edge: edge_periods }),
        }
    }
    Ok(out)
}

fn slope_last_half(series: &[(f64, f64)]) -> Result<(f64, f64), WaveError> {
    if series.len() < 4 {
        return Err(WaveError::InsufficientRecord("fewer than four snapshots".into()));
    }
    let t_half = 0.5 * (series[0].0 + series[series.len() - 1].0);
    let (t, x): (Vec<f64>, Vec<f64>) = series.iter().filter(|s| s.0 >= t_half).copied().unzip();
    let fit = fit_line(&t, &x).ok_or_else(|| WaveError::InsufficientRecord("degenerate time series".into()))?;
    Ok((-fit.slope, fit.r2))
}

/// Level-set speed: `X(t)` = leftmost point with `u ≥ θ·p`; `c_meas` = −slope of the
/// least-squares line through the last half of the record.
pub fn measure_speed(tr: &Trajectory, p: &[f64], theta: f64) -> Result<SpeedMeasurement, WaveError> {
    measure_speed_with(tr, p, theta, EDGE_PERIODS)
}

/// [`measure_speed`] with a custom minimal distance (in periods) from the window ends.
pub fn measure_speed_with(tr: &Trajectory, p: &[f64], theta: f64, edge_periods: f64) -> Result<SpeedMeasurement, WaveError> {
    let series = position_series(tr, p, theta, edge_periods)?;
    let span = (series[series.len() - 1].1 - series[0].1).abs();
    let period = tr.snapshots[0].grid.axis(0).period;
    if span < 10.0 * period {
        return Err(WaveError::InsufficientRecord(format!("front crossed {:.2} periods, 10 needed", span / period)));
    }
    let (c_meas, r2) = slope_last_half(&series)?;
    let mut theta_sensitivity = Vec::new();
    for th in THETAS {
        let s = if th == theta { series.clone() } else { position_series(tr, p, th, edge_periods)? };
        theta_sensitivity.push((th, slope_last_half(&s)?.0));
    }
    Ok(SpeedMeasurement { c_meas, theta, r2, series, theta_sensitivity })
}

/// Index pair and weight bracketing time `t` among snapshot times.
fn bracket(snaps: &[Field], t: f64) -> Option<(usize, usize, f64)> {
    let tol = 1e-9;
    let j = snaps.partition_point(|f| f.t < t - tol);
    if j >= snaps.len() {
        return None;
    }
    if (snaps[j].t - t).abs() <= tol {
        return Some((j, j, 0.0));
    }
    if j == 0 {
        return None;
    }
    let (a, b) = (snaps[j - 1].t, snaps[j].t);
    Some((j - 1, j, (t - a) / (b - a)))
}

fn interp_at(snaps: &[Field], (i, j, w): (usize, usize, f64), g: [i64; 2]) -> Option<f64> {
    let a = snaps[i].at_global(g)?;
    if i == j {
        return Some(a);
    }
    Some((1.0 - w) * a + w * snaps[j].at_global(g)?)
}

/// `sup |u(t + L/c, x) − u(t, x + L·e₁)|` over snapshots with `t ≥ t_from`, interpolating
/// linearly in time.
pub fn verify_pulsating(tr: &Trajectory, c: f64, t_from: f64) -> Result<f64, WaveError> {
    let snaps = &tr.snapshots;
    let ax = snaps[0].grid.axis(0);
    let tau = ax.period / c;
    let n = ax.per_period as i64;
    let mut residual: f64 = 0.0;
    let mut pairs = 0;
    for f in snaps.iter().filter(|f| f.t >= t_from - 1e-9) {
        let Some(br) = bracket(snaps, f.t + tau) else { continue };
        pairs += 1;
        for k in 0..f.len() {
            let g = f.global_index(k);
            let Some(now) = f.at_global([g[0] + n, g[1]]) else { continue };
            let Some(later) = interp_at(snaps, br, g) else { continue };
            residual = residual.max((later - now).abs());
        }
    }
    if pairs == 0 {
        return Err(WaveError::InsufficientRecord(format!("no snapshot pair (t, t + {tau:.4}) after t = {t_from}")));
    }
    Ok(residual)
}

/// `ξ₀` of a profile snapshot together with the weight's decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Xi0 {
    pub xi0: f64,
    /// Lab-frame position `x₁ = ξ₀ − c·t` at the snapshot time.
    pub x0: f64,
    pub epsilon: f64,
    pub lambda: f64,
}

impl Xi0 {
    /// `W(ξ) = e^{−λ(ξ−ξ₀)}` for `ξ ≤ ξ₀`, 1 beyond.
    pub fn weight(&self, xi: f64) -> f64 {
        if xi <= self.xi0 {
            (-self.lambda * (xi - self.xi0)).exp()
        } else {
            1.0
        }
    }
}

/// Smallest `ξ` such that `|w − p| < ε̄` at every node from there on (`ξ = x₁ + c·t`).
pub fn xi0_and_weight(profile: &Field, p: &[f64], c: f64, epsilon: f64, lambda: f64) -> Result<Xi0, WaveError> {
    let grid = &profile.grid;
    let [n1, n2] = grid.shape();
    let far = |i: usize| (0..n2).any(|j| {
        let k = grid.flat([i, j]);
        (profile.values[k] - p[grid.cell_flat(k)]).abs() >= epsilon
    });
    let Some(last_bad) = (0..n1).rev().find(|&i| far(i)) else {
        return Err(WaveError::NotConverged(epsilon));
    };
    if last_bad + 1 >= n1 {
        return Err(WaveError::NotConverged(epsilon));
    }
    let x0 = grid.axis(0).position(last_bad + 1);
    Ok(Xi0 { xi0: x0 + c * profile.t, x0, epsilon, lambda })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticFit {
    pub b: f64,
    pub lambda_fit: f64,
    pub r2: f64,
    pub critical: bool,
    /// Fit region in lab coordinates.
    pub x_range: (f64, f64),
    pub points: usize,
}

/// Fits `ln(w/v) = ln B + λξ` (or `ln(w/(|ξ|v))` at the critical speed, `ξ` measured from
/// the `θ = 0.5` level) over nodes with `10⁻⁶ < w < 10⁻²·min p`, skipping `skip_periods`
/// next to the low end of the window.
pub fn asymptotic_fit(
    profile: &Field,
    v: &[f64],
    p: &[f64],
    c: f64,
    critical: bool,
    skip_periods: usize,
) -> Result<AsymptoticFit, WaveError> {
    let grid = &profile.grid;
    let ax = grid.axis(0);
    let min_p = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_cut = 1e-2 * min_p;
    let front = front_position(profile, Some(p), DEFAULT_THETA).unwrap_or(ax.position(ax.len() - 1));
    let first = skip_periods * ax.per_period;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in first..ax.len() {
        let k = grid.flat([i, 0]);
        let w = profile.values[k];
        if !(w > 1e-6 && w < hi_cut) {
            continue;
        }
        let x = ax.position(i);
        if x >= front {
            break;
        }
        let xi = x + c * profile.t;
        let mut y = (w / v[grid.cell_flat(k)]).ln();
        if critical {
            y -= (front - x).ln();
        }
        xs.push(xi);
        ys.push(y);
    }
    let span = match (xs.first(), xs.last()) {
        (Some(a), Some(b)) => (b - a) / ax.period,
        _ => 0.0,
    };
    if span < 8.0 {
        return Err(WaveError::InsufficientDecayRegion { periods: span });
    }
    let fit = fit_line(&xs, &ys).ok_or(WaveError::InsufficientDecayRegion { periods: span })?;
    let x_range = (xs[0] - c * profile.t, xs[xs.len() - 1] - c * profile.t);
    Ok(AsymptoticFit { b: fit.intercept.exp(), lambda_fit: fit.slope, r2: fit.r2, critical, x_range, points: xs.len() })
}

/// Settings of a front construction.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveOptions {
    pub window_periods: usize,
    pub boundary: BoundaryRule,
    pub t_end: f64,
    /// Snapshot spacing (whole steps).
    pub record_every: f64,
    /// Pulsating residual uses snapshots from this time on.
    pub pulsating_from: f64,
    pub theta: f64,
    /// `ε̄` as a fraction of `min p`.
    pub epsilon_fraction: f64,
    pub dt: Option<f64>,
    /// `None` uses `RecenterPolicy::new(λ)` with the seed's decay rate.
    pub recenter: Option<RecenterPolicy>,
    /// Minimal front distance from either window end, in periods.
    pub edge_periods: f64,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self {
            window_periods: 40,
            boundary: BoundaryRule::ClampToLimits,
            t_end: 60.0,
            record_every: 0.25,
            pulsating_from: 50.0,
            theta: DEFAULT_THETA,
            epsilon_fraction: 0.05,
            dt: None,
            recenter: None,
            edge_periods: EDGE_PERIODS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveRecord {
    pub c_target: f64,
    pub c_meas: f64,
    pub speed: SpeedMeasurement,
    pub pulsating_residual: f64,
    pub xi0: Xi0,
    pub fit: Result<AsymptoticFit, WaveError>,
    pub seed: FrontSeed,
    pub trajectory: Trajectory,
    pub recenters: Vec<RecenterEvent>,
}

impl WaveRecord {
    pub fn profile(&self) -> &Field {
        self.trajectory.last()
    }
}

/// Line grid over the steady state's cell.
pub fn line_grid(steady: &SteadyState, periods: usize, boundary: BoundaryRule) -> Result<Grid, WaveError> {
    let ax = steady.p.grid.axis(0);
    Ok(Grid::line(ax.period, ax.per_period, periods, boundary)?)
}

/// Seeds, evolves and analyses a front of speed `c`.
pub fn construct_wave(
    medium: &Medium,
    steady: &SteadyState,
    curve: &DispersionCurve,
    c: f64,
    opts: &WaveOptions,
) -> Result<WaveRecord, WaveError> {
    let line = line_grid(steady, opts.window_periods, opts.boundary)?;
    let seed = build_front_initial(medium, &line, c, steady, curve, SeedShape::default())?;
    let p = &steady.p.values;
    let stepper = Stepper::new(medium, &line, StepOptions { dt: opts.dt, u_max: None }, Some(p.clone()))?;
    let policy = opts.recenter.unwrap_or_else(|| RecenterPolicy::new(seed.lambda));
    let tr = record_run(&seed.field, &stepper, opts.t_end, opts.record_every, Some(&policy))?;
    let speed = measure_speed_with(&tr, p, opts.theta, opts.edge_periods)?;
    let c_meas = speed.c_meas;
    let pulsating_residual = verify_pulsating(&tr, c_meas, opts.pulsating_from.min(opts.t_end))?;
    let profile = tr.last();
    let xi0 = xi0_and_weight(profile, p, c_meas, opts.epsilon_fraction * steady.min(), seed.lambda)?;
    let fit = asymptotic_fit(profile, &seed.v, p, c_meas, seed.critical, policy.synthetic_periods() + 2);
    let recenters = tr.recenters.clone();
    Ok(WaveRecord { c_target: c, c_meas, speed, pulsating_residual, xi0, fit, seed, trajectory: tr, recenters })
}

/// Evolution recording every `every` time units (rounded to whole steps).
pub fn record_run(
    u0: &Field,
    stepper: &Stepper,
    t_end: f64,
    every: f64,
    policy: Option<&RecenterPolicy>,
) -> Result<Trajectory, WaveError> {
    let k = ((every / stepper.dt()).round() as usize).max(1);
    let mut snapshots = Vec::new();
    let (_, recenters) = evolve_with(vec![u0.clone()], stepper, t_end, policy, |s, f| {
        if s % k == 0 {
            snapshots.push(f[0].clone());
        }
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory { dt: stepper.dt(), snapshots, recenters, scheme: SCHEME })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniquenessResult {
    /// Minimized `sup |u₁(T − s/c) − u₂(T)|`.
    pub distance: f64,
    /// Recovered shift in ξ (length units).
    pub shift: f64,
    pub distance_unaligned: f64,
}

/// Evolves two seeds with identical steps to `t_end` and aligns them by a shift `s` in `ξ`,
/// realized as the time lag `s/c` between the two fronts (exact for periodic media, where
/// only whole-period spatial translations are symmetries). `max_shift` bounds `|s|`.
pub fn uniqueness_experiment(
    seed1: &Field,
    seed2: &Field,
    stepper: &Stepper,
    c: f64,
    t_end: f64,
    max_shift: f64,
    policy: Option<&RecenterPolicy>,
) -> Result<UniquenessResult, WaveError> {
    let lag_max = max_shift / c;
    let k = 1usize;
    let t_keep = t_end - lag_max - stepper.dt();
    let mut h1: Vec<Field> = Vec::new();
    let mut h2: Vec<Field> = Vec::new();
    evolve_with(vec![seed1.clone(), seed2.clone()], stepper, t_end, policy, |s, f| {
        if f[0].t >= t_keep && s % k == 0 {
            h1.push(f[0].clone());
            h2.push(f[1].clone());
        }
        ControlFlow::Continue(())
    })?;
    let (last1, last2) = (h1.last().expect("final snapshot").clone(), h2.last().expect("final snapshot").clone());
    let ax = *last1.grid.axis(0);
    let n = ax.per_period as i64;
    let lo_g = ax.origin() + (EDGE_PERIODS as i64 + 2) * n;
    let hi_g = ax.origin() + ax.len() as i64 - 2 * n;
    // s ≥ 0 compares u₁ earlier against the final u₂; s < 0 the reverse
    let dist = |s: f64| -> f64 {
        let (hist, fixed) = if s >= 0.0 { (&h1, &last2) } else { (&h2, &last1) };
        let Some(br) = bracket(hist, t_end - s.abs() / c) else { return f64::INFINITY };
        let mut d: f64 = 0.0;
        for kk in 0..fixed.len() {
            let g = fixed.global_index(kk);
            if g[0] < lo_g || g[0] > hi_g {
                continue;
            }
            match interp_at(hist, br, g) {
                Some(v) => d = d.max((v - fixed.values[kk]).abs()),
                None => return f64::INFINITY,
            }
        }
        d
    };
    let h = ax.h();
    let m = (max_shift / h).floor() as i64;
    let mut best = (0.0, dist(0.0));
    for i in -m..=m {
        let s = i as f64 * h;
        let d = dist(s);
        if d < best.1 {
            best = (s, d);
        }
    }
    let (s, d) = if best.1 == 0.0 {
        best
    } else {
        let (s, d) = golden_section(|s| Ok::<_, std::convert::Infallible>(dist(s)), best.0 - h, best.0 + h, 1e-9).expect("infallible");
        if d <= best.1 { (s, d) } else { best }
    };
    Ok(UniquenessResult { distance: d, shift: s, distance_unaligned: dist(0.0) })
}

/// Shift predicted by the tail amplitudes: seeds `A_i e^{λ(x − x_i)}` align at
/// `s = x₂ − x₁ + ln(A₁/A₂)/λ`.
pub fn predicted_shift(shape1: SeedShape, shape2: SeedShape, lambda: f64) -> f64 {
    shape2.shift - shape1.shift + (shape1.amplitude / shape2.amplitude).ln() / lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispersion::{minimal_speed, DEFAULT_LAMBDA_RANGE};
    use crate::medium::Coefficient;

    fn periodic_mu() -> Medium {
        Medium::kpp_1d(1.0, Coefficient::constant(1.0), Coefficient::constant(1.0).with_x1(vec![], vec![0.5])).unwrap()
    }

    #[test]
    fn homogeneous_steady_states() {
        let g = Grid::periodic(&[1.0], 32).unwrap();
        for r in [1.0, 2.0] {
            let m = Medium::fisher(1.0, r);
            let s = steady_state(&m, &g).unwrap();
            assert!(s.p.values.iter().all(|v| (v - r).abs() < 1e-12));
            let mb = stability_of_p(&m, &g, &s).unwrap().eigenvalue;
            assert!((mb + r).abs() < 1e-10);
        }
    }

    #[test]
    fn periodic_steady_state_is_a_fixed_point() {
        let m = periodic_mu();
        let g = Grid::periodic(&[1.0], 128).unwrap();
        let s = steady_state(&m, &g).unwrap();
        assert!(s.residual <= STEADY_RESIDUAL_GATE && s.uniqueness_witness < 1e-8 && s.min() > 0.0);
        let mu = |x: f64| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin();
        assert!((0..128).any(|k| (s.p.values[k] - mu(g.position(k)[0])).abs() > 1e-2));
        let st = Stepper::new(&m, &g, StepOptions::default(), None).unwrap();
        let next = st.step(&s.p).unwrap();
        assert!(next.sup_distance(&s.p) < 1e-9);
        assert!(stability_of_p(&m, &g, &s).unwrap().eigenvalue < 0.0);
    }

    #[test]
    fn zero_unstable_is_required() {
        let m = Medium::kpp_1d(1.0, Coefficient::constant(1.0), Coefficient::constant(-0.5)).unwrap();
        let g = Grid::periodic(&[1.0], 16).unwrap();
        assert!(matches!(steady_state(&m, &g), Err(WaveError::ZeroUnstableViolated(_))));
    }

    #[test]
    fn homogeneous_seed_is_shifted_exponential() {
        let m = Medium::fisher(1.0, 1.0);
        let cell = Grid::periodic(&[1.0], 16).unwrap();
        let s = steady_state(&m, &cell).unwrap();
        let curve = minimal_speed(&m, &cell, DEFAULT_LAMBDA_RANGE).unwrap();
        let line = line_grid(&s, 40, BoundaryRule::ClampToLimits).unwrap();
        let seed = build_front_initial(&m, &line, 2.5, &s, &curve, SeedShape::default()).unwrap();
        assert!((seed.lambda - 0.5).abs() < 1e-7);
        for k in 1..line.len() - 1 {
            let x = line.position(k)[0];
            let expect = (0.5 * (x - seed.anchor)).exp().min(1.0);
            assert!((seed.field.values[k] - expect).abs() < 1e-7);
        }
        let x = front_position(&seed.field, Some(&s.p.values), 0.5).unwrap();
        assert!(x.abs() < 1e-6);
        let crit = build_front_initial(&m, &line, curve.c_star, &s, &curve, SeedShape::default()).unwrap();
        assert!(crit.critical && (crit.lambda - 1.0).abs() < 1e-3);
    }

    #[test]
    fn weight_definition() {
        let x = Xi0 { xi0: 3.0, x0: 0.0, epsilon: 0.05, lambda: 0.7 };
        assert_eq!(x.weight(3.0), 1.0);
        assert!((x.weight(2.0) - 0.7f64.exp()).abs() < 1e-15);
        assert_eq!(x.weight(10.0), 1.0);
        let xs: Vec<f64> = (0..100).map(|i| i as f64 * 0.1).collect();
        assert!(xs.windows(2).all(|w| x.weight(w[1]) <= x.weight(w[0])));
    }

    #[test]
    fn stationary_data_has_no_front() {
        let m = Medium::fisher(1.0, 1.0);
        let cell = Grid::periodic(&[1.0], 8).unwrap();
        let s = steady_state(&m, &cell).unwrap();
        let line = line_grid(&s, 20, BoundaryRule::ClampToLimits).unwrap();
        let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
        let mut u0 = Field::constant(&line, 1.0);
        st.clamp(&mut u0);
        let tr = record_run(&u0, &st, 2.0, 0.25, None).unwrap();
        assert!(matches!(measure_speed(&tr, &s.p.values, 0.5), Err(WaveError::FrontLeftWindow { .. })));
        // a constant state is trivially pulsating away from the clamped end
        let flat = Trajectory { snapshots: tr.snapshots.iter().map(|f| Field::new(f.grid.clone(), vec![1.0; f.len()], f.t)).collect(), ..tr.clone() };
        assert!(verify_pulsating(&flat, 2.0, 0.0).unwrap() <= 1e-12);
    }

    #[test]
    fn identical_and_shifted_seeds_align() {
        let m = Medium::fisher(1.0, 1.0);
        let cell = Grid::periodic(&[1.0], 16).unwrap();
        let s = steady_state(&m, &cell).unwrap();
        let curve = minimal_speed(&m, &cell, DEFAULT_LAMBDA_RANGE).unwrap();
        let line = line_grid(&s, 40, BoundaryRule::ClampToLimits).unwrap();
        let a = build_front_initial(&m, &line, 2.5, &s, &curve, SeedShape::default()).unwrap();
        let st = Stepper::new(&m, &line, StepOptions::default(), Some(s.p.values.clone())).unwrap();
        let pol = RecenterPolicy::new(a.lambda);
        let same = uniqueness_experiment(&a.field, &a.field, &st, 2.5, 4.0, 1.0, Some(&pol)).unwrap();
        assert!(same.distance <= 1e-12 && same.shift == 0.0);
        let h = line.axis(0).h();
        let shape = SeedShape { amplitude: 1.0, shift: 3.7 * h };
        let b = build_front_initial(&m, &line, 2.5, &s, &curve, shape).unwrap();
        let r = uniqueness_experiment(&a.field, &b.field, &st, 2.5, 10.0, 1.0, Some(&pol)).unwrap();
        let want = predicted_shift(SeedShape::default(), shape, a.lambda);
        assert!((r.shift - want).abs() <= h, "shift {} vs {}", r.shift, want);
        assert!(r.distance <= 1e-3, "distance {}", r.distance);
    }
}
