//! Twin-simulation stability experiments: a computed front and a perturbed copy are
//! evolved with identical steps, and the decay of their difference is fitted against
//! the exponential rate `min{μ_c(λ), −μ̄₁/2}` or the algebraic rate `t^{−n/2}`.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{mu_c, DispersionError, RootPair};
use crate::evolution::{evolve_pair, front_position, EvolutionError, RecenterPolicy, Stepper};
use crate::grid::{Axis, Field, Grid, GridError};
use crate::medium::Medium;
use crate::optimize::fit_line;
use crate::waves::{WaveRecord, Xi0};

/// Values of `E` below this count as underflow.
pub const DEGENERATE_FLOOR: f64 = f64::MIN_POSITIVE;
/// Earliest start of an algebraic fit window.
pub const ALGEBRAIC_T_MIN: f64 = 10.0;
/// Default fit windows cover the last 60% of the record.
pub const FIT_FRACTION: f64 = 0.6;
/// Largest share of the weighted L¹ mass allowed in the periods next to the low end.
pub const TAIL_MASS_SHARE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("InadmissiblePerturbation: {0}")]
    InadmissiblePerturbation(String),
    #[error("DegenerateSeries: E ≤ {floor:e} at t = {t} inside the fit window")]
    DegenerateSeries { t: f64, floor: f64 },
    #[error("fit window [{0}, {1}] is outside the record or too short")]
    InvalidWindow(f64, f64),
    #[error("LambdaOutOfBand: λ = {lambda} outside [{lambda1}, {lambda2}]")]
    LambdaOutOfBand { lambda: f64, lambda1: f64, lambda2: f64 },
    #[error("front not converged: pulsating residual {residual} above gate {gate}")]
    WaveNotConverged { residual: f64, gate: f64 },
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    CompactBump,
    WeightedTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub amplitude: f64,
    /// Half-width of a bump's support (length units).
    #[serde(default = "default_width")]
    pub width: f64,
    /// Decay rate κ of a weighted tail `e^{κ(x₁ − x₀)}` behind `ξ₀`.
    #[serde(default = "default_decay")]
    pub decay: f64,
    /// Bump centre relative to the front's `θ = 0.5` level.
    #[serde(default)]
    pub offset: f64,
    pub sign: Sign,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> f64 {
    2.0
}

fn default_decay() -> f64 {
    2.0
}

impl PerturbationSpec {
    pub fn bump(amplitude: f64, sign: Sign) -> Self {
        Self { kind: PerturbationKind::CompactBump, amplitude, width: default_width(), decay: default_decay(), offset: 0.0, sign, seed: 0 }
    }

    pub fn tail(amplitude: f64, decay: f64, sign: Sign) -> Self {
        Self { kind: PerturbationKind::WeightedTail, amplitude, width: default_width(), decay, offset: 0.0, sign, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub field: Field,
    /// Nodes where `u + δ` left `[0, p]` and was clamped.
    pub clamp_count: usize,
    /// `h^n·Σ W·|u₀ − w|`.
    pub weighted_l1: f64,
}

/// `u₀ = clamp(w + δ, 0, p)` together with the weighted L¹ certificate. Positions along x₁
/// are lab coordinates at the profile's time, so `ξ = x₁ + c·t`.
pub fn perturb(profile: &Field, p: &[f64], c: f64, xi0: &Xi0, spec: &PerturbationSpec) -> Result<Perturbed, ExperimentError> {
    let grid = &profile.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let front = front_position(profile, Some(p), 0.5).unwrap_or(xi0.x0);
    let centre2 = grid.axes().get(1).filter(|a| !a.is_periodic()).map(|a| 0.5 * (a.position(0) + a.position(a.len() - 1)));
    let mut values = profile.values.clone();
    let mut clamp_count = 0;
    for (k, u) in values.iter_mut().enumerate() {
        if grid.is_clamped(k) {
            continue;
        }
        let x = grid.position(k);
        let envelope = match spec.kind {
            PerturbationKind::CompactBump => {
                let d1 = x[0] - front - spec.offset;
                let d2 = centre2.map_or(0.0, |c2| x[1] - c2);
                let r = (d1 * d1 + d2 * d2).sqrt() / spec.width;
                if r < 1.0 {
                    (0.5 * std::f64::consts::PI * r).cos().powi(2)
                } else {
                    0.0
                }
            }
            PerturbationKind::WeightedTail => {
                let x0 = xi0.xi0 - c * profile.t;
                if x[0] <= x0 {
                    (spec.decay * (x[0] - x0)).exp()
                } else {
                    0.0
                }
            }
        };
        if envelope == 0.0 {
            continue;
        }
        let s = match spec.sign {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
            Sign::Mixed => rng.random_range(-1.0..=1.0),
        };
        let raw = *u + spec.amplitude * s * envelope;
        let cap = p[grid.cell_flat(k)];
        let clamped = raw.clamp(0.0, cap);
        if clamped != raw {
            clamp_count += 1;
        }
        *u = clamped;
    }
    let field = Field::new(grid.clone(), values, profile.t);
    let weighted_l1 = weighted_l1(&field, profile, c, xi0)?;
    Ok(Perturbed { field, clamp_count, weighted_l1 })
}

/// Discrete `‖W·(u₀ − w)‖_{L¹}`. Fails when the sum is not finite or more than
/// `TAIL_MASS_SHARE` of it sits within five periods of the low end, where the window
/// cannot certify summability.
pub fn weighted_l1(u0: &Field, w: &Field, c: f64, xi0: &Xi0) -> Result<f64, ExperimentError> {
    let grid = &w.grid;
    let ax = grid.axis(0);
    let cell_volume: f64 = grid.axes().iter().map(|a| a.h()).product();
    let edge = ax.position(0) + 5.0 * ax.period;
    let (mut total, mut near_edge) = (0.0, 0.0);
    for k in 0..grid.len() {
        let x = grid.position(k)[0];
        let term = xi0.weight(x + c * w.t) * (u0.values[k] - w.values[k]).abs() * cell_volume;
        total += term;
        if x < edge {
            near_edge += term;
        }
    }
    if !total.is_finite() {
        return Err(ExperimentError::InadmissiblePerturbation("weighted L¹ norm is not finite".into()));
    }
    if total > 0.0 && near_edge > TAIL_MASS_SHARE * total {
        return Err(ExperimentError::InadmissiblePerturbation(format!(
            "{:.3e} of the weighted L¹ mass lies next to the window edge",
            near_edge / total
        )));
    }
    Ok(total)
}

/// `E(t) = sup |q − r|` on `ξ ≤ ξ₀`, on `ξ > ξ₀`, and globally; times are measured from
/// the start of the twin run.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ErrorSeries {
    pub t: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub global: Vec<f64>,
    /// `min (q − r)` over all nodes and steps.
    pub min_difference: f64,
}

impl ErrorSeries {
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.t.len()).map(|i| vec![self.t[i], self.left[i], self.right[i], self.global[i]]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinOptions {
    /// Duration of the twin run.
    pub duration: f64,
    pub record_every: f64,
    /// Nodes within this many periods of the low end are excluded from `E`.
    pub skip_periods: usize,
    /// Decay rate used to extend the offset into nodes entering the window; `None` for
    /// compactly supported perturbations.
    pub offset_decay: Option<f64>,
}

/// Evolves reference and perturbed data in lockstep and records `E(t)`. The perturbed
/// twin is carried as its offset from the reference, so `E` is resolved far below the
/// rounding level of `u` itself.
pub fn twin_run(
    reference: &Field,
    perturbed: &Field,
    stepper: &Stepper,
    policy: Option<&RecenterPolicy>,
    c: f64,
    xi0: f64,
    opts: &TwinOptions,
) -> Result<ErrorSeries, ExperimentError> {
    let t0 = reference.t;
    let every = ((opts.record_every / stepper.dt()).round() as usize).max(1);
    let offset = Field::new(
        reference.grid.clone(),
        perturbed.values.iter().zip(&reference.values).map(|(q, r)| q - r).collect(),
        t0,
    );
    let mut out = ErrorSeries { min_difference: f64::INFINITY, ..Default::default() };
    evolve_pair(reference, &offset, stepper, t0 + opts.duration, policy, opts.offset_decay, |s, r, d| {
        let grid = &r.grid;
        let ax = grid.axis(0);
        let x_min = ax.position(0) + opts.skip_periods as f64 * ax.period;
        let (mut left, mut right, mut min_d) = (0.0_f64, 0.0_f64, f64::INFINITY);
        for k in 0..grid.len() {
            let x = grid.position(k)[0];
            if x < x_min {
                continue;
            }
            let dk = d.values[k];
            min_d = min_d.min(dk);
            if x + c * r.t <= xi0 {
                left = left.max(dk.abs());
            } else {
                right = right.max(dk.abs());
            }
        }
        out.min_difference = out.min_difference.min(min_d);
        if s % every == 0 {
            out.t.push(r.t - t0);
            out.left.push(left);
            out.right.push(right);
            out.global.push(left.max(right));
        }
        ControlFlow::Continue(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    pub duration: f64,
    pub record_every: f64,
    /// Gate on the front's pulsating residual, relative to `sup p`.
    pub residual_gate: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { duration: 40.0, record_every: 0.25, residual_gate: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRun {
    pub series: ErrorSeries,
    pub clamp_count: usize,
    pub weighted_l1: f64,
}

/// Perturbs the final profile of `wave` and runs the twin simulation.
pub fn stability_run(
    wave: &WaveRecord,
    stepper: &Stepper,
    pert: &PerturbationSpec,
    opts: &StabilityOptions,
) -> Result<StabilityRun, ExperimentError> {
    let p = stepper.limits().expect("fronts are evolved on clamped windows").to_vec();
    let sup_p = p.iter().copied().fold(0.0, f64::max);
    let gate = opts.residual_gate * sup_p;
    if !(wave.pulsating_residual <= gate) {
        return Err(ExperimentError::WaveNotConverged { residual: wave.pulsating_residual, gate });
    }
    let profile = wave.profile();
    let perturbed = perturb(profile, &p, wave.c_meas, &wave.xi0, pert)?;
    let policy = RecenterPolicy::new(wave.seed.lambda);
    let offset_decay = match pert.kind {
        PerturbationKind::CompactBump => None,
        PerturbationKind::WeightedTail => Some(pert.decay),
    };
    let twin = TwinOptions {
        duration: opts.duration,
        record_every: opts.record_every,
        skip_periods: policy.synthetic_periods(),
        offset_decay,
    };
    let series = twin_run(profile, &perturbed.field, stepper, Some(&policy), wave.c_meas, wave.xi0.xi0, &twin)?;
    Ok(StabilityRun { series, clamp_count: perturbed.clamp_count, weighted_l1: perturbed.weighted_l1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// `μ_fit` for exponential fits, the log–log slope for algebraic ones.
    pub value: f64,
    pub window: (f64, f64),
    pub r2: f64,
    /// Fitted prefactor `C`.
    pub constant: f64,
    pub points: usize,
}

/// The last `FIT_FRACTION` of the recorded time span.
pub fn default_window(t: &[f64]) -> (f64, f64) {
    let (a, b) = (t[0], t[t.len() - 1]);
    (b - FIT_FRACTION * (b - a), b)
}

fn window_points(t: &[f64], e: &[f64], window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>), ExperimentError> {
    let floor = DEGENERATE_FLOOR;
    let mut ts = Vec::new();
    let mut es = Vec::new();
    for (&ti, &ei) in t.iter().zip(e) {
        if ti < window.0 - 1e-9 || ti > window.1 + 1e-9 {
            continue;
        }
        if !(ei >= floor) {
            return Err(ExperimentError::DegenerateSeries { t: ti, floor });
        }
        ts.push(ti);
        es.push(ei);
    }
    if ts.len() < 3 {
        return Err(ExperimentError::InvalidWindow(window.0, window.1));
    }
    Ok((ts, es))
}

/// `μ_fit` = least-squares slope of `−ln E` against `t`.
pub fn fit_exponential(t: &[f64], e: &[f64], window: (f64, f64)) -> Result<RateFit, ExperimentError> {
    let (ts, es) = window_points(t, e, window)?;
    let ln: Vec<f64> = es.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&ts, &ln).ok_or(ExperimentError::InvalidWindow(window.0, window.1))?;
    Ok(RateFit { value: -fit.slope, window, r2: fit.r2, constant: fit.intercept.exp(), points: ts.len() })
}

/// Least-squares slope of `ln E` against `ln(1 + t)`; the window must start at `t ≥ 10`.
pub fn fit_algebraic(t: &[f64], e: &[f64], window: (f64, f64)) -> Result<RateFit, ExperimentError> {
    if window.0 < ALGEBRAIC_T_MIN {
        return Err(ExperimentError::InvalidWindow(window.0, window.1));
    }
    let (ts, es) = window_points(t, e, window)?;
    let lt: Vec<f64> = ts.iter().map(|v| (1.0 + v).ln()).collect();
    let ln: Vec<f64> = es.iter().map(|v| v.ln()).collect();
    let fit = fit_line(&lt, &ln).ok_or(ExperimentError::InvalidWindow(window.0, window.1))?;
    Ok(RateFit { value: fit.slope, window, r2: fit.r2, constant: fit.intercept.exp(), points: ts.len() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePrediction {
    pub lambda: f64,
    pub mu_c: f64,
    pub half_mu_bar: f64,
    /// `min{μ_c(λ), −μ̄₁/2}`.
    pub rate: f64,
    /// Largest prediction over a λ-grid in `[λ₁, λ₂]`, and where it is attained.
    pub best_rate: f64,
    pub best_lambda: f64,
}

pub const PREDICTION_GRID: usize = 33;

/// `min{μ_c(λ), −μ̄₁/2}` for `λ ∈ [λ₁(c), λ₂(c)]`.
pub fn rate_prediction(
    medium: &Medium,
    cell: &Grid,
    c: f64,
    lambda: f64,
    mu_bar1: f64,
    roots: &RootPair,
) -> Result<RatePrediction, ExperimentError> {
    let tol = 1e-9 * roots.lambda2.max(1.0);
    if lambda < roots.lambda1 - tol || lambda > roots.lambda2 + tol {
        return Err(ExperimentError::LambdaOutOfBand { lambda, lambda1: roots.lambda1, lambda2: roots.lambda2 });
    }
    let half = -0.5 * mu_bar1;
    // μ_c vanishes at the roots; clip rounding noise there
    let rate_at = |l: f64| -> Result<(f64, f64), ExperimentError> {
        let m = mu_c(medium, cell, l, c)?.max(0.0);
        Ok((m, m.min(half)))
    };
    let (mu, rate) = rate_at(lambda)?;
    let (mut best_rate, mut best_lambda) = (rate, lambda);
    for i in 0..PREDICTION_GRID {
        let l = roots.lambda1 + (roots.lambda2 - roots.lambda1) * i as f64 / (PREDICTION_GRID - 1) as f64;
        let (_, r) = rate_at(l)?;
        if r > best_rate {
            best_rate = r;
            best_lambda = l;
        }
    }
    Ok(RatePrediction { lambda, mu_c: mu, half_mu_bar: half, rate, best_rate, best_lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    Exponential,
    Algebraic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    pub exponential: Result<RateFit, ExperimentError>,
    pub algebraic: Result<RateFit, ExperimentError>,
    /// The better-fitting model by R².
    pub model: Option<DecayModel>,
    /// Reference algebraic rate `n/2`.
    pub n_half: f64,
}

/// Fits both models to `E_global` over their default windows (the algebraic window starts
/// no earlier than `t = 10`).
pub fn decay_fit(series: &ErrorSeries, dim: usize) -> DecayFit {
    let w = default_window(&series.t);
    let exponential = fit_exponential(&series.t, &series.global, w);
    let algebraic = fit_algebraic(&series.t, &series.global, (w.0.max(ALGEBRAIC_T_MIN), w.1));
    let model = match (&exponential, &algebraic) {
        (Ok(e), Ok(a)) => Some(if e.r2 >= a.r2 { DecayModel::Exponential } else { DecayModel::Algebraic }),
        (Ok(_), Err(_)) => Some(DecayModel::Exponential),
        (Err(_), Ok(_)) => Some(DecayModel::Algebraic),
        _ => None,
    };
    DecayFit { exponential, algebraic, model, n_half: 0.5 * dim as f64 }
}

/// True when `E` never increases over `window` (beyond `rel_tol` relative noise).
pub fn monotone_decreasing(t: &[f64], e: &[f64], window: (f64, f64), rel_tol: f64) -> bool {
    let pts: Vec<f64> = t.iter().zip(e).filter(|(ti, _)| **ti >= window.0 - 1e-9 && **ti <= window.1 + 1e-9).map(|(_, v)| *v).collect();
    pts.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel_tol))
}

/// Copies a one-dimensional field along a second (window) axis.
pub fn extrude(field: &Field, axis2: Axis) -> Result<Field, ExperimentError> {
    let line = &field.grid;
    let grid = Grid::new(vec![*line.axis(0), axis2])?;
    let [n1, _] = grid.shape();
    let values = (0..grid.len()).map(|k| field.values[k % n1]).collect();
    Ok(Field::new(grid, values, field.t))
}
