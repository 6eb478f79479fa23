//! Principal eigenpairs of periodic elliptic operators and Floquet exponents of
//! time-periodic ones.
//!
//! Every operator handled here is, up to sign, a Metzler matrix `M` (nonnegative
//! off-diagonals, irreducible stencil graph). Its Perron root `ρ(M)` is the principal
//! eigenvalue and carries a positive eigenvector. Positive iterates give the
//! Collatz–Wielandt bracket `min (Mx)ᵢ/xᵢ ≤ ρ ≤ max (Mx)ᵢ/xᵢ`, which is the stopping test.

use thiserror::Error;

use crate::discretization::{assemble_twisted, DiscreteOperator, DiscretizationError, Orientation};
use crate::grid::{Field, Grid};
use crate::linalg::{Tridiag, TridiagFactor};
use crate::medium::Medium;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("NoConvergence: {iterations} iterations, bracket width {gap:e}")]
    NoConvergence { iterations: usize, gap: f64 },
    #[error("NonPositiveIterate: positivity lost at iteration {0}")]
    NonPositiveIterate(usize),
    #[error("principal eigenproblems need a periodic cell grid")]
    NotPeriodic,
    #[error("medium has no time period")]
    NotTimePeriodic,
    #[error("time step {dt} does not divide the period {period}")]
    StepMismatch { dt: f64, period: f64 },
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    pub tol: f64,
    pub residual_gate: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-10, residual_gate: 1e-9, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalue: f64,
    /// Max-normalized, strictly positive.
    pub eigenfunction: Field,
    /// `‖Op·v − μ·v‖_∞ / ‖v‖_∞`.
    pub residual: f64,
    pub iterations: usize,
}

/// Perron root and vector of a Metzler matrix given by its action.
struct Perron {
    rho: f64,
    v: Vec<f64>,
    iterations: usize,
}

/// Collatz–Wielandt bracket of `mx` against positive `x`.
fn collatz(x: &[f64], mx: &[f64]) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in x.iter().zip(mx) {
        if !(*a > 0.0) {
            return None;
        }
        let r = b / a;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Some((lo, hi))
}

fn normalize_max(x: &mut [f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 && m.is_finite() {
        x.iter_mut().for_each(|v| *v /= m);
    }
    m
}

fn rayleigh(x: &[f64], mx: &[f64]) -> f64 {
    let num: f64 = x.iter().zip(mx).map(|(a, b)| a * b).sum();
    let den: f64 = x.iter().map(|a| a * a).sum();
    num / den
}

/// Stopping floor: the bracket cannot shrink below roundoff in `Mx`.
fn gap_floor(opts: &EigenOptions, norm: f64) -> f64 {
    opts.residual_gate.max(64.0 * f64::EPSILON * norm)
}

/// Shifted inverse iteration for a tridiagonal Metzler matrix: each step solves with the
/// nonnegative inverse `(sI − M)⁻¹`, moving `s` down onto the bracket's upper end.
fn perron_tridiag(m: &Tridiag, opts: &EigenOptions) -> Result<Perron, SpectralError> {
    let n = m.len();
    let norm = (0..n).map(|i| m.diag[i].abs() + m.lower[i].abs() + m.upper[i].abs()).fold(0.0, f64::max);
    let row_max = (0..n).map(|i| m.diag[i] + m.lower[i] + m.upper[i]).fold(f64::NEG_INFINITY, f64::max);
    let floor = gap_floor(opts, norm);
    let mut s = row_max + 1.0;
    let mut x = vec![1.0; n];
    let mut mx = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 1..=opts.max_iter {
        let fac = m.shifted_negated(s).factor().ok_or(SpectralError::NonPositiveIterate(it))?;
        fac.solve(&x, &mut y);
        if y.iter().any(|v| !(*v > 0.0)) {
            return Err(SpectralError::NonPositiveIterate(it));
        }
        normalize_max(&mut y);
        std::mem::swap(&mut x, &mut y);
        m.matvec(&x, &mut mx);
        let (lo, hi) = collatz(&x, &mx).ok_or(SpectralError::NonPositiveIterate(it))?;
        let rho = rayleigh(&x, &mx);
        if (rho - prev).abs() <= opts.tol * rho.abs().max(1.0) && hi - lo <= floor {
            return Ok(Perron { rho, v: x, iterations: it });
        }
        prev = rho;
        s = hi + (hi - lo).max(1e-6 * (1.0 + hi.abs()));
    }
    m.matvec(&x, &mut mx);
    let gap = collatz(&x, &mx).map_or(f64::INFINITY, |(lo, hi)| hi - lo);
    Err(SpectralError::NoConvergence { iterations: opts.max_iter, gap })
}

/// Plain power iteration on `σI + M`, `σ = ‖M‖_∞ + 1`.
fn perron_power(apply: impl Fn(&[f64], &mut [f64]), n: usize, norm: f64, opts: &EigenOptions) -> Result<Perron, SpectralError> {
    let sigma = norm + 1.0;
    let floor = gap_floor(opts, norm);
    let mut x = vec![1.0; n];
    let mut mx = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 1..=opts.max_iter {
        apply(&x, &mut mx);
        let (lo, hi) = collatz(&x, &mx).ok_or(SpectralError::NonPositiveIterate(it))?;
        let rho = rayleigh(&x, &mx);
        if (rho - prev).abs() <= opts.tol * rho.abs().max(1.0) && hi - lo <= floor {
            return Ok(Perron { rho, v: x, iterations: it });
        }
        prev = rho;
        for (xi, mi) in x.iter_mut().zip(&mx) {
            *xi = sigma * *xi + mi;
        }
        normalize_max(&mut x);
    }
    apply(&x, &mut mx);
    let gap = collatz(&x, &mx).map_or(f64::INFINITY, |(lo, hi)| hi - lo);
    Err(SpectralError::NoConvergence { iterations: opts.max_iter, gap })
}

fn finish(op: &DiscreteOperator, eigenvalue: f64, mut v: Vec<f64>, iterations: usize) -> EigenResult {
    normalize_max(&mut v);
    let ov = op.apply(&v);
    let residual = ov.iter().zip(&v).map(|(a, b)| (a - eigenvalue * b).abs()).fold(0.0, f64::max);
    EigenResult { eigenvalue, eigenfunction: Field::new(op.grid().clone(), v, 0.0), residual, iterations }
}

/// Principal eigenpair with default options.
pub fn principal_eig(op: &DiscreteOperator) -> Result<EigenResult, SpectralError> {
    principal_eig_with(op, &EigenOptions::default())
}

/// The eigenvalue whose eigenfunction is positive: maximal real part for generators,
/// minimal real part for elliptic (negated) operators. One-dimensional operators use
/// shifted inverse iteration; others the plain shifted power method.
pub fn principal_eig_with(op: &DiscreteOperator, opts: &EigenOptions) -> Result<EigenResult, SpectralError> {
    if !op.grid().is_periodic_cell() {
        return Err(SpectralError::NotPeriodic);
    }
    let sign = match op.orientation() {
        Orientation::Generator => 1.0,
        Orientation::Elliptic => -1.0,
    };
    let p = match op.to_tridiag() {
        Some(t) => {
            let m = if sign > 0.0 { t } else { t.shifted_negated(0.0) };
            perron_tridiag(&m, opts)?
        }
        None => power_on(op, sign, opts)?,
    };
    Ok(finish(op, sign * p.rho, p.v, p.iterations))
}

fn power_on(op: &DiscreteOperator, sign: f64, opts: &EigenOptions) -> Result<Perron, SpectralError> {
    let apply = |x: &[f64], y: &mut [f64]| {
        op.matvec(x, y);
        if sign < 0.0 {
            y.iter_mut().for_each(|v| *v = -*v);
        }
    };
    perron_power(apply, op.rows(), op.norm_inf(), opts)
}

/// The literal shifted power method, kept as a cross-check of the default path.
pub fn principal_eig_power(op: &DiscreteOperator, opts: &EigenOptions) -> Result<EigenResult, SpectralError> {
    if !op.grid().is_periodic_cell() {
        return Err(SpectralError::NotPeriodic);
    }
    let sign = if op.orientation() == Orientation::Generator { 1.0 } else { -1.0 };
    let p = power_on(op, sign, opts)?;
    Ok(finish(op, sign * p.rho, p.v, p.iterations))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloquetResult {
    /// `μ_c(λ)` in the elliptic convention: `−(1/T)·ln ρ(P)`, extrapolated in Δt.
    pub eig: EigenResult,
    /// `(1/T)·ln ρ(P)`, extrapolated in Δt.
    pub growth_exponent: f64,
    /// Growth exponent from the fine step alone.
    pub growth_raw: f64,
    pub steps: usize,
}

/// Implicit-Euler period map `v(0) ↦ v(T)` of `v_t = −(−L_{c,λ})(t)·v`.
struct PeriodMap {
    factors: Vec<TridiagFactor>,
    steps: usize,
}

impl PeriodMap {
    fn new(medium: &Medium, grid: &Grid, lambda: f64, c: f64, steps: usize) -> Result<Self, SpectralError> {
        let period = medium.time_period().ok_or(SpectralError::NotTimePeriodic)?;
        let dt = period / steps as f64;
        let distinct = if medium.is_time_dependent() { steps } else { 1 };
        let mut factors = Vec::with_capacity(distinct);
        for k in 0..distinct {
            let t_mid = (k as f64 + 0.5) * dt;
            let op = assemble_twisted(grid, medium, lambda, c, Some(t_mid))?;
            let t = op.to_tridiag().ok_or(SpectralError::NotPeriodic)?;
            // I + Δt·(−L)
            let mut sys = t.clone();
            sys.lower.iter_mut().chain(sys.upper.iter_mut()).chain(sys.diag.iter_mut()).for_each(|v| *v *= dt);
            sys.diag.iter_mut().for_each(|v| *v += 1.0);
            factors.push(sys.factor().ok_or(SpectralError::NonPositiveIterate(0))?);
        }
        Ok(Self { factors, steps })
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut cur = x.to_vec();
        for k in 0..self.steps {
            let f = &self.factors[k.min(self.factors.len() - 1)];
            f.solve(&cur, y);
            cur.copy_from_slice(y);
        }
    }

    /// Perron root of P (power iteration; P is entrywise positive).
    fn perron(&self, n: usize, opts: &EigenOptions) -> Result<(f64, Vec<f64>), SpectralError> {
        let mut x = vec![1.0; n];
        let mut px = vec![0.0; n];
        let mut prev = f64::NAN;
        for it in 1..=opts.max_iter.min(10_000) {
            self.apply(&x, &mut px);
            if px.iter().any(|v| !(*v > 0.0)) {
                return Err(SpectralError::NonPositiveIterate(it));
            }
            let (lo, hi) = collatz(&x, &px).ok_or(SpectralError::NonPositiveIterate(it))?;
            let rho = rayleigh(&x, &px);
            let rel = (hi - lo) / hi;
            if (rho - prev).abs() <= opts.tol * rho && rel <= 1e-13 {
                return Ok((rho, x));
            }
            prev = rho;
            x.copy_from_slice(&px);
            normalize_max(&mut x);
        }
        Err(SpectralError::NoConvergence { iterations: opts.max_iter, gap: f64::NAN })
    }
}

/// Floquet principal eigenvalue `μ_c(λ)` of a time-periodic medium on the cell `grid`.
///
/// The exponent from steps `Δt` and `2Δt` is Richardson-extrapolated, cancelling the
/// first-order implicit-Euler error.
pub fn principal_eig_floquet(medium: &Medium, grid: &Grid, lambda: f64, c: f64, dt: f64) -> Result<FloquetResult, SpectralError> {
    principal_eig_floquet_with(medium, grid, lambda, c, dt, &EigenOptions::default())
}

pub fn principal_eig_floquet_with(
    medium: &Medium,
    grid: &Grid,
    lambda: f64,
    c: f64,
    dt: f64,
    opts: &EigenOptions,
) -> Result<FloquetResult, SpectralError> {
    let period = medium.time_period().ok_or(SpectralError::NotTimePeriodic)?;
    if !grid.is_periodic_cell() || grid.dim() != 1 {
        return Err(SpectralError::NotPeriodic);
    }
    let ratio = period / dt;
    let steps = ratio.round() as usize;
    if steps < 2 || steps % 2 != 0 || (ratio - steps as f64).abs() > 1e-9 * ratio {
        return Err(SpectralError::StepMismatch { dt, period });
    }
    let n = grid.len();
    let fine = PeriodMap::new(medium, grid, lambda, c, steps)?;
    let coarse = PeriodMap::new(medium, grid, lambda, c, steps / 2)?;
    let (rho_f, v) = fine.perron(n, opts)?;
    let (rho_c, _) = coarse.perron(n, opts)?;
    let g_f = rho_f.ln() / period;
    let g_c = rho_c.ln() / period;
    let growth = 2.0 * g_f - g_c;
    let mut v = v;
    normalize_max(&mut v);
    // residual of the period-map eigenproblem, scaled back to a rate
    let mut pv = vec![0.0; n];
    fine.apply(&v, &mut pv);
    let residual = pv.iter().zip(&v).map(|(a, b)| (a - rho_f * b).abs()).fold(0.0, f64::max) / (rho_f * period);
    let eig = EigenResult { eigenvalue: -growth, eigenfunction: Field::new(grid.clone(), v, 0.0), residual, iterations: steps };
    Ok(FloquetResult { eig, growth_exponent: growth, growth_raw: g_f, steps })
}
