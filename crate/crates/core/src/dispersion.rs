//! The dispersion relation `λ ↦ μ_c(λ)`, speeds `c(λ) = −μ₀(λ)/λ`, the minimal speed
//! `c* = min_λ c(λ)`, and the root pair `λ₁(c) < λ₂(c)` of `μ_c(λ) = 0` for `c > c*`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::discretization::{assemble_twisted, DiscretizationError};
use crate::grid::Grid;
use crate::medium::Medium;
use crate::optimize::{bisect, golden_section};
use crate::spectral::{principal_eig_floquet_with, principal_eig_with, EigenOptions, EigenResult, SpectralError};

pub const DEFAULT_LAMBDA_RANGE: (f64, f64) = (0.05, 8.0);
pub const DEFAULT_SCAN: usize = 64;
pub const MIN_LAMBDA: f64 = 1e-6;
pub const ROOT_TOL: f64 = 1e-8;
/// Tolerance on `μ_c(λ)` when checking a `(c, λ)` pair lies on the dispersion curve.
pub const ON_CURVE_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("DegenerateLambda: λ = {0} is below {MIN_LAMBDA}")]
    DegenerateLambda(f64),
    #[error("BoundaryMinimum: c(λ) is smallest at the range end λ = {lambda} of [{lo}, {hi}]")]
    BoundaryMinimum { lambda: f64, lo: f64, hi: f64 },
    #[error("SubcriticalSpeed: c = {c} does not exceed c* = {c_star}")]
    SubcriticalSpeed { c: f64, c_star: f64 },
    #[error("NoRootBracket: μ_c does not change sign on [{lo}, {hi}]")]
    NoRootBracket { lo: f64, hi: f64 },
    #[error("NotOnDispersion: μ_c(λ) = {mu} at (c, λ) = ({c}, {lambda})")]
    NotOnDispersion { c: f64, lambda: f64, mu: f64 },
    #[error("invalid λ range [{0}, {1}]")]
    InvalidRange(f64, f64),
}

/// Numerical settings shared by every dispersion evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionOptions {
    pub eig: EigenOptions,
    /// Floquet step for time-periodic media; `None` means `T/1024`.
    pub floquet_dt: Option<f64>,
    pub scan: usize,
    pub rel_width: f64,
    /// Retry once on a range 4× wider at each end after `BoundaryMinimum`.
    pub widen: bool,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self { eig: EigenOptions::default(), floquet_dt: None, scan: DEFAULT_SCAN, rel_width: 1e-6, widen: true }
    }
}

/// `μ_c(λ)` with its eigenfunction and certificate.
pub fn mu_c_eig(medium: &Medium, grid: &Grid, lambda: f64, c: f64, opts: &DispersionOptions) -> Result<EigenResult, DispersionError> {
    if let Some(period) = medium.time_period().filter(|_| medium.is_time_dependent()) {
        let dt = opts.floquet_dt.unwrap_or(period / 1024.0);
        return Ok(principal_eig_floquet_with(medium, grid, lambda, c, dt, &opts.eig)?.eig);
    }
    let op = assemble_twisted(grid, medium, lambda, c, None)?;
    Ok(principal_eig_with(&op, &opts.eig)?)
}

/// Principal eigenvalue of `−L_{c,λ}`.
pub fn mu_c(medium: &Medium, grid: &Grid, lambda: f64, c: f64) -> Result<f64, DispersionError> {
    Ok(mu_c_eig(medium, grid, lambda, c, &DispersionOptions::default())?.eigenvalue)
}

/// The speed making `μ_c(λ)` vanish: `c(λ) = −μ₀(λ)/λ`.
pub fn speed_of_lambda(medium: &Medium, grid: &Grid, lambda: f64) -> Result<f64, DispersionError> {
    speed_of_lambda_with(medium, grid, lambda, &DispersionOptions::default())
}

pub fn speed_of_lambda_with(medium: &Medium, grid: &Grid, lambda: f64, opts: &DispersionOptions) -> Result<f64, DispersionError> {
    if !(lambda >= MIN_LAMBDA) {
        return Err(DispersionError::DegenerateLambda(lambda));
    }
    Ok(-mu_c_eig(medium, grid, lambda, 0.0, opts)?.eigenvalue / lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionSample {
    pub lambda: f64,
    pub mu0: f64,
    pub c: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispersionCurve {
    pub samples: Vec<DispersionSample>,
    pub c_star: f64,
    pub lambda_star: f64,
    /// Eigen-residual at the refined minimizer.
    pub residual_star: f64,
    /// Largest eigen-residual over the scan.
    pub residual_max: f64,
    pub lambda_range: (f64, f64),
    /// True when the golden-section guard fell back to a fine scan.
    pub fine_scan_fallback: bool,
}

fn sample(medium: &Medium, grid: &Grid, lambda: f64, opts: &DispersionOptions) -> Result<DispersionSample, DispersionError> {
    let e = mu_c_eig(medium, grid, lambda, 0.0, opts)?;
    Ok(DispersionSample { lambda, mu0: e.eigenvalue, c: -e.eigenvalue / lambda, residual: e.residual })
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn scan(medium: &Medium, grid: &Grid, lambdas: &[f64], opts: &DispersionOptions) -> Result<Vec<DispersionSample>, DispersionError> {
    lambdas.par_iter().map(|&l| sample(medium, grid, l, opts)).collect()
}

fn argmin(samples: &[DispersionSample]) -> usize {
    let mut k = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.c < samples[k].c {
            k = i;
        }
    }
    k
}

/// Minimal speed over `λ_range` with default options.
pub fn minimal_speed(medium: &Medium, grid: &Grid, lambda_range: (f64, f64)) -> Result<DispersionCurve, DispersionError> {
    minimal_speed_with(medium, grid, lambda_range, &DispersionOptions::default())
}

/// Coarse log-spaced scan, then golden-section refinement of `c(λ)` between the scan
/// minimizer's neighbours.
pub fn minimal_speed_with(
    medium: &Medium,
    grid: &Grid,
    lambda_range: (f64, f64),
    opts: &DispersionOptions,
) -> Result<DispersionCurve, DispersionError> {
    match minimal_speed_once(medium, grid, lambda_range, opts) {
        Err(DispersionError::BoundaryMinimum { .. }) if opts.widen => {
            let once = DispersionOptions { widen: false, ..*opts };
            let (lo, hi) = lambda_range;
            log::info!("minimum at the λ-range boundary; widening [{lo}, {hi}] once");
            minimal_speed_once(medium, grid, ((lo / 4.0).max(MIN_LAMBDA), hi * 4.0), &once)
        }
        other => other,
    }
}

fn minimal_speed_once(
    medium: &Medium,
    grid: &Grid,
    (lo, hi): (f64, f64),
    opts: &DispersionOptions,
) -> Result<DispersionCurve, DispersionError> {
    if !(lo >= MIN_LAMBDA && hi > lo && hi.is_finite()) || opts.scan < 3 {
        return Err(DispersionError::InvalidRange(lo, hi));
    }
    let samples = scan(medium, grid, &log_space(lo, hi, opts.scan), opts)?;
    let k = argmin(&samples);
    if k == 0 || k == samples.len() - 1 {
        return Err(DispersionError::BoundaryMinimum { lambda: samples[k].lambda, lo, hi });
    }
    let (a, b) = (samples[k - 1].lambda, samples[k + 1].lambda);
    let coarse = samples[k];
    let speed = |l: f64| speed_of_lambda_with(medium, grid, l, opts);
    let (mut lambda_star, mut c_star) = golden_section(speed, a, b, opts.rel_width)?;
    let mut fine_scan_fallback = false;
    if c_star > coarse.c + 1e-6 * coarse.c.abs().max(1.0) {
        // c(λ) was not unimodal on the bracket
        fine_scan_fallback = true;
        let fine = scan(medium, grid, &log_space(a, b, 257), opts)?;
        let j = argmin(&fine);
        lambda_star = fine[j].lambda;
        c_star = fine[j].c;
    }
    if coarse.c < c_star {
        lambda_star = coarse.lambda;
        c_star = coarse.c;
    }
    let star = sample(medium, grid, lambda_star, opts)?;
    let residual_max = samples.iter().map(|s| s.residual).fold(0.0, f64::max);
    Ok(DispersionCurve {
        samples,
        c_star,
        lambda_star,
        residual_star: star.residual,
        residual_max,
        lambda_range: (lo, hi),
        fine_scan_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootPair {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `μ_c` at the midpoint, positive by the root structure (0 for the critical pair).
    pub mu_mid: f64,
}

impl RootPair {
    /// The coalesced pair `λ₁ = λ₂ = λ*` at `c = c*`.
    pub fn critical(curve: &DispersionCurve) -> Self {
        Self { lambda1: curve.lambda_star, lambda2: curve.lambda_star, mu_mid: 0.0 }
    }
}

/// Roots `λ₁ < λ₂` of `μ_c(λ) = 0` for `c > c*`, by bisection on `[0, λ*]` and `[λ*, λ_hi]`.
pub fn lambda_roots(medium: &Medium, grid: &Grid, c: f64, curve: &DispersionCurve) -> Result<RootPair, DispersionError> {
    lambda_roots_with(medium, grid, c, curve, &DispersionOptions::default())
}

pub fn lambda_roots_with(
    medium: &Medium,
    grid: &Grid,
    c: f64,
    curve: &DispersionCurve,
    opts: &DispersionOptions,
) -> Result<RootPair, DispersionError> {
    if c <= curve.c_star + ROOT_TOL {
        return Err(DispersionError::SubcriticalSpeed { c, c_star: curve.c_star });
    }
    let f = |l: f64| mu_c_eig(medium, grid, l, c, opts).map(|e| e.eigenvalue);
    let ls = curve.lambda_star;
    let lambda1 = bisect(f, 0.0, ls, ROOT_TOL)?.ok_or(DispersionError::NoRootBracket { lo: 0.0, hi: ls })?;
    let mut hi = 2.0 * ls.max(curve.lambda_range.1);
    let mut tries = 0;
    while f(hi)? >= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 8 {
            return Err(DispersionError::NoRootBracket { lo: ls, hi });
        }
    }
    let lambda2 = bisect(f, ls, hi, ROOT_TOL)?.ok_or(DispersionError::NoRootBracket { lo: ls, hi })?;
    let mu_mid = f(0.5 * (lambda1 + lambda2))?;
    if !(mu_mid > 0.0) {
        return Err(DispersionError::NoRootBracket { lo: lambda1, hi: lambda2 });
    }
    Ok(RootPair { lambda1, lambda2, mu_mid })
}

/// Positive eigenfunction `v` of `−L_{c,λ}` for a pair on the dispersion curve.
pub fn front_eigenfunction(medium: &Medium, grid: &Grid, c: f64, lambda: f64) -> Result<EigenResult, DispersionError> {
    let e = mu_c_eig(medium, grid, lambda, c, &DispersionOptions::default())?;
    if e.eigenvalue.abs() > ON_CURVE_TOL {
        return Err(DispersionError::NotOnDispersion { c, lambda, mu: e.eigenvalue });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Coefficient;

    fn fisher(n: usize) -> (Medium, Grid) {
        (Medium::fisher(1.0, 1.0), Grid::periodic(&[1.0], n).unwrap())
    }

    fn periodic_mu(n: usize) -> (Medium, Grid) {
        let m = Medium::kpp_1d(1.0, Coefficient::constant(1.0), Coefficient::constant(1.0).with_x1(vec![], vec![0.5])).unwrap();
        (m, Grid::periodic(&[1.0], n).unwrap())
    }

    #[test]
    fn homogeneous_values() {
        let (m, g) = fisher(64);
        assert!(mu_c(&m, &g, 1.0, 2.0).unwrap().abs() < 1e-10);
        assert!((mu_c(&m, &g, 1.25, 2.5).unwrap() - 0.5625).abs() < 1e-10);
        assert!(mu_c(&m, &g, 0.5, 2.5).unwrap().abs() < 1e-10);
        assert!((speed_of_lambda(&m, &g, 1.0).unwrap() - 2.0).abs() < 1e-10);
        assert!((speed_of_lambda(&m, &g, 0.5).unwrap() - 2.5).abs() < 1e-10);
        assert!((speed_of_lambda(&m, &g, 2.0).unwrap() - 2.5).abs() < 1e-10);
        assert!(matches!(speed_of_lambda(&m, &g, 1e-7), Err(DispersionError::DegenerateLambda(_))));
    }

    #[test]
    fn minimal_speeds() {
        let (m, g) = fisher(256);
        let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
        assert!((curve.c_star - 2.0).abs() < 1e-8 && (curve.lambda_star - 1.0).abs() < 1e-3);
        assert!(curve.samples.iter().all(|s| s.c >= curve.c_star));
        let m4 = Medium::fisher(1.0, 4.0);
        let curve = minimal_speed(&m4, &g, DEFAULT_LAMBDA_RANGE).unwrap();
        assert!((curve.c_star - 4.0).abs() < 1e-8 && (curve.lambda_star - 2.0).abs() < 1e-3);
    }

    #[test]
    fn boundary_minimum_without_widening() {
        let (m, g) = fisher(64);
        let opts = DispersionOptions { widen: false, ..Default::default() };
        assert!(matches!(minimal_speed_with(&m, &g, (2.0, 8.0), &opts), Err(DispersionError::BoundaryMinimum { .. })));
        let curve = minimal_speed(&m, &g, (2.0, 8.0)).unwrap();
        assert!((curve.c_star - 2.0).abs() < 1e-8);
    }

    #[test]
    fn root_pairs() {
        let (m, g) = fisher(64);
        let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
        let r = lambda_roots(&m, &g, 2.5, &curve).unwrap();
        assert!((r.lambda1 - 0.5).abs() < 1e-7 && (r.lambda2 - 2.0).abs() < 1e-7);
        let r = lambda_roots(&m, &g, 2.0 + 1e-6, &curve).unwrap();
        assert!((r.lambda1 - 1.0).abs() < 2e-3 && (r.lambda2 - 1.0).abs() < 2e-3);
        assert!(matches!(lambda_roots(&m, &g, 2.0, &curve), Err(DispersionError::SubcriticalSpeed { .. })));
    }

    #[test]
    fn periodic_roots_self_consistent() {
        let (m, g) = periodic_mu(128);
        let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
        let c = 1.1 * curve.c_star;
        let r = lambda_roots(&m, &g, c, &curve).unwrap();
        assert!(mu_c(&m, &g, r.lambda1, c).unwrap().abs() < 1e-7);
        assert!(mu_c(&m, &g, r.lambda2, c).unwrap().abs() < 1e-7);
        assert!(r.mu_mid > 0.0);
        for l in [r.lambda1, r.lambda2] {
            assert!((speed_of_lambda(&m, &g, l).unwrap() - c).abs() < 1e-6);
        }
    }

    #[test]
    fn eigenfunctions_on_the_curve() {
        let (m, g) = fisher(64);
        let v = front_eigenfunction(&m, &g, 2.5, 0.5).unwrap();
        assert!(v.eigenfunction.values.iter().all(|x| (x - 1.0).abs() < 1e-9));
        assert!(matches!(front_eigenfunction(&m, &g, 2.5, 1.0), Err(DispersionError::NotOnDispersion { .. })));
        let (m, g) = periodic_mu(128);
        let curve = minimal_speed(&m, &g, DEFAULT_LAMBDA_RANGE).unwrap();
        let v = front_eigenfunction(&m, &g, curve.c_star, curve.lambda_star).unwrap();
        assert!(v.eigenfunction.min() > 0.0 && v.residual <= 1e-9);
    }
}
