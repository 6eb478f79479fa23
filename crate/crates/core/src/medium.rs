//! Periodic media: diffusion field, reaction term, periods, and the
//! sample-based structural checks (ellipticity, sublinearity, upper bound,
//! linear stability of the positive state).
//!
//! Coefficients are truncated trigonometric series whose harmonics are integer
//! multiples of the medium's fundamental frequencies, so periodicity in every
//! axis (and in time, when a time period is present) holds by construction.
//! The checks still verify it by sampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for exact periodicity identities.
pub const PERIODICITY_TOL: f64 = 1e-12;
/// Tolerance used where a derivative chain is involved.
pub const DERIVATIVE_TOL: f64 = 1e-10;
/// Default sample density per period per axis.
pub const DEFAULT_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MediumError {
    #[error("NonElliptic: ellipticity estimate {estimate} is not positive")]
    NonElliptic { estimate: f64 },
    #[error("NoBoundFound: f stays positive up to the search ceiling {ceiling}")]
    NoBoundFound { ceiling: f64 },
    #[error("OffDiagonalUnsupported: two-dimensional media must have a diagonal diffusion matrix")]
    OffDiagonalUnsupported,
    #[error("NotPeriodic: {what} differs by {diff:e} across one period")]
    NotPeriodic { what: String, diff: f64 },
    #[error("invalid medium: {0}")]
    Invalid(String),
}

/// Harmonic content of a series along one variable: `Σ_k cos[k-1]·cos(kφ) + sin[k-1]·sin(kφ)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonics {
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl Harmonics {
    pub fn new(cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { cos, sin }
    }

    pub fn is_zero(&self) -> bool {
        self.cos.iter().chain(&self.sin).all(|&c| c == 0.0)
    }

    fn eval(&self, phase: f64) -> f64 {
        let mut s = 0.0;
        for (k, &a) in self.cos.iter().enumerate() {
            s += a * ((k + 1) as f64 * phase).cos();
        }
        for (k, &b) in self.sin.iter().enumerate() {
            s += b * ((k + 1) as f64 * phase).sin();
        }
        s
    }

    /// Derivative with respect to the phase.
    fn eval_dphase(&self, phase: f64) -> f64 {
        let mut s = 0.0;
        for (k, &a) in self.cos.iter().enumerate() {
            let m = (k + 1) as f64;
            s -= a * m * (m * phase).sin();
        }
        for (k, &b) in self.sin.iter().enumerate() {
            let m = (k + 1) as f64;
            s += b * m * (m * phase).cos();
        }
        s
    }

    /// Sum of absolute amplitudes; bounds the oscillating part.
    fn amplitude_bound(&self) -> f64 {
        self.cos.iter().chain(&self.sin).map(|c| c.abs()).sum()
    }
}

/// A coefficient `c(t, x) = mean + h₁(x₁) + h₂(x₂) + h_t(t)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficient {
    pub mean: f64,
    #[serde(default)]
    pub x1: Harmonics,
    #[serde(default)]
    pub x2: Harmonics,
    #[serde(default)]
    pub t: Harmonics,
}

impl Coefficient {
    pub fn constant(mean: f64) -> Self {
        Self { mean, ..Self::default() }
    }

    pub fn with_x1(mut self, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        self.x1 = Harmonics::new(cos, sin);
        self
    }

    pub fn with_x2(mut self, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        self.x2 = Harmonics::new(cos, sin);
        self
    }

    pub fn with_t(mut self, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        self.t = Harmonics::new(cos, sin);
        self
    }

    pub fn is_time_dependent(&self) -> bool {
        !self.t.is_zero()
    }

    fn eval(&self, frame: &Frame, t: f64, x: [f64; 2]) -> f64 {
        let mut v = self.mean + self.x1.eval(frame.phase(0, x[0]));
        if frame.dim == 2 {
            v += self.x2.eval(frame.phase(1, x[1]));
        }
        if let Some(tp) = frame.time_period {
            v += self.t.eval(2.0 * PI * t / tp);
        }
        v
    }

    fn eval_dx(&self, frame: &Frame, axis: usize, x: [f64; 2]) -> f64 {
        let scale = 2.0 * PI / frame.periods[axis];
        match axis {
            0 => scale * self.x1.eval_dphase(frame.phase(0, x[0])),
            _ => scale * self.x2.eval_dphase(frame.phase(1, x[1])),
        }
    }

    fn max_bound(&self) -> f64 {
        self.mean + self.x1.amplitude_bound() + self.x2.amplitude_bound() + self.t.amplitude_bound()
    }
}

/// Geometry shared by every coefficient of a medium.
#[derive(Debug, Clone, PartialEq)]
struct Frame {
    dim: usize,
    periods: [f64; 2],
    time_period: Option<f64>,
}

impl Frame {
    fn phase(&self, axis: usize, s: f64) -> f64 {
        2.0 * PI * s / self.periods[axis]
    }
}

/// Diffusion matrix `A(t, x)`. Two-dimensional media are restricted to diagonal matrices.
#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionField {
    Scalar(Coefficient),
    Diagonal([Coefficient; 2]),
}

impl DiffusionField {
    pub fn dimension(&self) -> usize {
        match self {
            DiffusionField::Scalar(_) => 1,
            DiffusionField::Diagonal(_) => 2,
        }
    }

    fn entry(&self, axis: usize) -> &Coefficient {
        match self {
            DiffusionField::Scalar(a) => a,
            DiffusionField::Diagonal(d) => &d[axis],
        }
    }

    fn coefficients(&self) -> Vec<&Coefficient> {
        match self {
            DiffusionField::Scalar(a) => vec![a],
            DiffusionField::Diagonal(d) => vec![&d[0], &d[1]],
        }
    }
}

/// Grid samples of `f(x₁, u)` and `f_u(x₁, u)` over one period in `x₁`, bilinear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactionTable {
    /// number of uniformly spaced x₁ nodes over `[0, L₁)`
    nx: usize,
    /// strictly increasing u nodes, starting at 0
    u: Vec<f64>,
    f: Vec<f64>,
    fu: Vec<f64>,
}

impl ReactionTable {
    /// `f` and `fu` are row-major with the x index outermost: `f[ix * u.len() + iu]`.
    pub fn new(nx: usize, u: Vec<f64>, f: Vec<f64>, fu: Vec<f64>) -> Result<Self, MediumError> {
        if nx == 0 || u.len() < 2 {
            return Err(MediumError::Invalid("reaction table needs nx ≥ 1 and at least two u nodes".into()));
        }
        if f.len() != nx * u.len() || fu.len() != nx * u.len() {
            return Err(MediumError::Invalid("reaction table size mismatch".into()));
        }
        if u[0] != 0.0 || u.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MediumError::Invalid("reaction table u nodes must start at 0 and increase".into()));
        }
        if f.iter().chain(&fu).any(|v| !v.is_finite()) {
            return Err(MediumError::Invalid("reaction table has non-finite entries".into()));
        }
        for ix in 0..nx {
            if f[ix * u.len()] != 0.0 {
                return Err(MediumError::Invalid(format!("tabulated f(x,0) ≠ 0 at x node {ix}")));
            }
        }
        Ok(Self { nx, u, f, fu })
    }

    /// Tabulate an analytic reaction (f, f_u) on `nx` x-nodes and the given u nodes.
    pub fn from_fn(
        period: f64,
        nx: usize,
        u: Vec<f64>,
        f: impl Fn(f64, f64) -> f64,
        fu: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, MediumError> {
        let mut fv = Vec::with_capacity(nx * u.len());
        let mut fuv = Vec::with_capacity(nx * u.len());
        for ix in 0..nx {
            let x = period * ix as f64 / nx as f64;
            for &s in &u {
                fv.push(if s == 0.0 { 0.0 } else { f(x, s) });
                fuv.push(fu(x, s));
            }
        }
        Self::new(nx, u, fv, fuv)
    }

    pub fn u_nodes(&self) -> &[f64] {
        &self.u
    }

    fn lookup(&self, data: &[f64], period: f64, x: f64, s: f64) -> f64 {
        let nu = self.u.len();
        let xs = (x / period).rem_euclid(1.0) * self.nx as f64;
        let i0 = (xs.floor() as usize).min(self.nx - 1);
        let wx = xs - i0 as f64;
        let i1 = (i0 + 1) % self.nx;
        // locate the u interval, extrapolating linearly outside the table
        let j = match self.u.partition_point(|&v| v <= s) {
            0 => 0,
            p if p >= nu => nu - 2,
            p => p - 1,
        };
        let wu = (s - self.u[j]) / (self.u[j + 1] - self.u[j]);
        let at = |i: usize| {
            let lo = data[i * nu + j];
            let hi = data[i * nu + j + 1];
            lo + wu * (hi - lo)
        };
        (1.0 - wx) * at(i0) + wx * at(i1)
    }

    fn max_u(&self) -> f64 {
        *self.u.last().unwrap()
    }
}

/// Reaction term `f(t, x, u)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    /// `f = u(μ(t,x) − u)`
    KppLogistic { capacity: Coefficient },
    Tabulated(ReactionTable),
}

/// A periodic medium. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    frame: Frame,
    diffusion: DiffusionField,
    reaction: Nonlinearity,
}

impl Medium {
    pub fn new(
        periods: &[f64],
        time_period: Option<f64>,
        diffusion: DiffusionField,
        reaction: Nonlinearity,
    ) -> Result<Self, MediumError> {
        let dim = periods.len();
        if !(1..=2).contains(&dim) {
            return Err(MediumError::Invalid(format!("dimension {dim} unsupported (1 or 2)")));
        }
        if diffusion.dimension() != dim {
            return Err(MediumError::Invalid(format!(
                "diffusion field is {}-dimensional but {dim} periods were given",
                diffusion.dimension()
            )));
        }
        if periods.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(MediumError::Invalid("periods must be positive".into()));
        }
        if let Some(tp) = time_period {
            if !(tp > 0.0 && tp.is_finite()) {
                return Err(MediumError::Invalid("time period must be positive".into()));
            }
        }
        let mut coeffs = diffusion.coefficients();
        if let Nonlinearity::KppLogistic { capacity } = &reaction {
            coeffs.push(capacity);
        }
        for c in &coeffs {
            let all = c.x1.cos.iter().chain(&c.x1.sin).chain(&c.x2.cos).chain(&c.x2.sin);
            if !c.mean.is_finite() || all.chain(&c.t.cos).chain(&c.t.sin).any(|v| !v.is_finite()) {
                return Err(MediumError::Invalid("non-finite series coefficient".into()));
            }
            if dim == 1 && !c.x2.is_zero() {
                return Err(MediumError::Invalid("x2 harmonics in a one-dimensional medium".into()));
            }
            if time_period.is_none() && c.is_time_dependent() {
                return Err(MediumError::Invalid("time harmonics given without a time period".into()));
            }
        }
        if matches!(reaction, Nonlinearity::Tabulated(_)) && dim != 1 {
            return Err(MediumError::Invalid("tabulated reactions are one-dimensional".into()));
        }
        let mut p = [1.0; 2];
        p[..dim].copy_from_slice(periods);
        Ok(Self { frame: Frame { dim, periods: p, time_period }, diffusion, reaction })
    }

    /// One-dimensional KPP-logistic medium `u_t = (a u_x)_x + u(μ − u)`.
    pub fn kpp_1d(period: f64, diffusion: Coefficient, capacity: Coefficient) -> Result<Self, MediumError> {
        Self::new(&[period], None, DiffusionField::Scalar(diffusion), Nonlinearity::KppLogistic { capacity })
    }

    /// Homogeneous Fisher–KPP `u_t = u_xx + u(r − u)` on cells of length `period`.
    pub fn fisher(period: f64, r: f64) -> Self {
        Self::kpp_1d(period, Coefficient::constant(1.0), Coefficient::constant(r)).expect("valid homogeneous medium")
    }

    pub fn dim(&self) -> usize {
        self.frame.dim
    }

    pub fn periods(&self) -> &[f64] {
        &self.frame.periods[..self.frame.dim]
    }

    pub fn time_period(&self) -> Option<f64> {
        self.frame.time_period
    }

    pub fn diffusion_field(&self) -> &DiffusionField {
        &self.diffusion
    }

    pub fn reaction(&self) -> &Nonlinearity {
        &self.reaction
    }

    /// True when some coefficient actually varies in time.
    pub fn is_time_dependent(&self) -> bool {
        if self.frame.time_period.is_none() {
            return false;
        }
        let reaction_t = match &self.reaction {
            Nonlinearity::KppLogistic { capacity } => capacity.is_time_dependent(),
            Nonlinearity::Tabulated(_) => false,
        };
        reaction_t || self.diffusion.coefficients().iter().any(|c| c.is_time_dependent())
    }

    /// Diagonal entry `a_{axis,axis}(t, x)`.
    pub fn diffusion(&self, axis: usize, t: f64, x: [f64; 2]) -> f64 {
        self.diffusion.entry(axis).eval(&self.frame, t, x)
    }

    /// `∂_axis a_{axis,axis}(x)`.
    pub fn diffusion_dx(&self, axis: usize, x: [f64; 2]) -> f64 {
        self.diffusion.entry(axis).eval_dx(&self.frame, axis, x)
    }

    /// `μ(t, x)` of a logistic reaction.
    pub fn capacity(&self, t: f64, x: [f64; 2]) -> Option<f64> {
        match &self.reaction {
            Nonlinearity::KppLogistic { capacity } => Some(capacity.eval(&self.frame, t, x)),
            Nonlinearity::Tabulated(_) => None,
        }
    }

    pub fn f(&self, t: f64, x: [f64; 2], u: f64) -> f64 {
        match &self.reaction {
            Nonlinearity::KppLogistic { capacity } => u * (capacity.eval(&self.frame, t, x) - u),
            Nonlinearity::Tabulated(tab) => tab.lookup(&tab.f, self.frame.periods[0], x[0], u),
        }
    }

    pub fn f_u(&self, t: f64, x: [f64; 2], u: f64) -> f64 {
        match &self.reaction {
            Nonlinearity::KppLogistic { capacity } => capacity.eval(&self.frame, t, x) - 2.0 * u,
            Nonlinearity::Tabulated(tab) => tab.lookup(&tab.fu, self.frame.periods[0], x[0], u),
        }
    }

    /// Upper bound on the carrying capacity (or the table's u range), used to seed searches.
    pub fn capacity_bound(&self) -> f64 {
        match &self.reaction {
            Nonlinearity::KppLogistic { capacity } => capacity.max_bound(),
            Nonlinearity::Tabulated(tab) => tab.max_u(),
        }
    }

    /// Deterministic sample set: `n` points per period per axis, and `n` time samples when time-periodic.
    pub fn sample_points(&self, n: usize) -> Vec<(f64, [f64; 2])> {
        let axis = |d: usize| -> Vec<f64> {
            if d < self.frame.dim {
                (0..n).map(|i| self.frame.periods[d] * i as f64 / n as f64).collect()
            } else {
                vec![0.0]
            }
        };
        let times: Vec<f64> = match self.frame.time_period {
            Some(tp) if self.is_time_dependent() => (0..n).map(|i| tp * i as f64 / n as f64).collect(),
            _ => vec![0.0],
        };
        let (xs1, xs2) = (axis(0), axis(1));
        let mut out = Vec::with_capacity(times.len() * xs1.len() * xs2.len());
        for &t in &times {
            for &x2 in &xs2 {
                for &x1 in &xs1 {
                    out.push((t, [x1, x2]));
                }
            }
        }
        out
    }

    /// Sampled periodicity check of every coefficient and of `f` in every axis and in time.
    pub fn check_periodicity(&self, n: usize, u_samples: &[f64]) -> Result<(), MediumError> {
        let mut shifts: Vec<(String, f64, [f64; 2])> = Vec::new();
        for d in 0..self.frame.dim {
            let mut e = [0.0; 2];
            e[d] = self.frame.periods[d];
            shifts.push((format!("x{}", d + 1), 0.0, e));
        }
        if let Some(tp) = self.frame.time_period {
            shifts.push(("t".into(), tp, [0.0; 2]));
        }
        for (t, x) in self.sample_points(n) {
            for (name, dt, dx) in &shifts {
                let y = [x[0] + dx[0], x[1] + dx[1]];
                for axis in 0..self.frame.dim {
                    let diff = (self.diffusion(axis, t + dt, y) - self.diffusion(axis, t, x)).abs();
                    if diff >= PERIODICITY_TOL {
                        return Err(MediumError::NotPeriodic { what: format!("a{0}{0} in {name}", axis + 1), diff });
                    }
                }
                for &u in u_samples {
                    let diff = (self.f(t + dt, y, u) - self.f(t, x, u)).abs();
                    if diff >= PERIODICITY_TOL {
                        return Err(MediumError::NotPeriodic { what: format!("f in {name}"), diff });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Minimum Rayleigh quotient `ξᵀA(x)ξ/|ξ|²` over sampled points and 16 directions
/// (the coordinate axes included).
pub fn validate_ellipticity(medium: &Medium, n_samples: usize) -> Result<f64, MediumError> {
    if n_samples < 16 {
        return Err(MediumError::Invalid("ellipticity check needs at least 16 samples per axis".into()));
    }
    let directions: Vec<[f64; 2]> = if medium.dim() == 1 {
        vec![[1.0, 0.0]]
    } else {
        (0..16).map(|k| {
            let th = PI * k as f64 / 16.0;
            [th.cos(), th.sin()]
        })
        .collect()
    };
    let mut estimate = f64::INFINITY;
    for (t, x) in medium.sample_points(n_samples) {
        for e in &directions {
            let q: f64 = (0..medium.dim()).map(|d| medium.diffusion(d, t, x) * e[d] * e[d]).sum();
            estimate = estimate.min(q);
        }
    }
    if estimate > 0.0 {
        Ok(estimate)
    } else {
        Err(MediumError::NonElliptic { estimate })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SublinearityVerdict {
    pub holds: bool,
    /// `(x, s, s′)` with `f(x,s′)/s′ > f(x,s)/s` and `s < s′`.
    pub witness: Option<([f64; 2], f64, f64)>,
}

/// Checks that `s ↦ f(x,s)/s` is non-increasing along `u_grid` at every sampled x.
pub fn check_sublinearity(medium: &Medium, u_grid: &[f64]) -> SublinearityVerdict {
    check_sublinearity_with(medium, u_grid, DEFAULT_SAMPLES)
}

pub fn check_sublinearity_with(medium: &Medium, u_grid: &[f64], n_samples: usize) -> SublinearityVerdict {
    assert!(
        u_grid.iter().all(|&s| s > 0.0) && u_grid.windows(2).all(|w| w[0] < w[1]),
        "u_grid must be strictly increasing and positive"
    );
    for (t, x) in medium.sample_points(n_samples) {
        let g: Vec<f64> = u_grid.iter().map(|&s| medium.f(t, x, s) / s).collect();
        for k in 1..g.len() {
            if g[k] > g[k - 1] + PERIODICITY_TOL * g[k - 1].abs().max(1.0) {
                return SublinearityVerdict { holds: false, witness: Some((x, u_grid[k - 1], u_grid[k])) };
            }
        }
    }
    SublinearityVerdict { holds: true, witness: None }
}

/// Resolution of the s-grid scanned by [`check_bound_m`].
pub const BOUND_RESOLUTION: f64 = 1.0 / 64.0;

/// Smallest grid value M (multiples of 1/64) such that `f(x,s) ≤ 0` for all sampled x and
/// all grid s in `[M, ceiling]`.
pub fn check_bound_m(medium: &Medium, search_ceiling: f64) -> Result<f64, MediumError> {
    let steps = (search_ceiling / BOUND_RESOLUTION).floor() as usize;
    let points = medium.sample_points(DEFAULT_SAMPLES);
    let nonpositive = |s: f64| points.iter().all(|&(t, x)| medium.f(t, x, s) <= PERIODICITY_TOL);
    if steps == 0 || !nonpositive(steps as f64 * BOUND_RESOLUTION) {
        return Err(MediumError::NoBoundFound { ceiling: search_ceiling });
    }
    let mut m = steps;
    while m > 1 && nonpositive((m - 1) as f64 * BOUND_RESOLUTION) {
        m -= 1;
    }
    Ok(m as f64 * BOUND_RESOLUTION)
}

/// `f_u ≤ f/u` everywhere on the samples, strictly at some x₀ for every sampled u.
pub fn check_condition_c(medium: &Medium, u_grid: &[f64], x_grid: &[[f64; 2]]) -> bool {
    assert!(!u_grid.is_empty() && !x_grid.is_empty(), "grids must be nonempty");
    assert!(u_grid.iter().all(|&u| u > 0.0), "u_grid must be positive");
    let times: Vec<f64> = match medium.time_period() {
        Some(tp) if medium.is_time_dependent() => (0..DEFAULT_SAMPLES).map(|i| tp * i as f64 / DEFAULT_SAMPLES as f64).collect(),
        _ => vec![0.0],
    };
    let gap = |t: f64, x: [f64; 2], u: f64| medium.f(t, x, u) / u - medium.f_u(t, x, u);
    let mut strict_somewhere = false;
    for &t in &times {
        for &x in x_grid {
            let gaps: Vec<f64> = u_grid.iter().map(|&u| gap(t, x, u)).collect();
            if gaps.iter().any(|&g| g < -PERIODICITY_TOL) {
                return false;
            }
            if gaps.iter().all(|&g| g > PERIODICITY_TOL) {
                strict_somewhere = true;
            }
        }
    }
    strict_somewhere
}

/// `sup |f_u|` over sampled x and `u ∈ [0, u_max]`.
pub fn reaction_rate_bound(medium: &Medium, u_max: f64) -> f64 {
    let us: Vec<f64> = match medium.reaction() {
        // f_u is affine in u for the logistic family
        Nonlinearity::KppLogistic { .. } => vec![0.0, u_max],
        Nonlinearity::Tabulated(tab) => {
            let mut v: Vec<f64> = tab.u_nodes().iter().copied().filter(|&u| u <= u_max).collect();
            v.push(u_max);
            v
        }
    };
    let mut sup: f64 = 0.0;
    for (t, x) in medium.sample_points(DEFAULT_SAMPLES) {
        for &u in &us {
            sup = sup.max(medium.f_u(t, x, u).abs());
        }
    }
    sup
}

/// Uniform x-samples over one period of a medium (x₂ = 0 in 1D).
pub fn x_samples(medium: &Medium, n: usize) -> Vec<[f64; 2]> {
    medium.sample_points(n).into_iter().filter(|(t, _)| *t == 0.0).map(|(_, x)| x).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn periodic_mu() -> Medium {
        Medium::kpp_1d(1.0, Coefficient::constant(1.0), Coefficient::constant(1.0).with_x1(vec![], vec![0.5])).unwrap()
    }

    fn u_grid() -> Vec<f64> {
        (1..=10).map(|k| k as f64 / 10.0).collect()
    }

    #[test]
    fn ellipticity_examples() {
        assert_eq!(validate_ellipticity(&Medium::fisher(1.0, 1.0), 64).unwrap(), 1.0);
        let m = Medium::kpp_1d(1.0, Coefficient::constant(1.0).with_x1(vec![0.5], vec![]), Coefficient::constant(1.0)).unwrap();
        let est = validate_ellipticity(&m, 64).unwrap();
        // dense-sampling oracle
        let dense = (0..100_000).map(|i| 1.0 + 0.5 * (2.0 * PI * i as f64 / 100_000.0).cos()).fold(f64::INFINITY, f64::min);
        assert!((est - 0.5).abs() < 1e-12 && (dense - 0.5).abs() < 1e-9);

        let diag = DiffusionField::Diagonal([
            Coefficient::constant(2.0),
            Coefficient::constant(1.0).with_x1(vec![], vec![0.9]),
        ]);
        let m2 = Medium::new(&[1.0, 1.0], None, diag, Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0) }).unwrap();
        assert!((validate_ellipticity(&m2, 64).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_elliptic_is_rejected() {
        let m = Medium::kpp_1d(1.0, Coefficient::constant(0.5).with_x1(vec![1.0], vec![]), Coefficient::constant(1.0)).unwrap();
        assert!(matches!(validate_ellipticity(&m, 64), Err(MediumError::NonElliptic { .. })));
        assert!(validate_ellipticity(&m, 8).is_err());
    }

    #[test]
    fn sublinearity_examples() {
        assert!(check_sublinearity(&Medium::fisher(1.0, 1.0), &u_grid()).holds);
        assert!(check_sublinearity(&periodic_mu(), &u_grid()).holds);

        let unodes: Vec<f64> = (0..=40).map(|k| k as f64 / 20.0).collect();
        let tab = ReactionTable::from_fn(1.0, 16, unodes, |_, u| u * (1.0 - u + u * u), |_, u| 1.0 - 2.0 * u + 3.0 * u * u).unwrap();
        let m = Medium::new(&[1.0], None, DiffusionField::Scalar(Coefficient::constant(1.0)), Nonlinearity::Tabulated(tab)).unwrap();
        let v = check_sublinearity(&m, &u_grid());
        assert!(!v.holds);
        let (_, s, s2) = v.witness.unwrap();
        assert!((s - 0.5).abs() < 1e-12 && (s2 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn bound_m_examples() {
        assert_eq!(check_bound_m(&Medium::fisher(1.0, 1.0), 10.0).unwrap(), 1.0);
        assert_eq!(check_bound_m(&periodic_mu(), 10.0).unwrap(), 1.5);
        assert_eq!(check_bound_m(&Medium::fisher(1.0, 2.0), 10.0).unwrap(), 2.0);
        assert!(matches!(check_bound_m(&Medium::fisher(1.0, 20.0), 10.0), Err(MediumError::NoBoundFound { .. })));
    }

    #[test]
    fn condition_c_examples() {
        let xs = x_samples(&Medium::fisher(1.0, 1.0), 64);
        assert!(check_condition_c(&Medium::fisher(1.0, 1.0), &u_grid(), &xs));
        assert!(check_condition_c(&periodic_mu(), &u_grid(), &xs));
        let unodes: Vec<f64> = (0..=20).map(|k| k as f64 / 10.0).collect();
        let tab = ReactionTable::from_fn(1.0, 8, unodes, |_, u| u, |_, _| 1.0).unwrap();
        let linear = Medium::new(&[1.0], None, DiffusionField::Scalar(Coefficient::constant(1.0)), Nonlinearity::Tabulated(tab)).unwrap();
        assert!(!check_condition_c(&linear, &u_grid(), &xs));
    }

    #[test]
    fn logistic_matches_closed_form() {
        let m = periodic_mu();
        for (t, x) in m.sample_points(64) {
            let mu = 1.0 + 0.5 * (2.0 * PI * x[0]).sin();
            for &u in &u_grid() {
                assert!((m.f(t, x, u) - u * (mu - u)).abs() < 1e-15);
                assert!((m.f_u(t, x, u) - (mu - 2.0 * u)).abs() < 1e-15);
            }
            assert_eq!(m.f(t, x, 0.0), 0.0);
        }
    }

    #[test]
    fn periodicity_holds_for_series_media() {
        let m = periodic_mu();
        m.check_periodicity(64, &u_grid()).unwrap();
        let tm = Medium::new(
            &[2.0],
            Some(0.5),
            DiffusionField::Scalar(Coefficient::constant(1.0).with_x1(vec![0.2], vec![0.1]).with_t(vec![0.1], vec![])),
            Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0).with_t(vec![], vec![0.3]) },
        )
        .unwrap();
        tm.check_periodicity(64, &u_grid()).unwrap();
        assert!(tm.is_time_dependent());
    }

    #[test]
    fn tabulated_interpolates_bilinearly() {
        let unodes: Vec<f64> = (0..=10).map(|k| k as f64 / 5.0).collect();
        let tab = ReactionTable::from_fn(1.0, 32, unodes, |_, u| u * (1.0 - u), |_, u| 1.0 - 2.0 * u).unwrap();
        let m = Medium::new(&[1.0], None, DiffusionField::Scalar(Coefficient::constant(1.0)), Nonlinearity::Tabulated(tab)).unwrap();
        // f_u is affine in u so interpolation is exact
        assert!((m.f_u(0.0, [0.3, 0.0], 0.77) - (1.0 - 1.54)).abs() < 1e-14);
        assert!(m.f(0.0, [0.3, 0.0], 0.0) == 0.0);
        // periodic in x
        assert!((m.f(0.0, [1.3, 0.0], 0.5) - m.f(0.0, [0.3, 0.0], 0.5)).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_media() {
        assert!(Medium::kpp_1d(0.0, Coefficient::constant(1.0), Coefficient::constant(1.0)).is_err());
        let with_t = Coefficient::constant(1.0).with_t(vec![0.1], vec![]);
        assert!(Medium::kpp_1d(1.0, with_t, Coefficient::constant(1.0)).is_err());
        assert!(ReactionTable::new(2, vec![0.0, 1.0], vec![0.1, 0.0, 0.0, 0.0], vec![0.0; 4]).is_err());
    }

    #[test]
    fn rate_bound_for_fisher() {
        assert!((reaction_rate_bound(&Medium::fisher(1.0, 1.0), 1.0) - 1.0).abs() < 1e-15);
        assert!((reaction_rate_bound(&periodic_mu(), 1.5) - 2.5).abs() < 1e-12);
    }
}
