//! IMEX time stepping of `u_t = ∇·(A∇u) + f(t, x, u)`: explicit reaction, implicit
//! diffusion, one tridiagonal solve per grid line and axis.
//!
//! Under the monotonicity budget `Δt ≤ 1/(2·sup|f_u|)` the reaction update is
//! order-preserving and each implicit factor `(I − Δt·D_axis)` is an M-matrix, so the
//! scheme preserves order and the invariant region `[0, p]`.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::discretization::{axis_lines, DiscretizationError};
use crate::grid::{AxisKind, BoundaryRule, Field, Grid};
use crate::linalg::TridiagFactor;
use crate::medium::{check_bound_m, reaction_rate_bound, Medium};

/// Ordering tolerance of the comparison check.
pub const ORDER_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("StepTooLarge: Δt = {dt} exceeds the monotonicity budget {budget}")]
    StepTooLarge { dt: f64, budget: f64 },
    #[error("SolverFailure: singular implicit diffusion system")]
    SolverFailure,
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error("IncompatibleGrid: {0}")]
    IncompatibleGrid(String),
    #[error("clamped windows need the steady state p(x) for the right boundary")]
    MissingLimits,
    #[error("time {t} is not a whole number of steps Δt = {dt} from {t0}")]
    OffStep { t: f64, t0: f64, dt: f64 },
    #[error("non-finite value after step {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOptions {
    /// `None` picks `min(budget, h)` shrunk to divide 1.
    pub dt: Option<f64>,
    /// Upper end of the invariant region used for the budget; `None` uses the bound M.
    pub u_max: Option<f64>,
}

struct LineFactor {
    nodes: Vec<usize>,
    factor: TridiagFactor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ClampValue {
    Zero,
    Limit,
}

/// A prepared time stepper for one grid shape and medium.
pub struct Stepper {
    medium: Medium,
    template: Grid,
    dt: f64,
    budget: f64,
    u_max: f64,
    /// cell index of every node (invariant under whole-period window shifts)
    cell_of: Vec<usize>,
    cell_x: Vec<[f64; 2]>,
    capacity: Option<Vec<f64>>,
    limits: Option<Vec<f64>>,
    clamps: Vec<(usize, ClampValue)>,
    /// per axis; empty when the diffusion is time-dependent
    factors: Vec<Vec<LineFactor>>,
}

/// Largest `1/k ≤ dt`, so that unit times are whole steps.
pub fn divisor_step(dt: f64) -> f64 {
    1.0 / (1.0 / dt).ceil()
}

/// `1/(2·sup|f_u|)` over `[0, u_max]`.
pub fn monotonicity_budget(medium: &Medium, u_max: f64) -> f64 {
    let rate = reaction_rate_bound(medium, u_max);
    if rate > 0.0 {
        0.5 / rate
    } else {
        f64::INFINITY
    }
}

/// Upper end of the invariant region: the bound M when one exists.
pub fn invariant_bound(medium: &Medium) -> f64 {
    let cap = medium.capacity_bound();
    check_bound_m(medium, 10.0 * cap.max(1.0)).unwrap_or(cap)
}

impl Stepper {
    /// `limits` holds `p` on the periodicity cell; required for clamped windows.
    pub fn new(medium: &Medium, grid: &Grid, opts: StepOptions, limits: Option<Vec<f64>>) -> Result<Self, EvolutionError> {
        grid.check_periods(medium.periods()).map_err(|e| EvolutionError::IncompatibleGrid(e.to_string()))?;
        let cell = grid.cell();
        if let Some(p) = &limits {
            if p.len() != cell.len() {
                return Err(EvolutionError::IncompatibleGrid(format!("limits have {} values, cell has {}", p.len(), cell.len())));
            }
        }
        let mut clamps = Vec::new();
        for k in 0..grid.len() {
            let idx = grid.unflat(k);
            for (d, a) in grid.axes().iter().enumerate() {
                if a.is_clamped(idx[d]) {
                    clamps.push((k, if idx[d] == 0 { ClampValue::Zero } else { ClampValue::Limit }));
                    break;
                }
            }
        }
        if clamps.iter().any(|c| c.1 == ClampValue::Limit) && limits.is_none() {
            return Err(EvolutionError::MissingLimits);
        }
        let u_max = opts.u_max.unwrap_or_else(|| invariant_bound(medium));
        let budget = monotonicity_budget(medium, u_max);
        let h_min = grid.axes().iter().map(|a| a.h()).fold(f64::INFINITY, f64::min);
        let dt = match opts.dt {
            Some(dt) => dt,
            None => divisor_step(budget.min(h_min)),
        };
        if !(dt > 0.0) || dt > budget * (1.0 + 1e-12) {
            return Err(EvolutionError::StepTooLarge { dt, budget });
        }
        let cell_x: Vec<[f64; 2]> = (0..cell.len()).map(|k| cell.cell_position(k)).collect();
        let capacity = if medium.is_time_dependent() {
            None
        } else {
            cell_x.iter().map(|&x| medium.capacity(0.0, x)).collect::<Option<Vec<f64>>>()
        };
        let mut s = Self {
            medium: medium.clone(),
            template: grid.clone(),
            dt,
            budget,
            u_max,
            cell_of: (0..grid.len()).map(|k| grid.cell_flat(k)).collect(),
            cell_x,
            capacity,
            limits,
            clamps,
            factors: Vec::new(),
        };
        if !s.diffusion_varies() {
            s.factors = s.build_factors(0.0)?;
        }
        Ok(s)
    }

    fn diffusion_varies(&self) -> bool {
        self.medium.is_time_dependent()
    }

    fn build_factors(&self, t: f64) -> Result<Vec<Vec<LineFactor>>, EvolutionError> {
        let mut out = Vec::with_capacity(self.template.dim());
        for axis in 0..self.template.dim() {
            let mut lines = Vec::new();
            for line in axis_lines(&self.template, &self.medium, axis, t)? {
                let mut sys = line.bands;
                for v in sys.lower.iter_mut().chain(sys.upper.iter_mut()).chain(sys.diag.iter_mut()) {
                    *v *= -self.dt;
                }
                sys.diag.iter_mut().for_each(|v| *v += 1.0);
                let factor = sys.factor().ok_or(EvolutionError::SolverFailure)?;
                lines.push(LineFactor { nodes: line.nodes, factor });
            }
            out.push(lines);
        }
        Ok(out)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    pub fn medium(&self) -> &Medium {
        &self.medium
    }

    pub fn limits(&self) -> Option<&[f64]> {
        self.limits.as_deref()
    }

    /// `p` at node `k` of a field on this stepper's grid shape.
    pub fn limit_at(&self, k: usize) -> Option<f64> {
        self.limits.as_ref().map(|p| p[self.cell_of[k]])
    }

    fn check_grid(&self, grid: &Grid) -> Result<(), EvolutionError> {
        if !grid.same_shape(&self.template) {
            return Err(EvolutionError::IncompatibleGrid("field grid differs from the stepper's".into()));
        }
        for (a, b) in grid.axes().iter().zip(self.template.axes()) {
            if (a.origin() - b.origin()).rem_euclid(a.per_period as i64) != 0 {
                return Err(EvolutionError::IncompatibleGrid("window moved by a fraction of a period".into()));
            }
        }
        Ok(())
    }

    fn reaction(&self, t: f64, k: usize, u: f64) -> f64 {
        let c = self.cell_of[k];
        match &self.capacity {
            Some(mu) => u * (mu[c] - u),
            None => self.medium.f(t, self.cell_x[c], u),
        }
    }

    /// `f(r + d) − f(r)`, exact for the logistic family.
    fn reaction_difference(&self, t: f64, k: usize, r: f64, d: f64) -> f64 {
        let c = self.cell_of[k];
        let mu = match &self.capacity {
            Some(mu) => Some(mu[c]),
            None => self.medium.capacity(t, self.cell_x[c]),
        };
        match mu {
            Some(mu) => d * (mu - 2.0 * r - d),
            None => self.medium.f(t, self.cell_x[c], r + d) - self.medium.f(t, self.cell_x[c], r),
        }
    }

    /// One IMEX step.
    pub fn step(&self, u: &Field) -> Result<Field, EvolutionError> {
        self.check_grid(&u.grid)?;
        let mut out = u.clone();
        self.step_in_place(&mut out, u.t + self.dt)?;
        Ok(out)
    }

    fn step_in_place(&self, u: &mut Field, t_new: f64) -> Result<(), EvolutionError> {
        let t_mid = u.t + 0.5 * self.dt;
        let dt = self.dt;
        for (k, v) in u.values.iter_mut().enumerate() {
            *v += dt * self.reaction(t_mid, k, *v);
        }
        self.apply_clamps(&mut u.values);
        self.diffuse_in_place(u, t_mid)?;
        self.apply_clamps(&mut u.values);
        u.t = t_new;
        Ok(())
    }

    /// Steps a reference `r` and the offset `d = q − r` of a twin `q`. `r + d` follows the
    /// same scheme as stepping `q` directly, while `d` keeps its relative precision.
    fn step_pair_in_place(&self, r: &mut Field, d: &mut Field, t_new: f64) -> Result<(), EvolutionError> {
        let t_mid = r.t + 0.5 * self.dt;
        for (k, dv) in d.values.iter_mut().enumerate() {
            *dv += self.dt * self.reaction_difference(t_mid, k, r.values[k], *dv);
        }
        for &(k, _) in &self.clamps {
            d.values[k] = 0.0;
        }
        d.t = r.t;
        self.step_in_place(r, t_new)?;
        self.diffuse_in_place(d, t_mid)?;
        for &(k, _) in &self.clamps {
            d.values[k] = 0.0;
        }
        d.t = t_new;
        Ok(())
    }

    /// The implicit diffusion half of a step, without reaction or clamping.
    fn diffuse_in_place(&self, u: &mut Field, t_mid: f64) -> Result<(), EvolutionError> {
        let rebuilt;
        let factors = if self.diffusion_varies() {
            rebuilt = self.build_factors(t_mid)?;
            &rebuilt
        } else {
            &self.factors
        };
        let mut rhs = Vec::new();
        let mut sol = Vec::new();
        for lines in factors {
            for line in lines {
                rhs.clear();
                rhs.extend(line.nodes.iter().map(|&k| u.values[k]));
                sol.resize(rhs.len(), 0.0);
                line.factor.solve(&rhs, &mut sol);
                for (&k, &v) in line.nodes.iter().zip(&sol) {
                    u.values[k] = v;
                }
            }
        }
        Ok(())
    }

    fn apply_clamps(&self, values: &mut [f64]) {
        for &(k, kind) in &self.clamps {
            values[k] = match kind {
                ClampValue::Zero => 0.0,
                ClampValue::Limit => self.limits.as_ref().map_or(0.0, |p| p[self.cell_of[k]]),
            };
        }
    }

    /// Resets Dirichlet nodes of `field` to the wave limits.
    pub fn clamp(&self, field: &mut Field) {
        self.apply_clamps(&mut field.values);
    }

    /// Number of steps from `t0` to `t`, which must be a whole multiple of Δt.
    pub fn steps_between(&self, t0: f64, t: f64) -> Result<usize, EvolutionError> {
        let r = (t - t0) / self.dt;
        let k = r.round();
        if k < 0.0 || (r - k).abs() > 1e-6 {
            return Err(EvolutionError::OffStep { t, t0, dt: self.dt });
        }
        Ok(k as usize)
    }
}

/// Keeps the front inside a window by whole-period shifts along x₁.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecenterPolicy {
    /// Always shift once the front is this many periods from either end.
    pub margin_periods: f64,
    /// Front target as a fraction of the window, measured from the low end.
    pub target_fraction: f64,
    /// Also shift when the front is this many periods away from the target.
    pub tolerance_periods: f64,
    pub theta: f64,
    /// Decay rate used to extend the leading tail into newly exposed nodes.
    pub tail_lambda: f64,
    /// Nodes closer than this many periods to the old low end are re-extended too.
    pub source_periods: usize,
}

impl RecenterPolicy {
    pub fn new(tail_lambda: f64) -> Self {
        Self { margin_periods: 10.0, target_fraction: 0.7, tolerance_periods: 1.0, theta: 0.5, tail_lambda, source_periods: 5 }
    }

    /// Periods next to the low end whose values may come from tail extension.
    pub fn synthetic_periods(&self) -> usize {
        self.source_periods + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecenterEvent {
    pub t: f64,
    /// Window shift in nodes (negative: towards −x₁).
    pub nodes: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub snapshots: Vec<Field>,
    pub recenters: Vec<RecenterEvent>,
    pub scheme: &'static str,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|f| f.t).collect()
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("trajectories hold at least the initial field")
    }
}

pub const SCHEME: &str = "imex-euler: explicit reaction, implicit diffusion (line solves, Lie splitting across axes)";

/// Leftmost position along x₁ where `u ≥ θ·p`, linearly interpolated; the minimum over
/// x₂-lines in two dimensions. `limits` is `p` on the periodicity cell (1 when absent).
/// `None` if no node reaches the level.
pub fn front_position(field: &Field, limits: Option<&[f64]>, theta: f64) -> Option<f64> {
    let grid = &field.grid;
    let [n1, n2] = grid.shape();
    let ax = grid.axis(0);
    let h = ax.h();
    let mut best: Option<f64> = None;
    for j in 0..n2 {
        let ratio = |i: usize| {
            let k = grid.flat([i, j]);
            let p = limits.map_or(1.0, |p| p[grid.cell_flat(k)]);
            field.values[k] / p
        };
        if let Some(i) = (0..n1).find(|&i| ratio(i) >= theta) {
            let x = if i == 0 {
                ax.position(0)
            } else {
                let (r0, r1) = (ratio(i - 1), ratio(i));
                ax.position(i - 1) + h * (theta - r0) / (r1 - r0)
            };
            best = Some(best.map_or(x, |b: f64| b.min(x)));
        }
    }
    best
}

/// Moves the window by `periods` whole periods along x₁. Nodes appearing at the low end,
/// and nodes within `source_periods` of the old low end, are filled by extending the tail
/// `u(x − mL) = e^{−λmL}·u(x)` from the first undisturbed period; nodes appearing at the
/// high end take `p`.
pub fn shift_window(field: &Field, periods: i64, stepper: &Stepper, policy: &RecenterPolicy) -> Field {
    let ax = *field.grid.axis(0);
    let n = ax.per_period as i64;
    let grid = field.grid.shifted(0, periods * n);
    let old_origin = ax.origin();
    let trusted = old_origin + policy.source_periods as i64 * n + 1;
    let [n1, n2] = grid.shape();
    let mut values = vec![0.0; grid.len()];
    for j in 0..n2 {
        for i in 0..n1 {
            let k = grid.flat([i, j]);
            let g = grid.axis(0).global(i);
            let g2 = grid.axes().get(1).map_or(0, |a| a.global(j));
            let p = stepper.limit_at(k).unwrap_or(f64::INFINITY);
            let v = if g < trusted {
                let m = (trusted - g + n - 1) / n;
                let src = field.at_global([g + m * n, g2]).unwrap_or(0.0);
                src * (-policy.tail_lambda * m as f64 * ax.period).exp()
            } else {
                field.at_global([g, g2]).unwrap_or(p)
            };
            values[k] = v.min(p).max(0.0);
        }
    }
    let mut out = Field::new(grid, values, field.t);
    stepper.clamp(&mut out);
    out
}

/// [`shift_window`] for the offset `d = q − r` of a twin. Nodes near the low end are
/// extended with the offset's own decay rate (zero when `decay` is `None`), nodes
/// appearing at the high end get 0, and nothing is clamped.
pub fn shift_offset(d: &Field, periods: i64, policy: &RecenterPolicy, decay: Option<f64>) -> Field {
    let ax = *d.grid.axis(0);
    let n = ax.per_period as i64;
    let grid = d.grid.shifted(0, periods * n);
    let trusted = ax.origin() + policy.source_periods as i64 * n + 1;
    let [n1, n2] = grid.shape();
    let mut values = vec![0.0; grid.len()];
    for j in 0..n2 {
        for i in 0..n1 {
            let k = grid.flat([i, j]);
            let g = grid.axis(0).global(i);
            let g2 = grid.axes().get(1).map_or(0, |a| a.global(j));
            values[k] = if g < trusted {
                let m = (trusted - g + n - 1) / n;
                decay.map_or(0.0, |rate| d.at_global([g + m * n, g2]).unwrap_or(0.0) * (-rate * m as f64 * ax.period).exp())
            } else {
                d.at_global([g, g2]).unwrap_or(0.0)
            };
        }
    }
    Field::new(grid, values, d.t)
}

fn recenter_shift(field: &Field, stepper: &Stepper, policy: &RecenterPolicy) -> Option<i64> {
    let x = front_position(field, stepper.limits(), policy.theta)?;
    let ax = field.grid.axis(0);
    let lo = ax.position(0);
    let hi = ax.position(ax.len() - 1);
    let margin = policy.margin_periods * ax.period;
    let target = lo + policy.target_fraction * (hi - lo);
    let near_edge = x - lo <= margin || hi - x <= margin;
    if !near_edge && (x - target).abs() <= policy.tolerance_periods * ax.period {
        return None;
    }
    let periods = ((x - target) / ax.period).round() as i64;
    (periods != 0).then_some(periods)
}

/// Advances several fields in lockstep from a common time. Recentering, if enabled, is
/// decided by the first field and applied to all. `observe` sees the fields at step 0 and
/// after every step; returning `Break` stops early.
pub fn evolve_with(
    mut fields: Vec<Field>,
    stepper: &Stepper,
    t_end: f64,
    recenter: Option<&RecenterPolicy>,
    mut observe: impl FnMut(usize, &[Field]) -> ControlFlow<()>,
) -> Result<(Vec<Field>, Vec<RecenterEvent>), EvolutionError> {
    let t0 = fields.first().map_or(0.0, |f| f.t);
    for f in &fields {
        stepper.check_grid(&f.grid)?;
    }
    let steps = stepper.steps_between(t0, t_end)?;
    let mut events = Vec::new();
    if observe(0, &fields).is_break() {
        return Ok((fields, events));
    }
    for s in 1..=steps {
        let t_new = t0 + s as f64 * stepper.dt;
        fields.par_iter_mut().try_for_each(|f| stepper.step_in_place(f, t_new))?;
        if fields.iter().any(|f| !f.is_finite()) {
            return Err(EvolutionError::NonFinite(s));
        }
        if let Some(policy) = recenter {
            if let Some(periods) = recenter_shift(&fields[0], stepper, policy) {
                for f in fields.iter_mut() {
                    *f = shift_window(f, periods, stepper, policy);
                }
                events.push(RecenterEvent { t: t_new, nodes: periods * stepper.template.axis(0).per_period as i64 });
            }
        }
        if observe(s, &fields).is_break() {
            break;
        }
    }
    Ok((fields, events))
}

/// Evolves a reference `r` and a twin stored as its offset `d = q − r` in lockstep.
/// Recentering follows `r`; `offset_decay` extends `d` into new nodes (see
/// [`shift_offset`]). `observe` sees `(step, r, d)` at step 0 and after every step.
pub fn evolve_pair(
    reference: &Field,
    offset: &Field,
    stepper: &Stepper,
    t_end: f64,
    recenter: Option<&RecenterPolicy>,
    offset_decay: Option<f64>,
    mut observe: impl FnMut(usize, &Field, &Field) -> ControlFlow<()>,
) -> Result<Vec<RecenterEvent>, EvolutionError> {
    let (mut r, mut d) = (reference.clone(), offset.clone());
    stepper.check_grid(&r.grid)?;
    if !r.grid.same_shape(&d.grid) || r.grid.axis(0).origin() != d.grid.axis(0).origin() {
        return Err(EvolutionError::IncompatibleGrid("offset and reference grids differ".into()));
    }
    let steps = stepper.steps_between(r.t, t_end)?;
    let mut events = Vec::new();
    if observe(0, &r, &d).is_break() {
        return Ok(events);
    }
    for s in 1..=steps {
        let t_new = reference.t + s as f64 * stepper.dt;
        stepper.step_pair_in_place(&mut r, &mut d, t_new)?;
        if !r.is_finite() || !d.is_finite() {
            return Err(EvolutionError::NonFinite(s));
        }
        if let Some(policy) = recenter {
            if let Some(periods) = recenter_shift(&r, stepper, policy) {
                r = shift_window(&r, periods, stepper, policy);
                d = shift_offset(&d, periods, policy, offset_decay);
                events.push(RecenterEvent { t: t_new, nodes: periods * stepper.template.axis(0).per_period as i64 });
            }
        }
        if observe(s, &r, &d).is_break() {
            break;
        }
    }
    Ok(events)
}

/// Evolves `u0` to `t_end`, keeping `u0` and the fields at `record_times` (whole steps).
pub fn evolve(
    u0: &Field,
    stepper: &Stepper,
    t_end: f64,
    record_times: &[f64],
    recenter: Option<&RecenterPolicy>,
) -> Result<Trajectory, EvolutionError> {
    let mut wanted = Vec::with_capacity(record_times.len());
    for &t in record_times {
        if t > u0.t && t <= t_end + 1e-9 {
            wanted.push(stepper.steps_between(u0.t, t)?);
        }
    }
    wanted.sort_unstable();
    wanted.dedup();
    let mut snapshots = Vec::with_capacity(wanted.len() + 1);
    let mut next = 0;
    let (_, recenters) = evolve_with(vec![u0.clone()], stepper, t_end, recenter, |s, f| {
        if s == 0 || (next < wanted.len() && wanted[next] == s) {
            if s > 0 {
                next += 1;
            }
            snapshots.push(f[0].clone());
        }
        ControlFlow::Continue(())
    })?;
    Ok(Trajectory { dt: stepper.dt, snapshots, recenters, scheme: SCHEME })
}

/// `t0 + k·every` for `k = 1, …` up to `t_end`.
pub fn uniform_times(t0: f64, t_end: f64, every: f64) -> Vec<f64> {
    let n = ((t_end - t0) / every + 1e-9).floor() as usize;
    (1..=n).map(|k| t0 + k as f64 * every).collect()
}

/// Evolves `u0 ≤ v0` with identical steps and checks `u ≤ v + 10⁻¹²` after every step.
pub fn comparison_check(u0: &Field, v0: &Field, stepper: &Stepper, t_end: f64) -> Result<bool, EvolutionError> {
    let ordered = |a: &Field, b: &Field| a.values.iter().zip(&b.values).all(|(x, y)| *x <= y + ORDER_TOL);
    let mut ok = ordered(u0, v0);
    evolve_with(vec![u0.clone(), v0.clone()], stepper, t_end, None, |_, f| {
        ok &= ordered(&f[0], &f[1]);
        if ok {
            ControlFlow::Continue(())
        } else {
            ControlFlow::Break(())
        }
    })?;
    Ok(ok)
}

/// True when every window axis of `grid` uses `rule`.
pub fn window_rule_is(grid: &Grid, rule: BoundaryRule) -> bool {
    grid.axes().iter().all(|a| match a.kind {
        AxisKind::Window { boundary, .. } => boundary == rule,
        AxisKind::Periodic => true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::{Coefficient, DiffusionField, Nonlinearity, ReactionTable};

    fn cell(n: usize) -> Grid {
        Grid::periodic(&[1.0], n).unwrap()
    }

    #[test]
    fn zero_is_fixed_and_logistic_update_is_exact() {
        let m = Medium::fisher(1.0, 1.0);
        let st = Stepper::new(&m, &cell(64), StepOptions { dt: Some(0.01), u_max: None }, None).unwrap();
        let z = st.step(&Field::constant(&cell(64), 0.0)).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        let h = st.step(&Field::constant(&cell(64), 0.5)).unwrap();
        assert!(h.values.iter().all(|v| (v - 0.5025).abs() < 1e-14));
        assert!((h.t - 0.01).abs() < 1e-15);
    }

    #[test]
    fn step_budget_enforced() {
        let m = Medium::fisher(1.0, 1.0);
        assert!((monotonicity_budget(&m, 1.0) - 0.5).abs() < 1e-15);
        let r = Stepper::new(&m, &cell(16), StepOptions { dt: Some(0.6), u_max: None }, None);
        assert!(matches!(r, Err(EvolutionError::StepTooLarge { .. })));
        let st = Stepper::new(&m, &cell(16), StepOptions::default(), None).unwrap();
        assert_eq!(st.dt(), 1.0 / 16.0);
    }

    #[test]
    fn logistic_convergence_to_capacity() {
        let m = Medium::fisher(1.0, 1.0);
        let g = cell(32);
        let st = Stepper::new(&m, &g, StepOptions::default(), None).unwrap();
        let tr = evolve(&Field::constant(&g, 0.1), &st, 30.0, &[15.0, 30.0], None).unwrap();
        assert_eq!(tr.snapshots.len(), 3);
        assert!(tr.last().values.iter().all(|v| (v - 1.0).abs() < 1e-4));
        let only = evolve(&Field::constant(&g, 0.1), &st, 0.0, &[], None).unwrap();
        assert_eq!(only.snapshots.len(), 1);
    }

    #[test]
    fn mass_conserved_without_reaction() {
        let tab = ReactionTable::new(1, vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let m = Medium::new(
            &[1.0],
            None,
            DiffusionField::Scalar(Coefficient::constant(1.0).with_x1(vec![0.5], vec![])),
            Nonlinearity::Tabulated(tab),
        )
        .unwrap();
        let g = cell(64);
        let st = Stepper::new(&m, &g, StepOptions { dt: Some(0.01), u_max: Some(1.0) }, None).unwrap();
        let u0 = Field::from_fn(&g, |x| 0.5 + 0.4 * (2.0 * std::f64::consts::PI * x[0]).sin().powi(3));
        let m0: f64 = u0.values.iter().sum();
        let tr = evolve(&u0, &st, 1.0, &[1.0], None).unwrap();
        let m1: f64 = tr.last().values.iter().sum();
        assert!((m1 - m0).abs() < 1e-9);
    }

    #[test]
    fn ordered_pairs_stay_ordered() {
        let m = Medium::fisher(1.0, 1.0);
        let g = cell(32);
        let st = Stepper::new(&m, &g, StepOptions::default(), None).unwrap();
        let u = Field::from_fn(&g, |x| 0.3 + 0.2 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let v = Field::from_fn(&g, |x| 0.6 + 0.1 * (2.0 * std::f64::consts::PI * x[0]).sin());
        assert!(comparison_check(&u, &v, &st, 5.0).unwrap());
        assert!(comparison_check(&u, &u, &st, 5.0).unwrap());
        assert!(!comparison_check(&v, &u, &st, 1.0).unwrap());
    }

    #[test]
    fn clamped_window_holds_limits_and_recenters() {
        let m = Medium::fisher(1.0, 1.0);
        let g = Grid::line(1.0, 16, 40, BoundaryRule::ClampToLimits).unwrap();
        assert!(matches!(Stepper::new(&m, &g, StepOptions::default(), None), Err(EvolutionError::MissingLimits)));
        let st = Stepper::new(&m, &g, StepOptions::default(), Some(vec![1.0; 16])).unwrap();
        let u0 = Field::from_fn(&g, |x| (x[0]).exp().min(1.0));
        let policy = RecenterPolicy::new(1.0);
        let tr = evolve(&u0, &st, 10.0, &uniform_times(0.0, 10.0, 1.0), Some(&policy)).unwrap();
        assert!(!tr.recenters.is_empty());
        let last = tr.last();
        assert_eq!(last.values[0], 0.0);
        assert_eq!(*last.values.last().unwrap(), 1.0);
        assert!(last.values.iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)));
        let x = front_position(last, st.limits(), 0.5).unwrap();
        // speed 2 minus the logarithmic lag of a critical front
        assert!(x < -14.0 && x > -20.0, "front at {x}");
    }
}
