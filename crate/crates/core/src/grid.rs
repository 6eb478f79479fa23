//! Uniform grids: periodic cells and finite windows, plus the `Field` values living on them.
//!
//! Every axis carries the medium period `L` and the number of nodes per period `N`,
//! so `h = L/N` is shared between a periodic cell and any window over it. Window nodes
//! are addressed by a global integer index `g` with position `g·h`; the cell index
//! `g mod N` restricts periodic data (steady states, eigenfunctions) exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_NODES_PER_PERIOD: usize = 8;
pub const MIN_WINDOW_PERIODS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("IncompatibleGrid: {0}")]
    Incompatible(String),
    #[error("invalid grid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Dirichlet nodes at both ends, held at the wave limits: 0 on the low end, p(x) on the high end.
    ClampToLimits,
    /// Homogeneous Neumann: no flux through either end.
    ZeroFlux,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisKind {
    Periodic,
    Window { origin: i64, len: usize, boundary: BoundaryRule },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub period: f64,
    pub per_period: usize,
    pub kind: AxisKind,
}

impl Axis {
    pub fn periodic(period: f64, per_period: usize) -> Self {
        Self { period, per_period, kind: AxisKind::Periodic }
    }

    /// Window of `periods` whole periods centered on 0.
    pub fn window(period: f64, per_period: usize, periods: usize, boundary: BoundaryRule) -> Self {
        let len = periods * per_period;
        Self { period, per_period, kind: AxisKind::Window { origin: -(len as i64 / 2), len, boundary } }
    }

    pub fn h(&self) -> f64 {
        self.period / self.per_period as f64
    }

    pub fn len(&self) -> usize {
        match self.kind {
            AxisKind::Periodic => self.per_period,
            AxisKind::Window { len, .. } => len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self) -> i64 {
        match self.kind {
            AxisKind::Periodic => 0,
            AxisKind::Window { origin, .. } => origin,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.kind, AxisKind::Periodic)
    }

    pub fn global(&self, i: usize) -> i64 {
        self.origin() + i as i64
    }

    pub fn position(&self, i: usize) -> f64 {
        self.global(i) as f64 * self.h()
    }

    /// Position reduced into the first period: exact periodicity of coefficient samples.
    pub fn cell_position(&self, i: usize) -> f64 {
        self.cell_index(i) as f64 * self.h()
    }

    pub fn cell_index(&self, i: usize) -> usize {
        self.global(i).rem_euclid(self.per_period as i64) as usize
    }

    /// Neighbor indices along the axis; `None` beyond a window end.
    pub fn neighbors(&self, i: usize) -> (Option<usize>, Option<usize>) {
        let n = self.len();
        match self.kind {
            AxisKind::Periodic => (Some((i + n - 1) % n), Some((i + 1) % n)),
            AxisKind::Window { .. } => (i.checked_sub(1), if i + 1 < n { Some(i + 1) } else { None }),
        }
    }

    /// Dirichlet node (window end under `ClampToLimits`).
    pub fn is_clamped(&self, i: usize) -> bool {
        match self.kind {
            AxisKind::Window { len, boundary: BoundaryRule::ClampToLimits, .. } => i == 0 || i + 1 == len,
            _ => false,
        }
    }

    pub fn boundary(&self) -> Option<BoundaryRule> {
        match self.kind {
            AxisKind::Window { boundary, .. } => Some(boundary),
            AxisKind::Periodic => None,
        }
    }

    fn shifted(&self, nodes: i64) -> Self {
        let mut a = *self;
        if let AxisKind::Window { origin, len, boundary } = self.kind {
            a.kind = AxisKind::Window { origin: origin + nodes, len, boundary };
        }
        a
    }
}

/// One- or two-dimensional tensor grid. Flat index `i₁ + n₁·i₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if !(1..=2).contains(&axes.len()) {
            return Err(GridError::Invalid("grids have one or two axes".into()));
        }
        for a in &axes {
            if a.per_period < MIN_NODES_PER_PERIOD {
                return Err(GridError::Invalid(format!("need N ≥ {MIN_NODES_PER_PERIOD} nodes per period, got {}", a.per_period)));
            }
            if !(a.period > 0.0 && a.period.is_finite()) {
                return Err(GridError::Invalid("axis period must be positive".into()));
            }
            if let AxisKind::Window { len, .. } = a.kind {
                if len < 3 {
                    return Err(GridError::Invalid("window needs at least three nodes".into()));
                }
            }
        }
        Ok(Self { axes })
    }

    /// The cell of periodicity with `n` nodes per period on every axis.
    pub fn periodic(periods: &[f64], n: usize) -> Result<Self, GridError> {
        Self::new(periods.iter().map(|&l| Axis::periodic(l, n)).collect())
    }

    /// A one-dimensional window of `periods` periods (≥ 20) centered on 0.
    pub fn line(period: f64, n: usize, periods: usize, boundary: BoundaryRule) -> Result<Self, GridError> {
        if periods < MIN_WINDOW_PERIODS {
            return Err(GridError::Invalid(format!("window must span at least {MIN_WINDOW_PERIODS} periods")));
        }
        Self::new(vec![Axis::window(period, n, periods, boundary)])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_periodic_cell(&self) -> bool {
        self.axes.iter().all(Axis::is_periodic)
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.axes[0].len(), self.axes.get(1).map_or(1, Axis::len)]
    }

    pub fn flat(&self, idx: [usize; 2]) -> usize {
        idx[0] + self.axes[0].len() * idx[1]
    }

    pub fn unflat(&self, k: usize) -> [usize; 2] {
        let n1 = self.axes[0].len();
        [k % n1, k / n1]
    }

    pub fn position(&self, k: usize) -> [f64; 2] {
        let idx = self.unflat(k);
        let mut x = [0.0; 2];
        for (d, a) in self.axes.iter().enumerate() {
            x[d] = a.position(idx[d]);
        }
        x
    }

    /// Position reduced into the periodicity cell.
    pub fn cell_position(&self, k: usize) -> [f64; 2] {
        let idx = self.unflat(k);
        let mut x = [0.0; 2];
        for (d, a) in self.axes.iter().enumerate() {
            x[d] = a.cell_position(idx[d]);
        }
        x
    }

    /// Flat index of the node's image in the periodicity cell (`n` per period on each axis).
    pub fn cell_flat(&self, k: usize) -> usize {
        let idx = self.unflat(k);
        let n1 = self.axes[0].per_period;
        let c1 = self.axes[0].cell_index(idx[0]);
        let c2 = self.axes.get(1).map_or(0, |a| a.cell_index(idx[1]));
        c1 + n1 * c2
    }

    pub fn is_clamped(&self, k: usize) -> bool {
        let idx = self.unflat(k);
        self.axes.iter().enumerate().any(|(d, a)| a.is_clamped(idx[d]))
    }

    /// The periodicity cell matching this grid's spacing.
    pub fn cell(&self) -> Grid {
        Grid { axes: self.axes.iter().map(|a| Axis::periodic(a.period, a.per_period)).collect() }
    }

    /// Same grid with the window along `axis` moved by `nodes` nodes.
    pub fn shifted(&self, axis: usize, nodes: i64) -> Grid {
        let mut g = self.clone();
        g.axes[axis] = g.axes[axis].shifted(nodes);
        g
    }

    /// Same spacing and kind on every axis (origins may differ).
    pub fn same_shape(&self, other: &Grid) -> bool {
        self.axes.len() == other.axes.len()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                a.period == b.period
                    && a.per_period == b.per_period
                    && a.len() == b.len()
                    && a.is_periodic() == b.is_periodic()
                    && a.boundary() == b.boundary()
            })
    }

    /// Checks that the grid matches the medium's periods and dimension.
    pub fn check_periods(&self, periods: &[f64]) -> Result<(), GridError> {
        if periods.len() != self.dim() {
            return Err(GridError::Incompatible(format!("grid is {}-D, medium is {}-D", self.dim(), periods.len())));
        }
        for (a, &l) in self.axes.iter().zip(periods) {
            let h = a.h();
            if (h * a.per_period as f64 - l).abs() > 1e-12 * l || (a.period - l).abs() > 1e-12 * l {
                return Err(GridError::Incompatible(format!("spacing {h} does not divide period {l}")));
            }
        }
        Ok(())
    }
}

/// Nodal values on a grid at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub t: f64,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>, t: f64) -> Self {
        assert_eq!(grid.len(), values.len(), "field length must match grid");
        Self { grid, values, t }
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self::new(grid.clone(), vec![value; grid.len()], 0.0)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.position(k))).collect();
        Self::new(grid.clone(), values, 0.0)
    }

    /// Periodic cell data (e.g. p(x)) restricted to every node of `grid`.
    pub fn from_cell(grid: &Grid, cell: &[f64]) -> Self {
        let values = (0..grid.len()).map(|k| cell[grid.cell_flat(k)]).collect();
        Self::new(grid.clone(), values, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_distance(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Value at global node indices, if that node lies inside this field's window.
    pub fn at_global(&self, g: [i64; 2]) -> Option<f64> {
        let mut idx = [0usize; 2];
        for (d, a) in self.grid.axes().iter().enumerate() {
            let local = if a.is_periodic() {
                g[d].rem_euclid(a.len() as i64)
            } else {
                g[d] - a.origin()
            };
            if local < 0 || local >= a.len() as i64 {
                return None;
            }
            idx[d] = local as usize;
        }
        Some(self.values[self.grid.flat(idx)])
    }

    pub fn global_index(&self, k: usize) -> [i64; 2] {
        let idx = self.grid.unflat(k);
        let mut g = [0i64; 2];
        for (d, a) in self.grid.axes().iter().enumerate() {
            g[d] = a.global(idx[d]);
        }
        g
    }
}
