//! Matrix realizations of `∇·(A∇·)` and of the λ-twisted operator `−L_{c,λ}`.
//!
//! Both operators are assembled line by line: along each axis the diffusion entry is
//! evaluated once per edge at the edge midpoint (reduced into the periodicity cell), and
//! that single value feeds both rows sharing the edge. This keeps the flux form exactly
//! symmetric and the periodic wrap bit-identical to the interior.

use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{AxisKind, BoundaryRule, Grid, GridError};
use crate::linalg::Tridiag;
use crate::medium::Medium;
use crate::report::fmt_f64;

/// Largest operator `export_dense` will copy.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("TooLarge: {rows} rows exceeds the dense cap of {DENSE_CAP}")]
    TooLarge { rows: usize },
    #[error("twisted operators live on the periodicity cell only")]
    NotPeriodic,
    #[error("negative decay rate λ = {0}")]
    NegativeLambda(f64),
    #[error("cell Péclet guard: off-diagonal {value:e} < 0 at row {row} (refine the grid or lower λ)")]
    Peclet { row: usize, value: f64 },
}

/// Sign convention of an operator, deciding which end of the spectrum is principal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Nonnegative off-diagonals (`D + V`); principal eigenvalue has maximal real part.
    Generator,
    /// Nonpositive off-diagonals (`−L`); principal eigenvalue has minimal real part.
    Elliptic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OperatorMeta {
    pub lambda: Option<f64>,
    pub c: Option<f64>,
    pub t: Option<f64>,
}

/// Compressed-row operator on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    grid: Grid,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    orientation: Orientation,
    meta: OperatorMeta,
}

/// Row-major dense copy.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }
}

/// One grid line along an axis: the flat node indices in order and the restricted stencil.
#[derive(Debug, Clone)]
pub struct Line {
    pub nodes: Vec<usize>,
    pub bands: Tridiag,
}

impl DiscreteOperator {
    /// The zero operator on `grid`.
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![0.0; n],
            orientation: Orientation::Generator,
            meta: OperatorMeta::default(),
        }
    }

    fn from_rows(grid: &Grid, rows: Vec<Vec<(usize, f64)>>, orientation: Orientation, meta: OperatorMeta) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
            for (j, v) in r {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            for (j, v) in merged {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { grid: grid.clone(), row_ptr, cols, vals, orientation, meta }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn meta(&self) -> OperatorMeta {
        self.meta
    }

    pub fn rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows()).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.rows()) {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows()];
        self.matvec(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, i)).collect()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.rows()).map(|i| self.row(i).map(|e| e.1.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).map(|e| e.1).sum()).collect()
    }

    /// `max |a_ij − a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.entries().map(|(i, j, v)| (v - self.get(j, i)).abs()).fold(0.0, f64::max)
    }

    /// `self + diag(d)`.
    pub fn add_diagonal(&self, d: &[f64]) -> Self {
        assert_eq!(d.len(), self.rows());
        let mut rows: Vec<Vec<(usize, f64)>> = (0..self.rows()).map(|i| self.row(i).collect()).collect();
        for (i, r) in rows.iter_mut().enumerate() {
            r.push((i, d[i]));
        }
        Self::from_rows(&self.grid, rows, self.orientation, self.meta)
    }

    /// `self + s·I`.
    pub fn shift(&self, s: f64) -> Self {
        self.add_diagonal(&vec![s; self.rows()])
    }

    /// Band form of a one-dimensional operator.
    pub fn to_tridiag(&self) -> Option<Tridiag> {
        if self.grid.dim() != 1 {
            return None;
        }
        let n = self.rows();
        let cyclic = self.grid.axis(0).is_periodic();
        let mut t = Tridiag { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n], cyclic };
        for (i, j, v) in self.entries() {
            if j == i {
                t.diag[i] += v;
            } else if j == (i + n - 1) % n && (cyclic || j + 1 == i) {
                t.lower[i] += v;
            } else if j == (i + 1) % n && (cyclic || i + 1 == j) {
                t.upper[i] += v;
            } else {
                return None;
            }
        }
        Some(t)
    }
}

/// Exact dense copy; `TooLarge` above [`DENSE_CAP`] rows.
pub fn export_dense(op: &DiscreteOperator) -> Result<DenseMatrix, DiscretizationError> {
    let n = op.rows();
    if n > DENSE_CAP {
        return Err(DiscretizationError::TooLarge { rows: n });
    }
    let mut data = vec![0.0; n * n];
    for (i, j, v) in op.entries() {
        data[i * n + j] += v;
    }
    Ok(DenseMatrix { n, data })
}

/// Coordinate triplets `row,col,value` (one per line, 17 significant digits).
pub fn triplets(op: &DiscreteOperator) -> String {
    let mut s = String::from("row,col,value\n");
    for (i, j, v) in op.entries() {
        let _ = writeln!(s, "{i},{j},{}", fmt_f64(v));
    }
    s
}

/// Flat node indices of every line along `axis`.
fn lines_along(grid: &Grid, axis: usize) -> Vec<Vec<usize>> {
    let [n1, n2] = grid.shape();
    if axis == 0 {
        (0..n2).map(|j| (0..n1).map(|i| grid.flat([i, j])).collect()).collect()
    } else {
        (0..n1).map(|i| (0..n2).map(|j| grid.flat([i, j])).collect()).collect()
    }
}

/// Edge-midpoint diffusion values along one line. `edges[k]` joins node k to k+1
/// (the last one wraps on periodic axes).
fn edge_coefficients(grid: &Grid, medium: &Medium, axis: usize, t: f64, nodes: &[usize]) -> Vec<f64> {
    let ax = grid.axis(axis);
    let h = ax.h();
    nodes
        .iter()
        .map(|&k| {
            let mut x = grid.cell_position(k);
            x[axis] += 0.5 * h;
            medium.diffusion(axis, t, x)
        })
        .collect()
}

/// `∂_axis(a ∂_axis ·)` restricted to every line along `axis`, with the grid's boundary rule.
pub fn axis_lines(grid: &Grid, medium: &Medium, axis: usize, t: f64) -> Result<Vec<Line>, DiscretizationError> {
    grid.check_periods(medium.periods())?;
    let ax = *grid.axis(axis);
    let inv_h2 = 1.0 / (ax.h() * ax.h());
    let periodic = ax.is_periodic();
    let mut out = Vec::new();
    for nodes in lines_along(grid, axis) {
        let n = nodes.len();
        let e = edge_coefficients(grid, medium, axis, t, &nodes);
        let mut bands = Tridiag { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n], cyclic: periodic };
        for i in 0..n {
            let left = if i > 0 { Some(e[i - 1]) } else if periodic { Some(e[n - 1]) } else { None };
            let right = if i + 1 < n || periodic { Some(e[i]) } else { None };
            let lo = left.map_or(0.0, |a| a * inv_h2);
            let up = right.map_or(0.0, |a| a * inv_h2);
            bands.lower[i] = lo;
            bands.upper[i] = up;
            bands.diag[i] = -(lo + up);
        }
        if let AxisKind::Window { boundary: BoundaryRule::ClampToLimits, .. } = ax.kind {
            for i in [0, n - 1] {
                bands.lower[i] = 0.0;
                bands.diag[i] = 0.0;
                bands.upper[i] = 0.0;
            }
        }
        // Dirichlet nodes of other axes are frozen too
        for (i, &k) in nodes.iter().enumerate() {
            if grid.is_clamped(k) {
                bands.lower[i] = 0.0;
                bands.diag[i] = 0.0;
                bands.upper[i] = 0.0;
            }
        }
        out.push(Line { nodes, bands });
    }
    Ok(out)
}

fn push_line(rows: &mut [Vec<(usize, f64)>], line: &Line) {
    let n = line.nodes.len();
    let b = &line.bands;
    for i in 0..n {
        let k = line.nodes[i];
        rows[k].push((k, b.diag[i]));
        if i > 0 {
            rows[k].push((line.nodes[i - 1], b.lower[i]));
        } else if b.cyclic {
            rows[k].push((line.nodes[n - 1], b.lower[i]));
        }
        if i + 1 < n {
            rows[k].push((line.nodes[i + 1], b.upper[i]));
        } else if b.cyclic {
            rows[k].push((line.nodes[0], b.upper[i]));
        }
    }
}

/// Flux-form `∇·(A∇·)` at time `t` (0 for autonomous media).
pub fn assemble_divergence(grid: &Grid, medium: &Medium, t: Option<f64>) -> Result<DiscreteOperator, DiscretizationError> {
    let tt = t.unwrap_or(0.0);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(5); grid.len()];
    for axis in 0..grid.dim() {
        for line in axis_lines(grid, medium, axis, tt)? {
            push_line(&mut rows, &line);
        }
    }
    Ok(DiscreteOperator::from_rows(grid, rows, Orientation::Generator, OperatorMeta { t, ..Default::default() }))
}

/// `D + diag(potential)` as a generator, e.g. the linearization `∇·(A∇·) + f_u(x, w(x))`.
pub fn assemble_linearized(
    grid: &Grid,
    medium: &Medium,
    t: Option<f64>,
    state: &[f64],
) -> Result<DiscreteOperator, DiscretizationError> {
    let d = assemble_divergence(grid, medium, t)?;
    let tt = t.unwrap_or(0.0);
    let pot: Vec<f64> = (0..grid.len()).map(|k| medium.f_u(tt, grid.cell_position(k), state[k])).collect();
    Ok(d.add_diagonal(&pot))
}

/// `−L_{c,λ}` on the periodicity cell, direction `e₁`.
pub fn assemble_twisted(
    grid: &Grid,
    medium: &Medium,
    lambda: f64,
    c: f64,
    t: Option<f64>,
) -> Result<DiscreteOperator, DiscretizationError> {
    if !grid.is_periodic_cell() {
        return Err(DiscretizationError::NotPeriodic);
    }
    if lambda < 0.0 {
        return Err(DiscretizationError::NegativeLambda(lambda));
    }
    let tt = t.unwrap_or(0.0);
    let h = grid.axis(0).h();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(5); grid.len()];
    let mut zero_order = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        for line in axis_lines(grid, medium, axis, tt)? {
            if axis == 0 {
                let n = line.nodes.len();
                let mut bands = line.bands.clone();
                for i in 0..n {
                    let k = line.nodes[i];
                    let x = grid.cell_position(k);
                    let a = medium.diffusion(0, tt, x);
                    let h2 = h * h;
                    // midpoint differences recover a_{i±1/2} from the bands
                    let a_right = bands.upper[i] * h2;
                    let a_left = bands.lower[i] * h2;
                    bands.upper[i] += lambda * a / h;
                    bands.lower[i] -= lambda * a / h;
                    zero_order[k] += lambda * (a_right - a_left) / h + lambda * lambda * a;
                }
                push_line(&mut rows, &Line { nodes: line.nodes, bands });
            } else {
                push_line(&mut rows, &line);
            }
        }
    }
    for (k, z) in zero_order.iter_mut().enumerate() {
        *z += -lambda * c + medium.f_u(tt, grid.cell_position(k), 0.0);
    }
    for (k, r) in rows.iter_mut().enumerate() {
        for e in r.iter_mut() {
            if e.0 != k && e.1 < 0.0 {
                return Err(DiscretizationError::Peclet { row: k, value: e.1 });
            }
        }
        r.push((k, zero_order[k]));
        for e in r.iter_mut() {
            e.1 = -e.1;
        }
    }
    let meta = OperatorMeta { lambda: Some(lambda), c: Some(c), t };
    Ok(DiscreteOperator::from_rows(grid, rows, Orientation::Elliptic, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::medium::Coefficient;
    use std::f64::consts::PI;

    fn cosine_medium() -> Medium {
        Medium::kpp_1d(1.0, Coefficient::constant(1.0).with_x1(vec![0.5], vec![]), Coefficient::constant(1.0)).unwrap()
    }

    #[test]
    fn laplacian_circulant() {
        let g = Grid::periodic(&[1.0], 8).unwrap();
        let d = assemble_divergence(&g, &Medium::fisher(1.0, 1.0), None).unwrap();
        let dense = export_dense(&d).unwrap();
        for i in 0..8 {
            assert_eq!(dense.get(i, i), -128.0);
            assert_eq!(dense.get(i, (i + 1) % 8), 64.0);
            assert_eq!(dense.get(i, (i + 7) % 8), 64.0);
        }
    }

    #[test]
    fn conservation_and_symmetry() {
        let g = Grid::periodic(&[1.0], 256).unwrap();
        let d = assemble_divergence(&g, &cosine_medium(), None).unwrap();
        let scale = d.max_abs_entry();
        assert!(d.row_sums().iter().all(|s| s.abs() <= 1e-12 * scale));
        assert_eq!(d.asymmetry(), 0.0);
        assert!(d.apply(&vec![1.0; 256]).iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn second_order_convergence() {
        let m = Medium::fisher(1.0, 1.0);
        let err = |n: usize| {
            let g = Grid::periodic(&[1.0], n).unwrap();
            let d = assemble_divergence(&g, &m, None).unwrap();
            let u: Vec<f64> = (0..n).map(|k| (2.0 * PI * g.position(k)[0]).sin()).collect();
            d.apply(&u).iter().zip(&u).map(|(a, s)| (a + 4.0 * PI * PI * s).abs()).fold(0.0, f64::max)
        };
        for n in [16, 32, 64] {
            assert!(err(n) / err(2 * n) >= 3.5);
        }
    }

    #[test]
    fn twisted_homogeneous_examples() {
        let g = Grid::periodic(&[1.0], 32).unwrap();
        let m = Medium::fisher(1.0, 1.0);
        for (c, expect) in [(2.0, 0.0), (2.5, 0.5)] {
            let op = assemble_twisted(&g, &m, 1.0, c, None).unwrap();
            let scale = op.max_abs_entry();
            for v in op.apply(&vec![1.0; 32]) {
                assert!((v - expect).abs() < 1e-12 * scale);
            }
        }
    }

    #[test]
    fn twisted_at_zero_lambda_is_negated_linearization() {
        let g = Grid::periodic(&[1.0], 64).unwrap();
        let m = Medium::kpp_1d(1.0, Coefficient::constant(1.0).with_x1(vec![0.3], vec![0.1]), Coefficient::constant(1.0).with_x1(vec![], vec![0.5])).unwrap();
        let tw = assemble_twisted(&g, &m, 0.0, 3.7, None).unwrap();
        let lin = assemble_linearized(&g, &m, None, &vec![0.0; 64]).unwrap();
        for (i, j, v) in lin.entries() {
            assert_eq!(tw.get(i, j), -v);
        }
    }

    #[test]
    fn twisted_affine_in_c() {
        let g = Grid::periodic(&[1.0], 64).unwrap();
        let m = cosine_medium();
        let a = assemble_twisted(&g, &m, 1.3, 2.2, None).unwrap();
        let b = assemble_twisted(&g, &m, 1.3, 0.0, None).unwrap();
        for (i, j, v) in a.entries() {
            let expect = if i == j { 1.3 * 2.2 } else { 0.0 };
            assert!((v - b.get(i, j) - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_export_matches_matvec_and_cap() {
        let g = Grid::periodic(&[1.0], 64).unwrap();
        let op = assemble_twisted(&g, &cosine_medium(), 0.7, 1.0, None).unwrap();
        let dense = export_dense(&op).unwrap();
        let v: Vec<f64> = (0..64).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let a = dense.matvec(&v);
        let b = op.apply(&v);
        let scale = op.norm_inf();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-13 * scale));
        let zero = export_dense(&DiscreteOperator::zeros(&g)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        let big = Grid::periodic(&[1.0, 1.0], 128).unwrap();
        assert!(matches!(export_dense(&DiscreteOperator::zeros(&big)), Err(DiscretizationError::TooLarge { .. })));
    }

    #[test]
    fn peclet_guard_fires() {
        let g = Grid::periodic(&[1.0], 8).unwrap();
        assert!(matches!(assemble_twisted(&g, &Medium::fisher(1.0, 1.0), 40.0, 0.0, None), Err(DiscretizationError::Peclet { .. })));
    }

    #[test]
    fn window_boundaries() {
        let m = Medium::fisher(1.0, 1.0);
        let g = Grid::line(1.0, 8, 20, BoundaryRule::ZeroFlux).unwrap();
        let d = assemble_divergence(&g, &m, None).unwrap();
        // zero flux conserves mass: column sums vanish
        let ones = vec![1.0; g.len()];
        assert!(d.apply(&ones).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(d.asymmetry(), 0.0);
        let g = Grid::line(1.0, 8, 20, BoundaryRule::ClampToLimits).unwrap();
        let d = assemble_divergence(&g, &m, None).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(g.len() - 1, g.len() - 2), 0.0);
        assert_eq!(d.get(1, 0), 64.0);
        assert!(d.to_tridiag().is_some());
    }

    #[test]
    fn two_dimensional_five_point() {
        let g = Grid::periodic(&[1.0, 2.0], 16).unwrap();
        let m = Medium::new(
            &[1.0, 2.0],
            None,
            crate::medium::DiffusionField::Diagonal([Coefficient::constant(1.0), Coefficient::constant(1.0).with_x2(vec![0.5], vec![])]),
            crate::medium::Nonlinearity::KppLogistic { capacity: Coefficient::constant(1.0) },
        )
        .unwrap();
        let d = assemble_divergence(&g, &m, None).unwrap();
        assert!((0..g.len()).all(|i| d.row(i).count() == 5));
        assert_eq!(d.asymmetry(), 0.0);
        let tw = assemble_twisted(&g, &m, 0.5, 1.0, None).unwrap();
        assert_eq!(tw.orientation(), Orientation::Elliptic);
    }
}
