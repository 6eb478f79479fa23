//! Tridiagonal storage and pre-factored solvers (plain and cyclic).

/// Rows `lower[i]·x[i−1] + diag[i]·x[i] + upper[i]·x[i+1]`. When `cyclic`, `lower[0]`
/// couples to `x[n−1]` and `upper[n−1]` to `x[0]`; otherwise those two entries are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub cyclic: bool,
}

impl Tridiag {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i] * x[i - 1];
            } else if self.cyclic {
                s += self.lower[0] * x[n - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            } else if self.cyclic {
                s += self.upper[n - 1] * x[0];
            }
            y[i] = s;
        }
    }

    /// `s·I − self`.
    pub fn shifted_negated(&self, s: f64) -> Tridiag {
        Tridiag {
            lower: self.lower.iter().map(|v| -v).collect(),
            diag: self.diag.iter().map(|v| s - v).collect(),
            upper: self.upper.iter().map(|v| -v).collect(),
            cyclic: self.cyclic,
        }
    }

    /// Factor for repeated solves. Returns `None` on a zero pivot.
    pub fn factor(&self) -> Option<TridiagFactor> {
        if !self.cyclic {
            return Thomas::new(&self.lower, &self.diag, &self.upper).map(TridiagFactor::Plain);
        }
        let n = self.len();
        assert!(n >= 3, "cyclic systems need at least three unknowns");
        // Sherman–Morrison: A = A' + u vᵀ with u = (γ, 0, …, c_{n−1}), v = (1, 0, …, a₀/γ)
        let gamma = -self.diag[0];
        if gamma == 0.0 {
            return None;
        }
        let alpha = self.lower[0];
        let beta = self.upper[n - 1];
        let mut diag = self.diag.clone();
        diag[0] -= gamma;
        diag[n - 1] -= alpha * beta / gamma;
        let thomas = Thomas::new(&self.lower, &diag, &self.upper)?;
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = beta;
        let mut z = vec![0.0; n];
        thomas.solve(&u, &mut z);
        let denom = 1.0 + z[0] + alpha / gamma * z[n - 1];
        if denom == 0.0 {
            return None;
        }
        Some(TridiagFactor::Cyclic { thomas, z, v_last: alpha / gamma, denom })
    }
}

#[derive(Debug, Clone)]
pub struct Thomas {
    lower: Vec<f64>,
    cp: Vec<f64>,
    inv: Vec<f64>,
}

impl Thomas {
    fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Option<Self> {
        let n = diag.len();
        let mut cp = vec![0.0; n];
        let mut inv = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let l = if i > 0 { lower[i] } else { 0.0 };
            let d = diag[i] - l * prev;
            if d == 0.0 || !d.is_finite() {
                return None;
            }
            inv[i] = 1.0 / d;
            cp[i] = if i + 1 < n { upper[i] * inv[i] } else { 0.0 };
            prev = cp[i];
        }
        Some(Self { lower: lower.to_vec(), cp, inv })
    }

    fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        let n = self.inv.len();
        let mut prev = 0.0;
        for i in 0..n {
            let l = if i > 0 { self.lower[i] } else { 0.0 };
            prev = (rhs[i] - l * prev) * self.inv[i];
            x[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
pub enum TridiagFactor {
    Plain(Thomas),
    Cyclic { thomas: Thomas, z: Vec<f64>, v_last: f64, denom: f64 },
}

impl TridiagFactor {
    pub fn solve(&self, rhs: &[f64], x: &mut [f64]) {
        match self {
            TridiagFactor::Plain(t) => t.solve(rhs, x),
            TridiagFactor::Cyclic { thomas, z, v_last, denom } => {
                thomas.solve(rhs, x);
                let n = x.len();
                let k = (x[0] + v_last * x[n - 1]) / denom;
                for (xi, zi) in x.iter_mut().zip(z) {
                    *xi -= k * zi;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(t: &Tridiag, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        t.matvec(x, &mut y);
        y.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn sample(n: usize, cyclic: bool) -> Tridiag {
        Tridiag {
            lower: (0..n).map(|i| -1.0 - 0.1 * (i % 3) as f64).collect(),
            diag: (0..n).map(|i| 4.0 + 0.2 * (i % 5) as f64).collect(),
            upper: (0..n).map(|i| -0.5 - 0.05 * (i % 7) as f64).collect(),
            cyclic,
        }
    }

    #[test]
    fn plain_and_cyclic_solves() {
        for cyclic in [false, true] {
            let t = sample(37, cyclic);
            let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
            let mut x = vec![0.0; 37];
            t.factor().unwrap().solve(&b, &mut x);
            assert!(residual(&t, &x, &b) < 1e-13, "cyclic={cyclic}");
        }
    }

    #[test]
    fn cyclic_m_matrix_with_equal_bands() {
        // (1 + 2r) on the diagonal, −r off it: the periodic implicit heat step
        let r = 1e4;
        let n = 64;
        let t = Tridiag { lower: vec![-r; n], diag: vec![1.0 + 2.0 * r; n], upper: vec![-r; n], cyclic: true };
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        t.factor().unwrap().solve(&b, &mut x);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }
}
