//! Symmetric linear operators used by the grids and the constrained solvers.
//!
//! All operators act on plain coefficient vectors in the Euclidean sense: the
//! stiffness matrix `S` satisfies `u·Su ≈ ∫|∇u|²`, and the weighted inner
//! product is applied separately by the caller.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Compressed sparse row storage of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles the graph Laplacian `Σ_e c_e (u_i − u_j)²` from an edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut diag = vec![0.0; n];
        for &(i, j, c) in edges {
            debug_assert!(i != j && c > 0.0);
            rows[i].push((j, -c));
            rows[j].push((i, -c));
            diag[i] += c;
            diag[j] += c;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            for &(j, v) in row.iter() {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
            diag,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] = acc;
        }
    }

    fn offdiag_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            acc += self.vals[k] * x[self.cols[k]];
        }
        acc
    }
}

/// A real symmetric circulant matrix applied through the FFT.
#[derive(Clone)]
pub struct Circulant {
    n: usize,
    symbol: Vec<f64>,
    first_row: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Circulant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Circulant")
            .field("n", &self.n)
            .field("symbol", &self.symbol)
            .finish()
    }
}

impl Circulant {
    /// `symbol[k]` is the eigenvalue attached to the discrete Fourier index `k`;
    /// it must satisfy `symbol[k] == symbol[n-k]` for the matrix to be real symmetric.
    pub fn from_symbol(symbol: Vec<f64>) -> Self {
        let n = symbol.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let mut buf: Vec<Complex64> = symbol.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        inverse.process(&mut buf);
        let first_row = buf.iter().map(|c| c.re / n as f64).collect();
        Self {
            n,
            symbol,
            first_row,
            forward,
            inverse,
        }
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.symbol) {
            *b *= *s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for (yi, b) in y.iter_mut().zip(&buf) {
            *yi = b.re * scale;
        }
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.first_row[(j + self.n - i) % self.n]
    }
}

/// Stiffness matrix of a grid.
#[derive(Clone, Debug)]
pub enum Stiffness {
    Sparse(CsrMatrix),
    Circulant(Circulant),
}

impl Stiffness {
    pub fn dim(&self) -> usize {
        match self {
            Stiffness::Sparse(m) => m.n,
            Stiffness::Circulant(c) => c.n,
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self {
            Stiffness::Sparse(m) => m.apply(x, y),
            Stiffness::Circulant(c) => c.apply(x, y),
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        y
    }

    pub fn diag(&self) -> Vec<f64> {
        match self {
            Stiffness::Sparse(m) => m.diag.clone(),
            Stiffness::Circulant(c) => vec![c.first_row[0]; c.n],
        }
    }

    /// `Σ_{k≠i} S_ik x_k`.
    pub fn offdiag_dot(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Stiffness::Sparse(m) => m.offdiag_dot(i, x),
            Stiffness::Circulant(c) => {
                let mut acc = 0.0;
                for (k, xk) in x.iter().enumerate() {
                    if k != i {
                        acc += c.entry(i, k) * xk;
                    }
                }
                acc
            }
        }
    }

    /// `x·Sy`.
    pub fn form(&self, x: &[f64], y: &[f64]) -> f64 {
        let sy = self.apply_vec(y);
        dot(x, &sy)
    }
}

/// `S + diag(shift)`, the matrix of every quadratic subproblem solved here.
/// Without a stiffness part the operator is purely diagonal.
#[derive(Clone, Copy, Debug)]
pub struct ShiftedOp<'a> {
    pub stiffness: Option<&'a Stiffness>,
    pub shift: &'a [f64],
}

impl ShiftedOp<'_> {
    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.stiffness {
            Some(s) => s.apply(x, y),
            None => y.iter_mut().for_each(|v| *v = 0.0),
        }
        for ((yi, si), xi) in y.iter_mut().zip(self.shift).zip(x) {
            *yi += si * xi;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        match self.stiffness {
            Some(s) => s.diag().iter().zip(self.shift).map(|(d, s)| d + s).collect(),
            None => self.shift.to_vec(),
        }
    }

    pub fn offdiag_dot(&self, i: usize, x: &[f64]) -> f64 {
        self.stiffness.map_or(0.0, |s| s.offdiag_dot(i, x))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Outcome of a restricted conjugate-gradient solve.
#[derive(Clone, Copy, Debug)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Solves `A_II x_I = b_I` on the nodes where `free` is set, leaving the other
/// entries of `x` untouched (they must already hold zero for a correction solve).
///
/// Convergence is measured in the dual weighted norm `(Σ r_i² / w_i)^½`, which
/// is the L² norm of the residual viewed as a field.
pub fn cg_restricted(
    op: &ShiftedOp<'_>,
    free: &[bool],
    weights: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = op.dim();
    let diag = op.diag();
    let mut ax = vec![0.0; n];
    let mask = |v: &mut [f64]| {
        for (vi, &f) in v.iter_mut().zip(free) {
            if !f {
                *vi = 0.0;
            }
        }
    };
    let dual_norm = |r: &[f64]| -> f64 {
        r.iter()
            .zip(weights)
            .zip(free)
            .filter(|(_, &f)| f)
            .map(|((ri, wi), _)| ri * ri / wi)
            .sum::<f64>()
            .sqrt()
    };

    mask(x);
    op.apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    mask(&mut r);
    let mut res = dual_norm(&r);
    if res <= tol {
        return CgOutcome {
            iterations: 0,
            residual: res,
            converged: true,
        };
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        mask(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return CgOutcome {
                iterations: it,
                residual: res,
                converged: false,
            };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dual_norm(&r);
        if res <= tol {
            return CgOutcome {
                iterations: it,
                residual: res,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        iterations: max_iter,
        residual: res,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circulant_matches_dense_product() {
        let n = 8;
        let symbol: Vec<f64> = (0..n)
            .map(|k| {
                let kk = k.min(n - k) as f64;
                kk * kk + 0.5
            })
            .collect();
        let c = Circulant::from_symbol(symbol);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut y = vec![0.0; n];
        c.apply(&x, &mut y);
        for i in 0..n {
            let dense: f64 = (0..n).map(|j| c.entry(i, j) * x[j]).sum();
            assert!((dense - y[i]).abs() < 1e-12);
            assert!((c.entry(i, (i + 3) % n) - c.entry((i + 3) % n, i)).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_solves_small_path_system() {
        let edges: Vec<_> = (0..9).map(|i| (i, i + 1, 1.0)).collect();
        let s = Stiffness::Sparse(CsrMatrix::from_edges(10, &edges));
        let shift = vec![0.1; 10];
        let op = ShiftedOp {
            stiffness: Some(&s),
            shift: &shift,
        };
        let b: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let mut x = vec![0.0; 10];
        let out = cg_restricted(&op, &[true; 10], &[1.0; 10], &b, &mut x, 1e-12, 100);
        assert!(out.converged);
        let mut ax = vec![0.0; 10];
        op.apply(&x, &mut ax);
        for i in 0..10 {
            assert!((ax[i] - b[i]).abs() < 1e-10);
        }
    }
}
