//! Discrete Fourier helpers for fields on the uniform circle grid.

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Unnormalised forward transform `X_k = Σ_j u_j e^{−ikθ_j}`.
pub fn spectrum(u: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(u.len()));
    fft.process(&mut buf);
    buf
}

/// Inverse of [`spectrum`], keeping the real part.
pub fn synthesize(x: &[Complex64]) -> Vec<f64> {
    let n = x.len();
    let mut buf = x.to_vec();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n));
    fft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Frequency `|k|` carried by FFT bin `j`.
pub fn frequency(j: usize, n: usize) -> usize {
    j.min(n - j)
}

/// Keeps the modes whose frequency satisfies `keep`.
pub fn filter_modes(u: &[f64], keep: impl Fn(usize) -> bool) -> Vec<f64> {
    let n = u.len();
    let mut x = spectrum(u);
    for (j, c) in x.iter_mut().enumerate() {
        if !keep(frequency(j, n)) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    synthesize(&x)
}

/// Coefficients `(a, b)` of `a cos kθ + b sin kθ` in `u`, for `0 < k < n/2`;
/// for `k = 0` returns the mean and `0`.
pub fn mode_pair(u: &[f64], k: usize) -> (f64, f64) {
    let n = u.len();
    assert!(2 * k < n, "mode {k} is not resolved on {n} nodes");
    let x = spectrum(u);
    if k == 0 {
        return (x[0].re / n as f64, 0.0);
    }
    (2.0 * x[k].re / n as f64, -2.0 * x[k].im / n as f64)
}

/// `Some(n)` when `λ = n²` for a nonnegative integer `n`.
pub fn circle_frequency(lambda: f64) -> Option<usize> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return None;
    }
    let n = lambda.sqrt().round();
    if n * n == lambda {
        Some(n as usize)
    } else {
        None
    }
}
