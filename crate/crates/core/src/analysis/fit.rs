use serde::{Deserialize, Serialize};

use crate::error::{Result, VilabError};
use crate::flow::Trajectory;
use crate::geometry::{Field, Grid};

/// Distances below this are treated as roundoff and dropped from fits.
pub const DIST_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `d ≈ C e^{−s t}`.
    Exponential,
    /// `d ≈ C t^{−s}`.
    Power,
    /// `d ≈ C (ln(t/t₀))^{−s}` with the time scale `t₀` fitted.
    Logarithmic,
}

impl RateModel {
    pub const ALL: [RateModel; 3] = [RateModel::Exponential, RateModel::Power, RateModel::Logarithmic];

    fn abscissa(self, t: f64, log_t0: f64) -> f64 {
        match self {
            RateModel::Exponential => t,
            RateModel::Power => t.ln(),
            RateModel::Logarithmic => (t.ln() - log_t0).ln(),
        }
    }
}

/// Search range for `ln(t_min/t₀)` in the logarithmic model.
const LOG_T0_SPAN: (f64, f64) = (1e-3, 40.0);

fn fit_model(model: RateModel, t: &[f64], y: &[f64]) -> Result<(LineFit, Option<f64>)> {
    let line = |lt0: f64| {
        let x: Vec<f64> = t.iter().map(|t| model.abscissa(*t, lt0)).collect();
        fit_line(&x, y)
    };
    if model != RateModel::Logarithmic {
        return Ok((line(0.0)?, None));
    }
    // profile over ln t0: coarse scan, then golden section around the best cell
    let top = t.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let (lo, hi) = (top - LOG_T0_SPAN.1, top - LOG_T0_SPAN.0);
    let m = 400;
    let at = |i: usize| lo + (hi - lo) * i as f64 / m as f64;
    let mut best = (f64::INFINITY, 0);
    for i in 0..=m {
        let r = line(at(i))?.rms;
        if r < best.0 {
            best = (r, i);
        }
    }
    let (mut a, mut b) = (at(best.1.saturating_sub(1)), at((best.1 + 1).min(m)));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (line(c)?.rms, line(d)?.rms);
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = line(c)?.rms;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = line(d)?.rms;
        }
    }
    let lt0 = if fc < fd { c } else { d };
    let l = line(lt0)?;
    if l.rms <= best.0 {
        Ok((l, Some(lt0)))
    } else {
        Ok((line(at(best.1))?, Some(at(best.1))))
    }
}

/// Least-squares line through `(x_i, y_i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    /// Root mean square residual.
    pub rms: f64,
    pub r_squared: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(VilabError::Degenerate(format!("a line fit needs at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > 0.0) {
        return Err(VilabError::Degenerate("all abscissae are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_se = if n > 2 {
        (sse / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(LineFit {
        intercept,
        slope,
        slope_se,
        rms: (sse / nf).sqrt(),
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub model: RateModel,
    /// `[ln C, s]` for the model's `d ≈ C·profile(t)^{−s}` form.
    pub params: [f64; 2],
    /// Fitted `ln t₀` of the logarithmic model.
    pub log_t0: Option<f64>,
    /// RMS of the fit in `ln d`.
    pub residual: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub n_points: usize,
}

impl RateFit {
    /// The fitted rate or exponent `s`.
    pub fn rate(&self) -> f64 {
        self.params[1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFits {
    pub best: RateFit,
    /// One fit per model, in the order of [`RateModel::ALL`].
    pub fits: Vec<RateFit>,
    /// `γ/(1 − 2γ)` when a `γ < ½` was supplied.
    pub predicted_power_exponent: Option<f64>,
    /// `|s_power − prediction| / prediction`.
    pub power_exponent_rel_err: Option<f64>,
}

impl RateFits {
    pub fn get(&self, model: RateModel) -> &RateFit {
        self.fits.iter().find(|f| f.model == model).expect("all models are fitted")
    }
}

/// Fits the three decay models to `ln d(t)` on `window`.
///
/// The default window is the last decade of time, `[t_end/10, t_end]`.
pub fn fit_rate_series(
    times: &[f64],
    dists: &[f64],
    window: Option<(f64, f64)>,
    gamma: Option<f64>,
) -> Result<RateFits> {
    fit_rate_series_floor(times, dists, window, gamma, DIST_FLOOR)
}

/// [`fit_rate_series`] with an explicit distance floor, for series that keep
/// full relative precision (deviation flows).
pub fn fit_rate_series_floor(
    times: &[f64],
    dists: &[f64],
    window: Option<(f64, f64)>,
    gamma: Option<f64>,
    floor: f64,
) -> Result<RateFits> {
    if times.len() != dists.len() || times.is_empty() {
        return Err(VilabError::Degenerate("times and distances must be nonempty and aligned".into()));
    }
    let t_end = *times.last().unwrap();
    let spread = {
        let pos: Vec<f64> = dists.iter().copied().filter(|d| *d > 0.0).collect();
        let hi = pos.iter().copied().fold(0.0, f64::max);
        let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    };
    if !(t_end >= 10.0 || spread >= 100.0) {
        return Err(VilabError::Degenerate(format!(
            "series too short for a rate fit: t_end = {t_end}, distance spread {spread:.3e}"
        )));
    }
    let (a, b) = window.unwrap_or((t_end / 10.0, t_end));
    if !(a < b) || b > t_end + 1e-12 * t_end.abs() || a < times[0] - 1e-12 {
        return Err(VilabError::InvalidParameter(format!(
            "window [{a}, {b}] is not inside the series support [{}, {t_end}]",
            times[0]
        )));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(dists)
        .filter(|(t, _)| **t >= a && **t <= b && **t > 0.0)
        .map(|(t, d)| (*t, *d))
        .collect();
    let kept: Vec<(f64, f64)> = pts.iter().copied().filter(|(_, d)| *d >= floor && *d > 0.0).collect();
    if kept.len() < 3 {
        return Err(VilabError::Degenerate(format!(
            "distance below the numerical floor {floor:e} over the window [{a}, {b}]"
        )));
    }
    let y: Vec<f64> = kept.iter().map(|(_, d)| d.ln()).collect();
    let t: Vec<f64> = kept.iter().map(|(t, _)| *t).collect();
    let mut fits = Vec::with_capacity(3);
    for model in RateModel::ALL {
        let (l, log_t0) = fit_model(model, &t, &y)?;
        fits.push(RateFit {
            model,
            params: [l.intercept, -l.slope],
            log_t0,
            residual: l.rms,
            r_squared: l.r_squared,
            window: (a, b),
            n_points: kept.len(),
        });
    }
    let best = *fits
        .iter()
        .min_by(|p, q| p.residual.total_cmp(&q.residual))
        .unwrap();
    let predicted = match gamma {
        Some(g) if g > 0.0 && g < 0.5 => Some(decay_exponent(g)),
        _ => None,
    };
    let rel = predicted.map(|p| (fits[1].rate() - p).abs() / p);
    Ok(RateFits {
        best,
        fits,
        predicted_power_exponent: predicted,
        power_exponent_rel_err: rel,
    })
}

/// [`fit_rate_series`] on the L² distances of a trajectory to `target`.
pub fn fit_rate(
    grid: &Grid,
    traj: &Trajectory,
    target: &Field,
    window: Option<(f64, f64)>,
    gamma: Option<f64>,
) -> Result<RateFits> {
    let d: Vec<f64> = traj.states.iter().map(|u| grid.norm(&u.sub(target))).collect();
    fit_rate_series(&traj.times, &d, window, gamma)
}

/// Power-law exponent `γ/(1 − 2γ)` of the decay under a Łojasiewicz exponent `γ < ½`.
pub fn decay_exponent(gamma: f64) -> f64 {
    gamma / (1.0 - 2.0 * gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    /// 95% half-width from the slope's standard error.
    pub half_width: f64,
    /// Slope of `ln R` against `ln(gap)`.
    pub slope: f64,
    pub n_pairs: usize,
}

/// `γ̂ = 1 − slope` of `ln ‖∇F‖_K` regressed on `ln(F − F(φ))`, inverting
/// `gap^{1−γ} ≲ R`.
pub fn estimate_gamma(pairs: &[(f64, f64)]) -> Result<GammaEstimate> {
    let good: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|(g, r)| *g > 0.0 && *r > 0.0 && g.is_finite() && r.is_finite())
        .collect();
    if good.len() < 10 {
        return Err(VilabError::Degenerate(format!(
            "gamma estimation needs at least 10 positive pairs, got {}",
            good.len()
        )));
    }
    let x: Vec<f64> = good.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = good.iter().map(|p| p.1.ln()).collect();
    let l = fit_line(&x, &y)?;
    Ok(GammaEstimate {
        gamma: 1.0 - l.slope,
        half_width: 1.96 * l.slope_se,
        slope: l.slope,
        n_pairs: good.len(),
    })
}
