//! Band-limited interpolation window built from the Fourier transform of the
//! Kaiser-Bessel function, with its design rule and analytic tail bound.
//!
//! The window is
//!
//! ```text
//! w(t) = sinc(δ·B_w·t) · sinc((1−δ)·B_w·sqrt(t² − ρ²T²/4)) / sinc(j(1−δ)·ρ·B_w·T/2)
//! ρ    = sqrt(1 − 1/(B_w·T)²)
//! ```
//!
//! where `sinc(x) = sin(πx)/(πx)` and `sinc(jx) = sinh(πx)/(πx)`. The second
//! factor turns hyperbolic for |t| < ρT/2. Large hyperbolic arguments are
//! handled in the log domain so the window stays finite for B_w·T up to a few
//! hundred.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::tail_series_bound;

const LOG_DOMAIN_THRESHOLD: f64 = 30.0;
const DELTA_MIN: f64 = 1e-6;
const DELTA_MAX: f64 = 0.5;
const MIN_SEARCH_GRID: usize = 4096;

const DELTA_FIT: [f64; 3] = [0.03326, -0.002084, 0.3737e-4];

/// Fitted shape parameter that minimizes the tail sum for a given B_w·T.
///
/// The quadratic fit turns upward past its vertex near B_w·T ≈ 27.9, which
/// would eventually put a zero of the damping sinc inside the accurate
/// interval. Beyond the vertex the fit is held at its minimum.
pub fn optimal_delta(bwt: f64) -> f64 {
    let [c0, c1, c2] = DELTA_FIT;
    let x = bwt.min(-c1 / (2.0 * c2));
    c0 + c1 * x + c2 * x * x
}

/// Fitted tail-sum level 10^(1.086 − 0.6676·B_w·T).
pub fn fitted_epsilon(bwt: f64) -> f64 {
    10f64.powf(1.086 - 0.6676 * bwt)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// ln(sinh(πx)/(πx)) for x ≥ 0.
fn ln_sinhc(x: f64) -> f64 {
    let px = PI * x;
    if px < 1e-4 {
        return px * px / 6.0;
    }
    if px > LOG_DOMAIN_THRESHOLD {
        px + (-(-2.0 * px).exp()).ln_1p() - std::f64::consts::LN_2 - px.ln()
    } else {
        (px.sinh() / px).ln()
    }
}

/// Window parameters together with the derived constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub bw: f64,
    pub period: f64,
    pub t1: f64,
    pub delta: f64,
    pub rho: f64,
    /// Fitted bound on Σ_{p≠0} |w(t+pT)| over R(0,T).
    pub epsilon: f64,
    /// Infimum of w over |t| ≤ T1/2.
    pub delta_w: f64,
    /// Envelope constant: |w(t)| ≤ C / (t·sqrt(t² − ρ²T²/4)) for |t| > ρT/2.
    pub c: f64,
    /// ln of the denominator sinc(j(1−δ)ρB_wT/2).
    ln_den: f64,
}

impl WindowSpec {
    /// Designs the window with δ taken from the fitted optimum.
    pub fn design(bw: f64, period: f64, t1: f64) -> Result<Self> {
        let bwt = bw * period;
        Self::with_delta(bw, period, t1, optimal_delta(bwt).clamp(DELTA_MIN, DELTA_MAX))
    }

    /// Designs the window with an explicit shape parameter δ ∈ (0, 1).
    pub fn with_delta(bw: f64, period: f64, t1: f64, delta: f64) -> Result<Self> {
        if !(bw > 0.0 && period > 0.0 && bw.is_finite() && period.is_finite()) {
            return Err(Error::invalid("window bandwidth and period must be positive"));
        }
        let bwt = bw * period;
        if bwt <= 1.0 {
            return Err(Error::invalid(format!("B_w·T must exceed 1 (got {bwt})")));
        }
        if !(t1 > 0.0 && t1 < period) {
            return Err(Error::invalid(format!("T1 must lie in (0, T) (got T1={t1}, T={period})")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("δ must lie in (0, 1) (got {delta})")));
        }
        let rho = (1.0 - 1.0 / (bwt * bwt)).sqrt();
        let x0 = (1.0 - delta) * rho * bwt / 2.0;
        let ln_den = ln_sinhc(x0);
        let ln_c = -(ln_den + (PI * PI * delta * (1.0 - delta) * bw * bw).ln());
        let mut spec = WindowSpec {
            bw,
            period,
            t1,
            delta,
            rho,
            epsilon: fitted_epsilon(bwt),
            delta_w: f64::NAN,
            c: ln_c.exp(),
            ln_den,
        };
        spec.delta_w = spec.search_minimum(t1 / 2.0);
        Ok(spec)
    }

    pub fn bwt(&self) -> f64 {
        self.bw * self.period
    }

    /// Evaluates w(t). Total, real and even in t.
    pub fn eval(&self, t: f64) -> f64 {
        let first = sinc(self.delta * self.bw * t);
        let half_span = self.rho * self.period / 2.0;
        let s = t * t - half_span * half_span;
        let scale = (1.0 - self.delta) * self.bw;
        if s < 0.0 {
            let y = scale * (-s).sqrt();
            first * (ln_sinhc(y) - self.ln_den).exp()
        } else {
            let y = scale * s.sqrt();
            first * sinc(y) * (-self.ln_den).exp()
        }
    }

    /// Envelope C / (|t|·sqrt(t² − ρ²T²/4)) valid for |t| > ρT/2.
    pub fn envelope(&self, t: f64) -> f64 {
        let t = t.abs();
        let half_span = self.rho * self.period / 2.0;
        self.c / (t * (t * t - half_span * half_span).sqrt())
    }

    /// Analytic upper bound on Σ_{p≠0} |w(t + pT)| for |t| ≤ T/2.
    pub fn tail_bound(&self, t: f64) -> Result<f64> {
        let period = self.period;
        if !(t.abs() <= period / 2.0) {
            return Err(Error::invalid(format!("tail bound needs |t| ≤ T/2 (got t={t})")));
        }
        let u = t / period;
        let b = self.rho / 2.0;
        let near = self.eval(t - period).abs() + self.eval(t + period).abs();
        let far = self.c / (period * period) * (tail_series_bound(2.0 - u, b) + tail_series_bound(2.0 + u, b));
        Ok(near + far)
    }

    /// Largest tail bound over R(0,T), sampled on `points` uniform instants
    /// including both interval ends. Usable as a certified replacement for
    /// the fitted ε in error budgets.
    pub fn certified_epsilon(&self, points: usize) -> f64 {
        let points = points.max(2);
        let half = self.period / 2.0;
        (0..points)
            .map(|i| -half + self.period * i as f64 / (points - 1) as f64)
            .map(|t| self.tail_bound(t.clamp(-half, half)).expect("inside R(0,T)"))
            .fold(0.0, f64::max)
    }

    /// Minimum of w over [0, half_width], using a uniform grid followed by a
    /// golden-section refinement around the best grid point.
    fn search_minimum(&self, half_width: f64) -> f64 {
        let n = MIN_SEARCH_GRID;
        let step = half_width / n as f64;
        let (mut best_i, mut best) = (0usize, f64::INFINITY);
        for i in 0..=n {
            let v = self.eval(step * i as f64);
            if v < best {
                best = v;
                best_i = i;
            }
        }
        let lo = step * best_i.saturating_sub(1) as f64;
        let hi = (step * (best_i + 1) as f64).min(half_width);
        let refined = golden_section_min(|t| self.eval(t), lo, hi, 1e-10);
        best.min(refined)
    }
}

/// Golden-section search for the minimum value of `f` on [lo, hi]; the
/// bracket shrinks until its width falls below `rel_tol` times its scale.
fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let scale = hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        if hi - lo <= rel_tol * scale {
            break;
        }
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2).min(f(lo)).min(f(hi))
}
