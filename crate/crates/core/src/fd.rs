//! Urban fundamental diagram: space-mean speed as a function of hourly
//! segment demand,
//!
//! ```text
//! v(q) = v_min + (v_max - v_min) * (1 - (q / q_max)^alpha1)^alpha2
//! ```
//!
//! with its analytic derivative and a least-squares fit of the two shape
//! exponents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative margin kept away from `0` and `q_max` when differentiating.
pub const GRADIENT_EPS: f64 = 1e-6;

/// Exponent box used by [`fit_fd_params`].
pub const ALPHA_BOUNDS: (f64, f64) = (0.1, 10.0);

/// Shape exponents used when no fitted values are available.
pub const DEFAULT_ALPHA1: f64 = 2.0;
pub const DEFAULT_ALPHA2: f64 = 1.0;

/// Minimum speed used when the data gives none (m/s).
pub const DEFAULT_V_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdParams {
    pub v_min: f64,
    pub v_max: f64,
    pub q_max: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl FdParams {
    pub fn is_valid(&self) -> bool {
        self.v_min >= 0.0
            && self.v_min < self.v_max
            && self.q_max > 0.0
            && self.alpha1 > 0.0
            && self.alpha2 > 0.0
    }
}

/// An observed (demand, speed) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdSample {
    pub q: f64,
    pub v: f64,
}

/// Speed at demand `q`. Demand is clamped into `[0, q_max]`, so the result
/// always lies in `[v_min, v_max]`.
pub fn fd_speed(p: &FdParams, q: f64) -> f64 {
    let q = q.clamp(0.0, p.q_max);
    if q == 0.0 {
        return p.v_max;
    }
    if q == p.q_max {
        return p.v_min;
    }
    let r = q / p.q_max;
    let shape = (1.0 - r.powf(p.alpha1)).max(0.0).powf(p.alpha2);
    (p.v_min + (p.v_max - p.v_min) * shape).clamp(p.v_min, p.v_max)
}

/// dv/dq evaluated at `q` clamped into `[eps*q_max, (1-eps)*q_max]`.
/// Never positive.
pub fn fd_speed_gradient(p: &FdParams, q: f64) -> f64 {
    let q = q.clamp(GRADIENT_EPS * p.q_max, (1.0 - GRADIENT_EPS) * p.q_max);
    let r = q / p.q_max;
    let r_a1 = r.powf(p.alpha1);
    let inner = 1.0 - r_a1;
    let d_inner = -p.alpha1 * r_a1 / r / p.q_max;
    let g = (p.v_max - p.v_min) * p.alpha2 * inner.powf(p.alpha2 - 1.0) * d_inner;
    g.min(0.0)
}

fn sse(samples: &[FdSample], p: &FdParams) -> f64 {
    samples
        .iter()
        .map(|s| {
            let e = s.v - fd_speed(p, s.q);
            e * e
        })
        .sum()
}

/// Partial derivatives of the speed with respect to `(alpha1, alpha2)`.
fn alpha_jacobian(p: &FdParams, q: f64) -> (f64, f64) {
    if q <= 0.0 || q >= p.q_max {
        return (0.0, 0.0);
    }
    let r = q / p.q_max;
    let r_a1 = r.powf(p.alpha1);
    let inner = 1.0 - r_a1;
    if inner <= 0.0 {
        return (0.0, 0.0);
    }
    let span = p.v_max - p.v_min;
    let d1 = span * p.alpha2 * inner.powf(p.alpha2 - 1.0) * (-r_a1 * r.ln());
    let d2 = span * inner.powf(p.alpha2) * inner.ln();
    (d1, d2)
}

/// Bounded Levenberg-Marquardt from one start. Only descending steps are
/// accepted, so the returned objective never exceeds the starting one.
fn levenberg_marquardt(samples: &[FdSample], start: FdParams) -> (FdParams, f64) {
    let (lo, hi) = ALPHA_BOUNDS;
    let mut p = start;
    let mut cost = sse(samples, &p);
    let mut mu = 1e-3;
    for _ in 0..500 {
        let (mut h11, mut h12, mut h22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for s in samples {
            let r = s.v - fd_speed(&p, s.q);
            let (j1, j2) = alpha_jacobian(&p, s.q);
            h11 += j1 * j1;
            h12 += j1 * j2;
            h22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        if g1.abs().max(g2.abs()) < 1e-15 {
            break;
        }
        let mut improved = false;
        while mu < 1e12 {
            let a11 = h11 + mu * (h11.max(1e-12));
            let a22 = h22 + mu * (h22.max(1e-12));
            let det = a11 * a22 - h12 * h12;
            if det.abs() < 1e-300 {
                mu *= 4.0;
                continue;
            }
            let d1 = (a22 * g1 - h12 * g2) / det;
            let d2 = (a11 * g2 - h12 * g1) / det;
            let cand = FdParams {
                alpha1: (p.alpha1 + d1).clamp(lo, hi),
                alpha2: (p.alpha2 + d2).clamp(lo, hi),
                ..p
            };
            let c = sse(samples, &cand);
            if c < cost {
                let moved = (cand.alpha1 - p.alpha1).abs() + (cand.alpha2 - p.alpha2).abs();
                p = cand;
                let rel = (cost - c) / cost.max(1e-300);
                cost = c;
                mu = (mu / 3.0).max(1e-12);
                improved = moved > 1e-14 && rel > 1e-16;
                break;
            }
            mu *= 2.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}

/// Fits `(alpha1, alpha2)` to observed samples with `v_min`, `v_max` and
/// `q_max` held fixed, by multi-start local search from a 5x5 log-spaced grid
/// over `[0.1, 10]^2`.
pub fn fit_fd_params(samples: &[FdSample], v_min: f64, v_max: f64, q_max: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut interior: Vec<f64> = samples
        .iter()
        .map(|s| s.q)
        .filter(|&q| q > 0.0 && q < q_max)
        .collect();
    interior.sort_by(f64::total_cmp);
    interior.dedup();
    if interior.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "need 2 distinct demands in (0, {q_max}), got {}",
            interior.len()
        )));
    }

    let (lo, hi) = ALPHA_BOUNDS;
    let grid: Vec<f64> = (0..5)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 4.0).exp())
        .collect();
    let mut best: Option<(FdParams, f64)> = None;
    for &a1 in &grid {
        for &a2 in &grid {
            let start = FdParams {
                v_min,
                v_max,
                q_max,
                alpha1: a1,
                alpha2: a2,
            };
            let (p, c) = levenberg_marquardt(samples, start);
            if best.map_or(true, |(_, bc)| c < bc) {
                best = Some((p, c));
            }
        }
    }
    let (p, _) = best.expect("grid is non-empty");
    Ok((p.alpha1, p.alpha2))
}
