//! Bound-constrained minimization of the metamodel by projected gradient
//! descent with Armijo backtracking.
//!
//! Iterates live in box-normalized coordinates `u = x / x_upper`, so one unit
//! of step length spans the whole feasible range of every OD regardless of
//! its demand scale.

use crate::error::{Error, Result};
use crate::metamodel::{LossContext, MetamodelParams};
use crate::network::DemandVector;

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP: f64 = 1e-16;

/// Metamodel value and its gradient with respect to `x`.
pub fn metamodel_value_and_gradient(params: &MetamodelParams, ctx: &LossContext, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (f_a, g_a) = ctx.loss_and_gradient(x)?;
    let b = &params.beta;
    let value = b[0] * f_a + b[1] + b[2..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
    let grad = g_a.iter().zip(&b[2..]).map(|(g, c)| b[0] * g + c).collect();
    Ok((value, grad))
}

/// Outcome of one inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub x: DemandVector,
    pub value: f64,
    /// Metamodel value after each accepted iteration, per start.
    pub histories: Vec<Vec<f64>>,
}

struct Scaled<'a> {
    params: &'a MetamodelParams,
    ctx: &'a LossContext,
    upper: &'a [f64],
}

impl Scaled<'_> {
    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.upper).map(|(v, ub)| (v * ub).clamp(0.0, *ub)).collect()
    }

    fn eval(&self, u: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (m, g) = metamodel_value_and_gradient(self.params, self.ctx, &self.to_x(u))?;
        Ok((m, g.iter().zip(self.upper).map(|(g, ub)| g * ub).collect()))
    }
}

fn projected_step(u: &[f64], g: &[f64], t: f64) -> Vec<f64> {
    u.iter().zip(g).map(|(v, d)| (v - t * d).clamp(0.0, 1.0)).collect()
}

fn descend(s: &Scaled, start: &[f64], max_iters: usize, tol: f64) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let mut u: Vec<f64> = start.iter().zip(s.upper).map(|(x, ub)| (x / ub).clamp(0.0, 1.0)).collect();
    let (mut m, mut g) = s.eval(&u)?;
    let mut history = vec![m];
    for _ in 0..max_iters {
        let pg_norm = projected_step(&u, &g, 1.0)
            .iter()
            .zip(&u)
            .fold(0.0f64, |acc, (p, v)| acc.max((p - v).abs()));
        if pg_norm < tol {
            break;
        }
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut t = 1.0 / gnorm.max(1.0);
        let mut accepted = None;
        while t >= MIN_STEP {
            let cand = projected_step(&u, &g, t);
            let decrease: f64 = g.iter().zip(cand.iter().zip(&u)).map(|(gi, (c, v))| gi * (c - v)).sum();
            let (mc, gc) = s.eval(&cand)?;
            if mc <= m + ARMIJO_C * decrease {
                accepted = Some((cand, mc, gc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, mc, gc)) = accepted else {
            break;
        };
        debug_assert!(mc <= m, "line search increased the metamodel: {m} -> {mc}");
        u = cand;
        m = mc;
        g = gc;
        history.push(m);
    }
    Ok((s.to_x(&u), m, history))
}

/// Minimizes `m(x; beta)` over `0 <= x <= x_upper` from each start and
/// returns the terminal point with the lowest metamodel value.
pub fn solve_inner(
    params: &MetamodelParams,
    ctx: &LossContext,
    starts: &[DemandVector],
    max_iters: usize,
    tol: f64,
) -> Result<InnerReport> {
    if starts.is_empty() {
        return Err(Error::InvalidArgument("solve_inner needs at least one start".into()));
    }
    if params.n_od() != ctx.n_od() {
        return Err(Error::Dimension {
            expected: ctx.n_od(),
            got: params.n_od(),
        });
    }
    let s = Scaled {
        params,
        ctx,
        upper: ctx.upper_bounds(),
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut histories = Vec::with_capacity(starts.len());
    for start in starts {
        if !start.within_bounds(s.upper) {
            return Err(Error::InvalidArgument("inner start outside the bounds".into()));
        }
        let (x, m, h) = descend(&s, start.values(), max_iters, tol)?;
        histories.push(h);
        if best.as_ref().map_or(true, |(_, bm)| m < *bm) {
            best = Some((x, m));
        }
    }
    let (x, value) = best.expect("at least one start");
    Ok(InnerReport {
        x: DemandVector(x),
        value,
        histories,
    })
}
