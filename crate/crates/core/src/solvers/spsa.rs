//! Simultaneous perturbation stochastic approximation on the demand box.
//!
//! Gains follow the usual decaying sequences
//! `a_k = a / (A + k + 1)^alpha` and `c_k = c / (k + 1)^gamma`. Perturbed
//! points are clipped onto the box before simulation, as are the iterates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{project, Budgeted, CalibrationTrace, LossOracle};
use crate::error::{Error, Result};
use crate::network::DemandVector;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpsaConfig {
    /// Step gain. `None`: chosen from a pilot gradient so that the first
    /// step moves every OD by 2% of the mean upper bound.
    pub a: Option<f64>,
    /// Perturbation size. `None`: 5% of the mean upper bound.
    pub c: Option<f64>,
    /// Stability constant. `None`: 10% of the number of iterations.
    pub a_stab: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    pub reps_per_eval: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            a: None,
            c: None,
            a_stab: None,
            alpha: 0.602,
            gamma: 0.101,
            seed: 0,
            reps_per_eval: 1,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: Option<f64>| v.map_or(true, |v| v > 0.0);
        if !positive(self.a) || !positive(self.c) || self.a_stab.is_some_and(|v| v < 0.0) {
            return Err(Error::InvalidArgument("SPSA a, c must be > 0 and A >= 0".into()));
        }
        if !(self.alpha > 0.5 && self.alpha <= 1.0) || !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::InvalidArgument(
                "SPSA needs alpha in (0.5, 1] and gamma in (0, 0.5]".into(),
            ));
        }
        if self.reps_per_eval == 0 {
            return Err(Error::InvalidArgument("reps_per_eval must be positive".into()));
        }
        Ok(())
    }
}

/// A simulated perturbation point and its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub x: DemandVector,
    pub loss: f64,
}

/// Two-sided simultaneous-perturbation gradient estimate at `x`:
/// `(L(P(x + c d)) - L(P(x - c d))) / (2 c) * d`, with `P` the box
/// projection. Charges two budget units.
pub fn spsa_gradient_estimate<O: LossOracle>(
    x: &DemandVector,
    c_k: f64,
    delta: &[f64],
    eval: &mut Budgeted<'_, O>,
) -> Result<(Vec<f64>, [Probe; 2])> {
    if !(c_k > 0.0) {
        return Err(Error::InvalidArgument(format!("c_k = {c_k} must be > 0")));
    }
    if delta.len() != x.len() || delta.iter().any(|&d| d != 1.0 && d != -1.0) {
        return Err(Error::InvalidArgument("delta must be a +-1 vector of matching length".into()));
    }
    if eval.budget.remaining() < 2 {
        return Err(Error::BudgetExhausted(eval.budget.max_vectors));
    }
    let upper = eval.upper_bounds().to_vec();
    let shifted = |sign: f64| {
        let mut v: Vec<f64> = x.values().iter().zip(delta).map(|(xi, d)| xi + sign * c_k * d).collect();
        project(&mut v, &upper);
        DemandVector(v)
    };
    let plus = shifted(1.0);
    let minus = shifted(-1.0);
    let (lp, _) = eval.evaluate(&plus)?;
    let (lm, _) = eval.evaluate(&minus)?;
    let scale = (lp - lm) / (2.0 * c_k);
    let g = delta.iter().map(|d| scale * d).collect();
    Ok((
        g,
        [
            Probe { x: plus, loss: lp },
            Probe { x: minus, loss: lm },
        ],
    ))
}

fn rademacher<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect()
}

/// SPSA calibration from `x0` until the budget is spent. The best point is
/// tracked over the perturbation points already simulated, so no extra
/// evaluations are spent on the iterates themselves.
pub fn calibrate_spsa<O: LossOracle>(
    oracle: &mut O,
    x0: &DemandVector,
    budget: usize,
    cfg: &SpsaConfig,
) -> Result<CalibrationTrace> {
    cfg.validate()?;
    if budget < 2 {
        return Err(Error::BudgetTooSmall { needed: 2, got: budget });
    }
    let upper = oracle.upper_bounds().to_vec();
    if !x0.within_bounds(&upper) {
        return Err(Error::InvalidArgument("initial point outside the bounds".into()));
    }
    let n = upper.len();
    let mean_upper = upper.iter().sum::<f64>() / n as f64;
    let c = cfg.c.unwrap_or(0.05 * mean_upper);
    let a_stab = cfg.a_stab.unwrap_or(0.1 * (budget / 2) as f64);

    let mut eval = Budgeted::new(oracle, budget, cfg.seed, cfg.reps_per_eval);
    let mut trace = CalibrationTrace::new("spsa", x0);
    let mut x = x0.clone();

    let a = match cfg.a {
        Some(a) => a,
        None => {
            let mut rng = stream(cfg.seed, Domain::Perturbation, 0);
            let delta = rademacher(&mut rng, n);
            let (g, probes) = spsa_gradient_estimate(&x, c, &delta, &mut eval)?;
            for (k, p) in probes.iter().enumerate() {
                trace.record(0, eval.budget.consumed - 1 + k, &p.x, p.loss, None);
            }
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let target = 0.02 * mean_upper * (a_stab + 1.0).powf(cfg.alpha);
            if gmax > 0.0 {
                target / gmax
            } else {
                target
            }
        }
    };

    let mut k = 0usize;
    while eval.budget.remaining() >= 2 {
        let ak = a / (a_stab + k as f64 + 1.0).powf(cfg.alpha);
        let ck = c / (k as f64 + 1.0).powf(cfg.gamma);
        let mut rng = stream(cfg.seed, Domain::Perturbation, k as u64 + 1);
        let delta = rademacher(&mut rng, n);
        let (g, probes) = spsa_gradient_estimate(&x, ck, &delta, &mut eval)?;
        for (j, p) in probes.iter().enumerate() {
            trace.record(k + 1, eval.budget.consumed - 1 + j, &p.x, p.loss, None);
        }
        let mut next: Vec<f64> = x.values().iter().zip(&g).map(|(xi, gi)| xi - ak * gi).collect();
        project(&mut next, &upper);
        x = DemandVector(next);
        k += 1;
    }
    Ok(trace)
}
