use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{solve_inner, uniform_point, Budgeted, CalibrationTrace, LossOracle};
use crate::error::{Error, Result};
use crate::metamodel::{fit_metamodel_scaled, FitConfig, LossContext, MetamodelParams, SampleSet, SamplePoint};
use crate::network::DemandVector;
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Uniform random samples simulated next to the initial point.
    pub n_initial_random: usize,
    /// Inner solver starts per epoch: the current best plus random points.
    pub inner_starts: usize,
    pub inner_max_iters: usize,
    /// Projected-gradient max-norm (box-normalized) at which the inner solve stops.
    pub inner_tol: f64,
    /// Probability of replacing the inner solution by a random point.
    pub exploration_prob: f64,
    pub reps_per_eval: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_initial_random: 5,
            inner_starts: 5,
            inner_max_iters: 200,
            inner_tol: 1e-6,
            exploration_prob: 0.2,
            reps_per_eval: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_starts == 0 || self.inner_max_iters == 0 || self.reps_per_eval == 0 {
            return Err(Error::InvalidArgument(
                "inner_starts, inner_max_iters and reps_per_eval must be positive".into(),
            ));
        }
        if !(self.inner_tol > 0.0) || !(0.0..=1.0).contains(&self.exploration_prob) {
            return Err(Error::InvalidArgument(
                "inner_tol must be > 0 and exploration_prob in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Metamodel simulation-optimization loop.
///
/// Simulates `x0` and `n_initial_random` uniform points, then until the
/// budget is spent: fits the metamodel around the current best point,
/// minimizes it from the best point and random starts, optionally swaps the
/// result for a random point, and simulates the candidate. A candidate
/// becomes the new best only if its simulated loss is strictly lower.
pub fn calibrate_metamodel<O: LossOracle>(
    oracle: &mut O,
    ctx: &LossContext,
    x0: &DemandVector,
    budget: usize,
    opt: &OptimizerConfig,
    fit: &FitConfig,
) -> Result<CalibrationTrace> {
    opt.validate()?;
    let needed = opt.n_initial_random + 1;
    if budget < needed {
        return Err(Error::BudgetTooSmall { needed, got: budget });
    }
    let upper = oracle.upper_bounds().to_vec();
    if !x0.within_bounds(&upper) {
        return Err(Error::InvalidArgument("initial point outside the bounds".into()));
    }
    let mut eval = Budgeted::new(oracle, budget, opt.seed, opt.reps_per_eval);
    let mut rng = stream(opt.seed, Domain::Search, 0);
    let mut samples = SampleSet::new();
    let mut trace = CalibrationTrace::new("metamodel", x0);

    let mut init_rng = stream(opt.seed, Domain::InitialPoint, 1);
    let mut initial = vec![x0.clone()];
    while initial.len() < needed {
        initial.push(uniform_point(&mut init_rng, &upper));
    }
    for x in initial {
        if samples.contains(x.values()) {
            continue;
        }
        let (loss, seeds) = eval.evaluate(&x)?;
        let f_a = ctx.loss(x.values())?;
        trace.record(0, eval.budget.consumed, &x, loss, None);
        samples.insert(SamplePoint {
            x,
            loss,
            f_a,
            seeds_used: seeds,
        });
    }

    let mut epoch = 0;
    while eval.budget.remaining() > 0 {
        epoch += 1;
        let best = trace.best();
        let mut params = fit_metamodel_scaled(&samples, &best, &upper, fit)?;
        params.epoch = epoch;

        let mut starts = vec![best];
        while starts.len() < opt.inner_starts {
            starts.push(uniform_point(&mut rng, &upper));
        }
        let mut candidate = solve_inner(&params, ctx, &starts, opt.inner_max_iters, opt.inner_tol)?.x;
        if rng.random_bool(opt.exploration_prob) {
            candidate = uniform_point(&mut rng, &upper);
        }
        while samples.contains(candidate.values()) {
            candidate = uniform_point(&mut rng, &upper);
        }

        let (loss, seeds) = eval.evaluate(&candidate)?;
        let f_a = ctx.loss(candidate.values())?;
        trace.record(epoch, eval.budget.consumed, &candidate, loss, Some(params.beta.clone()));
        samples.insert(SamplePoint {
            x: candidate,
            loss,
            f_a,
            seeds_used: seeds,
        });
    }
    Ok(trace)
}

/// Snapshot of the coefficients recorded for every proposal of a trace.
pub fn beta_snapshots(trace: &CalibrationTrace) -> Vec<MetamodelParams> {
    trace
        .entries
        .iter()
        .filter_map(|e| {
            e.beta.as_ref().map(|b| MetamodelParams {
                beta: b.clone(),
                epoch: e.epoch,
            })
        })
        .collect()
}
