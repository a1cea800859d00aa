//! Simulation-based calibration loops.
//!
//! Both algorithms talk to the simulator through a [`LossOracle`] wrapped in
//! a [`Budgeted`] guard, so every simulated demand vector is bounds-checked
//! and charged exactly one budget unit.

mod inner;
mod metamodel_loop;
mod spsa;

pub use inner::{metamodel_value_and_gradient, solve_inner, InnerReport};
pub use metamodel_loop::{beta_snapshots, calibrate_metamodel, OptimizerConfig};
pub use spsa::{calibrate_spsa, spsa_gradient_estimate, SpsaConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::SegmentSet;
use crate::metamodel::simulated_loss;
use crate::network::DemandVector;
use crate::rng::{derive_seed, Domain};
use crate::simulator::{replication_seeds, GroundTruth, Simulator};

/// Demand vectors simulated per calibration run.
pub const DEFAULT_BUDGET: usize = 250;

/// A black-box loss over demand vectors.
pub trait LossOracle {
    fn upper_bounds(&self) -> &[f64];

    /// Loss at `x` averaged over the replications in `seeds`.
    fn evaluate(&mut self, x: &DemandVector, seeds: &[u64]) -> Result<f64>;
}

/// Weighted speed MSE of the simulator against ground truth.
pub struct SimulationOracle<'a> {
    sim: &'a Simulator<'a>,
    gt: &'a GroundTruth,
    weights: &'a [f64],
    set: &'a SegmentSet,
    upper: Vec<f64>,
}

impl<'a> SimulationOracle<'a> {
    pub fn new(sim: &'a Simulator<'a>, gt: &'a GroundTruth, weights: &'a [f64], set: &'a SegmentSet) -> Self {
        Self {
            upper: sim.network().upper_bounds(),
            sim,
            gt,
            weights,
            set,
        }
    }
}

impl LossOracle for SimulationOracle<'_> {
    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn evaluate(&mut self, x: &DemandVector, seeds: &[u64]) -> Result<f64> {
        let r = self.sim.simulate_expected(x, seeds)?;
        simulated_loss(&r, self.gt, self.weights, self.set)
    }
}

/// Noise-free `|x - target|^2 / n` on a box; stands in for the simulator in
/// optimizer tests.
#[derive(Debug, Clone)]
pub struct QuadraticOracle {
    pub target: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LossOracle for QuadraticOracle {
    fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    fn evaluate(&mut self, x: &DemandVector, _seeds: &[u64]) -> Result<f64> {
        let n = self.target.len() as f64;
        Ok(x.values()
            .iter()
            .zip(&self.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluationBudget {
    pub max_vectors: usize,
    pub consumed: usize,
}

impl EvaluationBudget {
    pub fn new(max_vectors: usize) -> Self {
        Self {
            max_vectors,
            consumed: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.max_vectors - self.consumed
    }

    pub fn charge(&mut self) -> Result<()> {
        if self.consumed >= self.max_vectors {
            return Err(Error::BudgetExhausted(self.max_vectors));
        }
        self.consumed += 1;
        Ok(())
    }
}

/// Oracle guard: bounds check, then budget charge, then evaluation.
pub struct Budgeted<'o, O: LossOracle> {
    oracle: &'o mut O,
    pub budget: EvaluationBudget,
    run_seed: u64,
    reps: usize,
}

impl<'o, O: LossOracle> Budgeted<'o, O> {
    pub fn new(oracle: &'o mut O, max_vectors: usize, run_seed: u64, reps: usize) -> Self {
        Self {
            oracle,
            budget: EvaluationBudget::new(max_vectors),
            run_seed,
            reps: reps.max(1),
        }
    }

    pub fn upper_bounds(&self) -> &[f64] {
        self.oracle.upper_bounds()
    }

    /// Evaluates `x` with fresh replication seeds derived from the run seed
    /// and the evaluation's position in the run.
    pub fn evaluate(&mut self, x: &DemandVector) -> Result<(f64, Vec<u64>)> {
        let upper = self.oracle.upper_bounds();
        if x.len() != upper.len() {
            return Err(Error::Dimension {
                expected: upper.len(),
                got: x.len(),
            });
        }
        for (z, (&v, &u)) in x.values().iter().zip(upper).enumerate() {
            if !(v >= 0.0 && v <= u) {
                return Err(Error::Bounds { od: z + 1, value: v, upper: u });
            }
        }
        self.budget.charge()?;
        let base = derive_seed(&[self.run_seed, Domain::EvalSeed as u64, self.budget.consumed as u64]);
        let seeds = replication_seeds(base, self.reps);
        let loss = self.oracle.evaluate(x, &seeds)?;
        Ok((loss, seeds))
    }
}

/// One simulated demand vector in a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 0 for initialization (random samples or SPSA pilot), then 1, 2, ...
    pub epoch: usize,
    /// Budget consumed after this evaluation.
    pub consumed: usize,
    pub candidate_loss: f64,
    pub accepted: bool,
    pub best_loss: f64,
    pub candidate: Vec<f64>,
    /// Metamodel coefficients used to propose the candidate.
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTrace {
    pub algorithm: String,
    pub initial: Vec<f64>,
    pub entries: Vec<TraceEntry>,
    pub best_x: Vec<f64>,
    pub best_loss: f64,
}

impl CalibrationTrace {
    fn new(algorithm: &str, initial: &DemandVector) -> Self {
        Self {
            algorithm: algorithm.into(),
            initial: initial.values().to_vec(),
            entries: Vec::new(),
            best_x: initial.values().to_vec(),
            best_loss: f64::INFINITY,
        }
    }

    /// Records an evaluation; returns whether it improved the best loss.
    fn record(&mut self, epoch: usize, consumed: usize, x: &DemandVector, loss: f64, beta: Option<Vec<f64>>) -> bool {
        let accepted = loss < self.best_loss;
        if accepted {
            self.best_loss = loss;
            self.best_x = x.values().to_vec();
        }
        self.entries.push(TraceEntry {
            epoch,
            consumed,
            candidate_loss: loss,
            accepted,
            best_loss: self.best_loss,
            candidate: x.values().to_vec(),
            beta,
        });
        accepted
    }

    pub fn consumed(&self) -> usize {
        self.entries.last().map_or(0, |e| e.consumed)
    }

    pub fn best(&self) -> DemandVector {
        DemandVector(self.best_x.clone())
    }
}

pub(crate) fn uniform_point<R: Rng>(rng: &mut R, upper: &[f64]) -> DemandVector {
    DemandVector(upper.iter().map(|&u| rng.random_range(0.0..=u)).collect())
}

/// Clip onto `[0, upper]`.
pub(crate) fn project(x: &mut [f64], upper: &[f64]) {
    for (v, &u) in x.iter_mut().zip(upper) {
        *v = v.clamp(0.0, u);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_refuses_overdraw() {
        let mut b = EvaluationBudget::new(2);
        b.charge().unwrap();
        b.charge().unwrap();
        assert!(matches!(b.charge(), Err(Error::BudgetExhausted(2))));
        assert_eq!(b.consumed, 2);
    }

    #[test]
    fn budgeted_rejects_infeasible_without_charging() {
        let mut q = QuadraticOracle {
            target: vec![1.0],
            upper: vec![2.0],
        };
        let mut b = Budgeted::new(&mut q, 3, 0, 1);
        assert!(matches!(b.evaluate(&DemandVector(vec![2.5])), Err(Error::Bounds { .. })));
        assert_eq!(b.budget.consumed, 0);
        let (l, seeds) = b.evaluate(&DemandVector(vec![2.0])).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(seeds.len(), 1);
        assert_eq!(b.budget.consumed, 1);
    }

    #[test]
    fn trace_best_is_monotone() {
        let mut t = CalibrationTrace::new("x", &DemandVector(vec![0.0]));
        for (k, l) in [3.0, 5.0, 1.0, 1.0, 2.0].into_iter().enumerate() {
            t.record(0, k + 1, &DemandVector(vec![k as f64]), l, None);
        }
        let acc: Vec<bool> = t.entries.iter().map(|e| e.accepted).collect();
        assert_eq!(acc, vec![true, false, true, false, false]);
        assert!(t.entries.windows(2).all(|w| w[1].best_loss <= w[0].best_loss));
        assert_eq!(t.best_x, vec![2.0]);
    }
}
