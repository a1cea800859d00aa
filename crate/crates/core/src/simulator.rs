//! Stochastic synthetic traffic simulator.
//!
//! The simulator maps an OD demand vector to per-segment space-mean speeds
//! and hourly counts. It reuses the fundamental diagram, but deviates from
//! the analytical model in three controlled ways: per-segment perturbation of
//! the FD exponents, spillback from the dominant downstream segment, and
//! random demand and speed noise. With all three switched off it reproduces
//! the analytical pipeline `fd_speed(A x)`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{fd_speed, FdParams};
use crate::network::{AssignmentMatrix, DemandVector, Network};
use crate::rng::{derive_seed, stream, Domain};

/// Lower and upper fraction of `x_upper` for synthetic ground-truth demands.
pub const GT_DEMAND_RANGE: (f64, f64) = (0.3, 0.8);

/// Replications used to build ground truth unless configured otherwise.
pub const DEFAULT_GT_REPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandNoise {
    Poisson,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub demand_noise: DemandNoise,
    /// Lognormal sigma of the multiplicative speed noise.
    pub speed_noise_sigma: f64,
    /// Half-width of the uniform multiplicative perturbation of each
    /// segment's FD exponents.
    pub param_bias_scale: f64,
    /// Fraction of the dominant downstream segment's demand added to a
    /// segment's effective demand.
    pub spillback_coupling: f64,
    pub bias_seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            demand_noise: DemandNoise::Poisson,
            speed_noise_sigma: 0.05,
            param_bias_scale: 0.15,
            spillback_coupling: 0.2,
            bias_seed: 0,
        }
    }
}

impl SimulatorConfig {
    /// Every noise and bias switch off: the simulator equals the analytical model.
    pub fn noise_free() -> Self {
        Self {
            demand_noise: DemandNoise::None,
            speed_noise_sigma: 0.0,
            param_bias_scale: 0.0,
            spillback_coupling: 0.0,
            bias_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.speed_noise_sigma >= 0.0 && self.speed_noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "speed_noise_sigma = {} must be >= 0",
                self.speed_noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.spillback_coupling) {
            return Err(Error::InvalidArgument(format!(
                "spillback_coupling = {} must be in [0, 1]",
                self.spillback_coupling
            )));
        }
        if !(0.0..1.0).contains(&self.param_bias_scale) {
            return Err(Error::InvalidArgument(format!(
                "param_bias_scale = {} must be in [0, 1)",
                self.param_bias_scale
            )));
        }
        Ok(())
    }
}

/// Per-segment output of one or more replications at one demand vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Space-mean speed per segment (m/s), averaged over replications.
    pub speeds: Vec<f64>,
    /// Hourly count per segment, averaged over replications.
    pub counts: Vec<f64>,
    /// Per-replication speeds, outer index = replication.
    pub replicate_speeds: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
    pub demand: DemandVector,
}

/// A network bound to a simulator configuration, with the per-segment
/// biased FD parameters drawn once.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    net: &'a Network,
    assignment: AssignmentMatrix,
    cfg: SimulatorConfig,
    biased: Vec<FdParams>,
    // (od index, route index, position of segment on route) for every route
    // visit of each segment
    visits: Vec<Vec<(usize, usize, usize)>>,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a Network, cfg: &SimulatorConfig) -> Result<Self> {
        cfg.validate()?;
        let biased = net
            .segments()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut p = s.fd_params();
                if cfg.param_bias_scale > 0.0 {
                    let mut rng = stream(cfg.bias_seed, Domain::ParamBias, i as u64);
                    let u1: f64 = rng.random_range(-1.0..=1.0);
                    let u2: f64 = rng.random_range(-1.0..=1.0);
                    p.alpha1 *= 1.0 + cfg.param_bias_scale * u1;
                    p.alpha2 *= 1.0 + cfg.param_bias_scale * u2;
                }
                p
            })
            .collect();
        let mut visits = vec![Vec::new(); net.n_segments()];
        for (z, od) in net.od_pairs().iter().enumerate() {
            for (r, route) in od.routes.iter().enumerate() {
                for (pos, &i) in route.segments.iter().enumerate() {
                    visits[i].push((z, r, pos));
                }
            }
        }
        Ok(Self {
            net,
            assignment: AssignmentMatrix::build(net),
            cfg: cfg.clone(),
            biased,
            visits,
        })
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    pub fn assignment(&self) -> &AssignmentMatrix {
        &self.assignment
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.cfg
    }

    /// FD parameters after the configured bias perturbation.
    pub fn biased_params(&self) -> &[FdParams] {
        &self.biased
    }

    /// Realized flow per (OD, route).
    fn route_flows(&self, x: &[f64], seed: u64) -> Vec<Vec<f64>> {
        self.net
            .od_pairs()
            .iter()
            .enumerate()
            .map(|(z, od)| match self.cfg.demand_noise {
                DemandNoise::None => od.routes.iter().map(|r| x[z] * r.probability).collect(),
                DemandNoise::Poisson => {
                    let demand = if x[z] > 0.0 {
                        let mut rng = stream(seed, Domain::OdDemand, z as u64);
                        Poisson::new(x[z]).expect("positive finite rate").sample(&mut rng) as u64
                    } else {
                        0
                    };
                    let mut rng = stream(seed, Domain::RouteSplit, z as u64);
                    let mut left = demand;
                    let mut mass = 1.0;
                    let last = od.routes.len() - 1;
                    od.routes
                        .iter()
                        .enumerate()
                        .map(|(r, route)| {
                            let k = if r == last || left == 0 {
                                left
                            } else {
                                let p = (route.probability / mass).clamp(0.0, 1.0);
                                Binomial::new(left, p).expect("p in [0, 1]").sample(&mut rng)
                            };
                            left -= k;
                            mass -= route.probability;
                            k as f64
                        })
                        .collect()
                }
            })
            .collect()
    }

    /// Downstream segment used for spillback: the next segment on the route
    /// carrying the most flow through `i`. Ties go to the lowest downstream
    /// segment id; a route ending at `i` has no downstream segment and loses
    /// ties.
    fn downstream(&self, i: usize, flows: &[Vec<f64>]) -> Option<usize> {
        let segs = self.net.segments();
        let mut best: Option<(f64, Option<usize>)> = None;
        for &(z, r, pos) in &self.visits[i] {
            let f = flows[z][r];
            let next = self.net.od_pairs()[z].routes[r].segments.get(pos + 1).copied();
            let better = match best {
                None => true,
                Some((bf, bn)) => {
                    f > bf
                        || (f == bf
                            && match (next, bn) {
                                (Some(a), Some(b)) => segs[a].id < segs[b].id,
                                (Some(_), None) => true,
                                _ => false,
                            })
                }
            };
            if better {
                best = Some((f, next));
            }
        }
        best.and_then(|(_, n)| n)
    }

    /// One replication at `x` under `seed`.
    pub fn simulate(&self, x: &DemandVector, seed: u64) -> Result<SimulationResult> {
        x.check_bounds(self.net)?;
        let xv = x.values();
        let flows = self.route_flows(xv, seed);

        let counts = match self.cfg.demand_noise {
            DemandNoise::None => self.assignment.map_demand(xv)?,
            DemandNoise::Poisson => {
                let mut q = vec![0.0; self.net.n_segments()];
                for (od, f) in self.net.od_pairs().iter().zip(&flows) {
                    for (route, &fr) in od.routes.iter().zip(f) {
                        for &i in &route.segments {
                            q[i] += fr;
                        }
                    }
                }
                q
            }
        };

        let sigma = self.cfg.speed_noise_sigma;
        let speeds = (0..self.net.n_segments())
            .map(|i| {
                let p = &self.biased[i];
                let mut q_eff = counts[i];
                if self.cfg.spillback_coupling > 0.0 {
                    if let Some(d) = self.downstream(i, &flows) {
                        q_eff += self.cfg.spillback_coupling * counts[d];
                    }
                }
                let q_eff = q_eff.clamp(0.0, p.q_max);
                let mut v = fd_speed(p, q_eff);
                if sigma > 0.0 {
                    let mut rng = stream(seed, Domain::SpeedNoise, i as u64);
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    v *= (sigma * xi - 0.5 * sigma * sigma).exp();
                }
                v.clamp(0.0, p.v_max)
            })
            .collect::<Vec<_>>();

        Ok(SimulationResult {
            replicate_speeds: vec![speeds.clone()],
            speeds,
            counts,
            seeds: vec![seed],
            demand: x.clone(),
        })
    }

    /// Replication average over `seeds`, reduced in seed order.
    pub fn simulate_expected(&self, x: &DemandVector, seeds: &[u64]) -> Result<SimulationResult> {
        if seeds.is_empty() {
            return Err(Error::EmptySeeds);
        }
        let n = self.net.n_segments();
        let mut speed_sum = vec![0.0; n];
        let mut count_sum = vec![0.0; n];
        let mut reps = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let r = self.simulate(x, seed)?;
            for i in 0..n {
                speed_sum[i] += r.speeds[i];
                count_sum[i] += r.counts[i];
            }
            reps.push(r.speeds);
        }
        let k = seeds.len() as f64;
        Ok(SimulationResult {
            speeds: speed_sum.into_iter().map(|s| s / k).collect(),
            counts: count_sum.into_iter().map(|s| s / k).collect(),
            replicate_speeds: reps,
            seeds: seeds.to_vec(),
            demand: x.clone(),
        })
    }
}

/// One replication. Deterministic in `(net, x, seed, cfg)`.
pub fn simulate(net: &Network, x: &DemandVector, seed: u64, cfg: &SimulatorConfig) -> Result<SimulationResult> {
    Simulator::new(net, cfg)?.simulate(x, seed)
}

pub fn simulate_expected(
    net: &Network,
    x: &DemandVector,
    seeds: &[u64],
    cfg: &SimulatorConfig,
) -> Result<SimulationResult> {
    Simulator::new(net, cfg)?.simulate_expected(x, seeds)
}

/// Seeds of `n` replications derived from a base seed: replication `r` uses
/// `derive_seed([base, r])`.
pub fn replication_seeds(base: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|r| derive_seed(&[base, r])).collect()
}

/// Synthetic ground truth: per-segment replication means plus the raw
/// replication speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Segment ids in network order.
    pub segment_ids: Vec<String>,
    pub speeds: Vec<f64>,
    pub counts: Vec<f64>,
    /// Per segment, one speed per replication.
    pub replicate_speeds: Vec<Vec<f64>>,
    pub n_replications: usize,
    /// Known only to the generator. Never written next to the speed table.
    pub gt_demand: Option<DemandVector>,
}

impl GroundTruth {
    pub fn from_result(net: &Network, result: &SimulationResult, gt_demand: Option<DemandVector>) -> Self {
        let n = net.n_segments();
        Self {
            segment_ids: net.segments().iter().map(|s| s.id.clone()).collect(),
            speeds: result.speeds.clone(),
            counts: result.counts.clone(),
            replicate_speeds: (0..n)
                .map(|i| result.replicate_speeds.iter().map(|rep| rep[i]).collect())
                .collect(),
            n_replications: result.replicate_speeds.len(),
            gt_demand,
        }
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }
}

/// Ground truth from `n_reps` replications at the given demand.
pub fn generate_gt(
    net: &Network,
    gt_demand: &DemandVector,
    n_reps: usize,
    seed: u64,
    cfg: &SimulatorConfig,
) -> Result<GroundTruth> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be >= 1".into()));
    }
    let result = simulate_expected(net, gt_demand, &replication_seeds(seed, n_reps), cfg)?;
    Ok(GroundTruth::from_result(net, &result, Some(gt_demand.clone())))
}

/// Synthetic ground-truth demand: each `x_z` uniform on
/// `[0.3, 0.8] * x_upper(z)`, drawn from its own stream.
pub fn generate_gt_demands(net: &Network, seed: u64) -> DemandVector {
    let (lo, hi) = GT_DEMAND_RANGE;
    DemandVector(
        net.od_pairs()
            .iter()
            .enumerate()
            .map(|(z, od)| {
                let u: f64 = stream(seed, Domain::GtDemand, z as u64).random();
                (lo + (hi - lo) * u) * od.x_upper
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{load_network, map_demand};

    fn net() -> Network {
        load_network(
            r#"{
            "segments": [
                {"id": "a", "length_m": 100, "v_max_ms": 15, "v_min_ms": 2, "q_max_vph": 1800, "alpha1": 2, "alpha2": 1},
                {"id": "b", "length_m": 100, "v_max_ms": 12, "v_min_ms": 1, "q_max_vph": 900, "alpha1": 1.5, "alpha2": 1.2},
                {"id": "c", "length_m": 100, "v_max_ms": 14, "v_min_ms": 1, "q_max_vph": 1200, "alpha1": 2.5, "alpha2": 0.8},
                {"id": "d", "length_m": 100, "v_max_ms": 14, "v_min_ms": 1, "q_max_vph": 1500, "alpha1": 2, "alpha2": 1}
            ],
            "od_pairs": [
                {"id": 1, "origin": "A", "dest": "B", "x_upper_vph": 800,
                 "routes": [{"segments": ["a", "b", "d"], "prob": 0.6}, {"segments": ["a", "c", "d"], "prob": 0.4}]},
                {"id": 2, "origin": "C", "dest": "B", "x_upper_vph": 400,
                 "routes": [{"segments": ["c", "d"], "prob": 1.0}]}
            ]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn zero_demand() {
        let n = net();
        let r = simulate(&n, &DemandVector(vec![0.0, 0.0]), 5, &SimulatorConfig::default()).unwrap();
        assert!(r.counts.iter().all(|&c| c == 0.0));
        for (v, s) in r.speeds.iter().zip(n.segments()) {
            assert!(*v <= s.v_max_ms && *v > 0.8 * s.v_max_ms);
        }
        let r = simulate(&n, &DemandVector(vec![0.0, 0.0]), 5, &SimulatorConfig::noise_free()).unwrap();
        let vmax: Vec<f64> = n.segments().iter().map(|s| s.v_max_ms).collect();
        assert_eq!(r.speeds, vmax);
    }

    #[test]
    fn noise_free_equals_analytical_pipeline() {
        let n = net();
        let a = AssignmentMatrix::build(&n);
        let x = DemandVector(vec![500.0, 300.0]);
        let r = simulate(&n, &x, 1, &SimulatorConfig::noise_free()).unwrap();
        let q = map_demand(&a, &x).unwrap();
        assert_eq!(r.counts, q);
        for (i, s) in n.segments().iter().enumerate() {
            assert!((r.speeds[i] - fd_speed(&s.fd_params(), q[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let n = net();
        let x = DemandVector(vec![500.0, 300.0]);
        let cfg = SimulatorConfig::default();
        assert_eq!(simulate(&n, &x, 9, &cfg).unwrap(), simulate(&n, &x, 9, &cfg).unwrap());
        assert_ne!(simulate(&n, &x, 9, &cfg).unwrap().speeds, simulate(&n, &x, 10, &cfg).unwrap().speeds);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let n = net();
        let err = simulate(&n, &DemandVector(vec![900.0, 0.0]), 0, &SimulatorConfig::default());
        assert!(matches!(err, Err(Error::Bounds { od: 1, .. })));
    }

    #[test]
    fn poisson_counts_are_integral_and_consistent() {
        let n = net();
        let r = simulate(&n, &DemandVector(vec![700.0, 350.0]), 3, &SimulatorConfig::default()).unwrap();
        assert!(r.counts.iter().all(|c| c.fract() == 0.0));
        // every OD-1 vehicle crosses a and d; OD 2 only d
        assert_eq!(r.counts[3], r.counts[0] + (r.counts[2] - (r.counts[0] - r.counts[1])));
    }

    #[test]
    fn spillback_uses_dominant_downstream() {
        let n = net();
        let sim = Simulator::new(&n, &SimulatorConfig::noise_free()).unwrap();
        let flows = vec![vec![300.0, 200.0], vec![100.0]];
        // a: route 0 carries more, so next is b
        assert_eq!(sim.downstream(0, &flows), Some(1));
        // c: OD1 route 1 carries 200 vs OD2 100, both continue to d
        assert_eq!(sim.downstream(2, &flows), Some(3));
        // d ends every route
        assert_eq!(sim.downstream(3, &flows), None);
        // tie on a: b < c by id
        let tied = vec![vec![250.0, 250.0], vec![0.0]];
        assert_eq!(sim.downstream(0, &tied), Some(1));
    }

    #[test]
    fn expected_single_seed_matches_simulate() {
        let n = net();
        let x = DemandVector(vec![500.0, 300.0]);
        let cfg = SimulatorConfig::default();
        assert_eq!(
            simulate_expected(&n, &x, &[42], &cfg).unwrap(),
            simulate(&n, &x, 42, &cfg).unwrap()
        );
        assert!(matches!(simulate_expected(&n, &x, &[], &cfg), Err(Error::EmptySeeds)));
    }

    #[test]
    fn expected_noise_free_matches_single_run() {
        let n = net();
        let x = DemandVector(vec![500.0, 300.0]);
        let cfg = SimulatorConfig::noise_free();
        let one = simulate(&n, &x, 0, &cfg).unwrap();
        let many = simulate_expected(&n, &x, &[1, 2, 3, 4, 5, 6, 7], &cfg).unwrap();
        for i in 0..n.n_segments() {
            assert!((one.speeds[i] - many.speeds[i]).abs() <= 1e-12 * one.speeds[i]);
            assert!((one.counts[i] - many.counts[i]).abs() <= 1e-12 * one.counts[i].max(1.0));
        }
    }

    #[test]
    fn poisson_mean_count_within_clt_bound() {
        let n = load_network(
            r#"{"segments": [{"id": "a", "length_m": 100, "v_max_ms": 15, "v_min_ms": 2, "q_max_vph": 1800, "alpha1": 2, "alpha2": 1}],
                "od_pairs": [{"id": 1, "origin": "A", "dest": "B", "x_upper_vph": 1000,
                              "routes": [{"segments": ["a"], "prob": 1.0}]}]}"#,
        )
        .unwrap();
        let seeds: Vec<u64> = (0..100).collect();
        let r = simulate_expected(&n, &DemandVector(vec![400.0]), &seeds, &SimulatorConfig::default()).unwrap();
        assert!((r.counts[0] - 400.0).abs() <= 3.0 * (400f64.sqrt() / 10.0), "{}", r.counts[0]);
    }

    #[test]
    fn ground_truth_replications() {
        let n = net();
        let x = DemandVector(vec![500.0, 300.0]);
        let gt = generate_gt(&n, &x, DEFAULT_GT_REPS, 11, &SimulatorConfig::default()).unwrap();
        assert_eq!(gt.n_replications, 10);
        assert!(gt.replicate_speeds.iter().all(|r| r.len() == 10));
        assert_eq!(gt, generate_gt(&n, &x, 10, 11, &SimulatorConfig::default()).unwrap());

        let gt1 = generate_gt(&n, &x, 1, 11, &SimulatorConfig::noise_free()).unwrap();
        let q = map_demand(&AssignmentMatrix::build(&n), &x).unwrap();
        for (i, s) in n.segments().iter().enumerate() {
            assert!((gt1.speeds[i] - fd_speed(&s.fd_params(), q[i])).abs() < 1e-12);
        }
        assert!(generate_gt(&n, &x, 0, 11, &SimulatorConfig::default()).is_err());
    }

    #[test]
    fn gt_demands_follow_sampling_rule() {
        let n = net();
        for seed in 0..20 {
            let d = generate_gt_demands(&n, seed);
            for (v, od) in d.values().iter().zip(n.od_pairs()) {
                assert!(*v >= 0.3 * od.x_upper && *v <= 0.8 * od.x_upper);
            }
            assert_eq!(d, generate_gt_demands(&n, seed));
        }
        for s in 0..10 {
            assert_ne!(generate_gt_demands(&n, 2 * s), generate_gt_demands(&n, 2 * s + 1));
        }
    }

    #[test]
    fn monotone_load_without_noise() {
        let n = net();
        let mut cfg = SimulatorConfig::noise_free();
        cfg.spillback_coupling = 0.3;
        cfg.param_bias_scale = 0.1;
        cfg.bias_seed = 4;
        let sim = Simulator::new(&n, &cfg).unwrap();
        let base = sim.simulate(&DemandVector(vec![400.0, 200.0]), 0).unwrap();
        for z in 0..2 {
            let mut x = vec![400.0, 200.0];
            x[z] += 50.0;
            let up = sim.simulate(&DemandVector(x), 0).unwrap();
            assert!(up.speeds.iter().zip(&base.speeds).all(|(u, b)| u <= b));
        }
    }
}
