//! Calibration metrics, loss weights, congestion-stratified segment sets and
//! speed scatter export.

use crate::error::{Error, Result};
use crate::network::{AssignmentMatrix, DemandVector, Network};
use crate::simulator::{replication_seeds, GroundTruth, SimulationResult, Simulator, SimulatorConfig};

/// Replications averaged for every final evaluation.
pub const DEFAULT_FINAL_EVAL_REPS: usize = 5;

/// Loss weight of a segment: `min(r, 1 - r)` with `r = v_gt / v_max`.
/// Segments near free flow or near standstill get little weight.
/// `v_gt` is clamped into `[0, v_max]` first.
pub fn segment_weight(v_gt: f64, v_max: f64) -> Result<f64> {
    if !(v_max > 0.0) {
        return Err(Error::InvalidArgument(format!("v_max = {v_max} must be > 0")));
    }
    let r = v_gt.clamp(0.0, v_max) / v_max;
    Ok(r.min(1.0 - r))
}

/// Weights for every segment of `net`, in network order.
pub fn segment_weights(net: &Network, gt: &GroundTruth) -> Vec<f64> {
    net.segments()
        .iter()
        .zip(&gt.speeds)
        .map(|(s, &v)| segment_weight(v, s.v_max_ms).expect("validated network has v_max > 0"))
        .collect()
}

/// Root-mean-squared error normalized by the mean of the ground truth.
pub fn nrmse(sim: &[f64], gt: &[f64]) -> Result<f64> {
    if sim.is_empty() || gt.is_empty() {
        return Err(Error::InvalidArgument("nrmse of empty vectors".into()));
    }
    if sim.len() != gt.len() {
        return Err(Error::Dimension {
            expected: gt.len(),
            got: sim.len(),
        });
    }
    let n = gt.len() as f64;
    let mean = gt.iter().sum::<f64>() / n;
    if !(mean > 0.0) {
        return Err(Error::InvalidArgument(format!("ground-truth mean {mean} must be > 0")));
    }
    let mse = sim.iter().zip(gt).map(|(s, g)| (s - g) * (s - g)).sum::<f64>() / n;
    Ok(mse.sqrt() / mean)
}

/// An ordered set of segments, kept both as ids and as network indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    pub label: String,
    pub ids: Vec<String>,
    pub indices: Vec<usize>,
}

impl SegmentSet {
    /// Builds a set from network indices, ordered by segment id.
    pub fn from_indices(net: &Network, label: impl Into<String>, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut idx: Vec<usize> = indices.into_iter().collect();
        idx.sort_by(|&a, &b| net.segments()[a].id.cmp(&net.segments()[b].id));
        idx.dedup();
        Self {
            label: label.into(),
            ids: idx.iter().map(|&i| net.segments()[i].id.clone()).collect(),
            indices: idx,
        }
    }

    pub fn from_ids(net: &Network, label: impl Into<String>, ids: &[String]) -> Result<Self> {
        let idx = ids
            .iter()
            .map(|id| net.segment_index(id).ok_or_else(|| Error::MissingSegment(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_indices(net, label, idx))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

fn routed_with_gt(net: &Network, gt: &GroundTruth) -> Vec<usize> {
    let a = AssignmentMatrix::build(net);
    (0..net.n_segments().min(gt.len())).filter(|&i| a.is_routed(i)).collect()
}

/// Routed segments whose GT speed ratio `v_gt / v_max` (after clamping) is at
/// most `threshold`.
pub fn select_segments_by_congestion(gt: &GroundTruth, net: &Network, threshold: f64) -> Result<SegmentSet> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1]")));
    }
    let segs = net.segments();
    let chosen = routed_with_gt(net, gt).into_iter().filter(|&i| {
        let vmax = segs[i].v_max_ms;
        gt.speeds[i].clamp(0.0, vmax) / vmax <= threshold
    });
    Ok(SegmentSet::from_indices(net, format!("congested-{threshold}"), chosen))
}

/// Routed GT segments not in `in_set`.
pub fn out_of_sample_set(gt: &GroundTruth, net: &Network, in_set: &SegmentSet) -> SegmentSet {
    let rest = routed_with_gt(net, gt)
        .into_iter()
        .filter(|i| !in_set.indices.contains(i));
    SegmentSet::from_indices(net, format!("{}-complement", in_set.label), rest)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrmsePair {
    pub speed: f64,
    pub count: f64,
}

/// In- and out-of-sample nRMSE. `out_of_sample` is absent iff the
/// out-of-sample set is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub in_sample: NrmsePair,
    pub out_of_sample: Option<NrmsePair>,
    pub n_runs: usize,
    pub per_run: Vec<(NrmsePair, Option<NrmsePair>)>,
}

impl MetricsReport {
    fn single(in_sample: NrmsePair, out_of_sample: Option<NrmsePair>) -> Self {
        Self {
            in_sample,
            out_of_sample,
            n_runs: 1,
            per_run: vec![(in_sample, out_of_sample)],
        }
    }

    /// Run-mean of several single-run reports.
    pub fn average(reports: &[MetricsReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidArgument("no reports to average".into()));
        }
        let per_run: Vec<_> = reports.iter().flat_map(|r| r.per_run.iter().copied()).collect();
        let n = per_run.len() as f64;
        let mean = |f: &dyn Fn(&NrmsePair) -> f64, pairs: &[NrmsePair]| pairs.iter().map(f).sum::<f64>() / n;
        let ins: Vec<NrmsePair> = per_run.iter().map(|r| r.0).collect();
        let outs: Option<Vec<NrmsePair>> = per_run.iter().map(|r| r.1).collect();
        Ok(Self {
            in_sample: NrmsePair {
                speed: mean(&|p| p.speed, &ins),
                count: mean(&|p| p.count, &ins),
            },
            out_of_sample: outs.map(|o| NrmsePair {
                speed: mean(&|p| p.speed, &o),
                count: mean(&|p| p.count, &o),
            }),
            n_runs: per_run.len(),
            per_run,
        })
    }
}

fn pair_over(result: &SimulationResult, gt: &GroundTruth, set: &SegmentSet) -> Result<NrmsePair> {
    let pick = |v: &[f64]| set.indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
    Ok(NrmsePair {
        speed: nrmse(&pick(&result.speeds), &pick(&gt.speeds))?,
        count: nrmse(&pick(&result.counts), &pick(&gt.counts))?,
    })
}

/// Metrics of a simulation result against GT over in- and out-of-sample sets.
pub fn metrics_for_result(
    result: &SimulationResult,
    gt: &GroundTruth,
    in_set: &SegmentSet,
    out_set: &SegmentSet,
) -> Result<MetricsReport> {
    if in_set.is_empty() {
        return Err(Error::EmptySegmentSet);
    }
    let ins = pair_over(result, gt, in_set)?;
    let outs = if out_set.is_empty() {
        None
    } else {
        Some(pair_over(result, gt, out_set)?)
    };
    Ok(MetricsReport::single(ins, outs))
}

/// Simulates `x` with `n_reps` fresh replications (not charged to any
/// budget) and scores the replication mean.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_demands(
    net: &Network,
    x: &DemandVector,
    gt: &GroundTruth,
    in_set: &SegmentSet,
    out_set: &SegmentSet,
    n_reps: usize,
    seed: u64,
    cfg: &SimulatorConfig,
) -> Result<(MetricsReport, SimulationResult)> {
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be >= 1".into()));
    }
    let sim = Simulator::new(net, cfg)?;
    let result = sim.simulate_expected(x, &replication_seeds(seed, n_reps))?;
    Ok((metrics_for_result(&result, gt, in_set, out_set)?, result))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub segment_id: String,
    pub gt_speed: f64,
    pub sim_speed_mean: f64,
    pub sim_speed_std: f64,
}

/// One row per segment of `set`: GT speed against the mean and sample
/// standard deviation (n - 1 denominator) of simulated speed over runs.
pub fn scatter_export(runs: &[SimulationResult], gt: &GroundTruth, set: &SegmentSet) -> Result<Vec<ScatterRow>> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("scatter export needs at least one run".into()));
    }
    let n = runs.len() as f64;
    Ok(set
        .indices
        .iter()
        .zip(&set.ids)
        .map(|(&i, id)| {
            let mean = runs.iter().map(|r| r.speeds[i]).sum::<f64>() / n;
            let std = if runs.len() > 1 {
                (runs.iter().map(|r| (r.speeds[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            ScatterRow {
                segment_id: id.clone(),
                gt_speed: gt.speeds[i],
                sim_speed_mean: mean,
                sim_speed_std: std,
            }
        })
        .collect())
}
