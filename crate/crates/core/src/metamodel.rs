//! Physics-informed metamodel of the calibration loss.
//!
//! The metamodel combines a scaled analytical loss, computed by pushing OD
//! demands through the assignment matrix and the fundamental diagram, with a
//! linear correction in the OD demands:
//!
//! ```text
//! m(x; beta) = beta[0] * f_A(x) + beta[1] + sum_z beta[z + 1] * x_z
//! f_A(x)     = 1/|I| * sum_{i in I} w_i * (v_gt_i - v_fd_i((A x)_i))^2
//! ```
//!
//! `beta` is refitted after every simulation by weighted ridge regression
//! on all simulated points so far.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::eval::SegmentSet;
use crate::fd::{fd_speed, fd_speed_gradient, FdParams};
use crate::network::{AssignmentMatrix, DemandVector, Network};
use crate::simulator::{GroundTruth, SimulationResult};

/// Two demand vectors closer than this in max-norm are the same sample.
pub const DUPLICATE_TOL: f64 = 1e-9;

/// Everything the analytical loss needs, restricted to one segment set.
#[derive(Debug, Clone)]
pub struct LossContext {
    assignment: AssignmentMatrix,
    set: SegmentSet,
    gt_speeds: Vec<f64>,
    weights: Vec<f64>,
    params: Vec<FdParams>,
    upper: Vec<f64>,
}

impl LossContext {
    /// `weights` is indexed by network segment.
    pub fn new(net: &Network, gt: &GroundTruth, weights: &[f64], set: &SegmentSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySegmentSet);
        }
        if weights.len() != net.n_segments() {
            return Err(Error::Dimension {
                expected: net.n_segments(),
                got: weights.len(),
            });
        }
        for (&i, id) in set.indices.iter().zip(&set.ids) {
            if i >= gt.len() {
                return Err(Error::MissingSegment(id.clone()));
            }
        }
        Ok(Self {
            assignment: AssignmentMatrix::build(net),
            gt_speeds: set.indices.iter().map(|&i| gt.speeds[i]).collect(),
            weights: set.indices.iter().map(|&i| weights[i]).collect(),
            params: set.indices.iter().map(|&i| net.segments()[i].fd_params()).collect(),
            set: set.clone(),
            upper: net.upper_bounds(),
        })
    }

    pub fn n_od(&self) -> usize {
        self.upper.len()
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    pub fn segment_set(&self) -> &SegmentSet {
        &self.set
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.upper.len() {
            return Err(Error::Dimension {
                expected: self.upper.len(),
                got: x.len(),
            });
        }
        for (z, (&v, &u)) in x.iter().zip(&self.upper).enumerate() {
            if !(v >= 0.0 && v <= u) {
                return Err(Error::Bounds { od: z + 1, value: v, upper: u });
            }
        }
        Ok(())
    }

    /// Analytical loss without the bounds check. Used by finite-difference
    /// probes that step slightly outside the box.
    pub fn loss_unchecked(&self, x: &[f64]) -> f64 {
        let q = self.assignment.map_demand(x).expect("dimension checked by caller");
        let n = self.set.len() as f64;
        self.set
            .indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let e = self.gt_speeds[k] - fd_speed(&self.params[k], q[i]);
                self.weights[k] * e * e
            })
            .sum::<f64>()
            / n
    }

    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.loss_unchecked(x))
    }

    /// Loss and gradient in one pass over the segments.
    pub fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let q = self.assignment.map_demand(x)?;
        let n = self.set.len() as f64;
        let mut loss = 0.0;
        let mut r = vec![0.0; self.assignment.n_rows()];
        for (k, &i) in self.set.indices.iter().enumerate() {
            let p = &self.params[k];
            let resid = fd_speed(p, q[i]) - self.gt_speeds[k];
            loss += self.weights[k] * resid * resid;
            r[i] += 2.0 / n * self.weights[k] * resid * fd_speed_gradient(p, q[i]);
        }
        Ok((loss / n, self.assignment.transpose_mul(&r)?))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(x)?.1)
    }
}

/// Analytical loss `f_A(x)` over `set`.
pub fn analytical_loss(
    net: &Network,
    gt: &GroundTruth,
    weights: &[f64],
    x: &DemandVector,
    set: &SegmentSet,
) -> Result<f64> {
    LossContext::new(net, gt, weights, set)?.loss(x.values())
}

/// Gradient of `f_A` with respect to the OD demands.
pub fn analytical_loss_gradient(
    net: &Network,
    gt: &GroundTruth,
    weights: &[f64],
    x: &DemandVector,
    set: &SegmentSet,
) -> Result<Vec<f64>> {
    LossContext::new(net, gt, weights, set)?.gradient(x.values())
}

/// Weighted mean squared error between GT speeds and (replication-averaged)
/// simulated speeds over `set`.
pub fn simulated_loss(result: &SimulationResult, gt: &GroundTruth, weights: &[f64], set: &SegmentSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySegmentSet);
    }
    let mut sum = 0.0;
    for (&i, id) in set.indices.iter().zip(&set.ids) {
        let (Some(&v), Some(&g), Some(&w)) = (result.speeds.get(i), gt.speeds.get(i), weights.get(i)) else {
            return Err(Error::MissingSegment(id.clone()));
        };
        sum += w * (g - v) * (g - v);
    }
    Ok(sum / set.len() as f64)
}

/// Metamodel coefficients: `beta[0]` scales the analytical loss, `beta[1]`
/// is the intercept, `beta[z + 1]` multiplies `x_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetamodelParams {
    pub beta: Vec<f64>,
    pub epoch: usize,
}

impl MetamodelParams {
    /// `(1, 0, ..., 0)`: the metamodel is the analytical loss.
    pub fn physics_only(n_od: usize) -> Self {
        let mut beta = vec![0.0; n_od + 2];
        beta[0] = 1.0;
        Self { beta, epoch: 0 }
    }

    pub fn n_od(&self) -> usize {
        self.beta.len() - 2
    }

    pub fn linear_coefficients(&self) -> &[f64] {
        &self.beta[2..]
    }
}

pub fn metamodel_predict(params: &MetamodelParams, x: &DemandVector, f_a: f64) -> Result<f64> {
    let xv = x.values();
    if params.beta.len() != xv.len() + 2 {
        return Err(Error::Dimension {
            expected: params.beta.len().saturating_sub(2),
            got: xv.len(),
        });
    }
    let b = &params.beta;
    Ok(b[0] * f_a + b[1] + b[2..].iter().zip(xv).map(|(c, x)| c * x).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub x: DemandVector,
    pub loss: f64,
    pub f_a: f64,
    pub seeds_used: Vec<u64>,
}

/// Simulated points in insertion order, without duplicates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    points: Vec<SamplePoint>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.points.iter().any(|p| {
            p.x.values()
                .iter()
                .zip(x)
                .all(|(a, b)| (a - b).abs() < DUPLICATE_TOL)
        })
    }

    /// Adds a point unless an equal one (within [`DUPLICATE_TOL`]) is present.
    /// Returns whether the point was inserted.
    pub fn insert(&mut self, point: SamplePoint) -> bool {
        if self.contains(point.x.values()) {
            return false;
        }
        self.points.push(point);
        true
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Ridge weight pulling beta toward `(1, 0, ..., 0)`.
    pub ridge_weight: f64,
    /// Weight sample j by `1 / (1 + |x_j - x_current|_2)`.
    pub distance_weighting: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            ridge_weight: 0.01,
            distance_weighting: true,
        }
    }
}

/// The stacked least-squares system `M beta ~ b` whose solution is the fit.
/// Rows: one per sample (scaled by `sqrt(lambda_j)`), then one ridge row per
/// coefficient (scaled by `sqrt(w0)`).
pub fn fit_system(samples: &SampleSet, x_current: &DemandVector, cfg: &FitConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n_od = x_current.len();
    fit_system_scaled(samples, x_current, &vec![1.0; n_od], cfg)
}

/// As [`fit_system`], with every demand coordinate divided by `scale`
/// (distances included). The unknowns are `beta_z * scale_z`.
pub fn fit_system_scaled(
    samples: &SampleSet,
    x_current: &DemandVector,
    scale: &[f64],
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let first = samples
        .points()
        .first()
        .ok_or(Error::InsufficientSamples { needed: 1, got: 0 })?;
    let n_od = first.x.len();
    if x_current.len() != n_od {
        return Err(Error::Dimension {
            expected: n_od,
            got: x_current.len(),
        });
    }
    if cfg.ridge_weight < 0.0 {
        return Err(Error::InvalidArgument("ridge_weight must be >= 0".into()));
    }
    let p = n_od + 2;
    let n = samples.len();
    let mut m = DMatrix::zeros(n + p, p);
    let mut b = DVector::zeros(n + p);
    for (j, s) in samples.points().iter().enumerate() {
        let lambda = if cfg.distance_weighting {
            let d: f64 = s
                .x
                .values()
                .iter()
                .zip(x_current.values())
                .zip(scale)
                .map(|((a, c), s)| (a - c) * (a - c) / (s * s))
                .sum::<f64>()
                .sqrt();
            1.0 / (1.0 + d)
        } else {
            1.0
        };
        let sw = lambda.sqrt();
        m[(j, 0)] = sw * s.f_a;
        m[(j, 1)] = sw;
        for (z, (&xz, sz)) in s.x.values().iter().zip(scale).enumerate() {
            m[(j, z + 2)] = sw * xz / sz;
        }
        b[j] = sw * s.loss;
    }
    let sr = cfg.ridge_weight.sqrt();
    for k in 0..p {
        m[(n + k, k)] = sr;
    }
    b[n] = sr;
    Ok((m, b))
}

/// Fits beta by weighted ridge least squares around `x_current`.
pub fn fit_metamodel(samples: &SampleSet, x_current: &DemandVector, cfg: &FitConfig) -> Result<MetamodelParams> {
    let n_od = x_current.len();
    fit_metamodel_scaled(samples, x_current, &vec![1.0; n_od], cfg)
}

/// Fits in scaled demand coordinates `x_z / scale_z` and returns the
/// coefficients in raw units.
pub fn fit_metamodel_scaled(
    samples: &SampleSet,
    x_current: &DemandVector,
    scale: &[f64],
    cfg: &FitConfig,
) -> Result<MetamodelParams> {
    if scale.len() != x_current.len() {
        return Err(Error::Dimension {
            expected: x_current.len(),
            got: scale.len(),
        });
    }
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument("coordinate scales must be > 0".into()));
    }
    let (m, b) = fit_system_scaled(samples, x_current, scale, cfg)?;
    // Column scaling keeps the demand columns (O(1e3)) and the intercept
    // (O(1)) on a comparable footing for the SVD.
    let scales: Vec<f64> = m
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut ms = m.clone();
    for (k, mut c) in ms.column_iter_mut().enumerate() {
        c /= scales[k];
    }
    let svd = ms.clone().svd(true, true);
    let y = svd
        .solve(&b, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut beta: DVector<f64> = DVector::from_iterator(y.len(), y.iter().zip(&scales).map(|(v, s)| v / s));
    // one step of iterative refinement on the unscaled system
    let r = &b - &m * &beta;
    let rs = ms.transpose() * &r;
    let ata = ms.transpose() * &ms;
    if let Some(ch) = ata.cholesky() {
        let dy = ch.solve(&rs);
        for k in 0..beta.len() {
            beta[k] += dy[k] / scales[k];
        }
    }
    for (z, sz) in scale.iter().enumerate() {
        beta[z + 2] /= sz;
    }
    Ok(MetamodelParams {
        beta: beta.iter().copied().collect(),
        epoch: 0,
    })
}
