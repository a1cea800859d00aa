//! C ABI over the `odcal` library.
//!
//! Networks and ground-truth tables are opaque handles created and freed by
//! this library. Every fallible function returns an [`OdcalStatus`]; on
//! failure a message is kept per thread and can be read with
//! [`odcal_last_error_message`]. Output arrays are caller-allocated and their
//! lengths are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use odcal::eval::{nrmse, segment_weights, select_segments_by_congestion};
use odcal::fd::{fd_speed, FdParams};
use odcal::metamodel::{FitConfig, LossContext};
use odcal::network::{load_network, DemandVector, Network};
use odcal::simulator::{generate_gt, DemandNoise, GroundTruth, Simulator, SimulatorConfig};
use odcal::solvers::{calibrate_metamodel, calibrate_spsa, OptimizerConfig, SimulationOracle, SpsaConfig};
use odcal::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdcalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Schema = 3,
    Invariant = 4,
    Dimension = 5,
    Bounds = 6,
    EmptySegmentSet = 7,
    Budget = 8,
    InvalidArgument = 9,
    Io = 10,
    Other = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdcalAlgorithm {
    Metamodel = 0,
    Spsa = 1,
}

/// Simulator settings. `demand_noise`: 0 = Poisson, 1 = none.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdcalSimConfig {
    pub demand_noise: u32,
    pub speed_noise_sigma: f64,
    pub param_bias_scale: f64,
    pub spillback_coupling: f64,
    pub bias_seed: u64,
}

impl From<&SimulatorConfig> for OdcalSimConfig {
    fn from(c: &SimulatorConfig) -> Self {
        Self {
            demand_noise: match c.demand_noise {
                DemandNoise::Poisson => 0,
                DemandNoise::None => 1,
            },
            speed_noise_sigma: c.speed_noise_sigma,
            param_bias_scale: c.param_bias_scale,
            spillback_coupling: c.spillback_coupling,
            bias_seed: c.bias_seed,
        }
    }
}

impl TryFrom<&OdcalSimConfig> for SimulatorConfig {
    type Error = Error;

    fn try_from(c: &OdcalSimConfig) -> Result<Self, Error> {
        let demand_noise = match c.demand_noise {
            0 => DemandNoise::Poisson,
            1 => DemandNoise::None,
            v => return Err(Error::InvalidArgument(format!("demand_noise must be 0 or 1, got {v}"))),
        };
        let cfg = SimulatorConfig {
            demand_noise,
            speed_noise_sigma: c.speed_noise_sigma,
            param_bias_scale: c.param_bias_scale,
            spillback_coupling: c.spillback_coupling,
            bias_seed: c.bias_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Opaque network handle.
pub struct OdcalNetwork {
    net: Network,
}

/// Opaque ground-truth handle.
pub struct OdcalGroundTruth {
    gt: GroundTruth,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OdcalStatus {
    match e {
        Error::Schema(_) | Error::Parse { .. } => OdcalStatus::Schema,
        Error::Invariant { .. } => OdcalStatus::Invariant,
        Error::Dimension { .. } => OdcalStatus::Dimension,
        Error::Bounds { .. } => OdcalStatus::Bounds,
        Error::EmptySegmentSet | Error::MissingSegment(_) => OdcalStatus::EmptySegmentSet,
        Error::BudgetExhausted(_) | Error::BudgetTooSmall { .. } => OdcalStatus::Budget,
        Error::InvalidArgument(_) | Error::EmptySeeds => OdcalStatus::InvalidArgument,
        Error::Io { .. } => OdcalStatus::Io,
        _ => OdcalStatus::Other,
    }
}

struct Fail(OdcalStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OdcalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OdcalStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            OdcalStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(OdcalStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(OdcalStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, expected: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != expected {
        return Err(Error::Dimension { expected, got: len }.into());
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn sim_config(cfg: *const OdcalSimConfig) -> Result<SimulatorConfig, Fail> {
    if cfg.is_null() {
        Ok(SimulatorConfig::default())
    } else {
        Ok(SimulatorConfig::try_from(&*cfg)?)
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn odcal_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Default simulator settings.
#[no_mangle]
pub extern "C" fn odcal_sim_config_default() -> OdcalSimConfig {
    OdcalSimConfig::from(&SimulatorConfig::default())
}

/// Settings under which the simulator equals the analytical model.
#[no_mangle]
pub extern "C" fn odcal_sim_config_noise_free() -> OdcalSimConfig {
    OdcalSimConfig::from(&SimulatorConfig::noise_free())
}

/// Fundamental-diagram speed. Returns NaN for invalid parameters.
#[no_mangle]
pub extern "C" fn odcal_fd_speed(v_min: f64, v_max: f64, q_max: f64, alpha1: f64, alpha2: f64, q: f64) -> f64 {
    let p = FdParams {
        v_min,
        v_max,
        q_max,
        alpha1,
        alpha2,
    };
    if p.is_valid() {
        fd_speed(&p, q)
    } else {
        f64::NAN
    }
}

/// nRMSE of `sim` against `gt`, both of length `len`.
///
/// # Safety
/// `sim` and `gt` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcal_nrmse(sim: *const f64, gt: *const f64, len: usize, out: *mut f64) -> OdcalStatus {
    guard(|| {
        let s = slice_arg(sim, len, "sim")?;
        let g = slice_arg(gt, len, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = nrmse(s, g)?;
        Ok(())
    })
}

/// Parses and validates a network document given as JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable. The
/// handle written to `out` must be released with [`odcal_network_free`].
#[no_mangle]
pub unsafe extern "C" fn odcal_network_from_json(json: *const c_char, out: *mut *mut OdcalNetwork) -> OdcalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = load_network(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(OdcalNetwork { net }));
        Ok(())
    })
}

/// Loads a network file.
///
/// # Safety
/// As [`odcal_network_from_json`], with `path` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn odcal_network_load(path: *const c_char, out: *mut *mut OdcalNetwork) -> OdcalStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = Network::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(OdcalNetwork { net }));
        Ok(())
    })
}

/// Releases a network. Null is ignored.
///
/// # Safety
/// `net` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odcal_network_free(net: *mut OdcalNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of segments, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odcal_network_n_segments(net: *const OdcalNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.n_segments())
}

/// Number of OD pairs, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn odcal_network_n_od(net: *const OdcalNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.net.n_od())
}

/// Writes the demand upper bounds into `out` (length = number of OD pairs).
///
/// # Safety
/// `net` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn odcal_network_upper_bounds(net: *const OdcalNetwork, out: *mut f64, len: usize) -> OdcalStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        out_slice(out, len, net.n_od(), "out")?.copy_from_slice(&net.upper_bounds());
        Ok(())
    })
}

/// One simulator run at demand `x`. `cfg` may be null for the defaults.
/// Speeds and counts are written in network segment order.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n_od` doubles; `speeds` and
/// `counts` must each hold `n_seg` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn odcal_simulate(
    net: *const OdcalNetwork,
    x: *const f64,
    n_od: usize,
    seed: u64,
    cfg: *const OdcalSimConfig,
    speeds: *mut f64,
    counts: *mut f64,
    n_seg: usize,
) -> OdcalStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        let x = DemandVector(slice_arg(x, n_od, "x")?.to_vec());
        let cfg = sim_config(cfg)?;
        let speeds = out_slice(speeds, n_seg, net.n_segments(), "speeds")?;
        let counts = out_slice(counts, n_seg, net.n_segments(), "counts")?;
        let r = Simulator::new(net, &cfg)?.simulate(&x, seed)?;
        speeds.copy_from_slice(&r.speeds);
        counts.copy_from_slice(&r.counts);
        Ok(())
    })
}

/// Simulates `n_reps` replications at `x` and keeps the replication means
/// as ground truth. `cfg` may be null for the defaults.
///
/// # Safety
/// `net` must be a live handle; `x` must hold `n_od` doubles; `out` must be
/// writable. Release the result with [`odcal_gt_free`].
#[no_mangle]
pub unsafe extern "C" fn odcal_gt_generate(
    net: *const OdcalNetwork,
    x: *const f64,
    n_od: usize,
    n_reps: usize,
    seed: u64,
    cfg: *const OdcalSimConfig,
    out: *mut *mut OdcalGroundTruth,
) -> OdcalStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = DemandVector(slice_arg(x, n_od, "x")?.to_vec());
        let gt = generate_gt(net, &x, n_reps, seed, &sim_config(cfg)?)?;
        *out = Box::into_raw(Box::new(OdcalGroundTruth { gt }));
        Ok(())
    })
}

/// Releases a ground-truth handle. Null is ignored.
///
/// # Safety
/// `gt` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn odcal_gt_free(gt: *mut OdcalGroundTruth) {
    if !gt.is_null() {
        drop(Box::from_raw(gt));
    }
}

/// Writes the ground-truth speeds (network segment order).
///
/// # Safety
/// `gt` must be a live handle; `out` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn odcal_gt_speeds(gt: *const OdcalGroundTruth, out: *mut f64, len: usize) -> OdcalStatus {
    guard(|| {
        let gt = &gt.as_ref().ok_or_else(|| null("gt"))?.gt;
        out_slice(out, len, gt.len(), "out")?.copy_from_slice(&gt.speeds);
        Ok(())
    })
}

fn context(net: &Network, gt: &GroundTruth, threshold: f64) -> Result<(Vec<f64>, odcal::eval::SegmentSet, LossContext), Fail> {
    if gt.len() != net.n_segments() {
        return Err(Error::Dimension {
            expected: net.n_segments(),
            got: gt.len(),
        }
        .into());
    }
    let w = segment_weights(net, gt);
    let set = select_segments_by_congestion(gt, net, threshold)?;
    let ctx = LossContext::new(net, gt, &w, &set)?;
    Ok((w, set, ctx))
}

/// Analytical loss and its gradient at `x` over the segments whose GT speed
/// ratio is at most `threshold`. `grad` may be null.
///
/// # Safety
/// `net`, `gt` must be live handles; `x` and (if non-null) `grad` must hold
/// `n_od` doubles; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcal_analytical_loss(
    net: *const OdcalNetwork,
    gt: *const OdcalGroundTruth,
    threshold: f64,
    x: *const f64,
    n_od: usize,
    loss: *mut f64,
    grad: *mut f64,
) -> OdcalStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        let gt = &gt.as_ref().ok_or_else(|| null("gt"))?.gt;
        if loss.is_null() {
            return Err(null("loss"));
        }
        let x = slice_arg(x, n_od, "x")?;
        DemandVector(x.to_vec()).check_bounds(net)?;
        let (_, _, ctx) = context(net, gt, threshold)?;
        let (l, g) = ctx.loss_and_gradient(x)?;
        *loss = l;
        if !grad.is_null() {
            std::slice::from_raw_parts_mut(grad, n_od).copy_from_slice(&g);
        }
        Ok(())
    })
}

/// Calibrates from `x0` with default algorithm settings, simulator `cfg`
/// (null for defaults) and the given budget and seed. Writes the best demand
/// found to `best_x` and its simulated loss to `best_loss`.
///
/// # Safety
/// `net`, `gt` must be live handles; `x0` and `best_x` must hold `n_od`
/// doubles; `best_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn odcal_calibrate(
    net: *const OdcalNetwork,
    gt: *const OdcalGroundTruth,
    cfg: *const OdcalSimConfig,
    algorithm: OdcalAlgorithm,
    threshold: f64,
    budget: usize,
    seed: u64,
    x0: *const f64,
    n_od: usize,
    best_x: *mut f64,
    best_loss: *mut f64,
) -> OdcalStatus {
    guard(|| {
        let net = &net.as_ref().ok_or_else(|| null("net"))?.net;
        let gt = &gt.as_ref().ok_or_else(|| null("gt"))?.gt;
        if best_loss.is_null() {
            return Err(null("best_loss"));
        }
        let x0 = DemandVector(slice_arg(x0, n_od, "x0")?.to_vec());
        x0.check_bounds(net)?;
        let best = out_slice(best_x, n_od, net.n_od(), "best_x")?;
        let cfg = sim_config(cfg)?;
        let (w, set, ctx) = context(net, gt, threshold)?;
        let sim = Simulator::new(net, &cfg)?;
        let mut oracle = SimulationOracle::new(&sim, gt, &w, &set);
        let trace = match algorithm {
            OdcalAlgorithm::Metamodel => {
                let opt = OptimizerConfig {
                    seed,
                    ..OptimizerConfig::default()
                };
                calibrate_metamodel(&mut oracle, &ctx, &x0, budget, &opt, &FitConfig::default())?
            }
            OdcalAlgorithm::Spsa => {
                let sc = SpsaConfig {
                    seed,
                    ..SpsaConfig::default()
                };
                calibrate_spsa(&mut oracle, &x0, budget, &sc)?
            }
        };
        best.copy_from_slice(&trace.best_x);
        *best_loss = trace.best_loss;
        Ok(())
    })
}
