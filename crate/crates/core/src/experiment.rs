//! Config-driven experiment pipeline: network generation, ground truth,
//! calibration runs and the comparison report.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! gt/gt_demand.csv                 held-out demand, never read by calibration
//! gt/ground_truth.csv              speeds, counts, replication speeds
//! calibration/<alg>/t<thr>/run<r>/ initial_demand.csv, calibrated_demand.csv,
//!                                  trace.csv, beta.csv (metamodel only)
//! report/table.csv
//! report/scatter_<alg>_t<thr>.csv
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_demands, out_of_sample_set, scatter_export, segment_weights, select_segments_by_congestion,
    MetricsReport, SegmentSet, DEFAULT_FINAL_EVAL_REPS,
};
use crate::generator::{generate_network, GeneratorConfig};
use crate::metamodel::{FitConfig, LossContext};
use crate::network::{DemandVector, Network};
use crate::rng::{derive_seed, hash_str, stream, Domain};
use crate::simulator::{generate_gt, generate_gt_demands, GroundTruth, Simulator, SimulatorConfig, DEFAULT_GT_REPS};
use crate::solvers::{
    calibrate_metamodel, calibrate_spsa, uniform_point, CalibrationTrace, OptimizerConfig, SimulationOracle,
    SpsaConfig, DEFAULT_BUDGET,
};
use crate::tables::{self, ReportRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GtConfig {
    pub seed: u64,
    pub n_reps: usize,
}

impl Default for GtConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_reps: DEFAULT_GT_REPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetamodelAlgoConfig {
    #[serde(flatten)]
    pub optimizer: OptimizerConfig,
    pub fit: FitConfig,
}

impl Default for MetamodelAlgoConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            fit: FitConfig::default(),
        }
    }
}

/// One algorithm entry: `{"name": "metamodel" | "spsa", "config": {...}}`.
/// The per-run seed always replaces any `seed` given in `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlgorithmEntry", into = "AlgorithmEntry")]
pub enum AlgorithmSpec {
    Metamodel(MetamodelAlgoConfig),
    Spsa(SpsaConfig),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlgorithmEntry {
    name: String,
    #[serde(default)]
    config: serde_json::Value,
}

impl TryFrom<AlgorithmEntry> for AlgorithmSpec {
    type Error = String;

    fn try_from(e: AlgorithmEntry) -> std::result::Result<Self, String> {
        let config = match e.config {
            serde_json::Value::Null => serde_json::Value::Object(Default::default()),
            v => v,
        };
        let err = |m: serde_json::Error| format!("{} config: {m}", e.name);
        match e.name.as_str() {
            "metamodel" => serde_json::from_value(config).map(AlgorithmSpec::Metamodel).map_err(err),
            "spsa" => serde_json::from_value(config).map(AlgorithmSpec::Spsa).map_err(err),
            other => Err(format!("unknown algorithm {other:?}, expected metamodel or spsa")),
        }
    }
}

impl From<AlgorithmSpec> for AlgorithmEntry {
    fn from(a: AlgorithmSpec) -> Self {
        let config = match &a {
            AlgorithmSpec::Metamodel(c) => serde_json::to_value(c),
            AlgorithmSpec::Spsa(c) => serde_json::to_value(c),
        }
        .expect("algorithm config serializes");
        Self {
            name: a.name().into(),
            config,
        }
    }
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Metamodel(_) => "metamodel",
            AlgorithmSpec::Spsa(_) => "spsa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub network_path: PathBuf,
    pub generator: GeneratorConfig,
    pub gt: GtConfig,
    pub simulator: SimulatorConfig,
    pub algorithms: Vec<AlgorithmSpec>,
    pub budget: usize,
    pub n_calibration_runs: usize,
    pub thresholds: Vec<f64>,
    pub final_eval_reps: usize,
    pub output_dir: PathBuf,
    pub master_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            network_path: "network.json".into(),
            generator: GeneratorConfig::default(),
            gt: GtConfig::default(),
            simulator: SimulatorConfig::default(),
            algorithms: vec![
                AlgorithmSpec::Metamodel(MetamodelAlgoConfig::default()),
                AlgorithmSpec::Spsa(SpsaConfig::default()),
            ],
            budget: DEFAULT_BUDGET,
            n_calibration_runs: 5,
            thresholds: vec![0.8, 0.9, 1.0],
            final_eval_reps: DEFAULT_FINAL_EVAL_REPS,
            output_dir: "out".into(),
            master_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text).map_err(|e| match e {
            Error::Schema(m) => Error::parse(path, m),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.network_path.is_relative() {
            cfg.network_path = base.join(&cfg.network_path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_calibration_runs == 0 {
            return Err(Error::InvalidArgument("n_calibration_runs must be >= 1".into()));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
            return Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1]")));
        }
        if self.gt.n_reps == 0 || self.final_eval_reps == 0 {
            return Err(Error::InvalidArgument("gt.n_reps and final_eval_reps must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no algorithms configured".into()));
        }
        let mut names: Vec<_> = self.algorithms.iter().map(AlgorithmSpec::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("each algorithm may appear once".into()));
        }
        self.simulator.validate()
    }

    pub fn gt_demand_path(&self) -> PathBuf {
        self.output_dir.join("gt").join("gt_demand.csv")
    }

    pub fn ground_truth_path(&self) -> PathBuf {
        self.output_dir.join("gt").join("ground_truth.csv")
    }

    pub fn run_dir(&self, algorithm: &str, threshold: f64, run: usize) -> PathBuf {
        self.output_dir
            .join("calibration")
            .join(algorithm)
            .join(format!("t{threshold}"))
            .join(format!("run{run}"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.output_dir.join("report").join("table.csv")
    }

    pub fn scatter_path(&self, algorithm: &str, threshold: f64) -> PathBuf {
        self.output_dir
            .join("report")
            .join(format!("scatter_{algorithm}_t{threshold}.csv"))
    }

    fn algorithm(&self, name: &str) -> Result<&AlgorithmSpec> {
        self.algorithms
            .iter()
            .find(|a| a.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("algorithm {name:?} is not configured")))
    }
}

/// Seed of calibration run `run`: a hash of master seed, algorithm name,
/// threshold bits and run index.
pub fn run_seed(master_seed: u64, algorithm: &str, threshold: f64, run: usize) -> u64 {
    derive_seed(&[master_seed, hash_str(algorithm), threshold.to_bits(), run as u64])
}

/// Initial demand of run `run`, uniform on `[0, x_U]`. It does not depend on
/// the algorithm, so both algorithms start run `r` from the same point.
pub fn initial_demand(master_seed: u64, threshold: f64, run: usize, upper: &[f64]) -> DemandVector {
    let seed = derive_seed(&[master_seed, threshold.to_bits(), run as u64]);
    uniform_point(&mut stream(seed, Domain::InitialPoint, 0), upper)
}

fn eval_seed(master_seed: u64, algorithm: &str, threshold: f64, run: usize) -> u64 {
    derive_seed(&[
        master_seed,
        Domain::EvalSeed as u64,
        hash_str(algorithm),
        threshold.to_bits(),
        run as u64,
    ])
}

/// Writes the network produced by `gen` to `path`.
pub fn cmd_gen_network(gen: &GeneratorConfig, path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let doc = generate_network(gen)?;
    let net = Network::try_from(doc.clone())?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, doc.to_json_string()).map_err(|e| Error::io(path, e))?;
    Ok(net)
}

/// Draws the GT demand, simulates `gt.n_reps` replications and writes the
/// demand and the GT table to separate files.
pub fn cmd_gen_gt(cfg: &ExperimentConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let net = Network::load(&cfg.network_path)?;
    let demand = generate_gt_demands(&net, cfg.gt.seed);
    let gt = generate_gt(&net, &demand, cfg.gt.n_reps, cfg.gt.seed, &cfg.simulator)?;
    tables::write_demand(cfg.gt_demand_path(), &demand)?;
    tables::write_ground_truth(cfg.ground_truth_path(), &gt)?;
    Ok(gt)
}

/// Everything a single calibration run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub algorithm: String,
    pub threshold: f64,
    pub run: usize,
    pub trace: CalibrationTrace,
}

struct Job<'a> {
    spec: &'a AlgorithmSpec,
    threshold: f64,
    set: usize,
    run: usize,
}

/// Runs `n_calibration_runs` calibrations for each selected algorithm and
/// threshold, in parallel, and writes each run to its own directory.
/// `None` selects every configured algorithm or threshold.
pub fn cmd_calibrate(
    cfg: &ExperimentConfig,
    algorithm: Option<&str>,
    threshold: Option<f64>,
) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let specs: Vec<&AlgorithmSpec> = match algorithm {
        Some(name) => vec![cfg.algorithm(name)?],
        None => cfg.algorithms.iter().collect(),
    };
    let thresholds = match threshold {
        Some(t) if !(t > 0.0 && t <= 1.0) => {
            return Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1]")))
        }
        Some(t) => vec![t],
        None => cfg.thresholds.clone(),
    };

    let net = Network::load(&cfg.network_path)?;
    let gt = tables::read_ground_truth(cfg.ground_truth_path(), &net)?;
    let weights = segment_weights(&net, &gt);
    let sim = Simulator::new(&net, &cfg.simulator)?;
    let sets = thresholds
        .iter()
        .map(|&t| {
            let set = select_segments_by_congestion(&gt, &net, t)?;
            let ctx = LossContext::new(&net, &gt, &weights, &set)?;
            Ok((set, ctx))
        })
        .collect::<Result<Vec<(SegmentSet, LossContext)>>>()?;

    let mut jobs = Vec::new();
    for spec in &specs {
        for (k, &t) in thresholds.iter().enumerate() {
            for r in 0..cfg.n_calibration_runs {
                jobs.push(Job {
                    spec,
                    threshold: t,
                    set: k,
                    run: r,
                });
            }
        }
    }

    let run_one = |job: &Job| -> Result<RunOutput> {
        let name = job.spec.name();
        let seed = run_seed(cfg.master_seed, name, job.threshold, job.run);
        let x0 = initial_demand(cfg.master_seed, job.threshold, job.run, &net.upper_bounds());
        let (set, ctx) = &sets[job.set];
        let mut oracle = SimulationOracle::new(&sim, &gt, &weights, set);
        let trace = match job.spec {
            AlgorithmSpec::Metamodel(mc) => {
                let opt = OptimizerConfig {
                    seed,
                    ..mc.optimizer.clone()
                };
                calibrate_metamodel(&mut oracle, ctx, &x0, cfg.budget, &opt, &mc.fit)?
            }
            AlgorithmSpec::Spsa(sc) => {
                let sc = SpsaConfig { seed, ..sc.clone() };
                calibrate_spsa(&mut oracle, &x0, cfg.budget, &sc)?
            }
        };
        let dir = cfg.run_dir(name, job.threshold, job.run);
        tables::write_demand(dir.join("initial_demand.csv"), &x0)?;
        tables::write_demand(dir.join("calibrated_demand.csv"), &trace.best())?;
        let beta = matches!(job.spec, AlgorithmSpec::Metamodel(_)).then(|| dir.join("beta.csv"));
        tables::write_trace(dir.join("trace.csv"), beta.as_deref(), &trace.entries)?;
        Ok(RunOutput {
            algorithm: name.to_string(),
            threshold: job.threshold,
            run: job.run,
            trace,
        })
    };

    let results: Vec<Mutex<Option<Result<RunOutput>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(jobs.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let out = run_one(&jobs[k]);
                *results[k].lock().expect("no poisoned slot") = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("no poisoned slot").expect("every job ran"))
        .collect()
}

/// Evaluates every calibrated and initial demand with `final_eval_reps`
/// fresh replications, writes the comparison table and scatter files, and
/// returns the table rows sorted by threshold, then algorithm.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let net = Network::load(&cfg.network_path)?;
    let gt = tables::read_ground_truth(cfg.ground_truth_path(), &net)?;
    let mut thresholds = cfg.thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut rows = Vec::new();
    for &t in &thresholds {
        let in_set = select_segments_by_congestion(&gt, &net, t)?;
        let out_set = out_of_sample_set(&gt, &net, &in_set);
        let first = cfg.algorithms[0].name();

        let mut entries: Vec<(&str, Vec<PathBuf>)> = vec![(
            "initial",
            (0..cfg.n_calibration_runs)
                .map(|r| cfg.run_dir(first, t, r).join("initial_demand.csv"))
                .collect(),
        )];
        for spec in &cfg.algorithms {
            entries.push((
                spec.name(),
                (0..cfg.n_calibration_runs)
                    .map(|r| cfg.run_dir(spec.name(), t, r).join("calibrated_demand.csv"))
                    .collect(),
            ));
        }
        entries.sort_by(|a, b| a.0.cmp(b.0));

        for (name, files) in entries {
            let mut reports = Vec::new();
            let mut sims = Vec::new();
            for (r, file) in files.iter().enumerate() {
                let x = tables::read_demand(file)?;
                x.check_bounds(&net)?;
                let (m, s) = evaluate_demands(
                    &net,
                    &x,
                    &gt,
                    &in_set,
                    &out_set,
                    cfg.final_eval_reps,
                    eval_seed(cfg.master_seed, name, t, r),
                    &cfg.simulator,
                )?;
                reports.push(m);
                sims.push(s);
            }
            let avg = MetricsReport::average(&reports)?;
            tables::write_scatter(cfg.scatter_path(name, t), &scatter_export(&sims, &gt, &in_set)?)?;
            rows.push(ReportRow {
                threshold: t,
                n_in: in_set.len(),
                n_out: out_set.len(),
                algorithm: name.to_string(),
                n_runs: avg.n_runs,
                in_speed: avg.in_sample.speed,
                in_count: avg.in_sample.count,
                out_speed: avg.out_of_sample.map(|p| p.speed),
                out_count: avg.out_of_sample.map(|p| p.count),
            });
        }
    }
    tables::write_report(cfg.report_path(), &rows)?;
    Ok(rows)
}
