//! Comma-separated file formats. Every writer has a matching reader, and
//! floats are written in shortest round-trip form so reading back is exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::ScatterRow;
use crate::metamodel::MetamodelParams;
use crate::network::{DemandVector, Network};
use crate::simulator::GroundTruth;
use crate::solvers::TraceEntry;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().flexible(true).from_writer(file))
}

fn write_rows(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    let csv_err = |e: csv::Error| Error::parse(path, e);
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = r
        .headers()
        .map_err(|e| Error::parse(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|r| r.iter().map(String::from).collect())
                .map_err(|e| Error::parse(path, e))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn num(path: &Path, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, format!("not a number: {s:?}")))
}

fn int(path: &Path, s: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(path, format!("not an integer: {s:?}")))
}

fn expect_header(path: &Path, got: &[String], prefix: &[&str]) -> Result<()> {
    if got.len() < prefix.len() || got.iter().zip(prefix).any(|(g, p)| g != p) {
        return Err(Error::parse(path, format!("expected header starting with {prefix:?}, got {got:?}")));
    }
    Ok(())
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// `od_id,demand_vph`, one row per OD.
pub fn write_demand(path: impl AsRef<Path>, x: &DemandVector) -> Result<()> {
    let rows = x
        .values()
        .iter()
        .enumerate()
        .map(|(z, v)| vec![(z + 1).to_string(), f(*v)])
        .collect();
    write_rows(path.as_ref(), vec!["od_id".into(), "demand_vph".into()], rows)
}

pub fn read_demand(path: impl AsRef<Path>) -> Result<DemandVector> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["od_id", "demand_vph"])?;
    let mut out = Vec::with_capacity(rows.len());
    for (k, r) in rows.iter().enumerate() {
        if r.len() != 2 || int(path, &r[0])? != k + 1 {
            return Err(Error::parse(path, format!("row {} must be `{},<demand>`", k + 1, k + 1)));
        }
        out.push(num(path, &r[1])?);
    }
    Ok(DemandVector(out))
}

/// `segment_id,gt_speed_ms,gt_count_vph,rep_1_speed,...,rep_n_speed`.
pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let mut header: Vec<String> = ["segment_id", "gt_speed_ms", "gt_count_vph"].map(String::from).to_vec();
    header.extend((1..=gt.n_replications).map(|r| format!("rep_{r}_speed")));
    let rows = (0..gt.len())
        .map(|i| {
            let mut row = vec![gt.segment_ids[i].clone(), f(gt.speeds[i]), f(gt.counts[i])];
            row.extend(gt.replicate_speeds[i].iter().map(|v| f(*v)));
            row
        })
        .collect();
    write_rows(path.as_ref(), header, rows)
}

/// Reads a GT table and orders it by network segment. Every network segment
/// must have a row. The GT demand is never part of this file.
pub fn read_ground_truth(path: impl AsRef<Path>, net: &Network) -> Result<GroundTruth> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["segment_id", "gt_speed_ms", "gt_count_vph"])?;
    let n_reps = header.len() - 3;
    let n = net.n_segments();
    let mut speeds = vec![f64::NAN; n];
    let mut counts = vec![f64::NAN; n];
    let mut reps = vec![Vec::new(); n];
    for r in &rows {
        if r.len() != header.len() {
            return Err(Error::parse(path, format!("row for {} has {} fields", r[0], r.len())));
        }
        let Some(i) = net.segment_index(&r[0]) else {
            return Err(Error::parse(path, format!("unknown segment {}", r[0])));
        };
        speeds[i] = num(path, &r[1])?;
        counts[i] = num(path, &r[2])?;
        reps[i] = r[3..].iter().map(|s| num(path, s)).collect::<Result<_>>()?;
    }
    if let Some(i) = speeds.iter().position(|v| v.is_nan()) {
        return Err(Error::MissingSegment(net.segments()[i].id.clone()));
    }
    Ok(GroundTruth {
        segment_ids: net.segments().iter().map(|s| s.id.clone()).collect(),
        speeds,
        counts,
        replicate_speeds: reps,
        n_replications: n_reps,
        gt_demand: None,
    })
}

/// `index,value` rows of one coefficient vector.
pub fn write_params(path: impl AsRef<Path>, p: &MetamodelParams) -> Result<()> {
    let rows = p.beta.iter().enumerate().map(|(k, b)| vec![k.to_string(), f(*b)]).collect();
    write_rows(path.as_ref(), vec!["index".into(), "value".into()], rows)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<MetamodelParams> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["index", "value"])?;
    let beta = rows.iter().map(|r| num(path, &r[1])).collect::<Result<_>>()?;
    Ok(MetamodelParams { beta, epoch: 0 })
}

/// Trace rows `epoch,consumed,candidate_loss,accepted,best_loss,x_1..x_n`.
/// Metamodel coefficients go to the companion file `beta_path` as
/// `consumed,epoch,beta_0..beta_{n+1}`.
pub fn write_trace(path: impl AsRef<Path>, beta_path: Option<&Path>, entries: &[TraceEntry]) -> Result<()> {
    let n = entries.first().map_or(0, |e| e.candidate.len());
    let mut header: Vec<String> = ["epoch", "consumed", "candidate_loss", "accepted", "best_loss"]
        .map(String::from)
        .to_vec();
    header.extend((1..=n).map(|z| format!("x_{z}")));
    let rows = entries
        .iter()
        .map(|e| {
            let mut row = vec![
                e.epoch.to_string(),
                e.consumed.to_string(),
                f(e.candidate_loss),
                e.accepted.to_string(),
                f(e.best_loss),
            ];
            row.extend(e.candidate.iter().map(|v| f(*v)));
            row
        })
        .collect();
    write_rows(path.as_ref(), header, rows)?;

    if let Some(bp) = beta_path {
        let mut header: Vec<String> = vec!["consumed".into(), "epoch".into()];
        header.extend((0..n + 2).map(|k| format!("beta_{k}")));
        let rows = entries
            .iter()
            .filter_map(|e| {
                e.beta.as_ref().map(|b| {
                    let mut row = vec![e.consumed.to_string(), e.epoch.to_string()];
                    row.extend(b.iter().map(|v| f(*v)));
                    row
                })
            })
            .collect();
        write_rows(bp, header, rows)?;
    }
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>, beta_path: Option<&Path>) -> Result<Vec<TraceEntry>> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &["epoch", "consumed", "candidate_loss", "accepted", "best_loss"])?;
    let mut entries = rows
        .iter()
        .map(|r| {
            Ok(TraceEntry {
                epoch: int(path, &r[0])?,
                consumed: int(path, &r[1])?,
                candidate_loss: num(path, &r[2])?,
                accepted: r[3]
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad flag {:?}", r[3])))?,
                best_loss: num(path, &r[4])?,
                candidate: r[5..].iter().map(|s| num(path, s)).collect::<Result<_>>()?,
                beta: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(bp) = beta_path {
        let (header, rows) = read_rows(bp)?;
        expect_header(bp, &header, &["consumed", "epoch"])?;
        for r in rows {
            let consumed = int(bp, &r[0])?;
            let beta = r[2..].iter().map(|s| num(bp, s)).collect::<Result<Vec<_>>>()?;
            let e = entries
                .iter_mut()
                .find(|e| e.consumed == consumed)
                .ok_or_else(|| Error::parse(bp, format!("no trace row with consumed = {consumed}")))?;
            e.beta = Some(beta);
        }
    }
    Ok(entries)
}

pub const SCATTER_HEADER: [&str; 4] = ["segment_id", "gt_speed", "sim_speed_mean", "sim_speed_std"];

pub fn write_scatter(path: impl AsRef<Path>, rows: &[ScatterRow]) -> Result<()> {
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.segment_id.clone(),
                f(r.gt_speed),
                f(r.sim_speed_mean),
                f(r.sim_speed_std),
            ]
        })
        .collect();
    write_rows(path.as_ref(), SCATTER_HEADER.map(String::from).to_vec(), body)
}

pub fn read_scatter(path: impl AsRef<Path>) -> Result<Vec<ScatterRow>> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &SCATTER_HEADER)?;
    rows.iter()
        .map(|r| {
            Ok(ScatterRow {
                segment_id: r[0].clone(),
                gt_speed: num(path, &r[1])?,
                sim_speed_mean: num(path, &r[2])?,
                sim_speed_std: num(path, &r[3])?,
            })
        })
        .collect()
}

/// One row of the comparison table. Out-of-sample values are `None` when
/// the out-of-sample set is empty and are written as `-`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub threshold: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub algorithm: String,
    pub n_runs: usize,
    pub in_speed: f64,
    pub in_count: f64,
    pub out_speed: Option<f64>,
    pub out_count: Option<f64>,
}

pub const REPORT_HEADER: [&str; 9] = [
    "threshold",
    "n_in_sample",
    "n_out_of_sample",
    "algorithm",
    "n_runs",
    "in_speed_nrmse",
    "in_count_nrmse",
    "out_speed_nrmse",
    "out_count_nrmse",
];

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), f);
    let body = rows
        .iter()
        .map(|r| {
            vec![
                f(r.threshold),
                r.n_in.to_string(),
                r.n_out.to_string(),
                r.algorithm.clone(),
                r.n_runs.to_string(),
                f(r.in_speed),
                f(r.in_count),
                opt(r.out_speed),
                opt(r.out_count),
            ]
        })
        .collect();
    write_rows(path.as_ref(), REPORT_HEADER.map(String::from).to_vec(), body)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let (header, rows) = read_rows(path)?;
    expect_header(path, &header, &REPORT_HEADER)?;
    let opt = |s: &str| -> Result<Option<f64>> {
        if s == "-" {
            Ok(None)
        } else {
            num(path, s).map(Some)
        }
    };
    rows.iter()
        .map(|r| {
            Ok(ReportRow {
                threshold: num(path, &r[0])?,
                n_in: int(path, &r[1])?,
                n_out: int(path, &r[2])?,
                algorithm: r[3].clone(),
                n_runs: int(path, &r[4])?,
                in_speed: num(path, &r[5])?,
                in_count: num(path, &r[6])?,
                out_speed: opt(&r[7])?,
                out_count: opt(&r[8])?,
            })
        })
        .collect()
}
