//! Network data model and the fixed linear map from OD demands to segment
//! demands.
//!
//! A network is read from a JSON document ([`NetworkDoc`]), checked by
//! [`validate_network`], and turned into a [`Network`] whose routes refer to
//! segments by index. The assignment matrix is built once from the route sets
//! and their fixed choice probabilities.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::FdParams;

/// Tolerance on the sum of route choice probabilities of one OD pair.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;

/// A directed road segment as stored in the network document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub length_m: f64,
    pub v_max_ms: f64,
    pub v_min_ms: f64,
    pub q_max_vph: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Segment {
    pub fn fd_params(&self) -> FdParams {
        FdParams {
            v_min: self.v_min_ms,
            v_max: self.v_max_ms,
            q_max: self.q_max_vph,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDoc {
    pub segments: Vec<String>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdPairDoc {
    pub id: usize,
    pub origin: String,
    pub dest: String,
    pub x_upper_vph: f64,
    pub routes: Vec<RouteDoc>,
}

/// The on-disk network document. Field names are normative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub segments: Vec<Segment>,
    pub od_pairs: Vec<OdPairDoc>,
}

impl NetworkDoc {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json_string(&self) -> String {
        // serialization of plain structs with finite floats cannot fail
        let mut s = serde_json::to_string_pretty(self).expect("network serializes");
        s.push('\n');
        s
    }
}

/// One validation finding: which entity broke which rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub entity: String,
    pub rule: &'static str,
    pub message: String,
}

impl Diagnostic {
    fn new(entity: impl Into<String>, rule: &'static str, message: impl Into<String>) -> Self {
        Self {
            entity: entity.into(),
            rule,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} [{}]: {}", self.entity, self.rule, self.message)
    }
}

impl From<Diagnostic> for Error {
    fn from(d: Diagnostic) -> Self {
        Error::Invariant {
            entity: d.entity,
            rule: d.rule,
            message: d.message,
        }
    }
}

/// Checks every structural invariant of a network document. An empty list
/// means the document describes a valid network.
pub fn validate_network(doc: &NetworkDoc) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for s in &doc.segments {
        let ent = format!("segment {}", s.id);
        if !seen.insert(s.id.as_str()) {
            out.push(Diagnostic::new(&ent, "duplicate-id", "segment id is not unique"));
        }
        if !(s.length_m > 0.0 && s.length_m.is_finite()) {
            out.push(Diagnostic::new(&ent, "length", format!("length_m = {} must be > 0", s.length_m)));
        }
        if !(s.v_min_ms >= 0.0 && s.v_min_ms < s.v_max_ms && s.v_max_ms.is_finite()) {
            out.push(Diagnostic::new(
                &ent,
                "speed-order",
                format!("need 0 <= v_min ({}) < v_max ({})", s.v_min_ms, s.v_max_ms),
            ));
        }
        if !(s.q_max_vph > 0.0 && s.q_max_vph.is_finite()) {
            out.push(Diagnostic::new(&ent, "q-max", format!("q_max_vph = {} must be > 0", s.q_max_vph)));
        }
        if !(s.alpha1 > 0.0 && s.alpha2 > 0.0 && s.alpha1.is_finite() && s.alpha2.is_finite()) {
            out.push(Diagnostic::new(
                &ent,
                "fd-alpha",
                format!("alpha1 = {}, alpha2 = {} must be > 0", s.alpha1, s.alpha2),
            ));
        }
    }

    for (pos, od) in doc.od_pairs.iter().enumerate() {
        let ent = format!("od {}", od.id);
        if od.id != pos + 1 {
            out.push(Diagnostic::new(
                &ent,
                "od-index",
                format!("OD ids must be contiguous from 1; expected {}", pos + 1),
            ));
        }
        if !(od.x_upper_vph > 0.0 && od.x_upper_vph.is_finite()) {
            out.push(Diagnostic::new(&ent, "x-upper", format!("x_upper_vph = {} must be > 0", od.x_upper_vph)));
        }
        if od.routes.is_empty() {
            out.push(Diagnostic::new(&ent, "empty-routes", "OD pair has no routes"));
            continue;
        }
        let mut sum = 0.0;
        for (r, route) in od.routes.iter().enumerate() {
            let rent = format!("od {} route {}", od.id, r);
            if !(0.0..=1.0).contains(&route.prob) {
                out.push(Diagnostic::new(&rent, "probability-range", format!("prob = {} outside [0, 1]", route.prob)));
            }
            sum += route.prob;
            if route.segments.is_empty() {
                out.push(Diagnostic::new(&rent, "empty-route", "route has no segments"));
            }
            let mut on_route = HashSet::new();
            for sid in &route.segments {
                if !seen.contains(sid.as_str()) {
                    out.push(Diagnostic::new(sid.clone(), "unknown-segment", format!("referenced by {rent} but not defined")));
                }
                if !on_route.insert(sid.as_str()) {
                    out.push(Diagnostic::new(&rent, "repeated-segment", format!("segment {sid} appears twice")));
                }
            }
        }
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
            out.push(Diagnostic::new(&ent, "probability-sum", format!("route probabilities sum to {sum}")));
        }
    }
    out
}

/// A route with its segments resolved to indices into [`Network::segments`].
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub segments: Vec<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdPair {
    /// 1-based OD index.
    pub id: usize,
    pub origin: String,
    pub dest: String,
    pub x_upper: f64,
    pub routes: Vec<Route>,
}

/// A validated network. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    segments: Vec<Segment>,
    od_pairs: Vec<OdPair>,
    index: HashMap<String, usize>,
}

impl TryFrom<NetworkDoc> for Network {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        if let Some(d) = validate_network(&doc).into_iter().next() {
            return Err(d.into());
        }
        let index: HashMap<String, usize> = doc
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let od_pairs = doc
            .od_pairs
            .into_iter()
            .map(|od| OdPair {
                id: od.id,
                origin: od.origin,
                dest: od.dest,
                x_upper: od.x_upper_vph,
                routes: od
                    .routes
                    .into_iter()
                    .map(|r| Route {
                        segments: r.segments.iter().map(|s| index[s]).collect(),
                        probability: r.prob,
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            segments: doc.segments,
            od_pairs,
            index,
        })
    }
}

/// Parses and validates a network document.
pub fn load_network(text: &str) -> Result<Network> {
    Network::try_from(NetworkDoc::from_json_str(text)?)
}

impl Network {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        load_network(&text)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn od_pairs(&self) -> &[OdPair] {
        &self.od_pairs
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn n_od(&self) -> usize {
        self.od_pairs.len()
    }

    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn upper_bounds(&self) -> Vec<f64> {
        self.od_pairs.iter().map(|od| od.x_upper).collect()
    }

    pub fn to_doc(&self) -> NetworkDoc {
        NetworkDoc {
            segments: self.segments.clone(),
            od_pairs: self
                .od_pairs
                .iter()
                .map(|od| OdPairDoc {
                    id: od.id,
                    origin: od.origin.clone(),
                    dest: od.dest.clone(),
                    x_upper_vph: od.x_upper,
                    routes: od
                        .routes
                        .iter()
                        .map(|r| RouteDoc {
                            segments: r.segments.iter().map(|&i| self.segments[i].id.clone()).collect(),
                            prob: r.probability,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// Hourly demand per OD pair, index `z - 1` for OD `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandVector(pub Vec<f64>);

impl DemandVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks `0 <= x_z <= x_upper(z)` for every component.
    pub fn check_bounds(&self, net: &Network) -> Result<()> {
        if self.0.len() != net.n_od() {
            return Err(Error::Dimension {
                expected: net.n_od(),
                got: self.0.len(),
            });
        }
        for (z, (&v, od)) in self.0.iter().zip(net.od_pairs()).enumerate() {
            if !(v >= 0.0 && v <= od.x_upper) {
                return Err(Error::Bounds {
                    od: z + 1,
                    value: v,
                    upper: od.x_upper,
                });
            }
        }
        Ok(())
    }

    pub fn within_bounds(&self, upper: &[f64]) -> bool {
        self.0.len() == upper.len() && self.0.iter().zip(upper).all(|(&v, &u)| v >= 0.0 && v <= u)
    }
}

impl From<Vec<f64>> for DemandVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Segment-by-OD matrix of route-choice fractions, stored column-wise since
/// each OD touches only the segments on its routes.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    n_segments: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl AssignmentMatrix {
    /// Builds A with `A[i][z] = sum of probabilities of OD z's routes that use segment i`.
    pub fn build(net: &Network) -> Self {
        let columns = net
            .od_pairs()
            .iter()
            .map(|od| {
                let mut col: Vec<(usize, f64)> = Vec::new();
                for r in &od.routes {
                    for &i in &r.segments {
                        match col.iter_mut().find(|(s, _)| *s == i) {
                            Some(entry) => entry.1 += r.probability,
                            None => col.push((i, r.probability)),
                        }
                    }
                }
                col.sort_by_key(|&(i, _)| i);
                col
            })
            .collect();
        Self {
            n_segments: net.n_segments(),
            columns,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_segments
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.columns[col]
            .iter()
            .find(|&&(i, _)| i == row)
            .map_or(0.0, |&(_, a)| a)
    }

    /// Nonzero entries `(segment index, fraction)` of OD column `col` (0-based).
    pub fn column(&self, col: usize) -> &[(usize, f64)] {
        &self.columns[col]
    }

    /// Whether segment `row` lies on at least one route.
    pub fn is_routed(&self, row: usize) -> bool {
        self.columns.iter().any(|c| c.iter().any(|&(i, a)| i == row && a > 0.0))
    }

    /// q = A x.
    pub fn map_demand(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.columns.len() {
            return Err(Error::Dimension {
                expected: self.columns.len(),
                got: x.len(),
            });
        }
        let mut q = vec![0.0; self.n_segments];
        for (col, &xz) in self.columns.iter().zip(x) {
            for &(i, a) in col {
                q[i] += a * xz;
            }
        }
        Ok(q)
    }

    /// Aᵀ r.
    pub fn transpose_mul(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.n_segments {
            return Err(Error::Dimension {
                expected: self.n_segments,
                got: r.len(),
            });
        }
        Ok(self
            .columns
            .iter()
            .map(|col| col.iter().map(|&(i, a)| a * r[i]).sum())
            .collect())
    }
}

/// Convenience wrapper for `A.map_demand(x)`.
pub fn map_demand(a: &AssignmentMatrix, x: &DemandVector) -> Result<Vec<f64>> {
    a.map_demand(x.values())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str) -> Segment {
        Segment {
            id: id.into(),
            length_m: 200.0,
            v_max_ms: 15.0,
            v_min_ms: 2.0,
            q_max_vph: 1800.0,
            alpha1: 2.0,
            alpha2: 1.0,
        }
    }

    fn doc(segs: &[&str], ods: Vec<Vec<(Vec<&str>, f64)>>) -> NetworkDoc {
        NetworkDoc {
            segments: segs.iter().map(|s| seg(s)).collect(),
            od_pairs: ods
                .into_iter()
                .enumerate()
                .map(|(z, routes)| OdPairDoc {
                    id: z + 1,
                    origin: format!("o{z}"),
                    dest: format!("d{z}"),
                    x_upper_vph: 1000.0,
                    routes: routes
                        .into_iter()
                        .map(|(s, p)| RouteDoc {
                            segments: s.into_iter().map(String::from).collect(),
                            prob: p,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn minimal_document_loads() {
        let text = r#"{
            "segments": [{"id": "a", "length_m": 100, "v_max_ms": 14, "v_min_ms": 1,
                          "q_max_vph": 1500, "alpha1": 2, "alpha2": 1}],
            "od_pairs": [{"id": 1, "origin": "A", "dest": "B", "x_upper_vph": 800,
                          "routes": [{"segments": ["a"], "prob": 1.0}]}]
        }"#;
        let net = load_network(text).unwrap();
        assert_eq!(net.n_od(), 1);
        assert_eq!(net.n_segments(), 1);
    }

    #[test]
    fn unknown_segment_is_named() {
        let d = doc(&["a"], vec![vec![(vec!["a", "s99"], 1.0)]]);
        let err = Network::try_from(d).unwrap_err().to_string();
        assert!(err.contains("s99"), "{err}");
    }

    #[test]
    fn missing_field_is_schema_error() {
        let text = r#"{"segments": [{"id": "a"}], "od_pairs": []}"#;
        assert!(matches!(load_network(text), Err(Error::Schema(_))));
    }

    #[test]
    fn probability_sum_diagnostic() {
        let d = doc(&["a", "b"], vec![vec![(vec!["a"], 0.5), (vec!["b"], 0.6)]]);
        let diags = validate_network(&d);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].rule, "probability-sum");
        assert_eq!(diags[0].entity, "od 1");
    }

    #[test]
    fn speed_order_diagnostic() {
        let mut d = doc(&["a"], vec![vec![(vec!["a"], 1.0)]]);
        d.segments[0].v_min_ms = 20.0;
        let diags = validate_network(&d);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].rule, "speed-order");
    }

    #[test]
    fn other_invariants_flagged() {
        let mut d = doc(&["a", "a"], vec![vec![(vec!["a", "a"], 1.0)]]);
        d.od_pairs[0].id = 3;
        d.od_pairs[0].x_upper_vph = 0.0;
        let rules: Vec<_> = validate_network(&d).into_iter().map(|d| d.rule).collect();
        for r in ["duplicate-id", "od-index", "x-upper", "repeated-segment"] {
            assert!(rules.contains(&r), "{r} missing from {rules:?}");
        }
    }

    #[test]
    fn single_route_column() {
        let net = Network::try_from(doc(&["a", "b", "c"], vec![vec![(vec!["a", "b"], 1.0)]])).unwrap();
        let a = AssignmentMatrix::build(&net);
        assert_eq!((0..3).map(|i| a.get(i, 0)).collect::<Vec<_>>(), vec![1.0, 1.0, 0.0]);
        assert!(!a.is_routed(2));
    }

    #[test]
    fn split_routes_sum_probabilities() {
        let net = Network::try_from(doc(
            &["a", "b", "c"],
            vec![vec![(vec!["a", "b"], 0.6), (vec!["a", "c"], 0.4)]],
        ))
        .unwrap();
        let a = AssignmentMatrix::build(&net);
        assert_eq!(a.get(0, 0), 1.0);
        assert_eq!(a.get(1, 0), 0.6);
        assert_eq!(a.get(2, 0), 0.4);

        let q = map_demand(&a, &DemandVector(vec![100.0])).unwrap();
        assert_eq!(q, vec![100.0, 60.0, 40.0]);
        assert_eq!(map_demand(&a, &DemandVector(vec![0.0])).unwrap(), vec![0.0; 3]);
        let q2 = map_demand(&a, &DemandVector(vec![200.0])).unwrap();
        assert!(q.iter().zip(&q2).all(|(a, b)| 2.0 * a == *b));
    }

    #[test]
    fn shared_segment_row() {
        let net = Network::try_from(doc(
            &["a", "b", "c"],
            vec![vec![(vec!["a", "b"], 1.0)], vec![(vec!["a", "c"], 1.0)]],
        ))
        .unwrap();
        let a = AssignmentMatrix::build(&net);
        assert_eq!([a.get(0, 0), a.get(0, 1)], [1.0, 1.0]);
    }

    #[test]
    fn map_demand_dimension_mismatch() {
        let net = Network::try_from(doc(&["a"], vec![vec![(vec!["a"], 1.0)]])).unwrap();
        let a = AssignmentMatrix::build(&net);
        assert!(matches!(
            a.map_demand(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn doc_round_trip() {
        let d = doc(&["a", "b", "c"], vec![vec![(vec!["a", "b"], 0.25), (vec!["a", "c"], 0.75)]]);
        let net = Network::try_from(d.clone()).unwrap();
        assert_eq!(net.to_doc(), d);
        assert_eq!(NetworkDoc::from_json_str(&d.to_json_string()).unwrap(), d);
    }

    #[test]
    fn bounds_check() {
        let net = Network::try_from(doc(&["a"], vec![vec![(vec!["a"], 1.0)]])).unwrap();
        assert!(DemandVector(vec![1000.0]).check_bounds(&net).is_ok());
        assert!(matches!(
            DemandVector(vec![1000.5]).check_bounds(&net),
            Err(Error::Bounds { od: 1, .. })
        ));
        assert!(DemandVector(vec![-1.0]).check_bounds(&net).is_err());
    }
}
