//! Synthetic network generator.
//!
//! Layout rule: every zone owns one outbound and one inbound connector
//! segment, and there is a shared pool of arterial segments. A route of OD
//! `(o, d)` is `out(o)`, then a run of arterial segments, then `in(d)`. The
//! routes of one OD draw their arterial segments without replacement from
//! the pool, so they share the first and last segment and differ elsewhere.
//! Route choice weights are uniform on `[0.5, 1.5]`, normalized per OD.
//!
//! Capacities follow the design load at the upper bounds. The design load of
//! a segment is its demand `(A x_U)_i` plus `downstream_headroom` times the
//! demand of its dominant downstream segment (the next segment on the route
//! carrying most flow through it), and `q_max_i` is that load times a factor
//! drawn from `capacity_factor`. With a headroom at least the simulator's
//! spillback coupling, no feasible demand pushes a segment past capacity.
//! The default headroom is well above that so segments feeding a busy
//! downstream segment stay in the informative part of their diagram.
//! Unused arterial segments get a capacity drawn from `idle_q_max_vph`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkDoc, OdPairDoc, RouteDoc, Segment};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_zones: usize,
    pub n_od_pairs: usize,
    pub routes_per_od: usize,
    /// Size of the shared arterial pool.
    pub n_arterials: usize,
    /// Inclusive range of segments per route, connectors included.
    pub segments_per_route: [usize; 2],
    pub x_upper_vph: [f64; 2],
    pub length_m: [f64; 2],
    pub v_max_ms: [f64; 2],
    pub v_min_ms: [f64; 2],
    pub alpha1: [f64; 2],
    pub alpha2: [f64; 2],
    pub capacity_factor: [f64; 2],
    pub downstream_headroom: f64,
    pub idle_q_max_vph: [f64; 2],
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_zones: 8,
            n_od_pairs: 20,
            routes_per_od: 3,
            n_arterials: 84,
            segments_per_route: [4, 6],
            x_upper_vph: [300.0, 900.0],
            length_m: [150.0, 800.0],
            v_max_ms: [11.0, 17.0],
            v_min_ms: [1.0, 2.0],
            alpha1: [1.5, 3.0],
            alpha2: [1.0, 1.5],
            capacity_factor: [1.05, 1.3],
            downstream_headroom: 2.5,
            idle_q_max_vph: [1200.0, 2400.0],
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    /// Scale preset with 62 OD pairs and 3 routes each.
    pub fn large() -> Self {
        Self {
            n_zones: 16,
            n_od_pairs: 62,
            n_arterials: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_zones < 2 {
            return bad("n_zones must be >= 2".into());
        }
        if self.n_od_pairs == 0 || self.n_od_pairs > self.n_zones * (self.n_zones - 1) {
            return bad(format!(
                "n_od_pairs must be in [1, {}] for {} zones",
                self.n_zones * (self.n_zones - 1),
                self.n_zones
            ));
        }
        if self.routes_per_od == 0 {
            return bad("routes_per_od must be >= 1".into());
        }
        let [lo, hi] = self.segments_per_route;
        if lo > hi {
            return bad(format!("segments_per_route range [{lo}, {hi}] is empty"));
        }
        let min_len = if self.routes_per_od > 1 { 3 } else { 2 };
        if lo < min_len {
            return bad(format!("segments_per_route must start at >= {min_len}"));
        }
        let needed = self.routes_per_od * (hi - 2);
        if needed > self.n_arterials {
            return bad(format!("n_arterials = {} but one OD may need {needed}", self.n_arterials));
        }
        let ranges = [
            ("x_upper_vph", self.x_upper_vph, 0.0),
            ("length_m", self.length_m, 0.0),
            ("v_min_ms", self.v_min_ms, 0.0),
            ("alpha1", self.alpha1, 0.0),
            ("alpha2", self.alpha2, 0.0),
            ("capacity_factor", self.capacity_factor, 1.0),
            ("idle_q_max_vph", self.idle_q_max_vph, 0.0),
        ];
        for (name, [a, b], floor) in ranges {
            if !(a > floor && a <= b && b.is_finite()) {
                return bad(format!("{name} range [{a}, {b}] must be nonempty and above {floor}"));
            }
        }
        if !(self.downstream_headroom >= 0.0 && self.downstream_headroom.is_finite()) {
            return bad("downstream_headroom must be >= 0".into());
        }
        if !(self.v_max_ms[0] > self.v_min_ms[1] && self.v_max_ms[0] <= self.v_max_ms[1]) {
            return bad("v_max_ms range must be nonempty and above v_min_ms".into());
        }
        Ok(())
    }
}

fn draw<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates a network document. The output is a deterministic function of
/// the configuration.
pub fn generate_network(cfg: &GeneratorConfig) -> Result<NetworkDoc> {
    cfg.validate()?;
    let nz = cfg.n_zones;
    let n_seg = 2 * nz + cfg.n_arterials;
    let width = n_seg.to_string().len().max(3);
    let seg_id = |k: usize| format!("s{k:0width$}");
    let zw = nz.to_string().len().max(2);
    let zone = |k: usize| format!("z{:0zw$}", k + 1);
    let out_conn = |o: usize| o;
    let in_conn = |d: usize| nz + d;

    let mut rng = stream(cfg.seed, Domain::Generator, 0);
    let mut pairs: Vec<(usize, usize)> = (0..nz)
        .flat_map(|o| (0..nz).filter(move |&d| d != o).map(move |d| (o, d)))
        .collect();
    pairs.shuffle(&mut rng);
    pairs.truncate(cfg.n_od_pairs);
    pairs.sort_unstable();

    let mut rng = stream(cfg.seed, Domain::Generator, 1);
    let pool: Vec<usize> = (2 * nz..n_seg).collect();
    let mut load = vec![0.0; n_seg];
    // (route flow at x_U, next segment) of the dominant route through each segment
    let mut dominant: Vec<(f64, Option<usize>)> = vec![(0.0, None); n_seg];
    let mut od_pairs = Vec::with_capacity(pairs.len());
    for (z, &(o, d)) in pairs.iter().enumerate() {
        let x_upper = draw(&mut rng, cfg.x_upper_vph);
        let lens: Vec<usize> = (0..cfg.routes_per_od)
            .map(|_| rng.random_range(cfg.segments_per_route[0]..=cfg.segments_per_route[1]) - 2)
            .collect();
        let mut picked: Vec<usize> = pool
            .choose_multiple(&mut rng, lens.iter().sum())
            .copied()
            .collect();
        let weights: Vec<f64> = (0..cfg.routes_per_od).map(|_| rng.random_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();

        let mut routes = Vec::with_capacity(cfg.routes_per_od);
        let mut assigned = 0.0;
        for (r, &k) in lens.iter().enumerate() {
            let prob = if r + 1 == lens.len() {
                1.0 - assigned
            } else {
                weights[r] / total
            };
            assigned += prob;
            let mut segs = vec![out_conn(o)];
            segs.extend(picked.drain(..k));
            segs.push(in_conn(d));
            let flow = prob * x_upper;
            for (j, &s) in segs.iter().enumerate() {
                load[s] += flow;
                if flow > dominant[s].0 {
                    dominant[s] = (flow, segs.get(j + 1).copied());
                }
            }
            routes.push(RouteDoc {
                segments: segs.into_iter().map(seg_id).collect(),
                prob,
            });
        }
        od_pairs.push(OdPairDoc {
            id: z + 1,
            origin: zone(o),
            dest: zone(d),
            x_upper_vph: x_upper,
            routes,
        });
    }

    let design: Vec<f64> = (0..n_seg)
        .map(|k| load[k] + cfg.downstream_headroom * dominant[k].1.map_or(0.0, |d| load[d]))
        .collect();
    let segments = (0..n_seg)
        .map(|k| {
            let mut rng = stream(cfg.seed, Domain::Generator, 2 + k as u64);
            let v_max = draw(&mut rng, cfg.v_max_ms);
            let v_min = draw(&mut rng, cfg.v_min_ms);
            let q_max = if load[k] > 0.0 {
                design[k] * draw(&mut rng, cfg.capacity_factor)
            } else {
                draw(&mut rng, cfg.idle_q_max_vph)
            };
            Segment {
                id: seg_id(k),
                length_m: draw(&mut rng, cfg.length_m),
                v_max_ms: v_max,
                v_min_ms: v_min,
                q_max_vph: q_max,
                alpha1: draw(&mut rng, cfg.alpha1),
                alpha2: draw(&mut rng, cfg.alpha2),
            }
        })
        .collect();
    Ok(NetworkDoc { segments, od_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{validate_network, AssignmentMatrix, Network};

    #[test]
    fn default_is_valid_and_desk_scale() {
        let doc = generate_network(&GeneratorConfig::default()).unwrap();
        assert!(validate_network(&doc).is_empty(), "{:?}", validate_network(&doc));
        assert_eq!(doc.od_pairs.len(), 20);
        assert_eq!(doc.segments.len(), 100);
        assert!(doc.od_pairs.iter().all(|od| od.routes.len() == 3));
    }

    #[test]
    fn large_preset_has_186_routes() {
        let doc = generate_network(&GeneratorConfig::large()).unwrap();
        assert!(validate_network(&doc).is_empty());
        assert_eq!(doc.od_pairs.len(), 62);
        assert_eq!(doc.od_pairs.iter().map(|od| od.routes.len()).sum::<usize>(), 186);
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GeneratorConfig::default();
        let a = generate_network(&cfg).unwrap().to_json_string();
        let b = generate_network(&cfg).unwrap().to_json_string();
        assert_eq!(a, b);
        let c = generate_network(&GeneratorConfig { seed: 2, ..cfg }).unwrap().to_json_string();
        assert_ne!(a, c);
    }

    #[test]
    fn routes_share_ends_and_differ_inside() {
        let doc = generate_network(&GeneratorConfig::default()).unwrap();
        for od in &doc.od_pairs {
            let first = &od.routes[0].segments;
            for r in &od.routes {
                assert_eq!(r.segments.first(), first.first());
                assert_eq!(r.segments.last(), first.last());
            }
            for (i, a) in od.routes.iter().enumerate() {
                for b in &od.routes[i + 1..] {
                    let inner_a = &a.segments[1..a.segments.len() - 1];
                    assert!(inner_a.iter().all(|s| !b.segments.contains(s)));
                }
            }
        }
    }

    #[test]
    fn upper_bound_load_is_below_capacity() {
        let net = Network::try_from(generate_network(&GeneratorConfig::default()).unwrap()).unwrap();
        let a = AssignmentMatrix::build(&net);
        let q = a.map_demand(&net.upper_bounds()).unwrap();
        for (s, qi) in net.segments().iter().zip(q) {
            assert!(qi < s.q_max_vph, "{}: {qi} >= {}", s.id, s.q_max_vph);
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let base = GeneratorConfig::default();
        for cfg in [
            GeneratorConfig {
                segments_per_route: [6, 4],
                ..base.clone()
            },
            GeneratorConfig {
                routes_per_od: 0,
                ..base.clone()
            },
            GeneratorConfig {
                n_od_pairs: 57,
                ..base.clone()
            },
            GeneratorConfig {
                n_arterials: 5,
                ..base.clone()
            },
            GeneratorConfig {
                alpha1: [2.0, 1.0],
                ..base.clone()
            },
        ] {
            assert!(generate_network(&cfg).is_err(), "{cfg:?}");
        }
    }
}
