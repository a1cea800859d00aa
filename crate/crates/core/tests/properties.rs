use proptest::prelude::*;

use odcal::eval::{nrmse, segment_weight};
use odcal::fd::{fd_speed, fd_speed_gradient, FdParams};
use odcal::network::{AssignmentMatrix, DemandVector};
use odcal::simulator::{simulate, SimulatorConfig};
use odcal::solvers::{calibrate_spsa, QuadraticOracle, SpsaConfig};

fn fd_params() -> impl Strategy<Value = FdParams> {
    (0.0..3.0f64, 5.0..20.0f64, 500.0..3000.0f64, 0.5..4.0f64, 0.5..3.0f64).prop_map(
        |(v_min, span, q_max, alpha1, alpha2)| FdParams {
            v_min,
            v_max: v_min + span,
            q_max,
            alpha1,
            alpha2,
        },
    )
}

fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0..1.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn fd_is_monotone_and_bounded(p in fd_params(), a in 0.0..1.2f64, b in 0.0..1.2f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (v_lo, v_hi) = (fd_speed(&p, lo * p.q_max), fd_speed(&p, hi * p.q_max));
        prop_assert!(v_hi <= v_lo);
        prop_assert!(v_lo <= p.v_max && v_hi >= p.v_min);
        prop_assert!(fd_speed_gradient(&p, lo * p.q_max) <= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_is_linear(x in unit_vec(20), y in unit_vec(20), s in -2.0..2.0f64) {
        let net = odcal::demo_network();
        let a = AssignmentMatrix::build(&net);
        let u = net.upper_bounds();
        let x: Vec<f64> = x.iter().zip(&u).map(|(v, u)| v * u).collect();
        let y: Vec<f64> = y.iter().zip(&u).map(|(v, u)| v * u).collect();
        let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + s * b).collect();
        let (qx, qy, qc) = (a.map_demand(&x).unwrap(), a.map_demand(&y).unwrap(), a.map_demand(&comb).unwrap());
        for i in 0..qc.len() {
            prop_assert!((qc[i] - (qx[i] + s * qy[i])).abs() <= 1e-9 * (1.0 + qc[i].abs()));
        }
    }

    #[test]
    fn simulator_is_deterministic_per_seed(x in unit_vec(20), seed in any::<u64>()) {
        let net = odcal::demo_network();
        let x = DemandVector(x.iter().zip(net.upper_bounds()).map(|(v, u)| v * u).collect());
        let cfg = SimulatorConfig::default();
        let a = simulate(&net, &x, seed, &cfg).unwrap();
        let b = simulate(&net, &x, seed, &cfg).unwrap();
        prop_assert_eq!(&a.speeds, &b.speeds);
        prop_assert_eq!(&a.counts, &b.counts);
        for (v, s) in a.speeds.iter().zip(net.segments()) {
            prop_assert!(*v > 0.0 && v.is_finite());
            prop_assert!(*v <= s.v_max_ms * 1.5);
        }
    }

    #[test]
    fn nrmse_is_scale_free(v in proptest::collection::vec(1.0..20.0f64, 2..30), k in 0.1..10.0f64) {
        let gt: Vec<f64> = v.iter().map(|x| x + 1.0).collect();
        let a = nrmse(&v, &gt).unwrap();
        let scaled_v: Vec<f64> = v.iter().map(|x| x * k).collect();
        let scaled_gt: Vec<f64> = gt.iter().map(|x| x * k).collect();
        let b = nrmse(&scaled_v, &scaled_gt).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn segment_weight_in_unit_half(v in 0.0..30.0f64, vmax in 1.0..30.0f64) {
        let w = segment_weight(v, vmax).unwrap();
        prop_assert!((0.0..=0.5).contains(&w));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spsa_spends_exact_budget_inside_the_box(
        budget in 8usize..40,
        seed in any::<u64>(),
        t in unit_vec(4),
        x0 in unit_vec(4),
    ) {
        let upper = vec![500.0, 800.0, 300.0, 650.0];
        let scale = |v: &[f64]| v.iter().zip(&upper).map(|(a, u)| a * u).collect::<Vec<_>>();
        let mut oracle = QuadraticOracle { target: scale(&t), upper: upper.clone() };
        let x0 = DemandVector(scale(&x0));
        let spsa = calibrate_spsa(&mut oracle, &x0, budget, &SpsaConfig { seed, ..SpsaConfig::default() }).unwrap();
        // SPSA evaluates in pairs, so an odd unit is left unspent
        prop_assert_eq!(spsa.consumed(), budget / 2 * 2);
        prop_assert!(spsa.entries.iter().all(|e| DemandVector(e.candidate.clone()).within_bounds(&upper)));
        let best = spsa.entries.iter().map(|e| e.candidate_loss).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(spsa.best_loss, best);
    }
}

/// Five-point differences are accurate enough at h = 1e-3 x_U to pin the
/// analytic gradient of the demo loss far below the plain central-difference
/// truncation error.
#[test]
fn demo_loss_gradient_matches_five_point_differences() {
    use odcal::eval::{segment_weights, select_segments_by_congestion};
    use odcal::metamodel::LossContext;
    use odcal::rng::{stream, Domain};
    use odcal::simulator::{generate_gt, generate_gt_demands};
    use rand::Rng;

    let net = odcal::demo_network();
    let gt = generate_gt(&net, &generate_gt_demands(&net, 3), 2, 3, &SimulatorConfig::default()).unwrap();
    let set = select_segments_by_congestion(&gt, &net, 1.0).unwrap();
    let ctx = LossContext::new(&net, &gt, &segment_weights(&net, &gt), &set).unwrap();
    let upper = net.upper_bounds();
    let mut rng = stream(5, Domain::Search, 0);
    for _ in 0..20 {
        let x: Vec<f64> = upper.iter().map(|&u| rng.random_range(0.01 * u..0.99 * u)).collect();
        let g = ctx.gradient(&x).unwrap();
        let f = |z: usize, d: f64| {
            let mut y = x.clone();
            y[z] += d;
            ctx.loss(&y).unwrap()
        };
        let num: Vec<f64> = (0..x.len())
            .map(|z| {
                let h = 1e-3 * upper[z];
                (-f(z, 2.0 * h) + 8.0 * f(z, h) - 8.0 * f(z, -h) + f(z, -2.0 * h)) / (12.0 * h)
            })
            .collect();
        let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = g.iter().zip(&num).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err <= 1e-6 * scale, "err {err:e} scale {scale:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    // With spillback on, raising one OD can move a segment's dominant
    // downstream segment to a less loaded one and so raise its speed; the
    // property holds with the FD bias alone.
    fn raising_demand_never_raises_speed_without_noise(x in unit_vec(20), z in 0usize..20, bump in 0.0..0.2f64) {
        let net = odcal::demo_network();
        let u = net.upper_bounds();
        let cfg = SimulatorConfig {
            param_bias_scale: 0.15,
            bias_seed: 3,
            ..SimulatorConfig::noise_free()
        };
        let base: Vec<f64> = x.iter().zip(&u).map(|(v, u)| v * u * 0.8).collect();
        let mut up = base.clone();
        up[z] += bump * u[z];
        let a = simulate(&net, &DemandVector(base), 0, &cfg).unwrap();
        let b = simulate(&net, &DemandVector(up), 0, &cfg).unwrap();
        for (i, (vb, va)) in b.speeds.iter().zip(&a.speeds).enumerate() {
            prop_assert!(vb <= va, "segment {}: {} -> {}", i, va, vb);
        }
    }
}
