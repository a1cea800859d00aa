use std::path::Path;
use std::process::{Command, Output};

use odcal::network::Network;
use odcal::tables::{read_demand, read_report, read_trace};

const CONFIG: &str = r#"{
    "network_path": "network.json",
    "budget": 20,
    "n_calibration_runs": 2,
    "thresholds": [0.9, 1.0],
    "final_eval_reps": 2,
    "gt": {"n_reps": 2},
    "output_dir": "out"
}"#;

fn odcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odcal")).args(args).output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup(dir: &Path) -> String {
    std::fs::write(dir.join("network.json"), odcal::DEMO_NETWORK_JSON).unwrap();
    let cfg = dir.join("exp.json");
    std::fs::write(&cfg, CONFIG).unwrap();
    cfg.to_str().unwrap().to_string()
}

fn run_all(cfg: &str, out_dir: &Path) {
    let o = out_dir.to_str().unwrap();
    ok(odcal(&["gen-gt", "--config", cfg, "--output-dir", o]));
    ok(odcal(&["calibrate", "--config", cfg, "--output-dir", o]));
    ok(odcal(&["report", "--config", cfg, "--output-dir", o]));
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let out = dir.path().join("out");
    run_all(&cfg, &out);

    let net = Network::load(dir.path().join("network.json")).unwrap();
    let rows = read_report(out.join("report/table.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.n_runs, 2);
        assert!(r.in_speed.is_finite() && r.in_speed >= 0.0);
        assert_eq!(r.out_speed.is_none(), r.n_out == 0);
    }
    for alg in ["metamodel", "spsa"] {
        for t in ["0.9", "1"] {
            for run in 0..2 {
                let d = out.join(format!("calibration/{alg}/t{t}/run{run}"));
                let trace = read_trace(d.join("trace.csv"), None).unwrap();
                assert_eq!(trace.len(), 20);
                assert_eq!(trace.last().unwrap().consumed, 20);
                let x = read_demand(d.join("calibrated_demand.csv")).unwrap();
                x.check_bounds(&net).unwrap();
                assert_eq!(d.join("beta.csv").exists(), alg == "metamodel");
            }
        }
        assert!(out.join(format!("report/scatter_{alg}_t1.csv")).exists());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    run_all(&cfg, &dir.path().join("a"));
    run_all(&cfg, &dir.path().join("b"));
    let a = read_tree(&dir.path().join("a"));
    assert!(a.len() > 20);
    assert_eq!(a, read_tree(&dir.path().join("b")));
}

#[test]
fn single_algorithm_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path());
    let o = dir.path().join("out");
    let o = o.to_str().unwrap();
    ok(odcal(&["gen-gt", "--config", &cfg, "--output-dir", o]));
    let text = ok(odcal(&[
        "calibrate", "--config", &cfg, "--output-dir", o, "--algorithm", "spsa", "--threshold", "0.9",
    ]));
    assert_eq!(text.lines().count(), 2, "{text}");
    assert!(text.lines().all(|l| l.starts_with("spsa t=0.9")));
}

#[test]
fn gen_network_writes_a_valid_network() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.json");
    let text = ok(odcal(&["gen-network", "--seed", "7", "--output", p.to_str().unwrap()]));
    assert!(text.contains("100 segments, 20 OD pairs"), "{text}");
    let net = Network::load(&p).unwrap();
    assert_eq!(net.n_od(), 20);
    // default generator settings reproduce the shipped demo network
    let q = dir.path().join("demo.json");
    ok(odcal(&["gen-network", "--output", q.to_str().unwrap()]));
    assert_eq!(std::fs::read_to_string(q).unwrap(), odcal::DEMO_NETWORK_JSON);
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"budget": 0}"#).unwrap();
    let out = odcal(&["gen-gt", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("odcal: error:"));

    let cfg = setup(dir.path());
    let out = odcal(&["calibrate", "--config", &cfg, "--output-dir", dir.path().join("none").to_str().unwrap()]);
    assert!(!out.status.success(), "calibrate without ground truth must fail");
    let out = odcal(&["calibrate", "--config", &cfg, "--algorithm", "annealing"]);
    assert!(!out.status.success());
}
