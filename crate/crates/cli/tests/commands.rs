use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fluxgrad::fit::{synthetic_spectrum, FitParams, FIT_DIM_FULL};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluxgrad"))
}

fn chain3() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/chain3.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn spectrum_prints_dressed_frequencies() {
    let g = chain3();
    let out = stdout(&run(&[
        "spectrum",
        g.to_str().unwrap(),
        "--truncated-dim",
        "3",
        "--share-params",
        "--unify-coupling",
    ]));
    let line = |label: &str| -> f64 {
        let row = out.lines().find(|l| l.starts_with(&format!("{label},"))).unwrap();
        row.split(',').nth(1).unwrap().parse().unwrap()
    };
    assert_eq!(format!("{:.3}", line("1_0_0")), "0.499");
    assert_eq!(format!("{:.3}", line("0_1_0")), "0.582");
    assert_eq!(line("0_0_0"), 0.0);
    assert_eq!(out.lines().count(), 1 + 27);
}

#[test]
fn zz_without_coupling_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(chain3()).unwrap();
    let mut g = fluxgrad::DeviceGraph::from_json(&text).unwrap();
    for e in &mut g.edges {
        e.coupling.capacitive = 0.0;
        e.coupling.inductive = 0.0;
    }
    let path = dir.path().join("free.json");
    std::fs::write(&path, g.to_json()).unwrap();
    let out = stdout(&run(&["spectrum", path.to_str().unwrap(), "--zz", "q1,q2", "--zz", "q2,q3"]));
    let zz: Vec<_> = out.lines().filter(|l| l.starts_with("zz_mhz")).collect();
    assert_eq!(zz, ["zz_mhz,q1,q2,0.000000", "zz_mhz,q2,q3,0.000000"]);
}

#[test]
fn input_errors_exit_with_two() {
    let o = run(&["spectrum", "/nonexistent/graph.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph.json"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"nodes": {"q1": {"ec": -1}}}"#).unwrap();
    let o = run(&["spectrum", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("q1"));

    let g = chain3();
    let o = run(&["spectrum", g.to_str().unwrap(), "--zz", "q1,q9"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["evolve", g.to_str().unwrap(), "--trotter-order", "3", "--tg", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evolve_without_drives_is_diagonal() {
    let g = chain3();
    let out = stdout(&run(&[
        "evolve",
        g.to_str().unwrap(),
        "--tg",
        "5",
        "--astep",
        "200",
        "--trotter-order",
        "4",
        "--basis",
        "eigen",
    ]));
    let mut rows = 0;
    for line in out.lines().skip(1) {
        let f: Vec<_> = line.split(',').collect();
        let (re, im): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        let m = re.hypot(im);
        if f[0] == f[1] {
            assert!((m - 1.0).abs() < 1e-7, "{line}");
        } else {
            assert!(m < 1e-7, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 8 * 8);
}

#[test]
fn grad_table_is_keyed_by_shared_parameters() {
    let g = chain3();
    let args = [
        "grad",
        g.to_str().unwrap(),
        "--share-params",
        "--unify-coupling",
        "--cr",
        "q1,q2,20",
        "--astep",
        "100",
        "--target",
        "cnot(q1,q2)",
    ];
    let out = stdout(&run(&args));
    let keys: Vec<_> = out
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    for k in ["grey.ec", "grey.ej", "grey.el", "blue.ec", "green.el", "q1.pulse0.amp", "q1.pulse0.omega_d"] {
        assert!(keys.contains(&k), "{k} missing from {keys:?}");
    }
    assert!(keys.iter().all(|k| !k.starts_with("q2.")));
    assert!(out.starts_with("# infidelity "));
    assert_eq!(stdout(&run(&args)), out);
}

#[test]
fn optimize_trace_never_increases() {
    let g = chain3();
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let graph_out = dir.path().join("opt.json");
    let o = run(&[
        "optimize",
        g.to_str().unwrap(),
        "--share-params",
        "--unify-coupling",
        "--cr",
        "q1,q2,20",
        "--astep",
        "100",
        "--target",
        "cnot(q1,q2)",
        "--compensation",
        "zrot",
        "--max-iter",
        "4",
        "--out",
        trace.to_str().unwrap(),
        "--graph-out",
        graph_out.to_str().unwrap(),
    ]);
    stdout(&o);
    let text = std::fs::read_to_string(&trace).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(values.len() >= 2);
    assert!(values.windows(2).all(|w| w[1] <= w[0]), "{values:?}");
    let opt = fluxgrad::DeviceGraph::from_json(&std::fs::read_to_string(&graph_out).unwrap()).unwrap();
    assert_eq!(opt.nodes["q1"].pulses.len(), 1);
}

#[test]
fn fit_recovers_synthetic_parameters() {
    let truth = FitParams {
        ec: 1.0,
        ej: 4.0,
        el: 1.0,
        a: 3.0,
        b: 0.2,
        lambda: 0.05,
        c: 0.02,
    };
    let x: Vec<f64> = (0..41).map(|i| i as f64 * 0.025).collect();
    let eps: Vec<f64> = (0..291).map(|i| 0.2 + i as f64 * 0.02).collect();
    let data = synthetic_spectrum(&truth, &x, &eps, FIT_DIM_FULL).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("spectrum.csv");
    let mut w = csv::Writer::from_path(&csv_path).unwrap();
    w.write_record(["x", "eps", "p"]).unwrap();
    for (xv, e, p) in data.triples() {
        w.write_record([xv.to_string(), e.to_string(), p.to_string()]).unwrap();
    }
    w.flush().unwrap();
    let init = FitParams {
        ec: 1.1,
        ej: 3.8,
        el: 0.95,
        a: 3.1,
        b: 0.18,
        lambda: 0.06,
        c: 0.03,
    };
    let init_path = dir.path().join("init.json");
    std::fs::write(&init_path, serde_json::to_string(&init).unwrap()).unwrap();
    let out_path = dir.path().join("fit.json");
    let curve_path = dir.path().join("f01.csv");
    stdout(&run(&[
        "fit",
        csv_path.to_str().unwrap(),
        "--init",
        init_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--curve",
        curve_path.to_str().unwrap(),
    ]));
    let fitted: FitParams = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    for (name, (got, want)) in FitParams::NAMES.iter().zip(fitted.to_vec().into_iter().zip(truth.to_vec())) {
        if ["ec", "ej", "el", "a", "b"].contains(name) {
            assert!((got - want).abs() < 0.01 * want.abs(), "{name}: {got} vs {want}");
        }
    }
    let curve = std::fs::read_to_string(&curve_path).unwrap();
    assert_eq!(curve.lines().count(), 1 + x.len());
}

#[test]
fn malformed_spectrum_csv_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("s.csv");
    std::fs::write(&csv_path, "x,eps,p\n0,1,0.5\n0,1.1,oops\n").unwrap();
    let init_path = dir.path().join("init.json");
    std::fs::write(&init_path, r#"{"ec":1,"ej":4,"el":1,"a":3,"b":0.2,"lambda":0.05,"c":0.02}"#).unwrap();
    let o = run(&["fit", csv_path.to_str().unwrap(), "--init", init_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
