use std::path::Path;
use std::process::{Command, Output};

fn rdpcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rdpcap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

const SPEC: &str = "scenario = example1
n_values = 64, 128, 256
replications = 2
horizon_slots = 20000
target_transitions = 0
calibration_n = 128
calibration_rdp_slots = 2000
";

#[test]
fn sweep_writes_csv_and_fit_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.kv");
    std::fs::write(&spec, SPEC).unwrap();
    let out_dir = dir.path().join("out");
    let v = json(&rdpcap(&[
        "sweep",
        "--spec",
        spec.to_str().unwrap(),
        "--workers",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(v["points"], 6);
    assert_eq!(v["verdict"], "rdp_limited");
    let csv = v["csv"].as_str().unwrap();
    let header = std::fs::read_to_string(csv).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "n,seed,throughput_per_node,xi_measured,tau_measured,active_fraction,lambda_measured,q_measured"
    );
    let stem = Path::new(csv).file_stem().unwrap().to_str().unwrap();
    assert!(out_dir.join(format!("{stem}.json")).exists());
    let fit = json(&rdpcap(&["fit", "--csv", csv, "--x", "n", "--y", "throughput"]));
    assert_eq!(fit["slope"], v["fits"]["throughput"]["slope"]);

    // Same spec, same numbers.
    let again = json(&rdpcap(&[
        "sweep",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(again["fits"], v["fits"]);
    assert_eq!(again["spec_hash"], v["spec_hash"]);
}

#[test]
fn bad_specs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.kv");
    std::fs::write(&spec, format!("{SPEC}colour = red\n")).unwrap();
    assert_eq!(
        rdpcap(&["sweep", "--spec", spec.to_str().unwrap()]).status.code(),
        Some(1)
    );
    std::fs::write(&spec, "scenario = example1\nn_values = 256\n").unwrap();
    assert_eq!(
        rdpcap(&["sweep", "--spec", spec.to_str().unwrap()]).status.code(),
        Some(1)
    );
    assert_eq!(rdpcap(&["sweep", "--spec", "/nonexistent"]).status.code(), Some(1));
    assert_eq!(rdpcap(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(rdpcap(&["--help"]).status.code(), Some(0));
}

#[test]
fn classify_presets() {
    for (name, want) in [
        ("example1", "rdp_limited"),
        ("example2", "rdp_limited"),
        ("example3", "interference_limited"),
    ] {
        let v = json(&rdpcap(&[
            "classify",
            "--scenario",
            name,
            "--n-min",
            "256",
            "--n-max",
            "25600",
        ]));
        assert_eq!(v["regime"], want, "{name}");
    }
    assert_eq!(
        rdpcap(&[
            "classify",
            "--scenario",
            "example1",
            "--n-min",
            "256",
            "--n-max",
            "1024"
        ])
        .status
        .code(),
        Some(1)
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("net.kv");
    std::fs::write(&cfg, "tau_model = inv_sqrt:50\ng_model = step_repair\n").unwrap();
    let v = json(&rdpcap(&[
        "classify",
        "--scenario",
        cfg.to_str().unwrap(),
        "--n-min",
        "100",
        "--n-max",
        "100000",
    ]));
    assert_eq!(v["regime"], "interference_limited");
}

#[test]
fn solve_lambda_constant_and_table() {
    let v = json(&rdpcap(&[
        "solve-lambda",
        "--n",
        "100",
        "--nu",
        "0.1",
        "--tau",
        "10",
        "--qprime",
        "0.5",
    ]));
    assert!((v["lambda"].as_f64().unwrap() - 10.0 / 1.5).abs() < 1e-9);
    assert!((v["xi"].as_f64().unwrap() - 20.0).abs() < 1e-9);
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("q.csv");
    std::fs::write(&table, "lambda,qprime\n0,1\n10,0.1\n").unwrap();
    let v = json(&rdpcap(&[
        "solve-lambda",
        "--n",
        "100",
        "--nu",
        "0.1",
        "--tau",
        "10",
        "--qprime",
        table.to_str().unwrap(),
    ]));
    let (l, q) = (v["lambda"].as_f64().unwrap(), v["q_prime"].as_f64().unwrap());
    assert!((l - 10.0 / (1.0 + q)).abs() < 1e-6);
    std::fs::write(&table, "0,0.1\n10,1\n").unwrap();
    assert_eq!(
        rdpcap(&[
            "solve-lambda",
            "--n",
            "100",
            "--nu",
            "0.1",
            "--tau",
            "10",
            "--qprime",
            table.to_str().unwrap()
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn flood_reports_stats() {
    let v = json(&rdpcap(&[
        "flood",
        "--n",
        "400",
        "--ca",
        "16",
        "--seed",
        "2",
        "--origins",
        "10",
    ]));
    let s = &v["stats"];
    assert!(s["mean_f"].as_f64().unwrap() > 0.0 && s["mean_f"].as_f64().unwrap() <= 1.0);
    assert!(s["chat"].as_f64().unwrap() > 0.0);
    assert_eq!(
        rdpcap(&["flood", "--n", "400", "--ca", "16", "--origins", "0"])
            .status
            .code(),
        Some(1)
    );
}
