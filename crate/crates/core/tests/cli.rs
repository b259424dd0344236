//! End-to-end checks of the `lenmap` binary: exit codes, output formats and
//! the run manifest.

use std::path::Path;
use std::process::{Command, Output};

fn lenmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lenmap"))
        .args(args)
        .env_remove("LENMAP_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(lenmap(&["lengthmap", "--act", "relu"]).status.code(), Some(2));
    assert_eq!(lenmap(&["lengthmap", "--act", "relu", "--sw", "-1"]).status.code(), Some(2));
    assert_eq!(lenmap(&["lengthmap", "--act", "nosuch", "--sw", "1"]).status.code(), Some(2));
    assert_eq!(lenmap(&["converge", "--act", "relu", "--sw", "1", "--eps", "0"]).status.code(), Some(2));
    assert_eq!(
        lenmap(&["converge", "--act", "relu", "--sw", "1", "--width", "64", "--width", "32"])
            .status
            .code(),
        Some(2)
    );
    let o = lenmap(&["converge", "--act", "reciprocal", "--sw", "1", "--trials", "5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
    let bad_workers = Command::new(env!("CARGO_BIN_EXE_lenmap"))
        .args(["audit", "--act", "tanh"])
        .env("LENMAP_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(bad_workers.status.code(), Some(2));
    assert_eq!(lenmap(&["--help"]).status.code(), Some(0));
}

#[test]
fn lengthmap_table_and_json_agree() {
    let args = ["lengthmap", "--act", "tanh", "--sw", "1.3", "--sb", "0.2", "--depth", "4"];
    let table = stdout(&lenmap(&args));
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&lenmap(&[&args[..], &["--json"]].concat()))).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("layer,qtilde,tr,status"));
    for (l, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<usize>().unwrap(), l);
        // 17 significant digits round-trip exactly
        assert_eq!(cells[1].parse::<f64>().unwrap(), json["qtilde"][l].as_f64().unwrap());
        assert_eq!(cells[2].parse::<f64>().unwrap(), json["trtilde"][l].as_f64().unwrap());
        assert_eq!(cells[3], "finite");
    }
}

#[test]
fn diverged_layers_print_inf() {
    let out = stdout(&lenmap(&["lengthmap", "--act", "exp_square:1", "--sw", "0.5", "--depth", "3"]));
    let rows: Vec<&str> = out.lines().skip(2).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        assert!(row.ends_with(",diverged"), "{row}");
    }
    let json = stdout(&lenmap(&[
        "lengthmap", "--act", "exp_square:1", "--sw", "0.5", "--depth", "3", "--json",
    ]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(v["trtilde"][1].is_null());
}

#[test]
fn cauchy_writes_listed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = lenmap(&[
        "cauchy", "--width", "10", "--width", "20", "--trials", "30", "--per-init", "--seed", "3",
        "--out", dir.to_str().unwrap(),
    ]);
    stdout(&o);
    let manifest = read_json(&dir.join("manifest.json"));
    assert_eq!(manifest["command"], "cauchy");
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["trials"], 30);
    let listed: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    for name in [
        "cauchy_hist_N10.csv",
        "cauchy_hist_N20.csv",
        "cauchy_init_N10.csv",
        "cauchy_summary.csv",
        "cauchy_fit.json",
    ] {
        assert!(listed.contains(&name), "{name} not in manifest");
    }
    for name in &listed {
        assert!(dir.join(name).is_file(), "{name} missing");
    }

    let hist = std::fs::read_to_string(dir.join("cauchy_hist_N10.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,count,density,cauchy_density,gaussian_density\n"));
    assert_eq!(hist.lines().count(), 101);
    let summary = std::fs::read_to_string(dir.join("cauchy_summary.csv")).unwrap();
    let mut rows = summary.lines().skip(1);
    let first: Vec<&str> = rows.next().unwrap().split(',').collect();
    let binned: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
        .sum();
    let (samples, under, over): (u64, u64, u64) =
        (first[3].parse().unwrap(), first[9].parse().unwrap(), first[10].parse().unwrap());
    assert_eq!(samples, 300);
    assert_eq!(binned + under + over, samples);
}

#[test]
fn independence_reports_gap_with_theory() {
    let o = lenmap(&["independence", "--trials", "3000", "--seed", "1", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["samples"], 3000);
    let theory = v["theoretical_gap"].as_f64().unwrap();
    assert!((theory - 0.125).abs() < 1e-15);
    assert!(v["z_vs_theory"].as_f64().unwrap().abs() < 5.0);

    // unit indices must name two distinct units inside the layer
    let same = lenmap(&["independence", "--trials", "10", "--capture", "2:1,1"]);
    assert_eq!(same.status.code(), Some(2));
}

#[test]
fn seed_changes_results_and_workers_do_not() {
    let run = |seed: &str, workers: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_lenmap"))
            .args(["independence", "--width", "8", "--trials", "1500", "--seed", seed])
            .env("LENMAP_WORKERS", workers)
            .output()
            .unwrap();
        stdout(&o)
    };
    let a = run("1", "1");
    assert_eq!(a, run("1", "2"));
    assert_ne!(a, run("2", "1"));
}
