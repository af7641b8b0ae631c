use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikesync::fixtures::{independent_poisson, synchrony_pair_spec, up_state_experiment, UpStateOptions};
use spikesync::simulate::{sequences_to_experiment, simulate_marked_trials, Curve};
use spikesync::spikedata::{save_experiment, ExperimentData, Format, SpikeTrain};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikesync"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synchrony_data(dir: &Path) -> PathBuf {
    let spec = synchrony_pair_spec(20.0, 2.0, 1.0, 0.005, 0.003);
    let seqs = simulate_marked_trials(&spec, 60, 5).unwrap();
    let path = dir.join("events.csv");
    save_experiment(&sequences_to_experiment(&seqs).unwrap(), &path, Format::Csv).unwrap();
    path
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Runs `args` into three output directories (two thread counts, one rerun)
/// and checks every file is byte-identical.
fn deterministic(base: &Path, name: &str, args: &[&str]) {
    let mut seen = Vec::new();
    for (k, threads) in ["1", "3", "3"].iter().enumerate() {
        let out = base.join(format!("{name}{k}"));
        let mut full = vec!["--threads", threads];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--output-dir", s(&out)]);
        ok(&full);
        let mut f = files(&out);
        // the echoed config names the output directory
        for (_, bytes) in f.iter_mut() {
            let text = String::from_utf8_lossy(bytes).replace(s(&out), "OUT");
            *bytes = text.into_bytes();
        }
        seen.push(f);
    }
    assert!(!seen[0].is_empty());
    assert_eq!(seen[0], seen[1], "{name}: thread count changed the output");
    assert_eq!(seen[1], seen[2], "{name}: rerun changed the output");
}

#[test]
fn commands_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synchrony_data(dir.path());
    let input = s(&data);
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        serde_json::to_string(&synchrony_pair_spec(20.0, 2.0, 2.0, 0.005, 0.01)).unwrap(),
    )
    .unwrap();
    let base = dir.path();
    deterministic(
        base,
        "sim",
        &["simulate", "--spec", s(&spec), "--reps", "20", "--seed", "3"],
    );
    deterministic(
        base,
        "fit",
        &[
            "fit",
            "--input",
            input,
            "--seed",
            "1",
            "--mode",
            "conditional",
            "--own-window",
            "0.02",
        ],
    );
    deterministic(
        base,
        "test",
        &["test", "--input", input, "--seed", "2", "--bootstrap", "100"],
    );
    deterministic(
        base,
        "ctest",
        &[
            "test",
            "--input",
            input,
            "--seed",
            "2",
            "--bootstrap",
            "100",
            "--mode",
            "conditional",
            "--own-window",
            "0.02",
        ],
    );
    deterministic(
        base,
        "conv",
        &[
            "converge",
            "--spec",
            s(&spec),
            "--seed",
            "4",
            "--reps",
            "20",
            "--deltas",
            "0.008,0.004",
        ],
    );
    deterministic(
        base,
        "roc",
        &[
            "roc",
            "--input",
            input,
            "--seed",
            "6",
            "--folds",
            "3",
            "--own-window",
            "0.02",
        ],
    );
}

#[test]
fn output_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let data = synchrony_data(dir.path());
    let out = dir.path().join("o");
    ok(&[
        "test",
        "--input",
        s(&data),
        "--seed",
        "2",
        "--bootstrap",
        "100",
        "--output-dir",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("test_1_2.json")).unwrap()).unwrap();
    assert_eq!(v["command"], "test");
    assert_eq!(v["status"], "ok");
    assert_eq!(v["config"]["seed"], 2);
    assert_eq!(v["config"]["bootstrap"], 100);
    let r = &v["result"];
    for key in [
        "N",
        "expected",
        "xi_hat",
        "log_xi",
        "se",
        "z",
        "p_normal",
        "p_empirical",
        "B",
        "statistics",
        "reject",
    ] {
        assert!(!r[key].is_null(), "missing {key}");
    }
    assert_eq!(r["subset"], serde_json::json!([1, 2]));
    assert_eq!(r["statistics"].as_array().unwrap().len(), 100);
    assert_eq!(r["reject"], true);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = synchrony_data(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!("input = {:?}\nseed = 8\nbootstrap = 120\nalpha = 0.01\n", s(&data)),
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "test",
        "--config",
        s(&cfg),
        "--bootstrap",
        "100",
        "--output-dir",
        s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("test_1_2.json")).unwrap()).unwrap();
    assert_eq!(v["config"]["bootstrap"], 100);
    assert_eq!(v["config"]["alpha"], 0.01);
    assert_eq!(v["config"]["seed"], 8);
}

#[test]
fn operational_errors_exit_2() {
    let out = run(&["test", "--input", "/no/such/dir/events.csv", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/no/such/dir/events"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let data = synchrony_data(dir.path());
    for args in [
        vec!["test", "--input", s(&data)],
        vec!["test", "--input", s(&data), "--seed", "1", "--neurons", "1,5"],
        vec!["test", "--input", s(&data), "--seed", "1", "--delta", "0.5"],
        vec!["test", "--input", s(&data), "--seed", "1", "--lag", "0.0033"],
        vec!["roc", "--input", s(&data), "--seed", "1", "--neurons", "1,2,2"],
        vec!["frobnicate"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sede = 1\n").unwrap();
    let out = run(&["fit", "--config", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));
}

#[test]
fn degenerate_test_is_reported_not_failed() {
    let dir = tempfile::tempdir().unwrap();
    // two near-silent neurons: no joint event in data or replicates
    let mut data = independent_poisson(&[Curve::Value(0.0), Curve::Value(0.0)], 1.0, 10, 1).unwrap();
    let trials: Vec<Vec<SpikeTrain>> = (0..10)
        .map(|r| {
            let t = 0.05 + 0.09 * r as f64;
            vec![
                SpikeTrain::new(vec![t], 1.0).unwrap(),
                SpikeTrain::new(vec![t + 0.03], 1.0).unwrap(),
            ]
        })
        .collect();
    data = ExperimentData::new(data.duration(), 2, trials).unwrap();
    let path = dir.path().join("sparse.csv");
    save_experiment(&data, &path, Format::Csv).unwrap();
    let out = dir.path().join("o");
    let res = run(&[
        "test",
        "--input",
        s(&path),
        "--seed",
        "1",
        "--bootstrap",
        "100",
        "--ridge",
        "1e-6",
        "--output-dir",
        s(&out),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("test_1_2.json")).unwrap()).unwrap();
    assert_eq!(v["status"], "degenerate");
    assert!(!v["message"].as_str().unwrap().is_empty());
    assert!(v["result"].is_null());
}

#[test]
fn simulate_output_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(
        &spec,
        "nu = 2\nduration = 1.0\ndelta = 0.005\ntheta = 0.002\n[[neurons]]\nrate = 10.0\n[[neurons]]\nrate = 10.0\n[[interactions]]\nneurons = [1, 2]\ngamma = 1.0\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "simulate",
        "--spec",
        s(&spec),
        "--reps",
        "30",
        "--seed",
        "2",
        "--output-dir",
        s(&out),
    ]);
    let data = spikesync::spikedata::load_with_sidecar(&out.join("events.csv")).unwrap();
    assert_eq!(data.trial_count(), 30);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("simulate.json")).unwrap()).unwrap();
    let counts: u64 = v["result"]["marks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["count"].as_u64().unwrap())
        .sum();
    let joint = v["result"]["marks"][2]["count"].as_u64().unwrap();
    assert_eq!(v["result"]["marks"][2]["mark"], "1+2");
    assert_eq!(data.spike_count() as u64, counts + joint);
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn fit_constant_rate_psth_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let data = independent_poisson(&[Curve::Value(25.0)], 1.0, 100, 4).unwrap();
    let path = dir.path().join("c.csv");
    save_experiment(&data, &path, Format::Csv).unwrap();
    let out = dir.path().join("o");
    ok(&["fit", "--input", s(&path), "--seed", "1", "--output-dir", s(&out)]);
    // binary bins: the closed form counts occupied bins, not spikes
    let binned = spikesync::spikedata::bin_trains(&data, 0.005).unwrap();
    let mle = binned.ones() as f64 / (100.0 * binned.bins() as f64 * 0.005);
    let text = std::fs::read_to_string(out.join("psth.csv")).unwrap();
    let rates: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 200);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    // spline fits of a flat rate keep the closed-form level on average
    assert!((mean - mle).abs() < 0.01 * mle, "{mean} vs {mle}");
    assert!(rates.iter().all(|r| (r - mle).abs() < 0.25 * mle));
    let v = read_json(&out.join("fit_summary.json"));
    assert_eq!(v["result"][0]["file"], "fit_marginal_1.json");
    assert!(out.join("fit_marginal_1.json").exists());
}

#[test]
fn test_report_schema_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = synchrony_data(dir.path());
    let out = dir.path().join("o");
    ok(&[
        "test",
        "--input",
        s(&data),
        "--seed",
        "2",
        "--bootstrap",
        "100",
        "--output-dir",
        s(&out),
    ]);
    let v = read_json(&out.join("test_1_2.json"));
    let keys = |x: &serde_json::Value| {
        let mut k: Vec<String> = x.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    assert_eq!(keys(&v), ["command", "config", "result", "status", "version"]);
    let mut expected = vec![
        "B",
        "N",
        "alpha",
        "expected",
        "lag",
        "lag_bins",
        "log_xi",
        "mode",
        "one_sided",
        "p_empirical",
        "p_normal",
        "reject",
        "se",
        "seed",
        "statistics",
        "subset",
        "undefined_count",
        "warnings",
        "xi_hat",
        "z",
    ];
    expected.sort();
    assert_eq!(keys(&v["result"]), expected);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

/// Null and injected-synchrony data through the `test` command.
#[test]
fn test_command_calibration_and_power() {
    let dir = tempfile::tempdir().unwrap();
    let rates = [
        Curve::Shape(spikesync::simulate::Shape::Sine {
            mean: 20.0,
            amplitude: 10.0,
            frequency: 1.0,
            phase: 0.0,
        }),
        Curve::Value(15.0),
    ];
    let mut null_ok = 0;
    for k in 0..100u64 {
        let data = independent_poisson(&rates, 1.0, 40, 1000 + k).unwrap();
        let path = dir.path().join(format!("n{k}.csv"));
        save_experiment(&data, &path, Format::Csv).unwrap();
        let out = dir.path().join(format!("no{k}"));
        ok(&[
            "test",
            "--input",
            s(&path),
            "--seed",
            &k.to_string(),
            "--bootstrap",
            "200",
            "--output-dir",
            s(&out),
        ]);
        let p = read_json(&out.join("test_1_2.json"))["result"]["p_normal"]
            .as_f64()
            .unwrap();
        null_ok += usize::from(p > 0.01);
    }
    assert!(null_ok >= 95, "{null_ok}/100 null runs with p_normal > 0.01");

    let spec = synchrony_pair_spec(15.0, 2.0, 1.0, 0.005, 0.003);
    let mut hits = 0;
    for k in 0..20u64 {
        let seqs = simulate_marked_trials(&spec, 40, 2000 + k).unwrap();
        let path = dir.path().join(format!("s{k}.csv"));
        save_experiment(&sequences_to_experiment(&seqs).unwrap(), &path, Format::Csv).unwrap();
        let out = dir.path().join(format!("so{k}"));
        ok(&[
            "test",
            "--input",
            s(&path),
            "--seed",
            &k.to_string(),
            "--bootstrap",
            "200",
            "--output-dir",
            s(&out),
        ]);
        let r = &read_json(&out.join("test_1_2.json"))["result"];
        hits += usize::from(r["xi_hat"].as_f64().unwrap() > 1.0 && r["p_normal"].as_f64().unwrap() < 0.05);
    }
    assert!(hits >= 16, "{hits}/20 injected runs detected");
}

#[test]
fn simulate_without_interaction_has_no_shared_rows() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        serde_json::to_string(&synchrony_pair_spec(30.0, 0.0, 1.0, 0.005, 0.002)).unwrap(),
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(&[
        "simulate",
        "--spec",
        s(&spec),
        "--reps",
        "50",
        "--seed",
        "9",
        "--output-dir",
        s(&out),
    ]);
    let text = std::fs::read_to_string(out.join("events.csv")).unwrap();
    assert!(text.lines().count() > 1000);
    assert!(text.lines().skip(1).all(|l| !l.ends_with(",1+2")));
}

#[test]
fn converge_slope_and_roc_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = synchrony_pair_spec(30.0, 1.0, 20.0, 0.008, 0.01);
    spec.neurons[0].rate = Curve::Shape(spikesync::simulate::Shape::Sine {
        mean: 30.0,
        amplitude: 10.0,
        frequency: 0.5,
        phase: 0.0,
    });
    let path = dir.path().join("pair.toml");
    std::fs::write(&path, toml::to_string(&spec).unwrap()).unwrap();
    let out = dir.path().join("c");
    ok(&[
        "converge",
        "--spec",
        s(&path),
        "--seed",
        "5",
        "--reps",
        "100",
        "--output-dir",
        s(&out),
    ]);
    let slope = read_json(&out.join("converge.json"))["result"]["error_slope"]
        .as_f64()
        .unwrap();
    assert!((0.5..=1.5).contains(&slope), "{slope}");

    let data = up_state_experiment(&UpStateOptions::default(), 3).unwrap();
    let events = dir.path().join("up.csv");
    save_experiment(&data, &events, Format::Csv).unwrap();
    let out = dir.path().join("r");
    ok(&[
        "roc",
        "--input",
        s(&events),
        "--seed",
        "5",
        "--own-window",
        "0.02",
        "--population-window",
        "0.05",
        "--ridge",
        "1e-6",
        "--output-dir",
        s(&out),
    ]);
    let v = read_json(&out.join("roc.json"));
    let auc = |k: usize| v["result"][k]["auc"].as_f64().unwrap();
    assert_eq!(v["result"][1]["mode"], "conditional");
    assert!(auc(1) > auc(0), "{} vs {}", auc(1), auc(0));
    assert!(out.join("roc_marginal.csv").exists() && out.join("roc_conditional.csv").exists());
}
