use std::path::Path;
use std::process::{Command, Output};

fn qtraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtraj"))
        .args(args)
        .env_remove("QTRAJ_THREADS")
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|x| x.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(rows: &[Vec<String>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"homodyne\"\ninitial = \"ee\"\ntrajectories = 1\nt_total_us = 1.0\nseed = 42\n\n[output]\ntrajectories = [0]\n",
    );
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = qtraj(&[
            "simulate",
            "--config",
            &cfg,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        digests.push((
            std::fs::read(out.join("ensemble.csv")).unwrap(),
            std::fs::read(out.join("trajectory_0.csv")).unwrap(),
        ));
        let m: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["master_seed"], 42);
        assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    }
    assert_eq!(digests[0], digests[1]);
    // a different seed changes the record
    let out = tmp.path().join("c");
    let o = qtraj(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "7",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(out.join("trajectory_0.csv")).unwrap(),
        digests[0].1
    );
}

#[test]
fn simulate_writes_reference_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"photodetection\"\ninitial = \"ee\"\ntrajectories = 2000\nt_total_us = 2.0\nseed = 3\n",
    );
    let out = tmp.path().join("o");
    let o = qtraj(&[
        "simulate",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--snapshot-stride",
        "50",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("ensemble.csv"));
    assert_eq!(
        header,
        [
            "time_us",
            "mean_concurrence",
            "std_concurrence",
            "mean_purity",
            "analytic_reference"
        ]
    );
    assert_eq!(rows.len(), 21);
    let (mean, reference) = (column(&rows, 1), column(&rows, 4));
    for (m, r) in mean.iter().zip(&reference) {
        assert!((m - r).abs() < 0.05, "{m} vs {r}");
    }
}

#[test]
fn simulate_phi_plus_homodyne_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"homodyne\"\ninitial = \"phi_plus\"\ntrajectories = 300\nt_total_us = 1.0\nsnapshot_stride = 50\n",
    );
    let out = tmp.path().join("o");
    let o = qtraj(&[
        "simulate",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
        "--threads",
        "1",
    ]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&out.join("ensemble.csv"));
    for (t, m) in column(&rows, 0).iter().zip(column(&rows, 1)) {
        assert!((m - (-2.0 * t).exp()).abs() < 0.08, "t={t}: {m}");
    }
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"homodyne\"\ninitial = \"ee\"\ntrajectories = 1\neta = \"high\"\n",
    );
    let o = qtraj(&[
        "simulate",
        "--config",
        &cfg,
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("simulation.eta"));

    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"heterodyne\"\ninitial = \"ee\"\ntrajectories = 1\neta = 0.5\n",
    );
    let o = qtraj(&[
        "simulate",
        "--config",
        &cfg,
        "--out-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = qtraj(&["simulate", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));

    // output directory below a regular file cannot be created
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = qtraj(&[
        "bound",
        "--kind",
        "pure_hom",
        "--out-dir",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bound_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = qtraj(&[
        "bound",
        "--kind",
        "pure_hom",
        "--tmax",
        &(2.0 * std::f64::consts::LN_2).to_string(),
        "--points",
        "2",
        "--out-dir",
        out,
    ]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&tmp.path().join("bound.csv"));
    assert_eq!(header, ["time_us", "concurrence_bound"]);
    assert_eq!(column(&rows, 1)[1], 1.0);

    let o = qtraj(&[
        "bound",
        "--kind",
        "hom_eta",
        "--eta",
        "0.5",
        "--out-dir",
        out,
    ]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&tmp.path().join("bound.csv"));
    assert!(column(&rows, 1).iter().all(|v| v.abs() < 1e-12));

    let o = qtraj(&["bound", "--kind", "pd_eta", "--eta", "1", "--out-dir", out]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&tmp.path().join("bound.csv"));
    assert!(column(&rows, 1).iter().all(|&v| v == 1.0));

    let o = qtraj(&["bound", "--kind", "nope", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn whichpath_erasure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = qtraj(&[
        "whichpath",
        "--theta",
        "0",
        "--vartheta",
        "90",
        "--points",
        "101",
        "--out-dir",
        out,
    ]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&tmp.path().join("whichpath.csv"));
    assert_eq!(
        header,
        ["X3", "X4", "density_source1", "density_source2", "abs_diff"]
    );
    assert_eq!(rows.len(), 101 * 101);
    assert!(column(&rows, 4).iter().all(|&d| d < 1e-12));
    let h: f64 = 10.0 / 100.0;
    let integral: f64 = column(&rows, 2).iter().sum::<f64>() * h * h;
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");

    let o = qtraj(&[
        "whichpath",
        "--theta",
        "-30",
        "--vartheta",
        "-30",
        "--points",
        "101",
        "--out-dir",
        out,
    ]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&tmp.path().join("whichpath.csv"));
    assert!(column(&rows, 4).iter().cloned().fold(0.0, f64::max) > 0.1);
}

#[test]
fn maxstats_writes_histograms() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"homodyne\"\ninitial = \"ee\"\ntrajectories = 1\nseed = 5\n\n[capture]\nthreshold = 0.99\ncount = 30\nbins = 10\n",
    );
    let out = tmp.path().join("o");
    let o = qtraj(&[
        "maxstats",
        "--config",
        &cfg,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, marg) = read_csv(&out.join("maxstats_marginals.csv"));
    assert_eq!(marg.len(), 10);
    assert_eq!(column(&marg, 2).iter().sum::<f64>(), 30.0);
    let (_, joint) = read_csv(&out.join("maxstats_joint.csv"));
    assert_eq!(joint.len(), 100);
    let (header, summary) = read_csv(&out.join("maxstats_summary.csv"));
    assert!(header.iter().any(|h| h == "a_violations"));
    assert_eq!(summary[0][0], "30");

    let bad = write_config(
        tmp.path(),
        "[simulation]\nscheme = \"photodetection\"\ninitial = \"ee\"\ntrajectories = 1\n\n[capture]\ncount = 3\n",
    );
    let o = qtraj(&[
        "maxstats",
        "--config",
        &bad,
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn smecheck_pass_and_negative_control() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    for scheme in ["homodyne", "heterodyne"] {
        let o = qtraj(&["smecheck", "--scheme", scheme, "--out-dir", out]);
        assert!(o.status.success());
        assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    }
    let o = qtraj(&[
        "smecheck",
        "--scheme",
        "homodyne",
        "--corrupt",
        "--out-dir",
        out,
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    let o = qtraj(&["smecheck", "--scheme", "photodetection", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qtraj"))
        .args(["bound", "--kind", "pd_eta", "--out-dir", out])
        .env("QTRAJ_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_qtraj"))
        .args(["bound", "--kind", "pd_eta", "--out-dir", out])
        .env("QTRAJ_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
}
