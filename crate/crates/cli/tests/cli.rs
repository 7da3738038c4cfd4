use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gstar(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gstar"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
seed = 5
out = "sim"
etas = [1, 2]
kinds = ["star", "lasso", "dhglasso"]

[input]
series = "sim/series.csv"
adjacency = "sim/adjacency.txt"

[grid]
points = 5

[simulate]
t_len = 60
lattice = { rows = 3, cols = 4, k = 12 }
"#;

#[test]
fn simulate_then_evaluate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(gstar(&["simulate", "--config", "run.toml"], dir));
    assert!(dir.join("sim/series.csv").exists());
    assert!(dir.join("sim/true_model.json").exists());

    let table = ok(gstar(
        &["evaluate", "--config", "run.toml", "--out", "a"],
        dir,
    ));
    ok(gstar(
        &["evaluate", "--config", "run.toml", "--out", "b"],
        dir,
    ));
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 7);
    assert!(rows[0].starts_with("VAR"));
    for f in [
        "report.txt",
        "report.json",
        "coefficients.csv",
        "models/star_eta2.json",
        "models/var.json",
    ] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let printed = ok(gstar(&["report", "--out", "a"], dir));
    assert_eq!(
        printed,
        fs::read_to_string(dir.join("a/report.txt")).unwrap()
    );
    assert_eq!(printed, table);
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.toml"), CONFIG).unwrap();
    ok(gstar(&["simulate", "--config", "run.toml"], dir));
    let table = ok(gstar(
        &[
            "evaluate", "--config", "run.toml", "--out", "o", "--etas", "3", "--kinds", "hglasso",
            "--no-var",
        ],
        dir,
    ));
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("HGLASSO"));
    ok(gstar(
        &[
            "fit", "--config", "run.toml", "--out", "f", "--etas", "1", "--kinds", "lasso",
        ],
        dir,
    ));
    assert!(dir.join("f/models/lasso_eta1.json").exists());
    assert!(!dir.join("f/report.json").exists());
}

#[test]
fn aggregate_bins_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("trips.csv"),
        "timestamp,zone\n2024-01-01T00:00:00,b\n2024-01-01T00:59:59,b\n2024-01-01T01:00:00,a\n",
    )
    .unwrap();
    let msg = ok(gstar(
        &[
            "aggregate",
            "--trips",
            "trips.csv",
            "--interval",
            "60",
            "--out",
            "agg",
        ],
        dir,
    ));
    assert!(msg.contains("2 zones x 24 bins"), "{msg}");
    let csv = fs::read_to_string(dir.join("agg/series.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,a,b");
    assert!(lines
        .next()
        .unwrap()
        .ends_with(",0.0000000000000000e0,2.0000000000000000e0"));
}

fn error_line(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let last = stderr.lines().last().unwrap().to_string();
    assert!(last.starts_with("error: class="), "{stderr}");
    last
}

#[test]
fn failures_print_one_classified_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = gstar(
        &[
            "evaluate",
            "--adjacency",
            "missing.txt",
            "--series",
            "missing.csv",
        ],
        dir,
    );
    assert!(error_line(&out).starts_with("error: class=Io msg=\""));

    fs::write(
        dir.join("bad.toml"),
        "etas = []\n[input]\nadjacency = \"x\"\n",
    )
    .unwrap();
    fs::write(dir.join("x"), "a,b\n").unwrap();
    fs::write(dir.join("s.csv"), "time,a,b\n1,1,2\n2,2,1\n").unwrap();
    let out = gstar(
        &["evaluate", "--config", "bad.toml", "--series", "s.csv"],
        dir,
    );
    assert!(error_line(&out).starts_with("error: class=InvalidConfig"));

    fs::write(dir.join("typo.toml"), "etaz = [1]\n").unwrap();
    let out = gstar(&["evaluate", "--config", "typo.toml"], dir);
    assert!(error_line(&out).starts_with("error: class=InvalidConfig"));

    let out = gstar(&["aggregate", "--trips", "s.csv", "--interval", "7"], dir);
    assert!(error_line(&out).starts_with("error: class=InvalidInterval"));

    let out = gstar(&["evaluate", "--kinds", "ridge"], dir);
    assert!(error_line(&out).starts_with("error: class=InvalidPenalty"));

    let out = gstar(&["frobnicate"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_line(&out).starts_with("error: class=Usage"));
}
