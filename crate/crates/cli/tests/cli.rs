use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_multipoet"));
    c.env("MULTIPOET_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_matrix(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|c| c.parse().unwrap()).collect())
        .collect()
}

const SMALL: [[f64; 3]; 10] = [
    [0.5, -1.0, 2.0],
    [1.5, 0.0, -0.5],
    [-0.25, 2.0, 1.0],
    [0.0, 0.75, -1.5],
    [2.0, -0.5, 0.25],
    [-1.0, 1.0, 0.5],
    [0.25, -0.25, 3.0],
    [1.0, 1.5, -2.0],
    [-0.5, 0.5, 0.0],
    [0.75, -1.25, 1.25],
];

fn write_small(dir: &Path) -> PathBuf {
    let path = dir.join("returns.csv");
    let mut text = String::from("x,y,z\n");
    for row in SMALL {
        text.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
    }
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn samcov_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    let returns = write_small(dir.path());
    let out = dir.path().join("est");
    ok(&["estimate", "--returns", s(&returns), "--method", "samcov", "--out", s(&out)]);
    let got = read_matrix(&out.join("covariance.csv"));

    let t = SMALL.len() as f64;
    let mean: Vec<f64> = (0..3).map(|j| SMALL.iter().map(|r| r[j]).sum::<f64>() / t).collect();
    for i in 0..3 {
        for j in 0..3 {
            let want = SMALL.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / t;
            assert!((got[i][j] - want).abs() < 1e-12, "({i},{j}): {} vs {want}", got[i][j]);
        }
    }
}

#[test]
fn degenerate_double_poet_is_the_sample_covariance() {
    let dir = tempfile::tempdir().unwrap();
    let returns = write_small(dir.path());
    let members = dir.path().join("members.csv");
    std::fs::write(&members, "asset_id,group\nx,all\ny,all\nz,all\n").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["estimate", "--returns", s(&returns), "--method", "samcov", "--out", s(&a)]);
    ok(&[
        "estimate", "--returns", s(&returns), "--membership", s(&members), "--k", "0", "--r", "0", "--tau", "0",
        "--out", s(&b),
    ]);
    let sam = read_matrix(&a.join("covariance.csv"));
    let dp = read_matrix(&b.join("covariance.csv"));
    for i in 0..3 {
        for j in 0..3 {
            assert!((sam[i][j] - dp[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--values".into(),
            "40".into(),
            "--groups".into(),
            "2".into(),
            "--t".into(),
            "60".into(),
            "--reps".into(),
            "3".into(),
            "--methods".into(),
            "samcov".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let a_args = args(&a);
    let b_args = args(&b);
    ok(&a_args.iter().map(String::as_str).collect::<Vec<_>>());
    bin()
        .env("MULTIPOET_THREADS", "1")
        .args(&b_args)
        .status()
        .unwrap()
        .success()
        .then_some(())
        .unwrap();
    let ea = std::fs::read(a.join("errors.csv")).unwrap();
    assert_eq!(ea, std::fs::read(b.join("errors.csv")).unwrap());
    let text = String::from_utf8(ea).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "grid,method,norm,mean,stderr,reps");
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[1..].iter().all(|l| l.starts_with("40,samcov,")));
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"), "{manifest}");
}

#[test]
fn input_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n3,oops\n").unwrap();
    let out = run(&["estimate", "--returns", s(&bad), "--method", "samcov", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3") && msg.contains("'y'"), "{msg}");

    let returns = write_small(dir.path());
    let members = dir.path().join("members.csv");
    std::fs::write(&members, "asset_id,group\nx,a\ny,b\n").unwrap();
    let out = run(&["estimate", "--returns", s(&returns), "--membership", s(&members), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("'z'"));

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "reps = 2\nbogus_key = 1\n").unwrap();
    let out = run(&["simulate", "--config", s(&cfg), "--values", "40", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus-key"));

    let out = run(&["estimate", "--returns", s(&returns), "--tau", "-1", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn select_reports_the_chosen_count() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--p", "60", "--groups", "3", "--t", "200", "--k", "2", "--r", "1", "--seed", "4", "--out", s(&gen)]);
    let returns = gen.join("returns.csv");
    let out = ok(&["select", "--returns", s(&returns), "--groups", "3", "--csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("variant,k_hat,global_factors,k1,k2,er1,er2,phi"));
    let summary: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(summary[1], "2");
    assert_eq!(lines.next(), Some(""));
    assert_eq!(lines.next(), Some("m,eigenvalue,ratio"));
    let eig: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(!eig.is_empty());
    assert!(eig.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn identity_backtest_holds_equal_weights() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--p", "12", "--groups", "2", "--t", "60", "--k", "1", "--r", "1", "--seed", "2", "--out", s(&gen)]);
    let returns = gen.join("returns.csv");
    let out = dir.path().join("bt");
    let args = [
        "backtest", "--returns", s(&returns), "--method", "identity", "--window", "30", "--hold", "10", "--c-grid",
        "1,2", "--out", s(&out),
    ];
    ok(&args);

    let panel: Vec<Vec<f64>> = std::fs::read_to_string(&returns)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    let risk = std::fs::read_to_string(out.join("risk.csv")).unwrap();
    let rows: Vec<Vec<&str>> = risk.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        let (start, end): (usize, usize) = (row[2].parse().unwrap(), row[3].parse().unwrap());
        let ss: f64 = panel[start..end]
            .iter()
            .map(|r| (r.iter().sum::<f64>() / r.len() as f64).powi(2))
            .sum();
        let want = (ss / (end - start) as f64).sqrt();
        let got: f64 = row[5].parse().unwrap();
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }

    let again = dir.path().join("bt2");
    let mut args2 = args;
    args2[args2.len() - 1] = s(&again);
    ok(&args2);
    assert_eq!(risk, std::fs::read_to_string(again.join("risk.csv")).unwrap());
}

#[test]
fn cluster_recovers_generated_groups() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--p", "90", "--groups", "3", "--t", "300", "--k", "2", "--r", "2", "--seed", "8", "--out", s(&gen)]);
    let out = dir.path().join("cl");
    ok(&[
        "cluster", "--returns", s(&gen.join("returns.csv")), "--cluster", "3", "--k", "2", "--truth",
        s(&gen.join("membership.csv")), "--out", s(&out),
    ]);
    let labels = std::fs::read_to_string(out.join("membership.csv")).unwrap();
    assert_eq!(labels.lines().count(), 91);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    let rate: f64 = manifest
        .lines()
        .find_map(|l| l.strip_prefix("misclassification = "))
        .unwrap_or_else(|| panic!("{manifest}"))
        .parse()
        .unwrap();
    assert!(rate <= 0.1, "misclassification {rate}");
}
