use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maxent_ebe::quadrature::{clenshaw_curtis_1d, smolyak_sparse_grid};
use maxent_ebe::{BasisSet, MomentProblem, ProblemFile, QuadSpec};
use serde_json::Value;

fn maxent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxent")).args(args).output().expect("spawn maxent")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_problem(dir: &Path, name: &str, file: &ProblemFile) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(file).unwrap()).unwrap();
    path
}

fn example1(dir: &Path) -> PathBuf {
    let basis = BasisSet::enumerate(1, 3).unwrap();
    let p = MomentProblem::from_density(basis.clone(), &[1.0, 1.0, 1.0], clenshaw_curtis_1d(7).unwrap()).unwrap();
    let file = ProblemFile { basis, targets: p.targets().to_vec(), quad: QuadSpec::Sparse { level: 7 }, rescale: None };
    write_problem(dir, "ex1.json", &file)
}

fn stress(dir: &Path) -> PathBuf {
    let basis = BasisSet::enumerate(3, 4).unwrap();
    let lambda: Vec<f64> = basis
        .indices()
        .iter()
        .map(|m| match (m.pure_axis().is_some(), m.total_order()) {
            (true, 1) => 0.5,
            (true, 2) => 10.0,
            (false, 2) => 1.0,
            (true, 3) => 0.3,
            (true, 4) => -20.0,
            _ => 0.0,
        })
        .collect();
    let p = MomentProblem::from_density(basis.clone(), &lambda, smolyak_sparse_grid(3, 7).unwrap()).unwrap();
    let file = ProblemFile { basis, targets: p.targets().to_vec(), quad: QuadSpec::Sparse { level: 7 }, rescale: None };
    write_problem(dir, "stress.json", &file)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

/// Composite Simpson on an odd number of equally spaced values.
fn simpson(ys: &[f64], h: f64) -> f64 {
    assert!(ys.len() % 2 == 1);
    let n = ys.len() - 1;
    let mut acc = ys[0] + ys[n];
    for (i, y) in ys.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * y } else { 2.0 * y };
    }
    acc * h / 3.0
}

#[test]
fn moments_from_two_column_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let mut text = String::from("a,b\n");
    for i in 0..200 {
        let t = i as f64 * 0.618_033_988_7;
        text += &format!("{},{}\n", t.fract() * 4.0 + 1.0, (t * 1.7).sin());
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("p.json");
    let r = maxent(&["moments", "--input", s(&csv), "--order", "4", "--output", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v = read_json(&out);
    assert_eq!(v["targets"].as_array().unwrap().len(), 14);
    assert!(v["rescale"]["lo"].is_array());
    assert!(dir.path().join("p.json.manifest.json").exists());
}

#[test]
fn moments_of_uniform_samples() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("u.csv");
    let n = 10_000;
    let mut text = String::new();
    for i in 0..n {
        text += &format!("{}\n", -1.0 + 2.0 * i as f64 / (n - 1) as f64);
    }
    fs::write(&csv, text).unwrap();
    let out = dir.path().join("p.json");
    assert_eq!(code(&maxent(&["moments", "--input", s(&csv), "--order", "2", "--output", s(&out)])), 0);
    let t: Vec<f64> = serde_json::from_value(read_json(&out)["targets"].clone()).unwrap();
    let tol = 3.0 / (n as f64).sqrt();
    assert!(t[0].abs() < tol);
    assert!((t[1] - 1.0 / 3.0).abs() < tol);
}

#[test]
fn empty_or_malformed_csv_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("e.csv");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("p.json");
    assert_eq!(code(&maxent(&["moments", "--input", s(&empty), "--order", "2", "--output", s(&out)])), 1);
    let bad = dir.path().join("b.csv");
    fs::write(&bad, "1,2\n3,4\n5,oops\n").unwrap();
    let r = maxent(&["moments", "--input", s(&bad), "--order", "2", "--output", s(&out)]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains('3'));
}

#[test]
fn solve_example1_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let problem = example1(dir.path());
    let out = dir.path().join("r.json");
    let r = maxent(&["solve", "--problem", s(&problem), "--output", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v = read_json(&out);
    for l in v["report"]["lambda"].as_array().unwrap() {
        assert!((l.as_f64().unwrap() - 1.0).abs() < 1e-8);
    }
    let trace = fs::read_to_string(dir.path().join("r.json.trace.jsonl")).unwrap();
    assert!(trace.lines().count() > 5);
    let manifest = read_json(&dir.path().join("r.json.manifest.json"));
    assert_eq!(manifest["subcommand"], "solve");
    assert!(manifest["seed"].is_u64());
}

#[test]
fn infeasible_problem_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let basis = BasisSet::enumerate(1, 2).unwrap();
    let file = ProblemFile { basis, targets: vec![0.9, 0.1], quad: QuadSpec::Sparse { level: 7 }, rescale: None };
    let problem = write_problem(dir.path(), "bad.json", &file);
    let out = dir.path().join("r.json");
    let r = maxent(&["solve", "--problem", s(&problem), "--output", s(&out)]);
    assert_eq!(code(&r), 2);
    assert_eq!(read_json(&out)["report"]["discarded"].as_array().unwrap().len(), 1);
}

#[test]
fn unreadable_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(code(&maxent(&["solve", "--problem", "/nonexistent/p.json", "--output", s(&out)])), 1);
    let garbage = dir.path().join("g.json");
    fs::write(&garbage, "{not json").unwrap();
    assert_eq!(code(&maxent(&["solve", "--problem", s(&garbage), "--output", s(&out)])), 1);
}

#[test]
fn newton_on_stress_problem_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let problem = stress(dir.path());
    let out = dir.path().join("r.json");
    let r = maxent(&["solve", "--problem", s(&problem), "--method", "newton", "--output", s(&out)]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("diverged"));
}

#[test]
fn compare_shows_newton_diverging() {
    let dir = tempfile::tempdir().unwrap();
    let problem = stress(dir.path());
    let out = dir.path().join("c.json");
    let r = maxent(&["compare", "--problem", s(&problem), "--output", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = read_json(&out);
    let row = |m: &str| rows.as_array().unwrap().iter().find(|r| r["method"] == m).unwrap().clone();
    assert_eq!(row("ebe")["converged"], true);
    assert_eq!(row("newton")["converged"], false);
    assert!(String::from_utf8_lossy(&r.stdout).contains("diverge"));
}

#[test]
fn compare_agrees_when_both_converge() {
    let dir = tempfile::tempdir().unwrap();
    let problem = example1(dir.path());
    let out = dir.path().join("c.json");
    assert_eq!(code(&maxent(&["compare", "--problem", s(&problem), "--output", s(&out)])), 0);
    let rows = read_json(&out);
    let errs: Vec<f64> = rows.as_array().unwrap().iter().map(|r| r["moment_error"].as_f64().unwrap()).collect();
    for e in &errs {
        assert!((e - errs[0]).abs() <= 1e-8);
    }
}

#[test]
fn solve_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let problem = example1(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        assert_eq!(code(&maxent(&["--seed", "7", "solve", "--problem", s(&problem), "--output", s(out)])), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.json");
    assert_eq!(code(&maxent(&["--seed", "7", "--sequential", "solve", "--problem", s(&problem), "--output", s(&c)])), 0);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn eval_uniform_density_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    let basis = BasisSet::enumerate(2, 2).unwrap();
    let p = MomentProblem::from_density(basis.clone(), &[0.0; 5], smolyak_sparse_grid(2, 5).unwrap()).unwrap();
    let file = ProblemFile { basis, targets: p.targets().to_vec(), quad: QuadSpec::Sparse { level: 5 }, rescale: None };
    let problem = write_problem(dir.path(), "u.json", &file);
    let report = dir.path().join("r.json");
    assert_eq!(code(&maxent(&["solve", "--problem", s(&problem), "--output", s(&report)])), 0);
    let grid = dir.path().join("g.csv");
    assert_eq!(
        code(&maxent(&["eval", "--report", s(&report), "--output", s(&grid), "--points-per-axis", "11"])),
        0
    );
    let rows = read_csv(&grid);
    assert_eq!(rows.len(), 121);
    for r in rows {
        assert!((r[2] - 0.25).abs() < 1e-12);
    }
}

#[test]
fn eval_example1_normalized_on_grid() {
    let dir = tempfile::tempdir().unwrap();
    let problem = example1(dir.path());
    let report = dir.path().join("r.json");
    assert_eq!(code(&maxent(&["solve", "--problem", s(&problem), "--output", s(&report)])), 0);
    let grid = dir.path().join("g.csv");
    assert_eq!(code(&maxent(&["eval", "--report", s(&report), "--output", s(&grid)])), 0);
    let rows = read_csv(&grid);
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0][0], -1.0);
    assert_eq!(rows[100][0], 1.0);
    // trapezoid with the first Euler-Maclaurin endpoint correction, using
    // rho' = rho (l1 + 2 l2 x + 3 l3 x^2)
    let lambda: Vec<f64> = serde_json::from_value(read_json(&report)["report"]["lambda"].clone()).unwrap();
    let h = 0.02;
    let ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let trapezoid = h * (ys.iter().sum::<f64>() - 0.5 * (ys[0] + ys[100]));
    let slope = |x: f64, y: f64| y * (lambda[0] + 2.0 * lambda[1] * x + 3.0 * lambda[2] * x * x);
    let corrected = trapezoid - h * h / 12.0 * (slope(1.0, ys[100]) - slope(-1.0, ys[0]));
    assert!((corrected - 1.0).abs() < 1e-6, "{corrected}");
}

#[test]
fn marginals_integrate_to_one_in_original_units() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let mut text = String::from("x,y\n");
    for i in 0..4000 {
        let t = i as f64;
        let u = (t * 0.618_033_988_7).fract();
        let v = (t * 0.754_877_666_2).fract();
        text += &format!("{},{}\n", 10.0 + 4.0 * u * u, -3.0 + 2.0 * v);
    }
    fs::write(&csv, text).unwrap();
    let problem = dir.path().join("p.json");
    assert_eq!(code(&maxent(&["--level", "8", "moments", "--input", s(&csv), "--order", "2", "--output", s(&problem)])), 0);
    let report = dir.path().join("r.json");
    let r = maxent(&["solve", "--problem", s(&problem), "--output", s(&report)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let grid = dir.path().join("g.csv");
    assert_eq!(
        code(&maxent(&["eval", "--report", s(&report), "--output", s(&grid), "--original", "--marginal"])),
        0
    );
    let lo_hi = read_json(&report)["density"]["rescale"].clone();
    for axis in 0..2 {
        let rows = read_csv(&dir.path().join(format!("g.csv.marginal{}.csv", axis + 1)));
        assert_eq!(rows.len(), 101);
        let lo = lo_hi["lo"][axis].as_f64().unwrap();
        let hi = lo_hi["hi"][axis].as_f64().unwrap();
        let ys: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        assert!((simpson(&ys, (hi - lo) / 100.0) - 1.0).abs() < 1e-6, "axis {axis}");
    }
}
