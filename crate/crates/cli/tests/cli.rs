use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tghrf"));
    c.env_remove("TGH_SEED");
    c
}

fn sample(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn body(p: &Path) -> Vec<String> {
    text(p).lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

fn without_created(p: &Path) -> String {
    text(p).lines().filter(|l| !l.starts_with("# created")).collect::<Vec<_>>().join("\n")
}

fn out(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn lowrank_fit_on_sample_has_thirteen_columns() {
    let d = tempfile::tempdir().unwrap();
    let o = out(&d, "lr.csv");
    ok(&["fit", "--mode", "lowrank", "--input", &sample("sample_field.csv"), "--rank", "40", "--out", o.to_str().unwrap()]);
    let rows = body(&o);
    assert_eq!(
        rows[0],
        "day,a,b,g,h,ci_low_a,ci_low_b,ci_low_g,ci_low_h,ci_high_a,ci_high_b,ci_high_g,ci_high_h"
    );
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r.split(',').count(), 13);
    }
}

#[test]
fn header_records_version_seed_and_hash() {
    let d = tempfile::tempdir().unwrap();
    let o = out(&d, "sim.csv");
    ok(&["--seed", "5", "simulate", "--side", "4", "--out", o.to_str().unwrap()]);
    let t = text(&o);
    let head: Vec<&str> = t.lines().take(4).collect();
    assert!(head[0].starts_with("# tghrf "));
    assert_eq!(head[1], "# seed 5");
    assert!(head[2].starts_with("# config sha256:") && head[2].len() == "# config sha256:".len() + 64);
    assert!(head[3].starts_with("# created "));
    assert_eq!(body(&o)[0], "x,y,t,value");
    assert_eq!(body(&o).len(), 17);
}

#[test]
fn malformed_csv_exits_2_with_line_number() {
    let d = tempfile::tempdir().unwrap();
    let bad = out(&d, "bad.csv");
    std::fs::write(&bad, "x,y,t,value\n0,0,1,1.5\n1,0,1,oops\n").unwrap();
    let o = run(&["fit", "--mode", "full", "--input", bad.to_str().unwrap(), "--out", out(&d, "o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("parse error") && err.contains("bad.csv:3:4"), "{err}");
    assert!(!out(&d, "o.csv").exists());
}

#[test]
fn ragged_row_and_missing_file_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let bad = out(&d, "ragged.csv");
    std::fs::write(&bad, "x,y,t,value\n0,0,1,1.5\n1,0,1\n").unwrap();
    let o = run(&["lmoments", "--input", bad.to_str().unwrap(), "--out", out(&d, "o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:"));
    let o = run(&["lmoments", "--input", "/nonexistent/field.csv", "--out", out(&d, "o.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("io error"));
}

#[test]
fn exit_code_follows_error_category() {
    // constant features cannot be standardized
    let d = tempfile::tempdir().unwrap();
    let f = out(&d, "flat.csv");
    let mut s = String::from("x,y,a,b,g,h\n");
    for i in 0..10 {
        s += &format!("{i},0,1,2,{},0.1\n", i as f64 * 0.1);
    }
    std::fs::write(&f, s).unwrap();
    let o = run(&["cluster", "--input", f.to_str().unwrap(), "--k", "2", "--out", out(&d, "l.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    // a duplicated covariate column makes the design rank deficient
    let cov = out(&d, "cov.csv");
    let mut c = String::from("x,y,east,east_copy\n");
    for y in 0..15 {
        for x in 0..15 {
            c += &format!("{x},{y},{x},{x}\n");
        }
    }
    std::fs::write(&cov, c).unwrap();
    let o = run(&[
        "sblue", "--obs", &sample("sample_field.csv"), "--covariates", cov.to_str().unwrap(),
        "--out", out(&d, "p.csv").to_str().unwrap(), "--out-coef", out(&d, "c.csv").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("fit error") && err.contains("east_copy"), "{err}");
}

#[test]
fn rerun_is_identical_except_timestamp() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (out(&d, "a.csv"), out(&d, "b.csv"));
    for o in [&a, &b] {
        ok(&["--seed", "3", "simulate", "--side", "10", "--g", "0.3", "--reps", "2", "--out", o.to_str().unwrap()]);
    }
    assert_eq!(without_created(&a), without_created(&b));
    let c = out(&d, "c.csv");
    ok(&["--seed", "4", "simulate", "--side", "10", "--g", "0.3", "--reps", "2", "--out", c.to_str().unwrap()]);
    assert_ne!(body(&a), body(&c));
}

#[test]
fn seed_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (out(&d, "a.csv"), out(&d, "b.csv"));
    let st = bin().env("TGH_SEED", "17").args(["simulate", "--side", "5", "--out", a.to_str().unwrap()]).status().unwrap();
    assert!(st.success());
    ok(&["--seed", "17", "simulate", "--side", "5", "--out", b.to_str().unwrap()]);
    assert!(text(&a).contains("# seed 17"));
    assert_eq!(body(&a), body(&b));
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let d = tempfile::tempdir().unwrap();
    let cfg = out(&d, "run.cfg");
    std::fs::write(&cfg, "# small field\nside=6\ng=0.5\nreps=2\n").unwrap();
    let (a, b) = (out(&d, "a.csv"), out(&d, "b.csv"));
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(body(&a).len(), 1 + 36 * 2);
    ok(&["simulate", "--config", cfg.to_str().unwrap(), "--side", "4", "--out", b.to_str().unwrap()]);
    assert_eq!(body(&b).len(), 1 + 16 * 2);

    std::fs::write(&cfg, "side 6\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_sparse_fits() {
    let d = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for t in ["1", "3"] {
        let o = out(&d, &format!("sp{t}.csv"));
        ok(&[
            "--threads", t, "fit", "--mode", "sparse", "--input", &sample("sample_field.csv"), "--budget", "40",
            "--no-refine", "--out", o.to_str().unwrap(),
        ]);
        bodies.push(without_created(&o));
    }
    assert_eq!(bodies[0], bodies[1]);
    let rows: Vec<&str> = bodies[0].lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "x,y,a,b,g,h,r,design_size,flag");
    assert_eq!(rows.len(), 1 + 225);
}

#[test]
fn sblue_and_cluster_outputs() {
    let d = tempfile::tempdir().unwrap();
    let (p, c) = (out(&d, "p.csv"), out(&d, "c.csv"));
    ok(&[
        "sblue", "--obs", &sample("sample_field.csv"), "--covariates", &sample("sample_covariates.csv"), "--day", "1",
        "--out", p.to_str().unwrap(), "--out-coef", c.to_str().unwrap(),
    ]);
    assert_eq!(body(&p)[0], "t,x,y,prediction");
    assert_eq!(body(&p).len(), 1 + 225);
    let coef = body(&c);
    assert_eq!(coef[0], "t,name,estimate,std_error,t_value,vif,lambda,tau2,sigma2,r");
    let names: Vec<&str> = coef[1..].iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(names, ["intercept", "elev", "dist"]);
    // the sample has a clear negative distance effect
    let dist_t: f64 = coef[3].split(',').nth(4).unwrap().parse().unwrap();
    assert!(dist_t < -2.0, "{dist_t}");

    let sp = out(&d, "sp.csv");
    ok(&["fit", "--mode", "sparse", "--input", &sample("sample_field.csv"), "--budget", "40", "--no-refine", "--out", sp.to_str().unwrap()]);
    let lab = out(&d, "lab.csv");
    let o = ok(&["cluster", "--input", sp.to_str().unwrap(), "--k", "3", "--compare-features", "a", "--out", lab.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("D[a,b,g,h] ") && stdout.contains("D[a] "), "{stdout}");
    let labels: std::collections::BTreeSet<String> =
        body(&lab)[1..].iter().map(|r| r.rsplit(',').next().unwrap().to_string()).collect();
    assert_eq!(labels.into_iter().collect::<Vec<_>>(), ["1", "2", "3"]);

    let sel = out(&d, "sel.csv");
    ok(&["cluster", "--input", sp.to_str().unwrap(), "--select-k", "2..5", "--out", sel.to_str().unwrap()]);
    let rows = body(&sel);
    assert_eq!(rows[0], "k,aic,bic,inertia");
    assert_eq!(rows.len(), 5);
}

#[test]
fn bench_writes_three_tables() {
    let d = tempfile::tempdir().unwrap();
    let dir = out(&d, "bench");
    ok(&[
        "bench", "--protocol", "lowrank-B", "--n", "200", "--ranks", "20,60", "--no-full", "--out-dir", dir.to_str().unwrap(),
    ]);
    for f in ["raw.csv", "summary.csv", "timing.csv"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    assert_eq!(body(&dir.join("raw.csv")).len(), 3);
    let o = run(&["bench", "--protocol", "sparse-C", "--n", "200", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
