use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dblf::cli::csv::{number, Table};

fn dblf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dblf")).args(args).env("DBLF_THREADS", "1").output().expect("spawn dblf")
}

fn code(args: &[&str]) -> i32 {
    dblf(args).status.code().expect("exit code")
}

fn ok(args: &[&str]) {
    let out = dblf(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(dir: &Path, sub: &str) -> String {
    dir.join(sub).display().to_string()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let t = Table::read(path).unwrap();
    let c = t.column(name).unwrap();
    t.rows.iter().map(|r| number(&r[c]).unwrap()).collect()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["theory", "--set", "no_such_key=1", "--out", &p(dir.path(), "a")]), 1);
    assert_eq!(code(&["theory", "--set", "n_steps=9", "--out", &p(dir.path(), "b")]), 1);
    assert_eq!(code(&["theory", "--seed", "1", "--seeds", "1,2"]), 1);
    assert_eq!(code(&["theory", "--set", "system=expansive", "--out", &p(dir.path(), "c")]), 0);
    // a deliberately halved bound must be reported as a violation
    assert_eq!(code(&["theory", "--set", "system=expansive", "--set", "bound_scale=0.5", "--out", &p(dir.path(), "d")]), 2);
    let out = dblf(&["theory", "--set", "system=expansive", "--set", "bound_scale=0.5", "--out", &p(dir.path(), "d")]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bound"));
    let verdicts = Table::read(&dir.path().join("d/bound.csv")).unwrap();
    assert!(verdicts.rows.iter().any(|r| r.contains(&"fail".to_string())));
}

#[test]
fn collect_writes_the_requested_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "data");
    ok(&["collect", "--seed", "3", "--set", "env=mass_spring_damper", "--set", "dataset_size=10000", "--out", &out]);
    let counts = column(&dir.path().join("data/dataset.csv"), "n_transitions");
    assert_eq!(counts.iter().sum::<f64>(), 10000.0);
    assert!(dir.path().join("data/dataset.bin").exists());
    assert_eq!(code(&["collect", "--seeds", "1,2", "--out", &out]), 1);
}

#[test]
fn paper_manifest_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "m");
    ok(&["train-agent", "--preset", "paper", "--dry-run", "--out", &out]);
    let text = fs::read_to_string(dir.path().join("m/manifest.txt")).unwrap();
    let text: String = text.lines().filter(|l| !l.starts_with("out =")).map(|l| format!("{l}\n")).collect();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/paper_manifest.txt")).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn oracle_belief_has_zero_error_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["collect", "--seed", "0", "--set", "env=mass_spring_damper", "--set", "dataset_size=2000", "--out", &p(d, "data")]);
    let ds = format!("dataset={}", p(d, "data/dataset.bin"));
    for run in ["e1", "e2"] {
        ok(&[
            "eval-belief", "--seeds", "0", "--set", "env=mass_spring_damper", "--set", "beliefs=oracle",
            "--set", "delta_max=16", "--set", &ds, "--out", &p(d, run),
        ]);
    }
    let errs = column(&d.join("e1/belief_error.csv"), "mean_L1");
    assert_eq!(errs.len(), 16);
    assert!(errs.iter().all(|e| *e == 0.0));
    let a = fs::read(d.join("e1/seed_0/belief_error.csv")).unwrap();
    let b = fs::read(d.join("e2/seed_0/belief_error.csv")).unwrap();
    assert_eq!(a, b);
}

fn tiny_agent(d: &Path, name: &str, extra: &[&str]) {
    let out = p(d, name);
    let mut args = vec![
        "train-agent", "--seeds", "0,1", "--out", &out, "--set", "agent_steps=400", "--set", "learning_starts=100",
        "--set", "eval_every=200", "--set", "eval_episodes=1", "--set", "horizon=40",
    ];
    for e in extra {
        args.push("--set");
        args.push(e);
    }
    ok(&args);
}

#[test]
fn anchors_normalise_to_zero_and_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_agent(d, "random", &["agent=random", "n_steps=1"]);
    tiny_agent(d, "sac", &["delay=none", "n_steps=1"]);
    let anchors = [format!("anchor_random={}", p(d, "random")), format!("anchor_sac={}", p(d, "sac"))];
    for (run, want) in [("sac", 1.0), ("random", 0.0)] {
        let out = p(d, &format!("norm_{run}"));
        let rd = format!("run_dir={}", p(d, run));
        ok(&["eval-agent", "--set", &rd, "--set", &anchors[0], "--set", &anchors[1], "--out", &out]);
        let z = column(&d.join(format!("norm_{run}/normalized_summary.csv")), "mean_normalized");
        assert_eq!(z.len(), 1);
        assert!((z[0] - want).abs() < 1e-12, "{run}: {z:?}");
    }
    let rd = format!("run_dir={}", p(d, "sac"));
    assert_eq!(code(&["eval-agent", "--set", &rd, "--out", &p(d, "x")]), 1);
}

#[test]
fn sweep_emits_one_row_per_n_and_zero_steps_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_agent(d, "sweep", &["belief=oracle", "n_steps=1,2,4,8"]);
    let t = Table::read(&d.join("sweep/summary.csv")).unwrap();
    assert_eq!(t.header, ["n_step", "mean_return", "std_return", "n_seeds"]);
    let ns: Vec<&str> = t.rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ns, ["1", "2", "4", "8"]);
    assert!(d.join("sweep/N8/seed_1/curve.csv").exists());

    tiny_agent(d, "none", &["belief=oracle", "n_steps=1", "agent_steps=0"]);
    let curve = fs::read_to_string(d.join("none/N1/seed_0/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1);
}

#[test]
fn report_merges_and_refuses_mixed_envs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_agent(d, "a", &["belief=oracle", "n_steps=1"]);
    let runs = [p(d, "a/N1/seed_0"), p(d, "a/N1/seed_1")];
    ok(&["report", &runs[0], "--out", &p(d, "one")]);
    let single = column(&d.join("one/plot_mean_return.csv"), "mean");
    assert_eq!(single, column(&d.join("a/N1/seed_0/curve.csv"), "mean_return"));

    ok(&["report", &runs[0], &runs[1], "--out", &p(d, "two")]);
    let mean = column(&d.join("two/plot_mean_return.csv"), "mean");
    let (x, y) = (column(&d.join("a/N1/seed_0/curve.csv"), "mean_return"), column(&d.join("a/N1/seed_1/curve.csv"), "mean_return"));
    for i in 0..mean.len() {
        assert!((mean[i] - 0.5 * (x[i] + y[i])).abs() <= 1e-9 * mean[i].abs().max(1.0));
    }

    tiny_agent(d, "b", &["belief=oracle", "n_steps=1", "env=mass_spring_damper"]);
    let other = p(d, "b/N1/seed_0");
    assert_eq!(code(&["report", &runs[0], &other, "--out", &p(d, "mixed")]), 1);
}
