use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lrsm::harness::commands::{CHI_FILE, META_FILE, PREDICTIVE_FILE, REPLICATES_FILE, SITES_FILE};
use lrsm::harness::{Dataset, FitSummary};
use lrsm::scoring::{parse_results_table, ScoreReport};

fn lrsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrsm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lrsm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    lrsm(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "# minimal\nn = 20\nT = 5\nseed = 9\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", &cfg, "--out", p(&a)]);
    ok(&["simulate", "--config", &cfg, "--out", p(&b)]);
    assert_eq!(fs::read_dir(&a).unwrap().count(), 3);
    for f in [SITES_FILE, REPLICATES_FILE, META_FILE] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let ds = Dataset::load(&a).unwrap();
    ds.save(&b).unwrap();
    assert_eq!(Dataset::load(&b).unwrap(), ds);

    let c = dir.path().join("c");
    ok(&["simulate", "--config", &cfg, "--out", p(&c), "--seed", "10"]);
    assert_ne!(fs::read(a.join(REPLICATES_FILE)).unwrap(), fs::read(c.join(REPLICATES_FILE)).unwrap());
}

#[test]
fn holdout_split_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n = 100\nT = 2\n");
    ok(&["simulate", "--config", &cfg, "--out", p(&dir.path().join("d"))]);
    let ds = Dataset::load(&dir.path().join("d")).unwrap();
    assert_eq!((ds.meta.train.len(), ds.meta.test.len()), (75, 25));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let f = dir.path().join("f");
    let cfg = write_config(dir.path(), "n = 20\nT = 5\n");
    ok(&["simulate", "--config", &cfg, "--out", p(&d)]);
    assert_eq!(code(&["fit", "--data", p(&d), "--out", p(&f), "--iters", "0"]), 2);
    assert_eq!(code(&["fit", "--data", p(&d), "--out", p(&f), "--backend", "kriging"]), 2);
    assert_eq!(code(&["fit", "--data", p(&d), "--out", p(&f), "--backend", "vecchia", "--m", "0"]), 2);
    assert_eq!(code(&["fit", "--data", p(&dir.path().join("missing")), "--out", p(&f)]), 3);
    assert_eq!(code(&["score", "--data", p(&d), "--fit", p(&f)]), 3);
    assert_eq!(code(&["frobnicate"]), 2);
    let bad = write_config(dir.path(), "n = 20\ncolour = red\n");
    assert_eq!(code(&["simulate", "--config", &bad, "--out", p(&d)]), 2);
}

#[test]
fn fit_predict_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (d, f) = (dir.path().join("d"), dir.path().join("f"));
    let cfg = write_config(dir.path(), "n = 40\nT = 10\nalpha = 0.5\nrho = 0.1\nseed = 2\n");
    ok(&["simulate", "--config", &cfg, "--out", p(&d)]);
    let out = ok(&["fit", "--data", p(&d), "--out", p(&f), "--backend", "vecchia", "--m", "5", "--iters", "1000"]);
    let summary: FitSummary = serde_json::from_str(&out).unwrap();
    assert_eq!(summary.method, "vecchia-m5");
    assert!(summary.alpha.ci_low <= summary.alpha.median && summary.alpha.median <= summary.alpha.ci_high);
    assert!(summary.walltime_sec > 0.0);
    for file in ["chain.csv", "chain.json", "summary.json"] {
        assert!(f.join(file).exists(), "{file}");
    }
    let chain_csv = fs::read_to_string(f.join("chain.csv")).unwrap();
    assert!(chain_csv.starts_with("iter,alpha,rho\n"));
    assert_eq!(chain_csv.lines().count(), 1 + 1001);

    ok(&["predict", "--data", p(&d), "--fit", p(&f), "--draws", "50", "--seed", "4"]);
    let first = fs::read(f.join(PREDICTIVE_FILE)).unwrap();
    ok(&["predict", "--data", p(&d), "--fit", p(&f), "--draws", "50", "--seed", "4"]);
    assert_eq!(first, fs::read(f.join(PREDICTIVE_FILE)).unwrap());

    let report: ScoreReport = serde_json::from_str(&ok(&["score", "--data", p(&d), "--fit", p(&f)])).unwrap();
    for v in [
        report.interval_score_alpha,
        report.interval_score_rho,
        report.twcrps_1,
        report.twcrps_2,
        report.twcrps_3,
    ] {
        assert!(v >= 0.0 && v.is_finite());
    }
    assert!([0.0, 1.0].contains(&report.coverage_alpha));
    assert_eq!(report.walltime_sec, summary.walltime_sec);
}

#[test]
fn diagnose_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("d");
    let cfg = write_config(dir.path(), "n = 30\nT = 60\nalpha = 0.6\nrho = 0.1\n");
    ok(&["simulate", "--config", &cfg, "--out", p(&d)]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |o: &Path| {
        vec!["diagnose".to_string(), "--data".into(), p(&d).into(), "--out".into(), p(o).into(), "--seed".into(), "3".into()]
    };
    let ra = ok(&args(&a).iter().map(String::as_str).collect::<Vec<_>>());
    let rb = ok(&args(&b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(ra, rb);
    for f in [CHI_FILE, "maxstab.json", "gev.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let chi = fs::read_to_string(a.join(CHI_FILE)).unwrap();
    assert!(chi.starts_with("u,chi,lo,hi\n"));
    for line in chi.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3] && (0.0..=1.0).contains(&v[1]), "{line}");
    }
}

#[test]
fn study_counts_cells_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "name = tiny\nn = 16\nT = 5\nbackends = full, lowrank:4\nreps = 2\nn_iter = 80\nadapt_every = 20\npred_draws = 20\n",
    );
    let out = dir.path().join("study");
    let text = ok(&["study", "--config", &cfg, "--out", p(&out), "--max-new-cells", "1"]);
    let rows = parse_results_table(&text).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().map(|r| r.n_reps).sum::<usize>(), 1);

    let text = ok(&["study", "--config", &cfg, "--out", p(&out), "--resume"]);
    let rows = parse_results_table(&text).unwrap();
    assert!(rows.iter().all(|r| r.n_reps == 2));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    let cells = json["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 4);
    assert_eq!(cells.iter().filter(|c| c["status"] == "resumed").count(), 1);
    assert_eq!(fs::read_to_string(out.join("results.txt")).unwrap(), text);
}
