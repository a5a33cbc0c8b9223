use std::fs;
use std::path::Path;

use grokfit::cli::{self, read_metrics, FitReport, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["grokfit"];
    full.extend_from_slice(args);
    cli::run(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn linear_config(dir: &Path, lambdas: &str) -> std::path::PathBuf {
    let cfg = dir.join("linear.cfg");
    fs::write(&cfg, format!("lambda_list = {lambdas}\neta0 = 0.01\nepsilon = 1e-10\ngrid_points = 2000\n")).unwrap();
    cfg
}

fn tiny_mlp_config(dir: &Path, seeds: &str) -> std::path::PathBuf {
    let cfg = dir.join("mlp.cfg");
    fs::write(
        &cfg,
        format!(
            "parity_bits = 2\nspurious_list = [4, 5]\nseeds = {seeds}\ntrain_size = 24\nval_size = 8\nhidden_width = 16\n\
             learning_rate = 0.5\nweight_decay = 0.01\nmax_epochs = 400\n"
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn linear_sweep_single_lambda_writes_files_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), "[1.05]");
    let out = tmp.path().join("out");
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out)]), EXIT_OK);
    for f in ["linear_lambda1.05.csv", "metrics.jsonl", "summary.csv", "trends.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let curve = fs::read_to_string(out.join("linear_lambda1.05.csv")).unwrap();
    assert!(curve.starts_with("epoch,acc_train,acc_val\n"));
    let rows = read_metrics(&fs::read_to_string(out.join("metrics.jsonl")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].lambda_or_input_size, 1.05);

    let before = fs::read(out.join("metrics.jsonl")).unwrap();
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out), "--overwrite"]), EXIT_OK);
    assert_eq!(fs::read(out.join("metrics.jsonl")).unwrap(), before);
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("partial.cfg");
    fs::write(&cfg, "lambda_list = [1.05]\neta0 = 0.01\ngrid_points = 2000\n").unwrap();
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out)]), EXIT_USAGE);
    // the missing key can come from an override
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out), "--set", "epsilon=1e-10"]), EXIT_OK);

    fs::write(&cfg, "lambda_list = [1.05]\neta0 = 0.01\nepsilon = 1e-10\ngrid_points = 2000\ntypo = 1\n").unwrap();
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out), "--overwrite"]), EXIT_USAGE);
    fs::write(&cfg, "lambda_list = [0.9, 1.05]\neta0 = 0.01\nepsilon = 1e-10\ngrid_points = 2000\n").unwrap();
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out), "--overwrite"]), EXIT_USAGE);
    assert_eq!(run(&["linear-sweep", "--config", p(&tmp.path().join("nope.cfg")), "--out", p(&out)]), EXIT_USAGE);
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg)]), EXIT_USAGE);
    assert_eq!(run(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(run(&["linear-sweep", "--workers", "many"]), EXIT_USAGE);
}

#[test]
fn fit_round_trips_sweep_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), "[1.03, 1.1]");
    let out = tmp.path().join("out");
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out), "--workers", "1"]), EXIT_OK);
    let rows = read_metrics(&fs::read_to_string(out.join("metrics.jsonl")).unwrap()).unwrap();
    for row in rows {
        let csv = out.join(format!("linear_lambda{}.csv", row.lambda_or_input_size));
        let fit_dir = tmp.path().join("fits");
        assert_eq!(run(&["fit", p(&csv), "-c", "0", "-d", "1", "--out", p(&fit_dir)]), EXIT_OK);
        let stem = csv.file_stem().unwrap().to_str().unwrap();
        let report: FitReport = serde_json::from_str(&fs::read_to_string(fit_dir.join(format!("fit_{stem}.json"))).unwrap()).unwrap();
        let m = report.metrics.unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs();
        assert!(close(m.m, row.m) && close(m.r_rel, row.r_rel) && close(m.r_abs, row.r_abs));
        assert!(close(m.fit_train.s, row.s_train) && close(m.fit_gen.t_star, row.t_star_gen));
    }
}

#[test]
fn fit_handles_single_column_and_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = String::from("epoch,acc_train\n");
    for t in 0..1000 {
        let v = 0.5 * libm::erf(0.01 * (t as f64 - 500.0)) + 0.5;
        text.push_str(&format!("{t},{v:?}\n"));
    }
    let csv = tmp.path().join("train_only.csv");
    fs::write(&csv, &text).unwrap();
    let out = tmp.path().join("fits");
    assert_eq!(run(&["fit", p(&csv), "--out", p(&out)]), EXIT_OK);
    let report: FitReport = serde_json::from_str(&fs::read_to_string(out.join("fit_train_only.json")).unwrap()).unwrap();
    assert!(report.validation.is_none() && report.metrics.is_none());
    match report.train.unwrap() {
        cli::ColumnFit::Fitted { fit } => {
            assert!((fit.s - 0.01).abs() <= 1e-6 * 0.01);
            assert!((fit.t_star - 500.0).abs() <= 1e-6 * 500.0);
        }
        other => panic!("{other:?}"),
    }

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "epoch,acc_train\n0,0.1\n1,oops\n").unwrap();
    assert_eq!(run(&["fit", p(&bad)]), EXIT_USAGE);
    let flat = tmp.path().join("flat.csv");
    fs::write(&flat, "epoch,acc_train\n0,0.0\n1,0.0\n2,0.0\n").unwrap();
    assert_eq!(run(&["fit", p(&flat)]), EXIT_FAILURE);
}

#[test]
fn plotdata_outputs_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = linear_config(tmp.path(), "[1.05, 1.1]");
    let out = tmp.path().join("out");
    assert_eq!(run(&["linear-sweep", "--config", p(&cfg), "--out", p(&out)]), EXIT_OK);

    let plots = tmp.path().join("plots");
    assert_eq!(run(&["plotdata", p(&out), "--out", p(&plots), "--no-svg"]), EXIT_OK);
    let overlay = fs::read_to_string(plots.join("overlay_linear_lambda1.05_val.csv")).unwrap();
    assert!(overlay.starts_with("epoch,observed,fitted\n"));
    assert!(overlay.lines().count() > 20);
    assert!(plots.join("m_vs_r_rel.csv").exists() && plots.join("loglog_m_vs_r_abs.csv").exists());
    assert!(!plots.join("m_vs_r_rel.svg").exists());

    assert_eq!(run(&["plotdata", p(&out)]), EXIT_OK);
    assert!(fs::read_to_string(out.join("plots").join("m_vs_r_rel.svg")).unwrap().starts_with("<svg"));
    assert_eq!(run(&["plotdata", p(&out)]), EXIT_USAGE);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["plotdata", p(&empty)]), EXIT_USAGE);

    // a non-positive m row is kept in the linear table but not the log-log one
    let mixed = tmp.path().join("mixed");
    fs::create_dir(&mixed).unwrap();
    let row = |m: f64| {
        format!(
            "{{\"lambda_or_input_size\":1.0,\"seed\":0,\"m\":{m:?},\"r_rel\":0.5,\"r_abs\":0.1,\"s_train\":1.0,\"s_gen\":0.5,\
             \"t_star_train\":1.0,\"t_star_gen\":2.0,\"rmse_train\":0.0,\"rmse_gen\":0.0}}\n"
        )
    };
    fs::write(mixed.join("metrics.jsonl"), row(1.0) + &row(-0.2) + &row(2.0)).unwrap();
    assert_eq!(run(&["plotdata", p(&mixed), "--no-svg"]), EXIT_OK);
    let lin = fs::read_to_string(mixed.join("plots").join("m_vs_r_rel.csv")).unwrap();
    let log = fs::read_to_string(mixed.join("plots").join("loglog_m_vs_r_rel.csv")).unwrap();
    assert_eq!(lin.lines().count(), 4);
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn mlp_sweep_files_determinism_and_low_confidence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_mlp_config(tmp.path(), "[4]");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let code = run(&["mlp-sweep", "--config", p(&cfg), "--out", p(&a)]);
    assert!(code == EXIT_OK || code == EXIT_FAILURE, "exit {code}");
    assert_eq!(run(&["mlp-sweep", "--config", p(&cfg), "--out", p(&b), "--workers", "1"]), code);

    for s in [4, 5] {
        for ext in ["json", "csv"] {
            assert!(a.join(format!("mlp_s{s}_seed4.{ext}")).exists());
        }
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["low_confidence"], true);
    assert!(summary["warning"].is_string());

    let mut names: Vec<String> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    for name in names.iter().filter(|n| *n != "timings.json") {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
    assert!(!names.iter().any(|n| n.contains(".tmp")));
    assert_eq!(run(&["selfcheck", p(&a)]), EXIT_OK);
}

#[test]
fn mlp_sweep_seed_flag_and_two_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("mlp.cfg");
    fs::write(&cfg, "parity_bits = 2\nspurious_list = [4]\ntrain_size = 24\nval_size = 8\nhidden_width = 8\nmax_epochs = 50\n").unwrap();
    let out = tmp.path().join("o");
    let code = run(&["mlp-sweep", "--config", p(&cfg), "--out", p(&out), "--seed", "9"]);
    assert!(code == EXIT_OK || code == EXIT_FAILURE);
    assert!(out.join("mlp_s4_seed9.json").exists());

    let cfg2 = tiny_mlp_config(tmp.path(), "[1, 2]");
    let out2 = tmp.path().join("o2");
    let code = run(&["mlp-sweep", "--config", p(&cfg2), "--out", p(&out2)]);
    assert!(code == EXIT_OK || code == EXIT_FAILURE);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out2.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["low_confidence"], false);
    assert_eq!(summary["units"], 4);
}

#[test]
fn selfcheck_detects_schema_violations() {
    assert_eq!(run(&["selfcheck"]), EXIT_OK);
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("good.csv"), "epoch,acc_train,acc_val\n0,0.5,0.5\n1,0.6,0.5\n").unwrap();
    assert_eq!(run(&["selfcheck", p(tmp.path())]), EXIT_OK);
    fs::write(tmp.path().join("metrics.jsonl"), "{\"m\": 1.0}\n").unwrap();
    assert_eq!(run(&["selfcheck", p(tmp.path())]), EXIT_FAILURE);
    fs::remove_file(tmp.path().join("metrics.jsonl")).unwrap();
    fs::write(tmp.path().join("bad.csv"), "epoch,acc_train,acc_val\n0,0.5,0.5\n0,0.6,0.5\n").unwrap();
    assert_eq!(run(&["selfcheck", p(tmp.path())]), EXIT_FAILURE);
    assert_eq!(run(&["selfcheck", p(&tmp.path().join("missing"))]), EXIT_USAGE);
}
