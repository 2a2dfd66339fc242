use std::ffi::OsString;
use std::fs;
use std::path::Path;

use crowdlearn::cli::{main_with_args, EXIT_FAILURE, EXIT_MAX_ITER};

fn run(args: &[&str]) -> i32 {
    let mut v: Vec<OsString> = vec!["crowdlearn".into()];
    v.extend(args.iter().map(OsString::from));
    main_with_args(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("synth.cfg");
    fs::write(
        &path,
        "n_users = 12\nn_items = 20\nn_topics = 2\nhorizon_days = 40\n\
         contributions_min = 20\ncontributions_max = 40\nmin_learning_events_per_item = 1\n",
    )
    .unwrap();
    path
}

#[test]
fn simulate_fit_evaluate_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sim = dir.path().join("sim");
    let fit = dir.path().join("fit");
    let base = dir.path().join("base");
    let pre = dir.path().join("pre");
    let eval = dir.path().join("eval");
    let ana = dir.path().join("ana");

    assert_eq!(run(&["--config", s(&cfg), "simulate", "--seed", "3", "--out", s(&sim)]), 0);
    assert!(sim.join("truth.json").exists());
    let data = sim.join("data");

    assert_eq!(run(&["preprocess", "--data", s(&data), "--out", s(&pre), "--no-filter"]), 0);
    assert!(pre.join("train").is_dir() && pre.join("test").is_dir());

    assert_eq!(run(&["fit", "--data", s(&data), "--out", s(&fit)]), 0);
    assert_eq!(run(&["fit", "--data", s(&data), "--out", s(&base), "--baseline"]), 0);
    let fit_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit_json["model"], "full");

    let code = run(&[
        "evaluate",
        "--model",
        s(&fit.join("fit.json")),
        "--data",
        s(&data),
        "--truth",
        s(&sim.join("truth.json")),
        "--out",
        s(&eval),
    ]);
    assert_eq!(code, 0);
    let recovery = fs::read_to_string(eval.join("recovery.csv")).unwrap();
    assert!(recovery.starts_with("family,"), "{recovery}");

    for report in ["decomposition", "knowledge-dist", "useful-upvotes", "contribution-split"] {
        let out = ana.join(report);
        let code = run(&[
            "analyze",
            "--fit",
            s(&fit.join("fit.json")),
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--report",
            report,
        ]);
        assert_eq!(code, 0, "{report}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
}

#[test]
fn reaching_max_iter_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sim = dir.path().join("sim");
    assert_eq!(run(&["--config", s(&cfg), "simulate", "--out", s(&sim)]), 0);
    let out = dir.path().join("fit");
    let code = run(&["fit", "--data", s(&sim.join("data")), "--out", s(&out), "--max-iter", "1"]);
    assert_eq!(code, EXIT_MAX_ITER);
    assert!(out.join("fit.json").exists());
}

#[test]
fn empty_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::write(data.join("items.jsonl"), "{\"item\":\"q\",\"topics\":[\"a\"]}\n").unwrap();
    fs::write(data.join("events.jsonl"), "").unwrap();
    let code = run(&["fit", "--data", s(&data), "--out", s(&dir.path().join("fit"))]);
    assert_eq!(code, EXIT_FAILURE);
}

#[test]
fn malformed_events_fail() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    fs::write(data.join("items.jsonl"), "{\"item\":\"q\",\"topics\":[\"a\"]}\n").unwrap();
    fs::write(data.join("events.jsonl"), "{\"type\":\"learn\"\n").unwrap();
    let code = run(&["fit", "--data", s(&data), "--out", s(&dir.path().join("fit"))]);
    assert_eq!(code, EXIT_FAILURE);
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "half_life = 3\n").unwrap();
    let code = run(&["--config", s(&cfg), "fit", "--data", "missing", "--out", s(&dir.path().join("fit"))]);
    assert_eq!(code, EXIT_FAILURE);
}
