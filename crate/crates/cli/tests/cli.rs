use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn pricerule(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pricerule"))
        .args(args)
        .env_remove("PRICERULE_PROPOSER_URL")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn world(root: &Path, name: &str, seed: &str) -> PathBuf {
    let dir = root.join(name);
    let o = pricerule(&["gen-data", "--customers", "8", "--skus", "6", "--seed", seed, "--threads", "1", "--out", s(&dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir
}

fn data_lines(p: &Path) -> Vec<String> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn gen_data_writes_bundle_truth_and_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let a = world(tmp.path(), "nested/a", "7");
    let b = world(tmp.path(), "b", "7");
    for f in ["customers.csv", "skus.csv", "transactions.csv", "truth.json", "golden.csv", "run-manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    for e in std::fs::read_dir(&a).unwrap() {
        let name = e.unwrap().file_name();
        if name == "run-manifest.json" {
            continue;
        }
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
    assert_eq!(data_lines(&a.join("customers.csv")).len(), 8);
    let golden = std::fs::read_to_string(a.join("golden.csv")).unwrap();
    assert!(golden.starts_with("customer,material,stock,price,units\n"));
}

#[test]
fn gen_data_refuses_non_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = world(tmp.path(), "w", "1");
    let again = ["gen-data", "--customers", "8", "--skus", "6", "--seed", "1", "--out", s(&dir)];
    let o = pricerule(&again);
    assert_eq!(code(&o), 8, "{}", stderr(&o));
    let mut forced = again.to_vec();
    forced.push("--force");
    assert_eq!(code(&pricerule(&forced)), 0);
}

#[test]
fn usage_and_config_errors() {
    assert_eq!(code(&pricerule(&["search", "--no-such-flag"])), 2);
    assert_eq!(code(&pricerule(&["frobnicate"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(code(&pricerule(&["search", "--out", s(&out)])), 3);
    assert_eq!(code(&pricerule(&["search", "--data", "/no/such/place", "--out", s(&out)])), 3);
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "budgett = 3\n").unwrap();
    assert_eq!(code(&pricerule(&["--config", s(&cfg), "search", "--out", s(&out)])), 3);
}

#[test]
fn malformed_data_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let o = pricerule(&["search", "--data", s(&bad), "--budget", "1", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn searches_never_read_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "2");
    let out = tmp.path().join("o");
    let o = pricerule(&["search", "--data", s(&w.join("truth.json")), "--out", s(&out)]);
    assert_eq!(code(&o), 8, "{}", stderr(&o));
    let renamed = tmp.path().join("innocent.json");
    std::fs::copy(w.join("truth.json"), &renamed).unwrap();
    let o = pricerule(&["search", "--data", s(&w), "--golden", s(&renamed), "--out", s(&out)]);
    assert_eq!(code(&o), 8, "{}", stderr(&o));
    assert!(!out.join("best.rule").exists());
}

#[test]
fn evo_search_writes_rule_report_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "3");
    let out = tmp.path().join("o");
    let o = pricerule(&["search", "--data", s(&w), "--method", "evo", "--budget", "6", "--seed", "1", "--threads", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["best.rule", "report.json", "report.csv", "trace.csv", "archive.json", "run-manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(data_lines(&out.join("trace.csv")).len(), 6);
    let rule = std::fs::read_to_string(out.join("best.rule")).unwrap();
    assert!(rule.contains("price"));
    let e = pricerule(&["eval", "--rule", s(&out.join("best.rule")), "--data", s(&w)]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    let report: serde_json::Value = serde_json::from_str(&stdout(&e)).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report, saved);
}

#[test]
fn zero_budget_evaluates_the_initial_rule() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "3");
    for method in ["evo", "mcts", "two-phase"] {
        let out = tmp.path().join(method);
        let o = pricerule(&["search", "--data", s(&w), "--method", method, "--budget", "0", "--threads", "1", "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{method}: {}", stderr(&o));
        assert!(data_lines(&out.join("trace.csv")).is_empty(), "{method}");
        assert!(out.join("report.json").exists());
    }
}

#[test]
fn mock_backed_methods_complete_offline() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "4");
    let golden = w.join("golden.csv");
    for method in ["llm-iterate", "mcts", "two-phase", "rl"] {
        let out = tmp.path().join(method);
        let o = pricerule(&[
            "search", "--data", s(&w), "--method", method, "--budget", "3", "--proposer", "mock", "--golden", s(&golden), "--threads",
            "1", "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{method}: {}", stderr(&o));
        assert!(out.join("best.rule").exists());
    }
}

#[test]
fn unreachable_proposer_is_exit_five() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "4");
    let o = pricerule(&[
        "search", "--data", s(&w), "--method", "mcts", "--budget", "2", "--proposer", "http://127.0.0.1:9/v1", "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn unparseable_rule_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "5");
    let rule = tmp.path().join("r.rule");
    std::fs::write(&rule, "price: ((").unwrap();
    assert_eq!(code(&pricerule(&["eval", "--rule", s(&rule), "--data", s(&w)])), 4);
}

#[test]
fn pipeline_writes_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "6");
    let locks = tmp.path().join("locks.csv");
    std::fs::write(&locks, "customer,material,amount\nC0001,M0001,5\n").unwrap();
    let out = tmp.path().join("o");
    let o = pricerule(&["pipeline", "--data", s(&w), "--lock-file", s(&locks), "--threads", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let plan = std::fs::read_to_string(out.join("plan.csv")).unwrap();
    assert!(plan.starts_with("customer,material,branch,amount,profit\n"));
    assert!(plan.contains("C0001,M0001,locked,5,"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("plan-summary.json")).unwrap()).unwrap();
    assert!(summary["total_amount"].as_f64().unwrap() > 0.0);

    let empty = tmp.path().join("empty");
    let o = pricerule(&["pipeline", "--data", s(&w), "--theta", "1e300", "--out", s(&empty)]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(empty.join("plan.csv")).unwrap(), "customer,material,branch,amount,profit\n");
}

#[test]
fn compare_ranks_methods_and_guards_fingerprints() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "8");
    let other = world(tmp.path(), "other", "9");
    let out = tmp.path().join("o");
    let args = |truth: &Path, out: &Path| -> Vec<String> {
        ["compare", "--data", s(&w), "--truth", s(truth), "--budget", "3", "--threads", "1", "--b-t", "1e30", "--out", s(out)]
            .iter()
            .map(|a| a.to_string())
            .collect()
    };
    let run = |a: Vec<String>| pricerule(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let o = run(args(&w.join("truth.json"), &out));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(stdout(&o), table);
    let rows = data_lines(&out.join("compare.csv"));
    assert_eq!(rows.len(), 6);
    for m in ["evo", "rl", "mcts", "llm-iterate", "lowrank", "clustering"] {
        assert!(rows.iter().any(|r| r.split(',').nth(1) == Some(m)), "{m}");
    }
    assert!(rows.iter().all(|r| r.ends_with(",not reached")));
    let again = run(args(&w.join("truth.json"), &tmp.path().join("o2")));
    assert_eq!(stdout(&again), table);

    let o = run(args(&other.join("truth.json"), &tmp.path().join("o3")));
    assert_eq!(code(&o), 8, "{}", stderr(&o));
}

#[test]
fn report_checks_monotonicity() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.csv");
    std::fs::write(&good, "# seed=1\ngeneration,best,archive_best,archive_mae\n0,1,1,3\n1,0.5,2,2\n2,3,3,\n").unwrap();
    let out = tmp.path().join("o");
    let o = pricerule(&["report", "--trace", s(&good), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("0-good,3,archive_best,true,true"));
    let plot = std::fs::read_to_string(out.join("plot-0-good.csv")).unwrap();
    assert!(plot.starts_with("series,x,y\nbest,0,1\n"));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "generation,archive_best\n0,2\n1,1\n").unwrap();
    let o = pricerule(&["report", "--trace", s(&good), "--trace", s(&bad), "--out", s(&tmp.path().join("o2"))]);
    assert_eq!(code(&o), 9);
    assert!(tmp.path().join("o2/report-summary.csv").exists());
}

#[test]
fn replay_is_byte_identical_and_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "10");
    let out = tmp.path().join("o");
    let o = pricerule(&["search", "--data", s(&w), "--method", "evo", "--budget", "4", "--seed", "2", "--threads", "1", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let manifest = out.join("run-manifest.json");
    let r = pricerule(&["replay", "--manifest", s(&manifest), "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(stdout(&r).starts_with("replay identical"));
    for f in ["best.rule", "trace.csv", "report.json", "archive.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(tmp.path().join("r").join(f)).unwrap());
    }

    assert_eq!(code(&pricerule(&["replay", "--manifest", s(&manifest), "--out", s(&out)])), 8);
    assert_eq!(code(&pricerule(&["replay", "--manifest", s(&manifest)])), 3);

    let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    m["outputs"]["trace.csv"] = serde_json::Value::String("0".repeat(64));
    let tampered = tmp.path().join("tampered.json");
    std::fs::write(&tampered, m.to_string()).unwrap();
    let r = pricerule(&["replay", "--manifest", s(&tampered), "--out", s(&tmp.path().join("t"))]);
    assert_eq!(code(&r), 9);
    assert!(stderr(&r).contains("trace.csv differs"));
}

#[test]
fn manifest_records_seeds_and_fingerprints() {
    let tmp = tempfile::tempdir().unwrap();
    let w = world(tmp.path(), "w", "11");
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(w.join("run-manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen-data");
    assert_eq!(m["seeds"]["world"], 11);
    assert_eq!(m["config_fingerprint"].as_str().unwrap().len(), 64);
    assert!(m["dataset_fingerprint"].is_string());
    assert!(m["outputs"]["truth.json"].is_string());
}
