mod common;

use std::collections::HashMap;
use std::fs;

use common::{ok, path_str, run, Csv};
use label_audit::bounds::{rr_worstcase_adv, thm1_exact};

fn gen(dir: &tempfile::TempDir, name: &str, args: &[&str]) -> String {
    let out = dir.path().join(name);
    let mut full = vec!["gen-data"];
    full.extend_from_slice(args);
    full.extend_from_slice(&["--out", path_str(&out)]);
    ok(&full);
    path_str(&out).to_owned()
}

#[test]
fn gen_data_rows_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--dist", "beta", "--a", "2", "--b", "30", "--m", "100000", "--seed", "1"];
    let a = gen(&dir, "a.csv", &flags);
    let b = gen(&dir, "b.csv", &flags);
    let text = fs::read_to_string(&a).unwrap();
    let data_rows = text.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(data_rows, 100_000);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    assert_eq!(run(&["gen-data", "--dist", "cauchy", "--m", "10", "--out", path_str(&out)]).status.code(), Some(2));
    assert_eq!(run(&["gen-data", "--dist", "beta", "--a", "-1", "--m", "10", "--out", path_str(&out)]).status.code(), Some(2));
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "100"]);
    assert_eq!(run(&["audit", "--dataset", &d, "--mechanism", "rr"]).status.code(), Some(2));
    assert_eq!(run(&["audit", "--dataset", &d, "--mechanism", "lap"]).status.code(), Some(2));
}

#[test]
fn audit_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "5000", "--seed", "3"]);
    let rr = Csv::parse(&ok(&["audit", "--dataset", &d, "--mechanism", "rr", "--epsilon", "1", "--trials", "2000"]));
    let add = rr.f64s("additive_adv")[0];
    assert!(add > 0.0 && add <= rr_worstcase_adv(1.0).unwrap());
    assert!(rr.f64s("mult_p98")[0] <= 1.0 + 1e-12);

    let null = Csv::parse(&ok(&["audit", "--dataset", &d, "--mechanism", "null"]));
    assert_eq!(null.strs("additive_adv")[0], "0");
    assert_eq!(null.strs("mult_p98")[0], "0");

    let ind = gen(&dir, "i.csv", &["--dist", "independent", "--p", "0.3", "--m", "4000"]);
    let llp = Csv::parse(&ok(&["audit", "--dataset", &ind, "--mechanism", "llp", "--bag-size", "8", "--trials", "500"]));
    let want = thm1_exact(0.3, 8).unwrap();
    let (got, se) = (llp.f64s("additive_adv")[0], llp.f64s("additive_stderr")[0]);
    assert!((got - want).abs() <= 3.0 * se + 1e-12, "{got} vs {want}");
}

#[test]
fn audit_needs_priors_or_knn() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "400", "--seed", "4"]);
    let no_eta = dir.path().join("n.csv");
    let stripped: Vec<String> = fs::read_to_string(&d)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.rsplit_once(',').unwrap().0.to_owned())
        .collect();
    fs::write(&no_eta, stripped.join("\n") + "\n").unwrap();
    let out = run(&["audit", "--dataset", path_str(&no_eta), "--mechanism", "rr", "--epsilon", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--knn"));
    let with_knn = Csv::parse(&ok(&[
        "audit", "--dataset", path_str(&no_eta), "--mechanism", "rr", "--epsilon", "1", "--knn", "50", "--trials", "200",
    ]));
    assert_eq!(with_knn.f64s("samples")[0] + with_knn.f64s("degenerate")[0], 400.0);
}

#[test]
fn scatter_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "1000", "--seed", "5"]);
    let rr = Csv::parse(&ok(&["scatter", "--dataset", &d, "--mechanism", "rr", "--epsilon", "1", "--runs", "3"]));
    assert_eq!(rr.rows.len(), 3000);
    let mut posts: HashMap<String, Vec<String>> = HashMap::new();
    let (pc, qc) = (rr.col("prior"), rr.col("posterior"));
    for row in &rr.rows {
        let v = posts.entry(row[pc].clone()).or_default();
        if !v.contains(&row[qc]) {
            v.push(row[qc].clone());
        }
    }
    assert!(posts.values().all(|v| v.len() <= 2));
    assert!(posts.values().any(|v| v.len() == 2));

    let null = Csv::parse(&ok(&["scatter", "--dataset", &d, "--mechanism", "null"]));
    assert_eq!(null.rows.len(), 1000);
    assert_eq!(null.f64s("prior"), null.f64s("posterior"));

    let llp = Csv::parse(&ok(&["scatter", "--dataset", &d, "--mechanism", "llp", "--bag-size", "16", "--runs", "2"]));
    // 62 full bags of 16 per run
    assert_eq!(llp.rows.len(), 2 * 992);
    let lap = Csv::parse(&ok(&["scatter", "--dataset", &d, "--mechanism", "llp-lap", "--bag-size", "3", "--epsilon", "1"]));
    // m_eff drops the incomplete bag
    assert_eq!(lap.rows.len(), 999);
}

#[test]
fn cdf_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "beta", "--a", "2", "--b", "30", "--m", "4000", "--seed", "6"]);
    let rr = Csv::parse(&ok(&["cdf", "--dataset", &d, "--mechanism", "rr", "--epsilon", "0.5"]));
    let measures = rr.strs("measure");
    let values = rr.f64s("value");
    let cdf = rr.f64s("cdf");
    for m in ["mult_abs", "additive_gap"] {
        let last = measures.iter().rposition(|x| x == m).unwrap();
        assert_eq!(cdf[last], 1.0);
    }
    for (i, m) in measures.iter().enumerate() {
        if m == "mult_abs" {
            assert!(values[i] <= 0.5 + 1e-12);
        }
    }
    assert!(rr.f64s("inf_mass").iter().all(|&v| v == 0.0));

    let llp = Csv::parse(&ok(&["cdf", "--dataset", &d, "--mechanism", "llp", "--bag-size", "8"]));
    assert!(llp.f64s("inf_mass")[0] > 0.0);
    let last = llp.strs("measure").iter().position(|m| m == "additive_gap").unwrap() - 1;
    assert_eq!(llp.strs("value")[last], "inf");
    assert_eq!(llp.f64s("cdf")[last], 1.0);
}

#[test]
fn tradeoff_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "4000", "--seed", "7"]);
    let text = ok(&[
        "tradeoff", "--dataset", &d, "--mechanisms", "llp-geom,rr,null,llp", "--epsilons", "4,0.5", "--bag-sizes", "4,1",
        "--learning-rates", "0.01", "--runs", "3", "--adv-trials", "50",
    ]);
    let t = Csv::parse(&text);
    let keys: Vec<(String, String, String)> = t
        .rows
        .iter()
        .map(|r| (r[t.col("mechanism")].clone(), r[t.col("k")].clone(), r[t.col("epsilon")].clone()))
        .collect();
    let k = |m: &str, k: &str, e: &str| (m.to_owned(), k.to_owned(), e.to_owned());
    assert_eq!(keys, vec![
        k("null", "1", "inf"),
        k("rr", "1", "0.5"),
        k("rr", "1", "4"),
        k("llp", "1", "inf"),
        k("llp", "4", "inf"),
        k("llp-geom", "1", "0.5"),
        k("llp-geom", "1", "4"),
        k("llp-geom", "4", "0.5"),
        k("llp-geom", "4", "4"),
    ]);
    let flags = t.strs("auc_stderr_ok");
    for (se, flag) in t.f64s("auc_stderr").iter().zip(&flags) {
        assert_eq!(flag == "true", *se <= 0.0076);
    }
    assert_eq!(t.f64s("additive_adv")[0], 0.0);
}

#[test]
fn bounds_check_exit_codes() {
    let small = ["bounds-check", "--ks", "16", "--conf-ks", "4096", "--deltas", "0.1", "--trials", "300"];
    let t = Csv::parse(&ok(&small));
    assert!(t.strs("satisfied").iter().all(|s| s == "true"));
    let tb: Vec<usize> = (0..t.rows.len()).filter(|&i| t.record(i)["bound_name"] == "truebound").collect();
    assert!(!tb.is_empty());
    for i in tb {
        let r = t.record(i);
        assert!(!r["bound_value"].is_empty() && !r["bound_prob"].is_empty());
    }
    let mut forced = small.to_vec();
    forced.extend(["--empirical-override", "10"]);
    assert_eq!(run(&forced).status.code(), Some(1));
}

#[test]
fn json_mirrors_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "200", "--seed", "8"]);
    let args = ["scatter", "--dataset", &d, "--mechanism", "llp", "--bag-size", "4"];
    let csv = Csv::parse(&ok(&args));
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&ok(&json_args)).unwrap();
    assert_eq!(v["config"]["command"], "scatter");
    let priors: Vec<f64> = v["prior"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(priors, csv.f64s("prior"));
    assert_eq!(v["epsilon"][0], "inf");
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = gen(&dir, "d.csv", &["--dist", "uniform", "--m", "3000", "--seed", "9"]);
    let args = ["audit", "--dataset", &d, "--mechanism", "llp-geom", "--bag-size", "8", "--epsilon", "1", "--trials", "3000"];
    let default = ok(&args);
    let out = common::bin().args(args).env("LABEL_AUDIT_THREADS", "1").output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), default);
    let bad = common::bin().args(args).env("LABEL_AUDIT_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
