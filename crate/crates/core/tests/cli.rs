use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cliquetree::dataset::DataSplit;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cliquetree"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Class column, then `a == b`, then `c` independent of both.
fn coupled_rows(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let a = ["x", "y", "z"][i % 3];
            let c = ["p", "q"][(i / 3) % 2];
            let class = if i % 2 == 0 { "e" } else { "p" };
            format!("{class},{a},{a},{c}")
        })
        .collect()
}

fn write_lines(dir: &Path, name: &str, lines: &[String]) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn sweep(dir: &Path, input: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("out");
    let mut args = vec!["sweep", s(input), "--out", s(&out)];
    args.extend_from_slice(extra);
    (run(&args), out)
}

/// Data lines of a TSV, split into fields.
fn tsv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split('\t').map(String::from).collect();
    let rows = lines
        .map(|l| l.split('\t').map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["sweep", "--help"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&["sweep", "--no-such-flag", "x.csv"])), 2);
    assert_eq!(code(&run(&[])), 2);
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.csv");
    let (out, _) = sweep(dir.path(), &missing, &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bad_numeric_arguments_exit_two() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(30));
    for extra in [
        &["--train-fraction", "1.5"][..],
        &["--laplace", "-1"],
        &["--n-splits", "0"],
        &["--exclude-columns", "9"],
    ] {
        let (out, _) = sweep(dir.path(), &input, extra);
        assert_eq!(code(&out), 2, "{extra:?}");
    }
}

#[test]
fn unseen_test_value_is_infeasible() {
    let mut lines = coupled_rows(20);
    lines[0] = "e,w,w,p".into();
    let seed = (0..1000u64)
        .find(|&s| DataSplit::new(lines.len(), 0.8, s).unwrap().test_indices.contains(&0))
        .unwrap();
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &lines);
    let (out, _) = sweep(dir.path(), &input, &["--seed", &seed.to_string()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sweep_writes_stamped_outputs() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (out, out_dir) = sweep(dir.path(), &input, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("optimal threshold:"));

    let tsv = fs::read_to_string(out_dir.join("sweep.tsv")).unwrap();
    assert!(tsv.contains("# tool_version="));
    assert!(tsv.contains("# input_sha256="));
    assert!(tsv.contains("# config.seed=42"));
    let (header, rows) = tsv_rows(&out_dir.join("sweep.tsv"));
    assert_eq!(header[0], "threshold");
    assert!(!rows.is_empty());

    let selection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["mode"], "single_split");
    assert_eq!(selection["metadata"]["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(selection["metadata"]["input_sha256"].as_str().unwrap().len(), 64);
    let total = selection["model"]["enumerated_total_probability"].as_f64().unwrap();
    assert!((total - 1.0).abs() < 1e-9);

    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("model.json")).unwrap()).unwrap();
    assert!(model["metadata"]["input_sha256"].is_string());
    assert_eq!(model["metadata"]["config"]["train_fraction"], "0.8");
}

#[test]
fn fixed_threshold_skips_selection() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (out, out_dir) = sweep(dir.path(), &input, &["--threshold", "0.5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let selection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["mode"], "fixed_threshold");
    assert_eq!(selection["model"]["threshold"], 0.5);
    // a and b are identical, c is independent: cliques {a,b} and {c}.
    let mut sizes: Vec<u64> = selection["model"]["clique_sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![1, 2]);
}

#[test]
fn multi_split_writes_per_seed_sweeps() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (out, out_dir) = sweep(dir.path(), &input, &["--n-splits", "3", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for seed in 7..10 {
        assert!(out_dir.join(format!("sweep_seed_{seed}.tsv")).exists());
    }
    let selection: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["mode"], "multi_split");
    assert_eq!(selection["splits"].as_array().unwrap().len(), 3);
    assert!(selection["median_threshold"].is_f64());
}

#[test]
fn fit_writes_only_the_model() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let out_dir = dir.path().join("fit");
    let out = run(&["fit", s(&input), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    assert!(out_dir.join("model.json").exists());
    assert!(!out_dir.join("sweep.tsv").exists());
}

#[test]
fn scoring_ranks_contradictions_first() {
    let dir = TempDir::new().unwrap();
    let train = coupled_rows(60);
    let input = write_lines(dir.path(), "d.csv", &train);
    let (out, out_dir) = sweep(dir.path(), &input, &[]);
    assert_eq!(code(&out), 0);
    let model = out_dir.join("model.json");

    // Training rows alone: nothing has zero probability.
    let scored = dir.path().join("self");
    let out = run(&["score", "--model", s(&model), s(&input), "--out", s(&scored)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = tsv_rows(&scored.join("anomalies.tsv"));
    assert_eq!(rows.len(), train.len());
    let lp = column(&header, "log_probability");
    assert!(rows.iter().all(|r| r[lp].parse::<f64>().unwrap().is_finite()));
    let jsonl = fs::read_to_string(scored.join("anomalies.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), train.len() + 1);

    // Planted row breaks a == b using seen values.
    let mut planted = train.clone();
    planted.push("e,x,y,p".into());
    let planted_path = write_lines(dir.path(), "planted.csv", &planted);
    let scored = dir.path().join("planted");
    let out = run(&["score", "--model", s(&model), s(&planted_path), "--out", s(&scored)]);
    assert_eq!(code(&out), 0);
    let (header, rows) = tsv_rows(&scored.join("anomalies.tsv"));
    let idx = column(&header, "row_index");
    let p = column(&header, "probability");
    let explanation = column(&header, "explanation_clique_attrs");
    assert_eq!(rows[0][idx], train.len().to_string());
    assert_eq!(rows[0][p].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][explanation], "a1,a2");

    // Smoothing removes zeros.
    let scored = dir.path().join("smoothed");
    let out = run(&[
        "score", "--model", s(&model), s(&planted_path), "--laplace", "1", "--out", s(&scored),
    ]);
    assert_eq!(code(&out), 0);
    let (_, rows) = tsv_rows(&scored.join("anomalies.tsv"));
    assert!(rows.iter().all(|r| r[p].parse::<f64>().unwrap() > 0.0));
    assert_eq!(rows[0][idx], train.len().to_string());
}

#[test]
fn unencodable_rows_are_reported_not_fatal() {
    let dir = TempDir::new().unwrap();
    let train = coupled_rows(60);
    let input = write_lines(dir.path(), "d.csv", &train);
    let (_, out_dir) = sweep(dir.path(), &input, &[]);
    let mut rows = train[..5].to_vec();
    rows.push("e,never,x,p".into());
    let path = write_lines(dir.path(), "new.csv", &rows);
    let scored = dir.path().join("scored");
    let model = out_dir.join("model.json");
    let out = run(&["score", "--model", s(&model), s(&path), "--out", s(&scored)]);
    assert_eq!(code(&out), 0);
    let (header, rows) = tsv_rows(&scored.join("anomalies.tsv"));
    assert_eq!(rows[0][column(&header, "row_index")], "5");
    assert!(rows[0][column(&header, "explanation_clique_attrs")].contains("unencodable"));
}

#[test]
fn clusters_by_clique_and_attrs() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (_, out_dir) = sweep(dir.path(), &input, &["--threshold", "0.5"]);
    let model = out_dir.join("model.json");

    let out = run(&["clusters", "--model", s(&model), s(&input), "--attrs", "a1,a2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# observed_clusters=3 possible_combinations=9 rows=60"));

    // A singleton subset is a value histogram.
    let out = run(&["clusters", "--model", s(&model), s(&input), "--attrs", "3"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# observed_clusters=2 possible_combinations=2 rows=60"));
    let sizes: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split('\t').nth(1).unwrap())
        .collect();
    assert_eq!(sizes, vec!["30", "30"]);

    let out = run(&["clusters", "--model", s(&model), s(&input), "--attrs", "nope"]);
    assert_eq!(code(&out), 2);
    let out = run(&["clusters", "--model", s(&model), s(&input), "--clique", "99"]);
    assert_eq!(code(&out), 2);

    let file = dir.path().join("c.tsv");
    let out = run(&["clusters", "--model", s(&model), s(&input), "--clique", "0", "--out", s(&file)]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(file).unwrap().contains("observed_clusters="));
}

#[test]
fn similarity_prints_a_fraction() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (_, out_dir) = sweep(dir.path(), &input, &["--threshold", "0.5"]);
    let model = out_dir.join("model.json");
    let sim = |a: &str, b: &str| {
        let out = run(&["similarity", "--model", s(&model), s(&input), "--row-a", a, "--row-b", b]);
        assert_eq!(code(&out), 0);
        String::from_utf8(out.stdout).unwrap().trim().parse::<f64>().unwrap()
    };
    assert_eq!(sim("0", "0"), 1.0);
    // Rows 0 and 3 share a but not c.
    assert_eq!(sim("0", "3"), 0.5);
    let out = run(&["similarity", "--model", s(&model), s(&input), "--row-a", "0", "--row-b", "600"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn export_single_attribute_dataset() {
    let dir = TempDir::new().unwrap();
    let lines: Vec<String> = (0..20).map(|i| format!("c,{}", ["u", "v"][i % 2])).collect();
    let input = write_lines(dir.path(), "one.csv", &lines);
    let (out, out_dir) = sweep(dir.path(), &input, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let dot_dir = dir.path().join("dot");
    let out = run(&["export", "--model", s(&out_dir.join("model.json")), "--out", s(&dot_dir)]);
    assert_eq!(code(&out), 0);
    let tree = fs::read_to_string(dot_dir.join("clique_tree.dot")).unwrap();
    assert!(tree.contains("a1"));
    assert!(!tree.contains("--"));
    assert!(dot_dir.join("dependency_graph.dot").exists());
}

#[test]
fn tampered_model_is_rejected() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(60));
    let (_, out_dir) = sweep(dir.path(), &input, &[]);
    let path = out_dir.join("model.json");
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let count = &mut doc["cliques"][0]["entries"][0]["count"];
    *count = serde_json::json!(count.as_u64().unwrap() + 1);
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let out = run(&["export", "--model", s(&path), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);

    fs::write(&path, "{ not json").unwrap();
    let out = run(&["export", "--model", s(&path), "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn jobs_do_not_change_outputs() {
    let dir = TempDir::new().unwrap();
    let input = write_lines(dir.path(), "d.csv", &coupled_rows(90));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["--jobs", "1", "sweep", s(&input), "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["--jobs", "3", "sweep", s(&input), "--out", s(&b)])), 0);
    for f in ["sweep.tsv", "selection.json", "model.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
