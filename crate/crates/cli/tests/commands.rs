use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;

use eoe_cli::cli::{dispatch, Cli};
use eoe_cli::output::RunManifest;

fn run(args: &[&str], out: &Path) -> RunManifest {
    let mut argv = vec!["eoe"];
    argv.extend_from_slice(args);
    let out = out.to_string_lossy().into_owned();
    argv.extend(["--out-dir", &out]);
    let cli = Cli::try_parse_from(&argv).expect("valid arguments");
    dispatch(cli.command).expect("run succeeds").1
}

fn read_csv(path: PathBuf) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(&path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn small_toy_config(dir: &Path) -> String {
    let p = dir.join("toy.json");
    std::fs::write(&p, r#"{"n_seeds": 1, "epochs": 20, "num_subs": 2, "grid_points": 5}"#).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn toy_summary_has_one_row_per_size() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(tmp.path());
    let out = tmp.path().join("run");
    let m = run(&["toy-regression", "--config", &cfg], &out);
    let (header, rows) = read_csv(out.join("summary.csv"));
    assert_eq!(rows.len(), 7);
    assert_eq!(header[1], "mean_variance_epistemic");
    assert!(m.summary.contains_key("spearman_rho"));
}

#[test]
fn measure_flag_switches_epistemic_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(tmp.path());
    let out = tmp.path().join("run");
    run(
        &["toy-regression", "--config", &cfg, "--measure", "gaussian_bound"],
        &out,
    );
    let (header, _) = read_csv(out.join("epistemic.csv"));
    assert_eq!(header.last().unwrap(), "gaussian_bound");
}

#[test]
fn manifest_lists_outputs_and_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_toy_config(tmp.path());
    let out = tmp.path().join("run");
    let m = run(
        &["toy-regression", "--config", &cfg, "--seed", "9", "--epochs", "3"],
        &out,
    );
    let on_disk: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.subcommand, m.subcommand);
    assert_eq!(on_disk.config, m.config);
    let mut listed = on_disk.outputs.clone();
    listed.sort();
    let mut present: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    present.sort();
    assert_eq!(listed, present);
    // Flags override the file, which overrides defaults.
    assert_eq!(m.config["epochs"], 3);
    assert_eq!(m.config["num_subs"], 2);
    assert_eq!(m.config["hidden_width"], 64);
    assert_eq!(m.seed, 9);
}

#[test]
fn forest_defaults_collapse_and_no_bootstrap_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let m = run(&["forest"], &out);
    assert_eq!(read_csv(out.join("summary.csv")).1.len(), 7);
    assert!(m.summary["spearman_rho"] <= -0.9);

    let out = tmp.path().join("b");
    run(&["forest", "--no-bootstrap", "--trees", "1,4"], &out);
    let (_, rows) = read_csv(out.join("summary.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[1] == "0"));
}

#[test]
fn width_sweep_synthetic_smoke_has_finite_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run(
        &[
            "width-sweep",
            "--synthetic",
            "--n-seeds",
            "1",
            "--epochs",
            "2",
            "--widths",
            "1,2",
            "--n-train",
            "200",
            "--n-test",
            "100",
            "--n-ood",
            "100",
            "--label-noise",
            "0.1",
        ],
        &out,
    );
    let (header, rows) = read_csv(out.join("sweep.csv"));
    assert_eq!(header.len(), 12);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert!(r.iter().all(|v| v.parse::<f64>().is_ok_and(f64::is_finite)), "{r:?}");
    }
    let (_, ecdf) = read_csv(out.join("ecdf.csv"));
    assert!(!ecdf.is_empty());
}

#[test]
fn width_sweep_reads_idx_files() {
    use eoe_core::data::{synth_gaussians, write_idx};
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    // IDX stores bytes, so values round to /255 but the pipeline is the same.
    write_idx(&synth_gaussians(20, 10, 4, 3.0, 1).unwrap(), &p("tr-i"), &p("tr-l")).unwrap();
    write_idx(&synth_gaussians(5, 10, 4, 3.0, 2).unwrap(), &p("te-i"), &p("te-l")).unwrap();
    let s = |n: &str| p(n).to_string_lossy().into_owned();
    let out = p("run");
    let m = run(
        &[
            "width-sweep",
            "--train-images",
            &s("tr-i"),
            "--train-labels",
            &s("tr-l"),
            "--test-images",
            &s("te-i"),
            "--test-labels",
            &s("te-l"),
            "--n-seeds",
            "1",
            "--epochs",
            "1",
            "--widths",
            "1",
            "--n-ood",
            "30",
        ],
        &out,
    );
    assert_eq!(m.config["synthetic"], false);
    assert_eq!(read_csv(out.join("sweep.csv")).1.len(), 1);
}

#[test]
fn extract_diversity_term_raises_final_diversity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let m = run(
        &[
            "extract",
            "--epochs",
            "3",
            "--mask-steps",
            "150",
            "--n-train",
            "300",
            "--n-test",
            "100",
            "--n-ood",
            "100",
        ],
        &out,
    );
    assert!(m.summary["final_diversity_mi_lambda_2"] > m.summary["final_diversity_mi_lambda_0"]);
    assert!(m.outputs.iter().any(|o| o == "masks_0.json"));

    // Reloading the dumped model reproduces the same extraction.
    let again = tmp.path().join("again");
    let model = out.join("model.json").to_string_lossy().into_owned();
    run(
        &[
            "extract",
            "--model-path",
            &model,
            "--mask-steps",
            "150",
            "--n-train",
            "300",
            "--n-test",
            "100",
            "--n-ood",
            "100",
        ],
        &again,
    );
    let a = std::fs::read(out.join("summary.csv")).unwrap();
    let b = std::fs::read(again.join("summary.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn eval_logits_fixture_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let m = run(&["eval-logits"], &out);
    let (header, rows) = read_csv(out.join("per_g.csv"));
    assert_eq!(header.len(), 10);
    assert_eq!(rows[0][1], "0");
    let mi: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(mi.windows(2).all(|w| w[1] > w[0]), "{mi:?}");
    assert!(m.outputs.iter().any(|o| o == "fixture.ptlg"));

    // Re-reading the written fixture gives the same table.
    let again = tmp.path().join("again");
    let logits = out.join("fixture.ptlg").to_string_lossy().into_owned();
    let labels = out.join("fixture.ptlb").to_string_lossy().into_owned();
    run(&["eval-logits", "--logits", &logits, "--labels", &labels], &again);
    assert_eq!(read_csv(again.join("per_g.csv")).1, rows);
}

#[test]
fn eval_logits_without_labels_leaves_metric_cells_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run(&["eval-logits"], &out);
    let logits = out.join("fixture.ptlg").to_string_lossy().into_owned();
    let again = tmp.path().join("again");
    run(&["eval-logits", "--logits", &logits, "--pool-sizes", "1,7"], &again);
    let (_, rows) = read_csv(again.join("per_g.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0][4..].iter().all(String::is_empty));
}

#[test]
fn chain_rule_check_reports_tiny_residual_and_decay() {
    let tmp = tempfile::tempdir().unwrap();
    let m = run(&["chain-rule-check"], &tmp.path().join("run"));
    assert!(m.summary["max_residual"] < 1e-10);
    assert_eq!(m.summary["max_singleton_within"], 0.0);
    assert!(m.summary["mi_across_last_size"] < m.summary["mi_across_first_size"]);
}

#[test]
fn unknown_config_key_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"not_a_key": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eoe"))
        .args(["forest", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}

#[test]
fn missing_idx_files_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_eoe"))
        .args(["width-sweep", "--train-images", "/nonexistent/images", "--out-dir"])
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}
