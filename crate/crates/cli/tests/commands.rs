use std::fs;
use std::path::{Path, PathBuf};

use adherence_cli::{cmd_cv, cmd_predict, cmd_train, main_with_args, ExperimentConfig};
use adherence_core::evaluate::majority_baseline;
use adherence_core::features::{self, fit_preprocess, transform};
use adherence_core::learn::{self, ModelConfig};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["adherence"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, format!("[synth]\nn_users = 60\n{extra}")).unwrap();
    path
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Generates a small database and builds D0 from it; returns the dataset path.
fn built_dataset(tmp: &TempDir) -> PathBuf {
    let cfg = small_config(tmp.path(), "");
    let cfg = cfg.to_str().unwrap();
    let gen = tmp.path().join("gen");
    assert_eq!(run(&["--config", cfg, "--seed", "3", "--out", gen.to_str().unwrap(), "generate"]), 0);
    let build = tmp.path().join("build");
    let db = gen.join("database");
    assert_eq!(
        run(&["--config", cfg, "--out", build.to_str().unwrap(), "build", "--input", db.to_str().unwrap()]),
        0
    );
    build.join("dataset_D0.csv")
}

#[test]
fn generate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(run(&["--config", cfg.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap(), "generate"]), 0);
    }
    let snap = dir_snapshot(&a);
    assert!(snap.iter().any(|(n, _)| n == "generate.manifest.json"));
    assert!(snap.len() > 5);
    assert_eq!(snap, dir_snapshot(&b));
}

#[test]
fn invalid_generator_settings_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "[synth]\nn_users = 0\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["--config", path.to_str().unwrap(), "--out", out.to_str().unwrap(), "generate"]), 2);
}

#[test]
fn unknown_flags_values_and_paths_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(run(&["--model", "svm", "--out", out, "cv"]), 2);
    assert_eq!(run(&["--resampler", "tomek", "--out", out, "cv"]), 2);
    assert_eq!(run(&["--out", out, "cv", "--dataset", "/no/such/file.csv"]), 2);
    assert_eq!(run(&["--out", out, "ingest", "--input", "/no/such/dir"]), 2);
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "colour = 1\n").unwrap();
    assert_eq!(run(&["--config", bad.to_str().unwrap(), "--out", out, "generate"]), 2);
}

#[test]
fn empty_database_builds_empty_datasets() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let gen = tmp.path().join("gen");
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "--out", gen.to_str().unwrap(), "generate"]), 0);
    let db = gen.join("database");
    for e in fs::read_dir(&db).unwrap() {
        let p = e.unwrap().path();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, format!("{}\n", text.lines().next().unwrap())).unwrap();
    }
    let out = tmp.path().join("build");
    assert_eq!(run(&["--out", out.to_str().unwrap(), "build", "--input", db.to_str().unwrap()]), 0);
    for v in ["D0", "D6"] {
        let rows = csv_rows(&out.join(format!("dataset_{v}.csv")));
        assert_eq!(rows.len(), 1, "{v} should hold only a header");
    }
}

#[test]
fn stats_outputs_have_expected_shapes() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(tmp.path(), "");
    let out = tmp.path().join("stats");
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "stats"]), 0);
    assert_eq!(csv_rows(&out.join("alpha.csv")).len(), 1 + 7);
    let corr = csv_rows(&out.join("correlation.csv"));
    assert_eq!(corr.len(), 14);
    assert!(corr.iter().all(|r| r.len() == 14));
    for (i, row) in corr.iter().enumerate().skip(1) {
        assert_eq!(row[i], "1");
    }
    let dup: serde_json::Value = serde_json::from_slice(&fs::read(out.join("duplicates.json")).unwrap()).unwrap();
    let hist = csv_rows(&out.join("duplicates_histogram.csv"));
    let total: u64 = hist[1..].iter().map(|r| r[0].parse::<u64>().unwrap() * r[1].parse::<u64>().unwrap()).sum();
    assert_eq!(total, dup["n_rows"].as_u64().unwrap());
    assert!(out.join("null_rates.csv").exists());
    assert!(out.join("stats.manifest.json").exists());
}

#[test]
fn majority_cross_validation_reports_the_prior() {
    let tmp = TempDir::new().unwrap();
    let dataset = built_dataset(&tmp);
    let cfg = ExperimentConfig {
        model: ModelConfig::Majority,
        out_dir: Some(tmp.path().join("cv")),
        ..Default::default()
    };
    let report = cmd_cv(&cfg, None, Some(&dataset)).unwrap();
    let ds = features::read_dataset(&dataset).unwrap();
    let prior = majority_baseline(&ds).unwrap().accuracy;
    assert!((report.macro_avg.accuracy - prior).abs() < 0.02, "{} vs {prior}", report.macro_avg.accuracy);
    assert_eq!(report.folds.len(), 10);
    assert!(tmp.path().join("cv/cv_report.csv").exists());
}

#[test]
fn cross_validation_json_is_byte_stable() {
    let tmp = TempDir::new().unwrap();
    let dataset = built_dataset(&tmp);
    let cfg = small_config(tmp.path(), "[model]\nkind = \"forest\"\nn_trees = 20\n[resampler]\nmethod = \"smote\"\n");
    let mut outputs = Vec::new();
    for name in ["x", "y"] {
        let out = tmp.path().join(name);
        let code = run(&[
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
            "cv",
            "--dataset",
            dataset.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        outputs.push((fs::read(out.join("cv_report.json")).unwrap(), fs::read(out.join("cv.manifest.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn train_then_predict_matches_in_memory_model() {
    let tmp = TempDir::new().unwrap();
    let dataset = built_dataset(&tmp);
    let cfg = ExperimentConfig {
        model: ModelConfig::Forest(learn::ForestConfig { n_trees: 15, ..Default::default() }),
        out_dir: Some(tmp.path().join("train")),
        seed: 4,
        ..Default::default()
    };
    cmd_train(&cfg, None, Some(&dataset), None).unwrap();
    let model_path = tmp.path().join("train/model.json");
    assert!(tmp.path().join("train/feature_importance.csv").exists());
    cmd_predict(&cfg, &model_path, &dataset, None).unwrap();
    let rows = csv_rows(&tmp.path().join("train/predictions.csv"));
    assert_eq!(rows[0], ["row_id", "p_high", "label"]);

    let ds = features::read_dataset(&dataset).unwrap();
    let st = fit_preprocess(&ds).unwrap();
    let model = learn::TrainedModel::load(&model_path).unwrap();
    let proba = model.predict_proba(transform(&ds, &st).unwrap().view()).unwrap();
    assert_eq!(rows.len(), ds.n_rows() + 1);
    for (r, p) in rows[1..].iter().zip(&proba) {
        assert_eq!(r[1].parse::<f64>().unwrap(), p[1]);
        assert_eq!(r[2], learn::classify(*p).to_string());
    }
}

#[test]
fn predicting_with_missing_column_is_a_schema_error() {
    let tmp = TempDir::new().unwrap();
    let dataset = built_dataset(&tmp);
    let out = tmp.path().join("t");
    let cfg = ExperimentConfig { model: ModelConfig::Majority, out_dir: Some(out.clone()), ..Default::default() };
    cmd_train(&cfg, None, Some(&dataset), None).unwrap();
    let rows = csv_rows(&dataset);
    let trimmed = tmp.path().join("trimmed.csv");
    let mut w = csv::Writer::from_path(&trimmed).unwrap();
    for r in &rows {
        w.write_record(&r[1..]).unwrap();
    }
    w.flush().unwrap();
    let code = run(&[
        "--out",
        out.to_str().unwrap(),
        "predict",
        "--model-file",
        out.join("model.json").to_str().unwrap(),
        "--dataset",
        trimmed.to_str().unwrap(),
    ]);
    assert_ne!(code, 0);
    assert!(cmd_predict(&cfg, &out.join("model.json"), &trimmed, None).is_err());
}
