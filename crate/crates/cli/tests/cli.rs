//! End-to-end tests driving the `indexlab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use indexlab_core::ingest::PriceSeries;
use indexlab_core::model::{ModelKind, Predictor, SavedModel};
use indexlab_core::preprocess::normalize;
use indexlab_core::synth::sine_series;
use indexlab_core::tune::{random_search_cv, TuneResult};
use indexlab_core::CvConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_indexlab"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn write_series_csv(dir: &Path, name: &str, series: &PriceSeries) -> PathBuf {
    let path = dir.join(format!("{name}.csv"));
    let mut text = String::from("Date,Close\n");
    for (date, close) in series.observations() {
        text.push_str(&format!("{date},{close}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

fn stdout_str(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_str(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn demo_series(seed: u64) -> PriceSeries {
    sine_series(
        "DEMO",
        220,
        chrono::NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
        100.0,
        15.0,
        50.0,
        0.5,
        seed,
    )
}

// a config that pins cheap hyperparameters so `run` does no tuning
fn pinned_run_config(out: &Path, csv: &Path, series: &PriceSeries) -> String {
    let d1_cutoff = series.dates()[149];
    let d2_cutoff = series.dates()[179];
    format!(
        r#"
[output]
dir = "{out}"

[data]
DEMO = "{csv}"

[[slices]]
name = "D1"
train_end = "{d1_cutoff}"
test_horizon = 30

[[slices]]
name = "D2"
train_end = "{d2_cutoff}"
test_horizon = 30

[tune]
budget = 4
n_init = 2
seed = 7
forest = "random"
lstm = "bayesian"

[[params]]
index = "DEMO"
slice = "D1"
model = "forest"
[params.values]
window_size = 3
max_depth = 8
max_features = "auto"
min_samples_leaf = 1
min_samples_split = 2
n_estimators = 30

[[params]]
index = "DEMO"
slice = "D2"
model = "forest"
[params.values]
window_size = 3
max_depth = 8
max_features = "auto"
min_samples_leaf = 1
min_samples_split = 2
n_estimators = 30

[[params]]
index = "DEMO"
slice = "D1"
model = "lstm"
[params.values]
window_size = 4
units = 8
epochs = 20
batch_size = 32
l1 = 0.0001
l2 = 0.0001
learning_rate = 0.01

[[params]]
index = "DEMO"
slice = "D2"
model = "lstm"
[params.values]
window_size = 4
units = 8
epochs = 20
batch_size = 32
l1 = 0.0001
l2 = 0.0001
learning_rate = 0.01

[[reference]]
index = "DEMO"
slice = "D1"
model = "lstm"
r2 = 0.94
mse = 58.37
"#,
        out = out.display(),
        csv = csv.display(),
    )
}

#[test]
fn ingest_cleans_fixture_and_reports_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let output = bin()
        .args(["ingest"])
        .arg(fixture("sample_dirty.csv"))
        .args(["--index", "SP500", "--out"])
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_str(&output));

    let report: serde_json::Value = serde_json::from_str(&stdout_str(&output)).unwrap();
    assert_eq!(report["report"]["rows_read"], 13);
    assert_eq!(report["report"]["rows_dropped_nan"], 2);
    assert_eq!(report["report"]["rows_dropped_duplicate_date"], 1);
    assert_eq!(report["report"]["rows_date_reformatted"], 1);
    assert_eq!(report["observations"], 10);

    let cleaned = fs::read_to_string(tmp.path().join("SP500_clean.csv")).unwrap();
    assert!(cleaned.starts_with("date,close\n"));
    assert_eq!(cleaned.lines().count(), 11); // header + 10 rows
    assert!(cleaned.contains("2020-01-06,3246.28")); // reformatted date
    assert!(tmp.path().join("SP500_cleaning_report.json").exists());
}

#[test]
fn ingest_missing_file_exits_one_naming_path() {
    let output = bin()
        .args(["ingest", "/no/such/file.csv", "--index", "X"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_str(&output).contains("/no/such/file.csv"));
}

#[test]
fn invalid_config_exits_two_listing_every_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(
        &config,
        "[cv]\ninitial_train_fraction = 2.0\nhorizon = 0\n\n[tune]\nbudget = 0\nn_init = 1\nseed = 1\nforest = \"x\"\nlstm = \"y\"\n",
    )
    .unwrap();
    let output = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_str(&output);
    for needle in ["initial_train_fraction", "horizon", "budget", "n_init", "data"] {
        assert!(err.contains(needle), "missing {needle} in: {err}");
    }
}

#[test]
fn tune_without_config_is_usage_error() {
    let output = bin()
        .args(["tune", "--index", "X", "--slice", "D1", "--model", "forest"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

fn tune_config(out: &Path, csv: &Path, series: &PriceSeries, budget: usize) -> String {
    let cutoff = series.dates()[179];
    format!(
        r#"
[output]
dir = "{out}"

[data]
DEMO = "{csv}"

[[slices]]
name = "D1"
train_end = "{cutoff}"
test_horizon = 30

[cv]
initial_train_fraction = 0.7
horizon = 25

[tune]
budget = {budget}
n_init = 2
seed = 33
forest = "random"
lstm = "bayesian"

[[space.forest]]
name = "window_size"
kind = "int"
lo = 2
hi = 4

[[space.forest]]
name = "max_depth"
kind = "int"
lo = 3
hi = 9

[[space.forest]]
name = "max_features"
kind = "categorical"
options = ["auto", "log2"]

[[space.forest]]
name = "min_samples_leaf"
kind = "int"
lo = 1
hi = 3

[[space.forest]]
name = "min_samples_split"
kind = "int"
lo = 2
hi = 5

[[space.forest]]
name = "n_estimators"
kind = "int"
lo = 10
hi = 40
"#,
        out = out.display(),
        csv = csv.display(),
    )
}

#[test]
fn tune_budget_one_yields_single_history_entry() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(5);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let config = tmp.path().join("exp.toml");
    fs::write(&config, tune_config(tmp.path(), &csv, &series, 1)).unwrap();

    let output = bin()
        .args(["tune", "--index", "DEMO", "--slice", "D1", "--model", "forest", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_str(&output));

    let result_path = tmp.path().join("DEMO/D1/forest/tune_result.json");
    let result: TuneResult = serde_json::from_str(&fs::read_to_string(&result_path).unwrap()).unwrap();
    assert_eq!(result.history.len(), 1);
    assert_eq!(result.best_point, result.history[0].point);
    // audit log has one record per evaluation
    let audit = fs::read_to_string(tmp.path().join("DEMO/D1/forest/tune_audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 1);
}

#[test]
fn tune_rerun_with_same_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(6);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let config = tmp.path().join("exp.toml");
    fs::write(&config, tune_config(tmp.path(), &csv, &series, 5)).unwrap();

    let run = || {
        let output = bin()
            .args(["tune", "--index", "DEMO", "--slice", "D1", "--model", "forest", "--config"])
            .arg(&config)
            .output()
            .unwrap();
        assert!(output.status.success(), "stderr: {}", stderr_str(&output));
        fs::read(tmp.path().join("DEMO/D1/forest/tune_result.json")).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn tune_result_matches_library_search_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(7);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let config_path = tmp.path().join("exp.toml");
    fs::write(&config_path, tune_config(tmp.path(), &csv, &series, 6)).unwrap();

    let output = bin()
        .args(["tune", "--index", "DEMO", "--slice", "D1", "--model", "forest", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_str(&output));
    let from_cli: TuneResult = serde_json::from_str(
        &fs::read_to_string(tmp.path().join("DEMO/D1/forest/tune_result.json")).unwrap(),
    )
    .unwrap();

    // oracle: the same search performed directly against the library
    let cfg = {
        // mirror the cell derivation the CLI uses
        let train: Vec<_> = series.observations()[..180].to_vec();
        let train = PriceSeries::new("DEMO", train).unwrap();
        let cv = CvConfig { initial_train_fraction: 0.7, horizon: 25 };
        let seed = indexlab_core::rng::derive_seed_tagged(33, &["DEMO", "D1", "forest"]);
        let space = {
            use indexlab_core::tune::{HyperparamSpace, ParamKind, ParamSpec};
            HyperparamSpace {
                specs: vec![
                    ParamSpec { name: "window_size".into(), kind: ParamKind::IntUniform { lo: 2, hi: 4 } },
                    ParamSpec { name: "max_depth".into(), kind: ParamKind::IntUniform { lo: 3, hi: 9 } },
                    ParamSpec {
                        name: "max_features".into(),
                        kind: ParamKind::Categorical { options: vec!["auto".into(), "log2".into()] },
                    },
                    ParamSpec { name: "min_samples_leaf".into(), kind: ParamKind::IntUniform { lo: 1, hi: 3 } },
                    ParamSpec { name: "min_samples_split".into(), kind: ParamKind::IntUniform { lo: 2, hi: 5 } },
                    ParamSpec { name: "n_estimators".into(), kind: ParamKind::IntUniform { lo: 10, hi: 40 } },
                ],
                model_kind: ModelKind::Forest,
            }
        };
        random_search_cv(&space, &train, &cv, 6, seed).unwrap()
    };
    assert_eq!(
        serde_json::to_string(&from_cli).unwrap(),
        serde_json::to_string(&cfg).unwrap()
    );
}

#[test]
fn run_produces_reports_for_every_cell_and_consistent_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(8);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let out = tmp.path().join("out");
    let config = tmp.path().join("exp.toml");
    fs::write(&config, pinned_run_config(&out, &csv, &series)).unwrap();

    let output = bin().args(["run", "--verbose", "--config"]).arg(&config).output().unwrap();
    assert!(output.status.success(), "stderr: {}", stderr_str(&output));

    // 1 index x 2 slices x 2 models = 4 cells
    let mut report_count = 0;
    for slice in ["D1", "D2"] {
        for model in ["forest", "lstm"] {
            let dir = out.join("DEMO").join(slice).join(model);
            assert!(dir.join("fit_report.json").exists(), "missing report in {dir:?}");
            assert!(dir.join("model.json").exists());
            assert!(dir.join("forecast.csv").exists());
            report_count += 1;

            // summary values equal the per-report metrics
            let report: indexlab_core::FitReport =
                serde_json::from_str(&fs::read_to_string(dir.join("fit_report.json")).unwrap()).unwrap();
            let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
            let row = summary
                .lines()
                .find(|l| l.starts_with(&format!("DEMO,{slice},{model}")))
                .unwrap_or_else(|| panic!("no summary row for {slice}/{model}"));
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!(cols[6].parse::<f64>().unwrap(), report.metrics.mse);
            assert_eq!(cols[5].parse::<f64>().unwrap(), report.metrics.r2.unwrap());

            // forecast.csv rows equal the report rows
            let forecast = fs::read_to_string(dir.join("forecast.csv")).unwrap();
            assert_eq!(forecast.lines().count(), report.forecast_rows.len() + 1);
        }
    }
    assert_eq!(report_count, 4);

    // the reference row lands side by side with achieved values
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lstm_row = summary.lines().find(|l| l.starts_with("DEMO,D1,lstm")).unwrap();
    assert!(lstm_row.ends_with(",0.94,58.37"), "row: {lstm_row}");

    // verbose mode wrote the leakage access log
    let access = fs::read_to_string(out.join("access_log.txt")).unwrap();
    assert_eq!(access.lines().count(), 4);
    for line in access.lines() {
        assert!(line.contains("train_last="));
    }
}

#[test]
fn run_with_missing_data_file_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(
        &config,
        "[data]\nGHOST = \"/nowhere/ghost.csv\"\n\n[[slices]]\nname = \"D1\"\ntrain_end = \"2020-02-19\"\ntest_horizon = 5\n",
    )
    .unwrap();
    let output = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn forecast_composes_one_step_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(9);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let out = tmp.path().join("out");
    let config = tmp.path().join("exp.toml");
    fs::write(&config, pinned_run_config(&out, &csv, &series)).unwrap();
    let run_out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(run_out.status.success(), "stderr: {}", stderr_str(&run_out));

    let model_path = out.join("DEMO/D2/forest/model.json");
    let forecast = |steps: usize| -> Vec<f64> {
        let output = bin()
            .args(["forecast", "--steps", &steps.to_string(), "--model"])
            .arg(&model_path)
            .arg("--series")
            .arg(&csv)
            .output()
            .unwrap();
        assert!(output.status.success(), "stderr: {}", stderr_str(&output));
        stdout_str(&output)
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect()
    };

    // base case: one step equals a manual single prediction on the last window
    let one = forecast(1);
    let saved = SavedModel::load(&model_path).unwrap();
    let normalized = normalize(&series.closes(), &saved.normalizer);
    let window = &normalized[normalized.len() - saved.window_size..];
    let manual = saved.model.predict_window(window).unwrap() * saved.normalizer.scale()
        + saved.normalizer.mean;
    assert_eq!(one[0].to_bits(), manual.to_bits());

    // composition: three steps stay consistent with chained one-step updates
    let three = forecast(3);
    assert_eq!(three[0].to_bits(), one[0].to_bits());
    let mut values = normalized;
    let mut manual_chain = Vec::new();
    for _ in 0..3 {
        let w = &values[values.len() - saved.window_size..];
        let p = saved.model.predict_window(w).unwrap();
        manual_chain.push(p * saved.normalizer.scale() + saved.normalizer.mean);
        values.push(p);
    }
    for (got, want) in three.iter().zip(&manual_chain) {
        assert_eq!(got.to_bits(), want.to_bits());
    }
}

#[test]
fn forecast_with_persistence_model_repeats_last_value() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(10);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let saved = SavedModel {
        index_name: "DEMO".into(),
        slice_name: "D1".into(),
        window_size: 1,
        normalizer: indexlab_core::NormalizationParams { mean: 100.0, min: 80.0, max: 120.0 },
        model: indexlab_core::AnyModel::Persistence,
    };
    let model_path = tmp.path().join("persistence.json");
    saved.save(&model_path).unwrap();

    let output = bin()
        .args(["forecast", "--steps", "4", "--model"])
        .arg(&model_path)
        .arg("--series")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(output.status.success());
    let values: Vec<f64> = stdout_str(&output)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(values.len(), 4);
    let last = series.closes()[series.len() - 1];
    for v in values {
        assert!((v - last).abs() < 1e-9);
    }
}

#[test]
fn report_rebuilds_identical_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let series = demo_series(11);
    let csv = write_series_csv(tmp.path(), "demo", &series);
    let out = tmp.path().join("out");
    let config = tmp.path().join("exp.toml");
    fs::write(&config, pinned_run_config(&out, &csv, &series)).unwrap();
    let run_out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(run_out.status.success());

    let summary_after_run = fs::read(out.join("summary.csv")).unwrap();
    let report_out = bin().args(["report", "--config"]).arg(&config).output().unwrap();
    assert!(report_out.status.success(), "stderr: {}", stderr_str(&report_out));
    let summary_after_report = fs::read(out.join("summary.csv")).unwrap();
    assert_eq!(summary_after_run, summary_after_report);
    assert!(stdout_str(&report_out).contains("DEMO"));
}
