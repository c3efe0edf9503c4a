//! Implementations of the pipeline verbs.
//!
//! Exit-code contract: 0 success, 1 data/validation failure, 2 usage or
//! config error (clap reports its own usage errors as 2 already).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

use indexlab_core::eval::{evaluate_slice, EvalContext, FitReport};
use indexlab_core::forest::fit_forest;
use indexlab_core::ingest::{clean, parse_csv, CleaningReport, PriceSeries};
use indexlab_core::lstm::fit_lstm;
use indexlab_core::model::{AnyModel, ModelKind, Predictor, SavedModel};
use indexlab_core::preprocess::{
    fit_normalizer, make_windows, normalize, slice_regimes, DatasetSlice, NormalizationParams,
};
use indexlab_core::rng::derive_seed_tagged;
use indexlab_core::tune::{
    bayesian_optimize_cv, random_search_cv, Evaluation, HyperparamPoint, TuneResult,
};
use indexlab_core::{denormalize, CvConfig};

use crate::config::{load_config, ExperimentConfig, ReferenceRow, TunerKind};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, schema violations: exit 2.
    Usage(String),
    /// Missing/invalid data, failed fits, unreadable files: exit 1.
    Data(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

fn data_err(e: impl fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Global flags shared by every verb.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub verbose: bool,
}

impl GlobalOpts {
    fn require_config(&self) -> Result<ExperimentConfig, CliError> {
        let path = self.config.as_ref().ok_or_else(|| {
            CliError::Usage("this command requires --config <experiment.toml>".into())
        })?;
        let mut cfg = load_config(path).map_err(|errors| {
            CliError::Usage(format!(
                "config {} is invalid:\n  - {}",
                path.display(),
                errors.join("\n  - ")
            ))
        })?;
        if let Some(seed) = self.seed {
            cfg.tune.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.map(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn load_series(path: &Path, index: &str) -> Result<(PriceSeries, CleaningReport), CliError> {
    let records = parse_csv(path, index).map_err(data_err)?;
    clean(index, &records).map_err(data_err)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    fs::write(path, text).map_err(data_err)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn cmd_ingest(opts: &GlobalOpts, csv: &Path, index: &str) -> Result<(), CliError> {
    let (series, report) = load_series(csv, index)?;
    let out = opts.out_dir(None);
    fs::create_dir_all(&out).map_err(data_err)?;

    let series_path = out.join(format!("{index}_clean.csv"));
    let mut text = String::from("date,close\n");
    for (date, close) in series.observations() {
        text.push_str(&format!("{date},{close}\n"));
    }
    fs::write(&series_path, text).map_err(data_err)?;

    let report_path = out.join(format!("{index}_cleaning_report.json"));
    let summary = json!({
        "index": index,
        "source": csv.display().to_string(),
        "observations": series.len(),
        "first_date": series.first_date(),
        "last_date": series.last_date(),
        "report": report,
    });
    write_json(&report_path, &summary)?;

    println!("{}", serde_json::to_string_pretty(&summary).map_err(data_err)?);
    if opts.verbose {
        eprintln!("wrote {} and {}", series_path.display(), report_path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// tune
// ---------------------------------------------------------------------------

fn run_tuner(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    train: &PriceSeries,
    cv: &CvConfig,
    seed: u64,
) -> Result<TuneResult, CliError> {
    let space = cfg
        .space_for(kind)
        .ok_or_else(|| CliError::Usage(format!("model {kind} has no hyperparameters to tune")))?;
    let result = match cfg.tuner_for(kind) {
        TunerKind::Random => random_search_cv(space, train, cv, cfg.tune.budget, seed),
        TunerKind::Bayesian => {
            if cfg.tune.budget < 2 {
                return Err(CliError::Usage(
                    "the bayesian tuner needs tune.budget >= 2 (initialization takes n_init >= 2 evaluations)".into(),
                ));
            }
            let n_init = cfg.tune.n_init.min(cfg.tune.budget);
            bayesian_optimize_cv(space, train, cv, n_init, cfg.tune.budget, seed)
        }
    };
    result.map_err(data_err)
}

fn write_tune_outputs(dir: &Path, result: &TuneResult) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(data_err)?;
    write_json(&dir.join("tune_result.json"), result)?;

    // one JSON line per evaluation; the timestamp is metadata and the only
    // non-reproducible field in any output
    let mut audit = String::new();
    let ts = chrono::Utc::now().to_rfc3339();
    for (seq, eval) in result.history.iter().enumerate() {
        let record = json!({
            "seq": seq,
            "ts": ts,
            "seed": result.seed,
            "point": eval.point,
            "score": eval.score,
            "per_fold": eval.per_fold,
        });
        audit.push_str(&serde_json::to_string(&record).map_err(data_err)?);
        audit.push('\n');
    }
    fs::write(dir.join("tune_audit.jsonl"), audit).map_err(data_err)
}

pub fn cmd_tune(opts: &GlobalOpts, index: &str, slice_name: &str, model: &str) -> Result<(), CliError> {
    let cfg = opts.require_config()?;
    let kind = ModelKind::parse(model)
        .ok_or_else(|| CliError::Usage(format!("unknown model {model:?}")))?;
    if kind == ModelKind::Persistence {
        return Err(CliError::Usage("persistence has no hyperparameters to tune".into()));
    }
    let csv = cfg
        .data
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("index {index:?} not present in config data")))?;
    let slice = cfg
        .slices
        .iter()
        .find(|s| s.name == slice_name)
        .ok_or_else(|| CliError::Usage(format!("slice {slice_name:?} not present in config")))?
        .clone();

    let (series, _) = load_series(csv, index)?;
    let pairs = slice_regimes(&series, &[slice]).map_err(data_err)?;
    let (train, _) = &pairs[0];

    let seed = derive_seed_tagged(cfg.tune.seed, &[index, slice_name, &kind.to_string()]);
    let result = run_tuner(&cfg, kind, train, &cfg.cv, seed)?;

    let dir = cfg.output_dir.join(index).join(slice_name).join(kind.to_string());
    write_tune_outputs(&dir, &result)?;

    println!(
        "best {} point for {index}/{slice_name} (mean CV MSE {:.6e}, {} evaluations):",
        kind, result.best_score, result.iterations
    );
    for (name, value) in &result.best_point.assignments {
        println!("  {name} = {value}");
    }
    if opts.verbose {
        eprintln!("wrote {}", dir.join("tune_result.json").display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct Cell {
    index: String,
    slice: DatasetSlice,
    kind: ModelKind,
}

struct CellOutput {
    report: FitReport,
    window_size: usize,
    access_line: String,
    reference: Option<(f64, f64)>,
}

fn fit_final_model(
    kind: ModelKind,
    point: &HyperparamPoint,
    train: &PriceSeries,
    seed: u64,
) -> Result<(AnyModel, usize, NormalizationParams), CliError> {
    let normalizer = fit_normalizer(&train.closes()).map_err(data_err)?;
    match kind {
        ModelKind::Persistence => Ok((AnyModel::Persistence, 1, normalizer)),
        ModelKind::Forest => {
            let window = point.window_size().map_err(data_err)?;
            let normalized = normalize(&train.closes(), &normalizer);
            let data = make_windows(&normalized, &train.dates(), window).map_err(data_err)?;
            let config = point.to_forest_config(seed).map_err(data_err)?;
            let model = fit_forest(&data, &config).map_err(data_err)?;
            Ok((AnyModel::Forest(model), window, normalizer))
        }
        ModelKind::Lstm => {
            let window = point.window_size().map_err(data_err)?;
            let normalized = normalize(&train.closes(), &normalizer);
            let data = make_windows(&normalized, &train.dates(), window).map_err(data_err)?;
            let config = point.to_lstm_config(seed).map_err(data_err)?;
            let params = fit_lstm(&data, &config).map_err(data_err)?;
            Ok((AnyModel::Lstm { params, window_size: window }, window, normalizer))
        }
    }
}

fn best_per_fold(result: &TuneResult) -> Vec<f64> {
    result
        .history
        .iter()
        .find(|e: &&Evaluation| e.score == result.best_score)
        .map(|e| e.per_fold.clone())
        .unwrap_or_default()
}

fn run_cell(cfg: &ExperimentConfig, series: &PriceSeries, cell: &Cell) -> Result<CellOutput, CliError> {
    let pairs = slice_regimes(series, std::slice::from_ref(&cell.slice)).map_err(|e| {
        CliError::Data(format!("{}/{}: {e}", cell.index, cell.slice.name))
    })?;
    let (train, test) = &pairs[0];
    let model_name = cell.kind.to_string();
    let cell_seed = derive_seed_tagged(cfg.tune.seed, &[&cell.index, &cell.slice.name, &model_name]);
    let dir = cfg.output_dir.join(&cell.index).join(&cell.slice.name).join(&model_name);
    fs::create_dir_all(&dir).map_err(data_err)?;

    // winning hyperparameters: pinned in the config, or found by the tuner
    let (point, cv_metrics) = if cell.kind == ModelKind::Persistence {
        (HyperparamPoint::default(), Vec::new())
    } else if let Some(pinned) = cfg.pinned_for(&cell.index, &cell.slice.name, cell.kind) {
        (pinned.clone(), Vec::new())
    } else {
        let result = run_tuner(cfg, cell.kind, train, &cfg.cv, cell_seed)?;
        write_tune_outputs(&dir, &result)?;
        let folds = best_per_fold(&result);
        (result.best_point, folds)
    };

    let final_seed = derive_seed_tagged(cfg.tune.seed, &[&cell.index, &cell.slice.name, &model_name, "final"]);
    let (model, window_size, normalizer) = fit_final_model(cell.kind, &point, train, final_seed)?;

    let ctx = EvalContext {
        slice_name: cell.slice.name.clone(),
        model_kind: cell.kind,
        hyperparams: point,
        cv_metrics,
        seed: final_seed,
    };
    let report = evaluate_slice(&model, train, test, &normalizer, window_size, &ctx)
        .map_err(|e| CliError::Data(format!("{}/{}/{model_name}: {e}", cell.index, cell.slice.name)))?;

    let saved = SavedModel {
        index_name: cell.index.clone(),
        slice_name: cell.slice.name.clone(),
        window_size,
        normalizer,
        model,
    };
    saved.save(dir.join("model.json")).map_err(data_err)?;
    write_json(&dir.join("fit_report.json"), &report)?;

    let mut forecast_csv = String::from("date,actual,predicted\n");
    for row in &report.forecast_rows {
        forecast_csv.push_str(&format!("{},{},{}\n", row.date, row.actual, row.predicted));
    }
    fs::write(dir.join("forecast.csv"), forecast_csv).map_err(data_err)?;

    let access_line = format!(
        "cell={}/{}/{} cutoff={} train_rows={} train_last={} test_first={} test_last={}",
        cell.index,
        cell.slice.name,
        model_name,
        cell.slice.train_end_date,
        train.len(),
        train.last_date(),
        test.first_date(),
        test.last_date(),
    );

    let reference = cfg
        .reference_for(&cell.index, &cell.slice.name, cell.kind)
        .map(|p| (p.r2, p.mse));
    Ok(CellOutput { report, window_size, access_line, reference })
}

pub fn cmd_run(opts: &GlobalOpts) -> Result<(), CliError> {
    let cfg = opts.require_config()?;
    fs::create_dir_all(&cfg.output_dir).map_err(data_err)?;

    let mut series_by_index: BTreeMap<String, PriceSeries> = BTreeMap::new();
    for (index, path) in &cfg.data {
        let (series, report) = load_series(path, index)?;
        if opts.verbose {
            eprintln!(
                "{index}: {} observations after cleaning ({} dropped invalid, {} duplicates)",
                series.len(),
                report.rows_dropped_nan,
                report.rows_dropped_duplicate_date
            );
        }
        series_by_index.insert(index.clone(), series);
    }

    let mut cells = Vec::new();
    for index in series_by_index.keys() {
        for slice in &cfg.slices {
            for kind in &cfg.models {
                cells.push(Cell { index: index.clone(), slice: slice.clone(), kind: *kind });
            }
        }
    }

    // cells are independent; output order is fixed by the cells vector
    let outputs: Vec<Result<CellOutput, CliError>> = cells
        .par_iter()
        .map(|cell| run_cell(&cfg, &series_by_index[&cell.index], cell))
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    let mut access_lines = Vec::new();
    for output in outputs {
        let output = output?;
        access_lines.push(output.access_line.clone());
        rows.push(output);
    }

    if opts.verbose {
        let log_path = cfg.output_dir.join("access_log.txt");
        fs::write(&log_path, access_lines.join("\n") + "\n").map_err(data_err)?;
        for line in &access_lines {
            eprintln!("{line}");
        }
    }

    let summary = build_summary(&rows);
    fs::write(cfg.output_dir.join("summary.csv"), &summary).map_err(data_err)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn hyperparams_compact(point: &HyperparamPoint) -> String {
    let parts: Vec<String> = point
        .assignments
        .iter()
        .filter(|(name, _)| name.as_str() != "window_size")
        .map(|(name, value)| format!("{name}={value}"))
        .collect();
    if parts.is_empty() {
        "-".into()
    } else {
        parts.join(";")
    }
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn build_summary(rows: &[CellOutput]) -> String {
    let mut out = String::from("index,samples,model,window_size,hyperparams,r2,mse,ref_r2,ref_mse\n");
    for cell in rows {
        let r = &cell.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.index_name,
            r.slice_name,
            r.model_kind,
            cell.window_size,
            hyperparams_compact(&r.hyperparams),
            opt_str(r.metrics.r2),
            r.metrics.mse,
            opt_str(cell.reference.map(|p| p.0)),
            opt_str(cell.reference.map(|p| p.1)),
        ));
    }
    out
}

fn render_table(rows: &[CellOutput]) -> String {
    let mut lines = vec![format!(
        "{:<8} {:<8} {:<12} {:>6} {:>9} {:>12} {:>9} {:>10}",
        "index", "samples", "model", "window", "r2", "mse", "ref_r2", "ref_mse"
    )];
    for cell in rows {
        let r = &cell.report;
        lines.push(format!(
            "{:<8} {:<8} {:<12} {:>6} {:>9} {:>12} {:>9} {:>10}",
            r.index_name,
            r.slice_name,
            r.model_kind.to_string(),
            cell.window_size,
            r.metrics.r2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            format!("{:.4}", r.metrics.mse),
            cell.reference.map(|p| format!("{:.4}", p.0)).unwrap_or_else(|| "-".into()),
            cell.reference.map(|p| format!("{:.4}", p.1)).unwrap_or_else(|| "-".into()),
        ));
    }
    lines.join("\n") + "\n"
}

// ---------------------------------------------------------------------------
// forecast
// ---------------------------------------------------------------------------

pub fn cmd_forecast(
    _opts: &GlobalOpts,
    model_path: &Path,
    series_path: &Path,
    steps: usize,
) -> Result<(), CliError> {
    if steps == 0 {
        return Err(CliError::Usage("--steps must be >= 1".into()));
    }
    let saved = SavedModel::load(model_path).map_err(data_err)?;
    let (series, _) = load_series(series_path, &saved.index_name)?;
    if series.len() < saved.window_size {
        return Err(CliError::Data(format!(
            "series has {} observations, model window needs {}",
            series.len(),
            saved.window_size
        )));
    }

    // recursive one-step forecasts: each prediction joins the next window
    let mut values = normalize(&series.closes(), &saved.normalizer);
    let mut predictions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let window = &values[values.len() - saved.window_size..];
        let pred = saved.model.predict_window(window).map_err(data_err)?;
        predictions.push(pred);
        values.push(pred);
    }
    let denormalized = denormalize(&predictions, &saved.normalizer);

    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "step,predicted").map_err(data_err)?;
    for (i, pred) in denormalized.iter().enumerate() {
        writeln!(stdout, "{},{}", i + 1, pred).map_err(data_err)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(opts: &GlobalOpts) -> Result<(), CliError> {
    // config is optional here; it only supplies reference rows
    let cfg = match &opts.config {
        Some(_) => Some(opts.require_config()?),
        None => None,
    };
    let out = opts.out_dir(cfg.as_ref());
    let mut reports = collect_reports(&out)?;
    if reports.is_empty() {
        return Err(CliError::Data(format!(
            "no fit_report.json files under {}",
            out.display()
        )));
    }
    reports.sort_by(|a, b| {
        (&a.index_name, &a.slice_name, a.model_kind.to_string())
            .cmp(&(&b.index_name, &b.slice_name, b.model_kind.to_string()))
    });

    let rows: Vec<CellOutput> = reports
        .into_iter()
        .map(|report| {
            let reference = cfg.as_ref().and_then(|c| {
                c.reference_for(&report.index_name, &report.slice_name, report.model_kind)
                    .map(|p: &ReferenceRow| (p.r2, p.mse))
            });
            let window_size = report
                .hyperparams
                .window_size()
                .unwrap_or(1);
            CellOutput {
                access_line: String::new(),
                window_size,
                reference,
                report,
            }
        })
        .collect();

    fs::write(out.join("summary.csv"), build_summary(&rows)).map_err(data_err)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn collect_reports(out: &Path) -> Result<Vec<FitReport>, CliError> {
    let mut reports = Vec::new();
    if !out.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", out.display())));
    }
    let mut stack = vec![out.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(data_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "fit_report.json") {
                let text = fs::read_to_string(&path).map_err(data_err)?;
                let report: FitReport = serde_json::from_str(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                reports.push(report);
            }
        }
    }
    Ok(reports)
}
