//! MSE and R² metrics plus per-regime evaluation reports.
//!
//! Metrics are reported in denormalized index points. Test evaluation is
//! one-step-ahead walk-forward: each test-day prediction uses the window of
//! actual preceding values, normalized with the train-fit parameters, and
//! the prediction is mapped back to index points.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PriceSeries;
use crate::model::{ModelError, ModelKind, Predictor};
use crate::preprocess::{denormalize_one, normalize, NormalizationParams};
use crate::tune::HyperparamPoint;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: actual {actual} vs predicted {predicted}")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("empty input")]
    Empty,
    #[error("r2 undefined: actual values are constant")]
    ConstantActual,
    #[error("r2 undefined: need at least two observations")]
    TooFew,
    #[error("train slice ({train_len}) shorter than window ({window})")]
    TrainTooShort { train_len: usize, window: usize },
    #[error("model expects window {expected}, evaluation uses {got}")]
    WindowMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean of squared residuals.
pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(EvalError::Empty);
    }
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(sum / actual.len() as f64)
}

/// Coefficient of determination, `1 - SS_res / SS_tot` about the mean of
/// `actual`. May be negative for predictions worse than the mean.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.len() < 2 {
        return Err(EvalError::TooFew);
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::ConstantActual);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Evaluation metrics for one forecast set, in index points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// `None` when undefined (fewer than two points or constant actuals).
    pub r2: Option<f64>,
    pub n: usize,
}

/// One walk-forward forecast: date, actual close, predicted close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub date: NaiveDate,
    pub actual: f64,
    pub predicted: f64,
}

/// Per-configuration evaluation record for one (index, slice, model) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub index_name: String,
    pub slice_name: String,
    pub model_kind: ModelKind,
    pub hyperparams: HyperparamPoint,
    pub metrics: Metrics,
    /// Per-fold CV MSE (normalized units) of the winning configuration.
    pub cv_metrics: Vec<f64>,
    pub seed: u64,
    pub forecast_rows: Vec<ForecastRow>,
}

impl FitReport {
    /// Recompute metrics from the stored forecast rows.
    pub fn recompute_metrics(&self) -> Result<Metrics, EvalError> {
        let actual: Vec<f64> = self.forecast_rows.iter().map(|r| r.actual).collect();
        let predicted: Vec<f64> = self.forecast_rows.iter().map(|r| r.predicted).collect();
        Ok(Metrics {
            mse: mse(&actual, &predicted)?,
            r2: r2(&actual, &predicted).ok(),
            n: actual.len(),
        })
    }
}

/// Report fields that come from the experiment context, not the evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub slice_name: String,
    pub model_kind: ModelKind,
    pub hyperparams: HyperparamPoint,
    pub cv_metrics: Vec<f64>,
    pub seed: u64,
}

/// One-step-ahead walk-forward evaluation over the test slice.
///
/// Each test-day window holds actual preceding values (train tail, then
/// realized test values), normalized with the train-fit params; predictions
/// are denormalized so metrics come out in index points.
pub fn evaluate_slice(
    model: &dyn Predictor,
    train: &PriceSeries,
    test: &PriceSeries,
    normalizer: &NormalizationParams,
    window_size: usize,
    ctx: &EvalContext,
) -> Result<FitReport, EvalError> {
    if train.len() < window_size {
        return Err(EvalError::TrainTooShort {
            train_len: train.len(),
            window: window_size,
        });
    }
    let mut values = train.closes();
    values.extend(test.closes());
    let normalized = normalize(&values, normalizer);

    let mut rows = Vec::with_capacity(test.len());
    for (j, (date, actual)) in test.observations().iter().enumerate() {
        let target_idx = train.len() + j;
        let window = &normalized[target_idx - window_size..target_idx];
        let pred_norm = model.predict_window(window)?;
        rows.push(ForecastRow {
            date: *date,
            actual: *actual,
            predicted: denormalize_one(pred_norm, normalizer),
        });
    }

    let actual: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    let metrics = Metrics {
        mse: mse(&actual, &predicted)?,
        r2: r2(&actual, &predicted).ok(),
        n: rows.len(),
    };
    Ok(FitReport {
        index_name: train.index_name().to_string(),
        slice_name: ctx.slice_name.clone(),
        model_kind: ctx.model_kind,
        hyperparams: ctx.hyperparams.clone(),
        metrics,
        cv_metrics: ctx.cv_metrics.clone(),
        seed: ctx.seed,
        forecast_rows: rows,
    })
}
