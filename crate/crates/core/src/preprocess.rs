//! Normalization, lag windows, regime slices, and rolling CV splits.
//!
//! The transform here is mean normalization, `x' = (x - mean) / (max - min)`:
//! applied to its own fitting set it lands in `[-1, 1]` with zero mean.
//! Normalizers are always fit on training data only; test values may fall
//! outside `[-1, 1]` and that is accepted.

use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PriceSeries;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("need at least two values to fit a normalizer, got {0}")]
    TooShort(usize),
    #[error("degenerate range: max equals min ({0})")]
    DegenerateRange(f64),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("window size {window} too large for series of length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("cutoff {0} outside the series date range")]
    CutoffOutOfRange(NaiveDate),
    #[error("only {available} observations after cutoff, need {needed}")]
    InsufficientTestData { needed: usize, available: usize },
    #[error("invalid split config: initial_train {initial_train} + horizon {horizon} exceeds {n_samples} samples")]
    InvalidSplitConfig {
        n_samples: usize,
        initial_train: usize,
        horizon: usize,
    },
}

/// Mean/min/max of a training slice; defines an invertible affine scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl NormalizationParams {
    pub fn scale(&self) -> f64 {
        self.max - self.min
    }
}

/// Fit mean-normalization parameters: exact arithmetic mean, min, and max.
pub fn fit_normalizer(values: &[f64]) -> Result<NormalizationParams, PreprocessError> {
    if values.len() < 2 {
        return Err(PreprocessError::TooShort(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFiniteInput);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(PreprocessError::DegenerateRange(max));
    }
    Ok(NormalizationParams {
        mean: mean_two_pass(values),
        min,
        max,
    })
}

// Two-pass mean: the residual correction keeps the normalized training mean
// at zero to ~1e-16 even for long series far from the origin.
fn mean_two_pass(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let first: f64 = values.iter().sum::<f64>() / n;
    first + values.iter().map(|v| v - first).sum::<f64>() / n
}

/// Apply `x' = (x - mean) / (max - min)` elementwise.
pub fn normalize(values: &[f64], params: &NormalizationParams) -> Vec<f64> {
    let scale = params.scale();
    values.iter().map(|v| (v - params.mean) / scale).collect()
}

/// Invert [`normalize`]: `x = x' * (max - min) + mean`.
pub fn denormalize(values: &[f64], params: &NormalizationParams) -> Vec<f64> {
    let scale = params.scale();
    values.iter().map(|v| v * scale + params.mean).collect()
}

pub fn normalize_one(value: f64, params: &NormalizationParams) -> f64 {
    (value - params.mean) / params.scale()
}

pub fn denormalize_one(value: f64, params: &NormalizationParams) -> f64 {
    value * params.scale() + params.mean
}

/// Lag-window feature matrix with one-step-ahead targets.
///
/// Row `i` of `features` holds the `window_size` values immediately
/// preceding `targets[i]`; `target_dates[i]` is the date of `targets[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub window_size: usize,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub target_dates: Vec<NaiveDate>,
}

impl WindowedDataset {
    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    /// Clone a contiguous sample range, e.g. one side of a CV split.
    pub fn slice(&self, range: Range<usize>) -> WindowedDataset {
        WindowedDataset {
            window_size: self.window_size,
            features: self.features[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            target_dates: self.target_dates[range].to_vec(),
        }
    }
}

/// Slide a lag window over a (normalized) series.
pub fn make_windows(
    series: &[f64],
    dates: &[NaiveDate],
    window_size: usize,
) -> Result<WindowedDataset, PreprocessError> {
    if window_size == 0 {
        return Err(PreprocessError::ZeroWindow);
    }
    if series.len() <= window_size {
        return Err(PreprocessError::WindowTooLarge {
            window: window_size,
            len: series.len(),
        });
    }
    debug_assert_eq!(series.len(), dates.len());
    let n = series.len() - window_size;
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut target_dates = Vec::with_capacity(n);
    for i in 0..n {
        features.push(series[i..i + window_size].to_vec());
        targets.push(series[i + window_size]);
        target_dates.push(dates[i + window_size]);
    }
    Ok(WindowedDataset {
        window_size,
        features,
        targets,
        target_dates,
    })
}

/// A named training regime: everything up to `train_end_date` trains, the
/// next `test_horizon` observations test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSlice {
    pub name: String,
    pub train_end_date: NaiveDate,
    pub test_horizon: usize,
}

/// Cut a series into (train, test) pairs, one per slice.
///
/// Train holds all observations dated at or before the cutoff; test holds
/// exactly the next `test_horizon` observations. Normalizers must later be
/// fit on the train side only.
pub fn slice_regimes(
    series: &PriceSeries,
    slices: &[DatasetSlice],
) -> Result<Vec<(PriceSeries, PriceSeries)>, PreprocessError> {
    let mut pairs = Vec::with_capacity(slices.len());
    for slice in slices {
        if slice.train_end_date < series.first_date() || slice.train_end_date > series.last_date() {
            return Err(PreprocessError::CutoffOutOfRange(slice.train_end_date));
        }
        let split = series
            .observations()
            .partition_point(|(date, _)| *date <= slice.train_end_date);
        let available = series.len() - split;
        if slice.test_horizon == 0 || available < slice.test_horizon {
            return Err(PreprocessError::InsufficientTestData {
                needed: slice.test_horizon.max(1),
                available,
            });
        }
        let train = PriceSeries::new(
            series.index_name(),
            series.observations()[..split].to_vec(),
        )
        .expect("train slice inherits series invariants");
        let test = PriceSeries::new(
            series.index_name(),
            series.observations()[split..split + slice.test_horizon].to_vec(),
        )
        .expect("test slice inherits series invariants");
        pairs.push((train, test));
    }
    Ok(pairs)
}

/// One expanding-window cross-validation split over sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    /// Contiguous training range, always starting at 0.
    pub train: Range<usize>,
    /// Contiguous test range immediately after `train`.
    pub test: Range<usize>,
}

/// Expanding-window splits: split `k` trains on `[0, initial_train + k*horizon)`
/// and tests on the next `horizon` indices, until fewer than `horizon` remain.
pub fn rolling_splits(
    n_samples: usize,
    initial_train: usize,
    horizon: usize,
) -> Result<Vec<CvSplit>, PreprocessError> {
    if initial_train < 1 || horizon < 1 || initial_train + horizon > n_samples {
        return Err(PreprocessError::InvalidSplitConfig {
            n_samples,
            initial_train,
            horizon,
        });
    }
    let mut splits = Vec::new();
    let mut train_end = initial_train;
    while train_end + horizon <= n_samples {
        splits.push(CvSplit {
            train: 0..train_end,
            test: train_end..train_end + horizon,
        });
        train_end += horizon;
    }
    Ok(splits)
}
