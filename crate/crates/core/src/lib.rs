//! Forecasting laboratory for daily stock-index prices.
//!
//! The pipeline: ingest dirty CSV prices into a validated
//! [`PriceSeries`](ingest::PriceSeries), mean-normalize and window the
//! series, slice it into training regimes, tune random-forest and LSTM
//! regressors with randomized search or Gaussian-process Bayesian
//! optimization under rolling-window cross-validation, and report MSE/R²
//! with forecast-vs-actual rows.
//!
//! Everything stochastic draws from seeded ChaCha streams: the same inputs
//! and seeds produce bit-identical models, scores, and reports at any
//! thread count.

pub mod eval;
pub mod forest;
pub mod ingest;
pub mod lstm;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tune;

pub use eval::{evaluate_slice, mse, r2, EvalContext, FitReport, ForecastRow, Metrics};
pub use forest::{fit_forest, predict_forest, ForestConfig, ForestModel, MaxFeatures};
pub use ingest::{clean, parse_csv, CleaningReport, PriceSeries, RawRecord};
pub use lstm::{fit_lstm, predict_lstm, LstmConfig, LstmParams};
pub use model::{AnyModel, ModelKind, Predictor, SavedModel};
pub use preprocess::{
    denormalize, fit_normalizer, make_windows, normalize, rolling_splits, slice_regimes,
    CvSplit, DatasetSlice, NormalizationParams, WindowedDataset,
};
pub use tune::{
    bayesian_optimize, bayesian_optimize_cv, cv_objective, random_search, random_search_cv,
    sample_point, CvConfig, HyperparamPoint, HyperparamSpace, ParamKind, ParamSpec, ParamValue,
    TuneResult,
};
