//! Hyperparameter search: randomized search and GP-based Bayesian
//! optimization, both scoring candidates by rolling-window cross-validation.
//!
//! The objective is the mean CV MSE in normalized units. Candidate models
//! are fit with seeds derived per (tune seed, fold index), so every
//! candidate sees the same fold seeds and results do not depend on
//! evaluation order or parallelism.

pub mod gp;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gp::{expected_improvement, gp_fit, GpPosterior};

use crate::eval::{self, EvalError};
use crate::forest::{fit_forest, predict_forest, ForestConfig, ForestError, MaxFeatures};
use crate::ingest::PriceSeries;
use crate::lstm::{fit_lstm, predict_lstm, LstmConfig, LstmError};
use crate::model::ModelKind;
use crate::preprocess::{
    fit_normalizer, make_windows, normalize, rolling_splits, PreprocessError,
};
use crate::rng::{derive_seed, seeded_rng};

/// GP kernel defaults for encoded points and standardized scores.
const GP_LENGTHSCALE: f64 = 0.2;
const GP_SIGNAL_VARIANCE: f64 = 1.0;
const GP_NOISE_VARIANCE: f64 = 1e-6;
/// Fresh random candidates scored by EI per Bayesian-optimization step.
const EI_CANDIDATES: usize = 512;

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("kernel matrix is singular")]
    SingularKernel,
    #[error("search space is missing parameter {0}")]
    MissingParam(String),
    #[error("invalid value for parameter {name}: {reason}")]
    InvalidParam { name: String, reason: String },
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid tuning budget: {0}")]
    InvalidBudget(String),
    #[error("model kind {0} cannot be tuned")]
    UnsupportedModel(ModelKind),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Sampling distribution for one hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Uniform over the inclusive integer range `[lo, hi]`.
    IntUniform { lo: i64, hi: i64 },
    RealUniform { lo: f64, hi: f64 },
    /// `exp(uniform(ln lo, ln hi))`; both bounds must be positive.
    LogUniform { lo: f64, hi: f64 },
    Categorical { options: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    fn validate(&self) -> Result<(), TuneError> {
        let bad = |reason: &str| {
            Err(TuneError::InvalidParam {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        match &self.kind {
            ParamKind::IntUniform { lo, hi } if lo >= hi => bad("lo must be < hi"),
            ParamKind::RealUniform { lo, hi } if lo >= hi => bad("lo must be < hi"),
            ParamKind::LogUniform { lo, hi } if *lo <= 0.0 || lo >= hi => {
                bad("bounds must be positive with lo < hi")
            }
            ParamKind::Categorical { options } if options.is_empty() => {
                bad("need at least one option")
            }
            _ => Ok(()),
        }
    }

    /// Dimensions this spec occupies in the encoded vector.
    fn encoded_dims(&self) -> usize {
        match &self.kind {
            ParamKind::Categorical { options } => options.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    pub specs: Vec<ParamSpec>,
    pub model_kind: ModelKind,
}

impl HyperparamSpace {
    pub fn validate(&self) -> Result<(), TuneError> {
        let mut seen = std::collections::HashSet::new();
        for spec in &self.specs {
            if !seen.insert(spec.name.as_str()) {
                return Err(TuneError::InvalidSpace(format!(
                    "duplicate parameter name {}",
                    spec.name
                )));
            }
            spec.validate()?;
        }
        if self.specs.is_empty() {
            return Err(TuneError::InvalidSpace("no parameters".into()));
        }
        Ok(())
    }

    /// Check the space covers every field the target model config needs.
    pub fn validate_for_model(&self) -> Result<(), TuneError> {
        self.validate()?;
        let required: &[&str] = match self.model_kind {
            ModelKind::Forest => &[
                "window_size",
                "max_depth",
                "max_features",
                "min_samples_leaf",
                "min_samples_split",
                "n_estimators",
            ],
            ModelKind::Lstm => &[
                "window_size",
                "units",
                "epochs",
                "batch_size",
                "l1",
                "l2",
                "learning_rate",
            ],
            ModelKind::Persistence => return Err(TuneError::UnsupportedModel(self.model_kind)),
        };
        for name in required {
            if !self.specs.iter().any(|s| s.name == *name) {
                return Err(TuneError::MissingParam((*name).into()));
            }
        }
        Ok(())
    }

    pub fn encoded_dims(&self) -> usize {
        self.specs.iter().map(ParamSpec::encoded_dims).sum()
    }
}

fn int_spec(name: &str, lo: i64, hi: i64) -> ParamSpec {
    ParamSpec { name: name.into(), kind: ParamKind::IntUniform { lo, hi } }
}

fn log_spec(name: &str, lo: f64, hi: f64) -> ParamSpec {
    ParamSpec { name: name.into(), kind: ParamKind::LogUniform { lo, hi } }
}

/// Default forest space spanning the usual grid-search ranges.
pub fn default_forest_space() -> HyperparamSpace {
    HyperparamSpace {
        specs: vec![
            int_spec("window_size", 1, 10),
            int_spec("max_depth", 2, 30),
            ParamSpec {
                name: "max_features".into(),
                kind: ParamKind::Categorical {
                    options: vec!["auto".into(), "sqrt".into(), "log2".into()],
                },
            },
            int_spec("min_samples_leaf", 1, 8),
            int_spec("min_samples_split", 2, 16),
            int_spec("n_estimators", 50, 400),
        ],
        model_kind: ModelKind::Forest,
    }
}

/// Default LSTM space: the grid columns plus learning rate.
pub fn default_lstm_space() -> HyperparamSpace {
    HyperparamSpace {
        specs: vec![
            int_spec("window_size", 1, 10),
            int_spec("units", 8, 64),
            int_spec("epochs", 1, 40),
            int_spec("batch_size", 16, 64),
            log_spec("l1", 1e-4, 0.5),
            log_spec("l2", 1e-4, 0.5),
            log_spec("learning_rate", 1e-4, 5e-2),
        ],
        model_kind: ModelKind::Lstm,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Cat(v) => write!(f, "{v}"),
        }
    }
}

/// One concrete hyperparameter configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPoint {
    pub assignments: BTreeMap<String, ParamValue>,
}

impl HyperparamPoint {
    pub fn get_int(&self, name: &str) -> Result<i64, TuneError> {
        match self.assignments.get(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            Some(other) => Err(TuneError::InvalidParam {
                name: name.into(),
                reason: format!("expected integer, got {other}"),
            }),
            None => Err(TuneError::MissingParam(name.into())),
        }
    }

    pub fn get_real(&self, name: &str) -> Result<f64, TuneError> {
        match self.assignments.get(name) {
            Some(ParamValue::Real(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            Some(other) => Err(TuneError::InvalidParam {
                name: name.into(),
                reason: format!("expected real, got {other}"),
            }),
            None => Err(TuneError::MissingParam(name.into())),
        }
    }

    pub fn get_cat(&self, name: &str) -> Result<&str, TuneError> {
        match self.assignments.get(name) {
            Some(ParamValue::Cat(v)) => Ok(v),
            Some(other) => Err(TuneError::InvalidParam {
                name: name.into(),
                reason: format!("expected categorical, got {other}"),
            }),
            None => Err(TuneError::MissingParam(name.into())),
        }
    }

    fn get_usize(&self, name: &str, min: i64) -> Result<usize, TuneError> {
        let v = self.get_int(name)?;
        if v < min {
            return Err(TuneError::InvalidParam {
                name: name.into(),
                reason: format!("must be >= {min}, got {v}"),
            });
        }
        Ok(v as usize)
    }

    pub fn window_size(&self) -> Result<usize, TuneError> {
        self.get_usize("window_size", 1)
    }

    /// Materialize a forest config; `max_depth = 0` means unlimited.
    pub fn to_forest_config(&self, seed: u64) -> Result<ForestConfig, TuneError> {
        let depth = self.get_usize("max_depth", 0)?;
        let features_name = self.get_cat("max_features")?;
        let max_features = MaxFeatures::parse(features_name).ok_or_else(|| TuneError::InvalidParam {
            name: "max_features".into(),
            reason: format!("unknown option {features_name}"),
        })?;
        Ok(ForestConfig {
            n_estimators: self.get_usize("n_estimators", 1)?,
            max_depth: if depth == 0 { None } else { Some(depth) },
            max_features,
            min_samples_leaf: self.get_usize("min_samples_leaf", 1)?,
            min_samples_split: self.get_usize("min_samples_split", 2)?,
            bootstrap: true,
            seed,
        })
    }

    pub fn to_lstm_config(&self, seed: u64) -> Result<LstmConfig, TuneError> {
        Ok(LstmConfig {
            window_size: self.window_size()?,
            units: self.get_usize("units", 1)?,
            epochs: self.get_usize("epochs", 1)?,
            batch_size: self.get_usize("batch_size", 1)?,
            l1: self.get_real("l1")?,
            l2: self.get_real("l2")?,
            dropout: self.get_real("dropout").unwrap_or(0.0),
            learning_rate: self.get_real("learning_rate")?,
            seed,
        })
    }
}

/// Draw one point: an independent sample per spec, deterministic given the
/// generator state.
pub fn sample_point(space: &HyperparamSpace, rng: &mut ChaCha8Rng) -> HyperparamPoint {
    let mut assignments = BTreeMap::new();
    for spec in &space.specs {
        let value = match &spec.kind {
            ParamKind::IntUniform { lo, hi } => ParamValue::Int(rng.gen_range(*lo..=*hi)),
            ParamKind::RealUniform { lo, hi } => ParamValue::Real(rng.gen_range(*lo..*hi)),
            ParamKind::LogUniform { lo, hi } => {
                ParamValue::Real(rng.gen_range(lo.ln()..hi.ln()).exp())
            }
            ParamKind::Categorical { options } => {
                ParamValue::Cat(options[rng.gen_range(0..options.len())].clone())
            }
        };
        assignments.insert(spec.name.clone(), value);
    }
    HyperparamPoint { assignments }
}

/// Encode a point into `[0,1]^d`: affine for ranges, log-affine for
/// log-uniform, one-hot for categorical.
pub fn encode_point(space: &HyperparamSpace, point: &HyperparamPoint) -> Result<Vec<f64>, TuneError> {
    let mut out = Vec::with_capacity(space.encoded_dims());
    for spec in &space.specs {
        match &spec.kind {
            ParamKind::IntUniform { lo, hi } => {
                let v = point.get_int(&spec.name)? as f64;
                out.push((v - *lo as f64) / (*hi as f64 - *lo as f64));
            }
            ParamKind::RealUniform { lo, hi } => {
                let v = point.get_real(&spec.name)?;
                out.push((v - lo) / (hi - lo));
            }
            ParamKind::LogUniform { lo, hi } => {
                let v = point.get_real(&spec.name)?;
                out.push((v.ln() - lo.ln()) / (hi.ln() - lo.ln()));
            }
            ParamKind::Categorical { options } => {
                let v = point.get_cat(&spec.name)?;
                let idx = options.iter().position(|o| o == v).ok_or_else(|| {
                    TuneError::InvalidParam {
                        name: spec.name.clone(),
                        reason: format!("{v} not in options"),
                    }
                })?;
                for i in 0..options.len() {
                    out.push(if i == idx { 1.0 } else { 0.0 });
                }
            }
        }
    }
    Ok(out)
}

/// Invert [`encode_point`]: rounding for integers, argmax for categoricals.
pub fn decode_point(space: &HyperparamSpace, encoded: &[f64]) -> Result<HyperparamPoint, TuneError> {
    if encoded.len() != space.encoded_dims() {
        return Err(TuneError::InvalidSpace(format!(
            "encoded vector has {} dims, space needs {}",
            encoded.len(),
            space.encoded_dims()
        )));
    }
    let mut assignments = BTreeMap::new();
    let mut pos = 0;
    for spec in &space.specs {
        match &spec.kind {
            ParamKind::IntUniform { lo, hi } => {
                let raw = *lo as f64 + encoded[pos] * (*hi as f64 - *lo as f64);
                assignments.insert(
                    spec.name.clone(),
                    ParamValue::Int((raw.round() as i64).clamp(*lo, *hi)),
                );
                pos += 1;
            }
            ParamKind::RealUniform { lo, hi } => {
                assignments.insert(
                    spec.name.clone(),
                    ParamValue::Real((lo + encoded[pos] * (hi - lo)).clamp(*lo, *hi)),
                );
                pos += 1;
            }
            ParamKind::LogUniform { lo, hi } => {
                let v = (lo.ln() + encoded[pos] * (hi.ln() - lo.ln())).exp();
                assignments.insert(spec.name.clone(), ParamValue::Real(v.clamp(*lo, *hi)));
                pos += 1;
            }
            ParamKind::Categorical { options } => {
                let slice = &encoded[pos..pos + options.len()];
                let idx = slice
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                assignments.insert(spec.name.clone(), ParamValue::Cat(options[idx].clone()));
                pos += options.len();
            }
        }
    }
    Ok(HyperparamPoint { assignments })
}

/// Rolling-CV settings: the initial training window as a fraction of the
/// sample count, and the per-fold test horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub initial_train_fraction: f64,
    pub horizon: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { initial_train_fraction: 0.7, horizon: 20 }
    }
}

/// Score one candidate by rolling-window CV on the training series.
///
/// For each expanding split, the normalizer and the model are fit strictly
/// on the fold's training prefix, and MSE on the fold's test windows is
/// recorded in normalized units. Model seeds derive from
/// `(seed, fold index)` so every candidate sees the same folds.
pub fn cv_objective(
    point: &HyperparamPoint,
    train: &PriceSeries,
    cv: &CvConfig,
    model_kind: ModelKind,
    seed: u64,
) -> Result<(f64, Vec<f64>), TuneError> {
    let window = point.window_size()?;
    let values = train.closes();
    let dates = train.dates();
    if values.len() <= window + 1 {
        return Err(TuneError::InsufficientData(format!(
            "series of {} cannot support window {window}",
            values.len()
        )));
    }
    let n_samples = values.len() - window;
    let initial = ((n_samples as f64 * cv.initial_train_fraction).floor() as usize).max(1);
    let splits = rolling_splits(n_samples, initial, cv.horizon).map_err(|_| {
        TuneError::InsufficientData(format!(
            "no rolling splits for {n_samples} samples, initial {initial}, horizon {}",
            cv.horizon
        ))
    })?;

    let mut per_fold = Vec::with_capacity(splits.len());
    for (fold, split) in splits.iter().enumerate() {
        let t = split.train.end;
        let h = split.test.len();
        // normalizer sees exactly the raw values composing the fold's train windows
        let params = fit_normalizer(&values[..t + window])?;
        let normalized = normalize(&values[..t + h + window], &params);
        let windows = make_windows(&normalized, &dates[..t + h + window], window)?;
        let train_data = windows.slice(0..t);
        let test_data = windows.slice(t..t + h);

        let fold_seed = derive_seed(seed, fold as u64);
        let predictions = match model_kind {
            ModelKind::Forest => {
                let config = point.to_forest_config(fold_seed)?;
                let model = fit_forest(&train_data, &config)?;
                predict_forest(&model, &test_data.features)?
            }
            ModelKind::Lstm => {
                let config = point.to_lstm_config(fold_seed)?;
                let model = fit_lstm(&train_data, &config)?;
                predict_lstm(&model, &test_data)
            }
            ModelKind::Persistence => test_data
                .features
                .iter()
                .map(|w| *w.last().expect("non-empty window"))
                .collect(),
        };
        per_fold.push(eval::mse(&test_data.targets, &predictions)?);
    }
    let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    Ok((mean, per_fold))
}

/// Ready-made CV objective for the tuners.
pub struct CvObjective {
    train: PriceSeries,
    cv: CvConfig,
    model_kind: ModelKind,
    seed: u64,
}

impl CvObjective {
    pub fn new(train: PriceSeries, cv: CvConfig, model_kind: ModelKind, seed: u64) -> Self {
        Self { train, cv, model_kind, seed }
    }

    pub fn evaluate(&self, point: &HyperparamPoint) -> Result<(f64, Vec<f64>), TuneError> {
        cv_objective(point, &self.train, &self.cv, self.model_kind, self.seed)
    }
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: HyperparamPoint,
    pub score: f64,
    pub per_fold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_point: HyperparamPoint,
    /// Minimum mean CV MSE over the history, in normalized units.
    pub best_score: f64,
    pub history: Vec<Evaluation>,
    pub iterations: usize,
    pub seed: u64,
}

fn result_from_history(history: Vec<Evaluation>, seed: u64) -> TuneResult {
    let mut best = 0;
    for (i, eval) in history.iter().enumerate() {
        if eval.score < history[best].score {
            best = i; // ties keep the earliest iteration
        }
    }
    TuneResult {
        best_point: history[best].point.clone(),
        best_score: history[best].score,
        iterations: history.len(),
        seed,
        history,
    }
}

/// Randomized search: `n_iterations` independent draws scored by the
/// objective; candidates evaluate in parallel, the result is identical at
/// any thread count.
pub fn random_search<F>(
    space: &HyperparamSpace,
    objective: F,
    n_iterations: usize,
    seed: u64,
) -> Result<TuneResult, TuneError>
where
    F: Fn(&HyperparamPoint) -> Result<(f64, Vec<f64>), TuneError> + Sync,
{
    space.validate()?;
    if n_iterations < 1 {
        return Err(TuneError::InvalidBudget("n_iterations must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let points: Vec<HyperparamPoint> =
        (0..n_iterations).map(|_| sample_point(space, &mut rng)).collect();

    let scored: Vec<Result<(f64, Vec<f64>), TuneError>> =
        points.par_iter().map(&objective).collect();

    let mut history = Vec::with_capacity(n_iterations);
    for (point, scored) in points.into_iter().zip(scored) {
        let (score, per_fold) = scored?;
        history.push(Evaluation { point, score, per_fold });
    }
    Ok(result_from_history(history, seed))
}

/// [`random_search`] wired to the rolling-CV objective.
pub fn random_search_cv(
    space: &HyperparamSpace,
    train: &PriceSeries,
    cv: &CvConfig,
    n_iterations: usize,
    seed: u64,
) -> Result<TuneResult, TuneError> {
    let objective = CvObjective::new(train.clone(), *cv, space.model_kind, seed);
    random_search(space, |p| objective.evaluate(p), n_iterations, seed)
}

/// Bayesian optimization: `n_init` random points, then each iteration fits
/// the GP on the full history and evaluates the best of 512 fresh random
/// candidates by expected improvement. Sequential after initialization.
pub fn bayesian_optimize<F>(
    space: &HyperparamSpace,
    objective: F,
    n_init: usize,
    n_iterations: usize,
    seed: u64,
) -> Result<TuneResult, TuneError>
where
    F: Fn(&HyperparamPoint) -> Result<(f64, Vec<f64>), TuneError>,
{
    space.validate()?;
    if n_init < 2 {
        return Err(TuneError::InvalidBudget("n_init must be >= 2".into()));
    }
    if n_iterations < n_init {
        return Err(TuneError::InvalidBudget(
            "n_iterations must be >= n_init".into(),
        ));
    }

    let mut rng = seeded_rng(seed);
    let mut history: Vec<Evaluation> = Vec::with_capacity(n_iterations);
    let mut encoded: Vec<Vec<f64>> = Vec::with_capacity(n_iterations);

    for _ in 0..n_init {
        let point = sample_point(space, &mut rng);
        let (score, per_fold) = objective(&point)?;
        encoded.push(encode_point(space, &point)?);
        history.push(Evaluation { point, score, per_fold });
    }

    while history.len() < n_iterations {
        let scores: Vec<f64> = history.iter().map(|e| e.score).collect();
        let (standardized, _, _) = standardize(&scores);
        let posterior = gp_fit(
            &encoded,
            &standardized,
            GP_LENGTHSCALE,
            GP_SIGNAL_VARIANCE,
            GP_NOISE_VARIANCE,
        )?;
        let best_std = standardized.iter().copied().fold(f64::INFINITY, f64::min);

        let mut chosen: Option<(HyperparamPoint, Vec<f64>, f64)> = None;
        for _ in 0..EI_CANDIDATES {
            let candidate = sample_point(space, &mut rng);
            let enc = encode_point(space, &candidate)?;
            let ei = expected_improvement(&posterior, &enc, best_std);
            if chosen.as_ref().is_none_or(|(_, _, best_ei)| ei > *best_ei) {
                chosen = Some((candidate, enc, ei));
            }
        }
        let (point, enc, _) = chosen.expect("at least one candidate");
        let (score, per_fold) = objective(&point)?;
        encoded.push(enc);
        history.push(Evaluation { point, score, per_fold });
    }
    Ok(result_from_history(history, seed))
}

/// [`bayesian_optimize`] wired to the rolling-CV objective.
pub fn bayesian_optimize_cv(
    space: &HyperparamSpace,
    train: &PriceSeries,
    cv: &CvConfig,
    n_init: usize,
    n_iterations: usize,
    seed: u64,
) -> Result<TuneResult, TuneError> {
    let objective = CvObjective::new(train.clone(), *cv, space.model_kind, seed);
    bayesian_optimize(space, |p| objective.evaluate(p), n_init, n_iterations, seed)
}

/// Standardize to zero mean, unit variance; degenerate std maps to 1.
fn standardize(values: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    (values.iter().map(|v| (v - mean) / std).collect(), mean, std)
}
