//! Experiment config: TOML schema, defaults, and validation.
//!
//! Validation collects every violation instead of stopping at the first,
//! so a broken config can be fixed in one pass.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use indexlab_core::model::ModelKind;
use indexlab_core::preprocess::DatasetSlice;
use indexlab_core::tune::{
    default_forest_space, default_lstm_space, HyperparamPoint, HyperparamSpace, ParamKind,
    ParamSpec, ParamValue,
};
use indexlab_core::CvConfig;

/// Which tuner drives a model's search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TunerKind {
    Random,
    Bayesian,
}

impl TunerKind {
    fn parse(name: &str) -> Option<TunerKind> {
        match name.to_ascii_lowercase().as_str() {
            "random" | "randomized" => Some(TunerKind::Random),
            "bayesian" | "bo" => Some(TunerKind::Bayesian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TuneSettings {
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    pub forest_tuner: TunerKind,
    pub lstm_tuner: TunerKind,
}

#[derive(Debug, Clone)]
pub struct PinnedParams {
    pub index: String,
    pub slice: String,
    pub model: ModelKind,
    pub point: HyperparamPoint,
}

/// A published reference row for side-by-side comparison in reports.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub index: String,
    pub slice: String,
    pub model: ModelKind,
    pub r2: f64,
    pub mse: f64,
}

/// Fully validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: BTreeMap<String, PathBuf>,
    pub slices: Vec<DatasetSlice>,
    pub cv: CvConfig,
    pub tune: TuneSettings,
    pub models: Vec<ModelKind>,
    pub forest_space: HyperparamSpace,
    pub lstm_space: HyperparamSpace,
    pub pinned: Vec<PinnedParams>,
    pub references: Vec<ReferenceRow>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn space_for(&self, kind: ModelKind) -> Option<&HyperparamSpace> {
        match kind {
            ModelKind::Forest => Some(&self.forest_space),
            ModelKind::Lstm => Some(&self.lstm_space),
            ModelKind::Persistence => None,
        }
    }

    pub fn tuner_for(&self, kind: ModelKind) -> TunerKind {
        match kind {
            ModelKind::Lstm => self.tune.lstm_tuner,
            _ => self.tune.forest_tuner,
        }
    }

    pub fn pinned_for(&self, index: &str, slice: &str, kind: ModelKind) -> Option<&HyperparamPoint> {
        self.pinned
            .iter()
            .find(|p| p.index == index && p.slice == slice && p.model == kind)
            .map(|p| &p.point)
    }

    pub fn reference_for(&self, index: &str, slice: &str, kind: ModelKind) -> Option<&ReferenceRow> {
        self.references
            .iter()
            .find(|p| p.index == index && p.slice == slice && p.model == kind)
    }
}

// ---------------------------------------------------------------------------
// Raw TOML shape
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    data: BTreeMap<String, String>,
    #[serde(default)]
    slices: Option<Vec<RawSlice>>,
    #[serde(default)]
    cv: RawCv,
    #[serde(default)]
    tune: RawTune,
    #[serde(default)]
    models: RawModels,
    #[serde(default)]
    space: RawSpaces,
    #[serde(default)]
    params: Vec<RawPinned>,
    #[serde(default)]
    reference: Vec<RawReference>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: String,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlice {
    name: String,
    train_end: String,
    test_horizon: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCv {
    initial_train_fraction: f64,
    horizon: usize,
}

impl Default for RawCv {
    fn default() -> Self {
        let d = CvConfig::default();
        Self { initial_train_fraction: d.initial_train_fraction, horizon: d.horizon }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTune {
    budget: usize,
    n_init: usize,
    seed: u64,
    forest: String,
    lstm: String,
}

impl Default for RawTune {
    fn default() -> Self {
        Self {
            budget: 15,
            n_init: 5,
            seed: 42,
            forest: "random".into(),
            lstm: "bayesian".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModels {
    kinds: Vec<String>,
}

impl Default for RawModels {
    fn default() -> Self {
        Self { kinds: vec!["forest".into(), "lstm".into()] }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpaces {
    #[serde(default)]
    forest: Option<Vec<RawParamSpec>>,
    #[serde(default)]
    lstm: Option<Vec<RawParamSpec>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamSpec {
    name: String,
    kind: String,
    #[serde(default)]
    lo: Option<f64>,
    #[serde(default)]
    hi: Option<f64>,
    #[serde(default)]
    options: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPinned {
    index: String,
    slice: String,
    model: String,
    values: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReference {
    index: String,
    slice: String,
    model: String,
    r2: f64,
    mse: f64,
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

/// Default regime slices: pre-crash cutoff, early-pandemic plus a year, and
/// the full span, each with a 60-trading-day test horizon.
pub fn default_slices() -> Vec<DatasetSlice> {
    let parse = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("valid literal");
    vec![
        DatasetSlice { name: "D1".into(), train_end_date: parse("2020-02-19"), test_horizon: 60 },
        DatasetSlice { name: "D2".into(), train_end_date: parse("2021-03-31"), test_horizon: 60 },
        DatasetSlice { name: "D3".into(), train_end_date: parse("2023-03-31"), test_horizon: 60 },
    ]
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    let raw: RawConfig = toml::from_str(&text).map_err(|e| vec![format!("config parse error: {e}")])?;
    validate(raw)
}

fn validate(raw: RawConfig) -> Result<ExperimentConfig, Vec<String>> {
    let mut errors = Vec::new();

    if raw.data.is_empty() {
        errors.push("data: at least one index -> csv path entry is required".into());
    }
    let data: BTreeMap<String, PathBuf> = raw
        .data
        .into_iter()
        .map(|(name, path)| (name, PathBuf::from(path)))
        .collect();

    let slices = match raw.slices {
        None => default_slices(),
        Some(raw_slices) => {
            let mut slices = Vec::new();
            for (i, s) in raw_slices.iter().enumerate() {
                match NaiveDate::parse_from_str(&s.train_end, "%Y-%m-%d") {
                    Ok(train_end_date) => slices.push(DatasetSlice {
                        name: s.name.clone(),
                        train_end_date,
                        test_horizon: s.test_horizon,
                    }),
                    Err(e) => errors.push(format!(
                        "slices[{i}] ({}): bad train_end {:?}: {e}",
                        s.name, s.train_end
                    )),
                }
                if s.test_horizon == 0 {
                    errors.push(format!("slices[{i}] ({}): test_horizon must be >= 1", s.name));
                }
                if s.name.is_empty() {
                    errors.push(format!("slices[{i}]: name must be non-empty"));
                }
            }
            slices
        }
    };
    if slices.is_empty() {
        errors.push("slices: at least one regime slice is required".into());
    }
    for pair in slices.windows(2) {
        if pair[0].train_end_date >= pair[1].train_end_date {
            errors.push(format!(
                "slices: cutoffs must be strictly increasing ({} {} >= {} {})",
                pair[0].name, pair[0].train_end_date, pair[1].name, pair[1].train_end_date
            ));
        }
    }
    {
        let mut names = std::collections::HashSet::new();
        for s in &slices {
            if !names.insert(s.name.as_str()) {
                errors.push(format!("slices: duplicate name {}", s.name));
            }
        }
    }

    if !(raw.cv.initial_train_fraction > 0.0 && raw.cv.initial_train_fraction < 1.0) {
        errors.push(format!(
            "cv.initial_train_fraction must be in (0, 1), got {}",
            raw.cv.initial_train_fraction
        ));
    }
    if raw.cv.horizon == 0 {
        errors.push("cv.horizon must be >= 1".into());
    }
    let cv = CvConfig {
        initial_train_fraction: raw.cv.initial_train_fraction,
        horizon: raw.cv.horizon,
    };

    if raw.tune.budget == 0 {
        errors.push("tune.budget must be >= 1".into());
    }
    if raw.tune.n_init < 2 {
        errors.push("tune.n_init must be >= 2".into());
    }
    let forest_tuner = TunerKind::parse(&raw.tune.forest).unwrap_or_else(|| {
        errors.push(format!("tune.forest: unknown tuner {:?}", raw.tune.forest));
        TunerKind::Random
    });
    let lstm_tuner = TunerKind::parse(&raw.tune.lstm).unwrap_or_else(|| {
        errors.push(format!("tune.lstm: unknown tuner {:?}", raw.tune.lstm));
        TunerKind::Bayesian
    });
    let tune = TuneSettings {
        budget: raw.tune.budget,
        n_init: raw.tune.n_init,
        seed: raw.tune.seed,
        forest_tuner,
        lstm_tuner,
    };

    let mut models = Vec::new();
    for name in &raw.models.kinds {
        match ModelKind::parse(name) {
            Some(kind) if !models.contains(&kind) => models.push(kind),
            Some(kind) => errors.push(format!("models.kinds: duplicate {kind}")),
            None => errors.push(format!("models.kinds: unknown model {name:?}")),
        }
    }
    if models.is_empty() {
        errors.push("models.kinds: at least one model is required".into());
    }

    let forest_space = build_space(raw.space.forest, ModelKind::Forest, default_forest_space, &mut errors);
    let lstm_space = build_space(raw.space.lstm, ModelKind::Lstm, default_lstm_space, &mut errors);

    let mut pinned = Vec::new();
    for (i, p) in raw.params.into_iter().enumerate() {
        let Some(model) = ModelKind::parse(&p.model) else {
            errors.push(format!("params[{i}]: unknown model {:?}", p.model));
            continue;
        };
        match pinned_point(&p.values) {
            Ok(point) => pinned.push(PinnedParams { index: p.index, slice: p.slice, model, point }),
            Err(e) => errors.push(format!("params[{i}] ({}/{}): {e}", p.index, p.slice)),
        }
    }

    let mut references = Vec::new();
    for (i, p) in raw.reference.into_iter().enumerate() {
        match ModelKind::parse(&p.model) {
            Some(model) => references.push(ReferenceRow {
                index: p.index,
                slice: p.slice,
                model,
                r2: p.r2,
                mse: p.mse,
            }),
            None => errors.push(format!("reference[{i}]: unknown model {:?}", p.model)),
        }
    }

    if errors.is_empty() {
        Ok(ExperimentConfig {
            data,
            slices,
            cv,
            tune,
            models,
            forest_space,
            lstm_space,
            pinned,
            references,
            output_dir: PathBuf::from(raw.output.dir),
        })
    } else {
        Err(errors)
    }
}

fn build_space(
    raw: Option<Vec<RawParamSpec>>,
    kind: ModelKind,
    default: fn() -> HyperparamSpace,
    errors: &mut Vec<String>,
) -> HyperparamSpace {
    let Some(raw_specs) = raw else {
        return default();
    };
    let mut specs = Vec::new();
    for s in &raw_specs {
        match parse_spec(s) {
            Ok(spec) => specs.push(spec),
            Err(e) => errors.push(format!("space.{kind}.{}: {e}", s.name)),
        }
    }
    let space = HyperparamSpace { specs, model_kind: kind };
    if let Err(e) = space.validate_for_model() {
        errors.push(format!("space.{kind}: {e}"));
    }
    space
}

fn parse_spec(raw: &RawParamSpec) -> Result<ParamSpec, String> {
    let need_range = || -> Result<(f64, f64), String> {
        match (raw.lo, raw.hi) {
            (Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err("lo and hi are required for range kinds".into()),
        }
    };
    let kind = match raw.kind.to_ascii_lowercase().as_str() {
        "int" | "integer" => {
            let (lo, hi) = need_range()?;
            if lo.fract() != 0.0 || hi.fract() != 0.0 {
                return Err("integer bounds must be whole numbers".into());
            }
            ParamKind::IntUniform { lo: lo as i64, hi: hi as i64 }
        }
        "real" | "uniform" => {
            let (lo, hi) = need_range()?;
            ParamKind::RealUniform { lo, hi }
        }
        "loguniform" | "log" => {
            let (lo, hi) = need_range()?;
            ParamKind::LogUniform { lo, hi }
        }
        "categorical" | "cat" => ParamKind::Categorical {
            options: raw.options.clone().ok_or("options are required for categorical")?,
        },
        other => return Err(format!("unknown kind {other:?}")),
    };
    Ok(ParamSpec { name: raw.name.clone(), kind })
}

fn pinned_point(values: &BTreeMap<String, toml::Value>) -> Result<HyperparamPoint, String> {
    let mut point = HyperparamPoint::default();
    for (name, value) in values {
        let parsed = match value {
            toml::Value::Integer(v) => ParamValue::Int(*v),
            toml::Value::Float(v) => ParamValue::Real(*v),
            toml::Value::String(v) => ParamValue::Cat(v.clone()),
            other => return Err(format!("{name}: unsupported value {other:?}")),
        };
        point.assignments.insert(name.clone(), parsed);
    }
    if point.assignments.is_empty() {
        return Err("empty values table".into());
    }
    Ok(point)
}
