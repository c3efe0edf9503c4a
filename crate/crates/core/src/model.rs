//! Shared model abstraction: forest, LSTM, and the persistence baseline
//! behind one prediction interface, plus JSON save/load.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{self, ForestError, ForestModel};
use crate::lstm::{self, LstmError, LstmParams};
use crate::preprocess::NormalizationParams;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error("model file error: {0}")]
    Io(#[from] io::Error),
    #[error("model file is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Forest,
    Lstm,
    Persistence,
}

impl ModelKind {
    pub fn parse(name: &str) -> Option<ModelKind> {
        match name.to_ascii_lowercase().as_str() {
            "forest" | "rf" | "random_forest" => Some(ModelKind::Forest),
            "lstm" => Some(ModelKind::Lstm),
            "persistence" | "naive" => Some(ModelKind::Persistence),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Forest => write!(f, "forest"),
            ModelKind::Lstm => write!(f, "lstm"),
            ModelKind::Persistence => write!(f, "persistence"),
        }
    }
}

/// Anything that can predict the next normalized value from a lag window.
pub trait Predictor: Sync {
    fn predict_window(&self, window: &[f64]) -> Result<f64, ModelError>;
}

/// A trained model of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyModel {
    Forest(ForestModel),
    Lstm { params: LstmParams, window_size: usize },
    /// Predicts the last window value; the model-free evaluation floor.
    Persistence,
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Forest(_) => ModelKind::Forest,
            AnyModel::Lstm { .. } => ModelKind::Lstm,
            AnyModel::Persistence => ModelKind::Persistence,
        }
    }

    /// Lag-window width the model was trained for; persistence accepts any.
    pub fn window_size(&self) -> Option<usize> {
        match self {
            AnyModel::Forest(m) => Some(m.n_features),
            AnyModel::Lstm { window_size, .. } => Some(*window_size),
            AnyModel::Persistence => None,
        }
    }
}

impl Predictor for AnyModel {
    fn predict_window(&self, window: &[f64]) -> Result<f64, ModelError> {
        match self {
            AnyModel::Forest(m) => Ok(forest::predict_forest_row(m, window)?),
            AnyModel::Lstm { params, .. } => Ok(lstm::forward(params, window)?.0),
            AnyModel::Persistence => Ok(*window.last().expect("non-empty window")),
        }
    }
}

/// On-disk bundle: the model plus everything needed to use it on raw prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub index_name: String,
    pub slice_name: String,
    pub window_size: usize,
    pub normalizer: NormalizationParams,
    pub model: AnyModel,
}

impl SavedModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
