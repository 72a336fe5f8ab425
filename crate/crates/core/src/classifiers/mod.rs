//! Desk-scale learners: retrieval k-NN, gradient-boosted stumps and a bidirectional
//! recurrent classifier over the per-field embedding sequence, with early stopping and
//! randomized hyperparameter search.

mod birnn;
mod knn;
mod search;
mod stumps;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::DecisionVector;
use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

pub use birnn::{
    birnn_forward, birnn_train, gradient_check, gradient_check_with, BiRnnClassifier, BiRnnGradients, BiRnnSnapshot,
    TensorBlob, SEQ_LEN,
};
pub use knn::{KnnClassifier, KnnSnapshot, DEFAULT_K};
pub use search::{
    random_search, run_with_early_stopping, train_family, EarlyStopping, Family, ParamRange, SearchResult, TrainConfig,
    TrainLog, TrialOutcome, TrialRecord,
};
pub use stumps::{train_stumps, BoostedStumps, Stump};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Embedding rows paired with aligned binary labels.
#[derive(Clone, Copy, Debug)]
pub struct LabeledSet<'a> {
    pub x: &'a EmbeddingMatrix,
    pub y: &'a DecisionVector,
}

impl<'a> LabeledSet<'a> {
    pub fn new(x: &'a EmbeddingMatrix, y: &'a DecisionVector) -> Result<Self> {
        if x.index_order() != y.index_order.as_slice() {
            return Err(Error::Misalignment(format!(
                "labels from {} do not follow the embedding row order",
                y.source
            )));
        }
        Ok(LabeledSet { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Both classes present, or the single class seen.
    pub(crate) fn require_both_classes(&self) -> Result<()> {
        let pos = self.y.values.iter().filter(|&&v| v == 1).count();
        match pos {
            0 => Err(Error::SingleClass(0)),
            p if p == self.len() => Err(Error::SingleClass(1)),
            _ => Ok(()),
        }
    }
}

pub(crate) fn accuracy(pred: &[u8], truth: &[u8]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// A fitted model of any family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TrainedModel {
    Knn(KnnSnapshot),
    #[serde(rename = "gbstumps")]
    Stumps(BoostedStumps),
    #[serde(rename = "birnn")]
    BiRnn(BiRnnSnapshot),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: TrainedModel,
}

impl TrainedModel {
    pub fn source_name(&self) -> &'static str {
        match self {
            TrainedModel::Knn(_) => "model:knn",
            TrainedModel::Stumps(_) => "model:gbstumps",
            TrainedModel::BiRnn(_) => "model:birnn",
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Predictions for every row of `x`. A k-NN model needs its reference embeddings,
    /// which it looks up by id in `x`; rows that are reference rows are scored
    /// leave-one-out.
    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<DecisionVector> {
        match self {
            TrainedModel::Knn(snap) => {
                let ref_x = x.select_rows(&snap.reference_ids)?;
                let ref_y = DecisionVector::new("reference", snap.labels.clone(), snap.reference_ids.clone())?;
                let clf = KnnClassifier::new(snap.k, snap.metric, ref_x, &ref_y)?;
                clf.predict(x, true)
            }
            TrainedModel::Stumps(m) => m.predict(x),
            TrainedModel::BiRnn(snap) => BiRnnClassifier::from_snapshot(snap)?.predict(x),
        }
    }
}
