//! Trained-model artifact shared by `train`, `evaluate` and `importance`.

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use t2g_core::baseline::{naive_from_matrix, LinearModel};
use t2g_core::features::FeatureMatrix;
use t2g_core::forest::ForestModel;
use t2g_core::lstm::LstmModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Naive,
    Lr(LinearModel),
    Rf(ForestModel),
    Lstm(LstmModel),
}

impl TrainedModel {
    pub fn name(&self) -> &'static str {
        match self {
            TrainedModel::Naive => "naive",
            TrainedModel::Lr(_) => "lr",
            TrainedModel::Rf(_) => "rf",
            TrainedModel::Lstm(_) => "lstm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    /// Hash of the feature schema the model was trained on.
    pub schema_hash: String,
    pub target_signal: String,
    pub columns: Vec<String>,
    pub train_frac: f64,
    pub n_train: usize,
    pub model: TrainedModel,
}

impl ModelArtifact {
    pub fn check_matrix(&self, m: &FeatureMatrix) -> Result<()> {
        let hash = m.schema.hash();
        if hash != self.schema_hash {
            bail!(
                "model was trained on schema {} but the matrix has schema {hash}",
                self.schema_hash
            );
        }
        Ok(())
    }

    /// Predictions for rows `from..` of `m`.
    pub fn predict_from(&self, m: &FeatureMatrix, from: usize) -> Result<Vec<f64>> {
        self.check_matrix(m)?;
        let rows = &m.rows[from..];
        Ok(match &self.model {
            TrainedModel::Naive => naive_from_matrix(m, from)?,
            TrainedModel::Lr(lr) => rows.iter().map(|r| lr.predict(r)).collect::<Result<_, _>>()?,
            TrainedModel::Rf(rf) => rf.predict_many(rows)?,
            TrainedModel::Lstm(net) => net.predict_from(&m.rows, from)?,
        })
    }
}
