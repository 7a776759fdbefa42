//! Sex classification from supervoxel feature vectors: a 1D conv net and a
//! logistic baseline under stratified k-fold cross-validation.

mod folds;
mod metrics;
mod net;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use folds::stratified_kfold;
pub use metrics::{evaluate, metrics_from_confusion, Confusion, Metrics};
pub use net::{
    gradient_check, max_rel_error_vs_fd, train, train_logreg, NetConfig, Network, Standardizer,
    TrainedModel,
};

use crate::error::{Error, Result};
use crate::manifest::Sex;

/// Which classifier a cross-validation run trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassifierKind {
    ConvNet(NetConfig),
    Logistic { l2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_indices: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    /// Metrics over the pooled held-out confusion matrix.
    pub aggregate: Metrics,
    pub k_folds: usize,
    pub seed: u64,
}

pub fn sex_to_label(sex: Sex) -> f64 {
    match sex {
        Sex::M => 0.0,
        Sex::F => 1.0,
    }
}

/// Stratified k-fold cross-validation. Standardization constants come from
/// each fold's training split only; folds train independently (in parallel)
/// and aggregate deterministically in fold order.
pub fn cross_validate(
    kind: &ClassifierKind,
    features: &[Vec<f64>],
    sexes: &[Sex],
    k_folds: usize,
    seed: u64,
) -> Result<CvReport> {
    if features.len() != sexes.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: sexes.len() });
    }
    let folds = stratified_kfold(sexes, k_folds, seed)?;
    let labels: Vec<f64> = sexes.iter().map(|&s| sex_to_label(s)).collect();

    let fold_results: Vec<Result<FoldReport>> = folds
        .par_iter()
        .enumerate()
        .map(|(fi, test_idx)| {
            let in_test = {
                let mut mask = vec![false; features.len()];
                for &i in test_idx {
                    mask[i] = true;
                }
                mask
            };
            let train_x: Vec<Vec<f64>> = features
                .iter()
                .enumerate()
                .filter(|(i, _)| !in_test[*i])
                .map(|(_, x)| x.clone())
                .collect();
            let train_y: Vec<f64> = labels
                .iter()
                .enumerate()
                .filter(|(i, _)| !in_test[*i])
                .map(|(_, &y)| y)
                .collect();
            let model = match kind {
                ClassifierKind::ConvNet(cfg) => {
                    let mut cfg = cfg.clone();
                    cfg.input_len = features[0].len();
                    // Distinct deterministic seed per fold.
                    cfg.seed = seed ^ (fi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    net::train(&cfg, &train_x, &train_y)?
                }
                ClassifierKind::Logistic { l2 } => net::train_logreg(&train_x, &train_y, *l2)?,
            };
            let preds: Vec<f64> = test_idx
                .iter()
                .map(|&i| model.predict(&features[i]))
                .collect::<Result<_>>()?;
            let truth: Vec<f64> = test_idx.iter().map(|&i| labels[i]).collect();
            let metrics = metrics::evaluate(&preds, &truth)?;
            Ok(FoldReport { fold: fi, test_indices: test_idx.clone(), metrics })
        })
        .collect();

    let mut fold_reports = Vec::with_capacity(k_folds);
    for r in fold_results {
        fold_reports.push(r?);
    }
    let mut pooled = Confusion::default();
    for fr in &fold_reports {
        pooled.add(&fr.metrics.confusion);
    }
    Ok(CvReport {
        folds: fold_reports,
        aggregate: metrics_from_confusion(&pooled),
        k_folds,
        seed,
    })
}

/// Train on the full dataset and persist the model: `<prefix>.json` holds
/// the architecture and standardization constants, `<prefix>.params` the
/// little-endian f64 parameter blob behind a u64 length header.
pub fn save_model(model: &TrainedModel, prefix: impl AsRef<Path>) -> Result<()> {
    let prefix = prefix.as_ref();
    #[derive(Serialize)]
    struct ModelMeta<'a> {
        architecture: &'a NetConfig,
        standardizer: &'a Standardizer,
        n_params: usize,
    }
    let meta = ModelMeta {
        architecture: &model.network.cfg,
        standardizer: &model.standardizer,
        n_params: model.network.params.len(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Parse(format!("model metadata serialization failed: {e}")))?;
    std::fs::write(prefix.with_extension("json"), json)?;

    let mut blob = Vec::with_capacity(8 + model.network.params.len() * 8);
    blob.extend_from_slice(&(model.network.params.len() as u64).to_le_bytes());
    for p in &model.network.params {
        blob.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::write(prefix.with_extension("params"), blob)?;
    Ok(())
}

pub fn load_model(prefix: impl AsRef<Path>) -> Result<TrainedModel> {
    let prefix = prefix.as_ref();
    #[derive(Deserialize)]
    struct ModelMeta {
        architecture: NetConfig,
        standardizer: Standardizer,
        n_params: usize,
    }
    let meta: ModelMeta = serde_json::from_str(
        &std::fs::read_to_string(prefix.with_extension("json"))?,
    )
    .map_err(|e| Error::Parse(format!("model metadata parse failed: {e}")))?;

    let blob = std::fs::read(prefix.with_extension("params"))?;
    if blob.len() < 8 {
        return Err(Error::Parse("parameter blob lacks its length header".into()));
    }
    let count = u64::from_le_bytes(blob[0..8].try_into().expect("8 bytes")) as usize;
    if blob.len() != 8 + count * 8 || count != meta.n_params {
        return Err(Error::Parse(format!(
            "parameter blob holds {} bytes for a declared count of {count}",
            blob.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for i in 0..count {
        let off = 8 + i * 8;
        params.push(f64::from_le_bytes(blob[off..off + 8].try_into().expect("8 bytes")));
    }
    let mut network = Network::zeroed(meta.architecture)?;
    if network.params.len() != params.len() {
        return Err(Error::Parse(format!(
            "architecture expects {} parameters, blob holds {}",
            network.params.len(),
            params.len()
        )));
    }
    network.params = params;
    Ok(TrainedModel { network, standardizer: meta.standardizer, history: Vec::new() })
}
