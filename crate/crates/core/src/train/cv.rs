use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{evaluate, MeanMetrics, Metrics};
use crate::seed;
use crate::store::{split_folds, stratified_holdout, Dataset};
use crate::train::trainer::{train, TrainConfig};

/// Share of each fold's training portion held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub folds: Vec<FoldResult>,
    pub mean: MeanMetrics,
}

/// k-fold cross-validation. Each fold trains on the other folds minus a
/// stratified validation slice and is scored on its own records. Folds run
/// in parallel; results are independent of scheduling.
pub fn cross_validate(ds: &Dataset, cfg: &TrainConfig, k: usize) -> Result<CvSummary> {
    cfg.validate()?;
    let plan = split_folds(ds, k, cfg.seed)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            let fold_seed = seed::child(cfg.seed, fold as u64);
            let train_part = ds.subset(&plan.train_indices(fold), "cv-train");
            let test = ds.subset(&plan.test_indices(fold), "cv-test");
            let (fit_idx, val_idx) = stratified_holdout(&train_part, VALIDATION_FRACTION, fold_seed);
            let fit_ds = train_part.subset(&fit_idx, "cv-fit");
            let val_ds = train_part.subset(&val_idx, "cv-val");
            let fold_cfg = TrainConfig {
                seed: fold_seed,
                ..cfg.clone()
            };
            let (params, history) = train(&fit_ds, &val_ds, &fold_cfg)?;
            Ok(FoldResult {
                fold,
                train_size: fit_ds.len(),
                val_size: val_ds.len(),
                test_size: test.len(),
                best_epoch: history.best_epoch,
                stopped_epoch: history.stopped_epoch,
                metrics: evaluate(&params, &test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let metrics: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    Ok(CvSummary {
        k,
        seed: cfg.seed,
        stratified: plan.stratified,
        mean: MeanMetrics::of(&metrics),
        folds,
    })
}
