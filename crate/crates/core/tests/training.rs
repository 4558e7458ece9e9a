use protosarc::losses::LossWeights;
use protosarc::metrics::evaluate;
use protosarc::store::{stratified_holdout, Dataset, EmbeddingRecord};
use protosarc::synth::{planted_semantic_task, PlantedConfig};
use protosarc::train::{cross_validate, fit, init_params, train, TrainConfig};

fn split(ds: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let (fit_idx, val_idx) = stratified_holdout(ds, 0.1, seed);
    (ds.subset(&fit_idx, "fit"), ds.subset(&val_idx, "val"))
}

#[test]
fn separable_planted_task_is_fit_within_fifty_epochs() {
    let ds = planted_semantic_task(
        &PlantedConfig {
            n: 200,
            clusters_per_class: 1,
            ..PlantedConfig::default()
        },
        1,
    );
    let (tr, va) = split(&ds, 1);
    let cfg = TrainConfig {
        seed: 1,
        max_epochs: 50,
        ..TrainConfig::default()
    };
    let (params, history) = train(&tr, &va, &cfg).unwrap();
    assert!(history.stopped_epoch <= 50);
    let acc = evaluate(&params, &tr).unwrap().accuracy;
    assert!(acc >= 0.99, "training accuracy {acc}");
}

#[test]
fn training_loss_descends_early_at_higher_rate() {
    let ds = planted_semantic_task(&PlantedConfig::default(), 2);
    let (tr, va) = split(&ds, 2);
    let cfg = TrainConfig {
        seed: 2,
        lr: 1e-3,
        max_epochs: 10,
        patience: 10,
        ..TrainConfig::default()
    };
    let (_, history) = train(&tr, &va, &cfg).unwrap();
    let losses: Vec<f64> = history.epochs.iter().map(|e| e.train.total).collect();
    assert_eq!(losses.len(), 10);
    let smoothed: Vec<f64> = losses.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect();
    assert!(smoothed.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn patience_one_stops_after_first_worse_epoch() {
    let ds = planted_semantic_task(
        &PlantedConfig {
            n: 80,
            d_s: 3,
            d_m: 2,
            ..PlantedConfig::default()
        },
        3,
    );
    // validation labels flipped: every step that fits the training set
    // raises validation loss
    let flipped: Vec<EmbeddingRecord> = ds
        .records
        .iter()
        .map(|r| EmbeddingRecord {
            y: 1 - r.y,
            z_ip: if r.y == 1 { r.z_ep } else { 1 - r.z_ep },
            ..r.clone()
        })
        .collect();
    let val = Dataset::new(ds.manifest.clone(), flipped).unwrap();
    let cfg = TrainConfig {
        seed: 3,
        lr: 1e-2,
        patience: 1,
        max_epochs: 20,
        k_per_class: 2,
        k_per_polarity: 2,
        hidden: 4,
        weights: LossWeights {
            div: 0.0,
            cls_sep: 0.0,
            inco: 0.0,
            l1: 0.0,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    };
    let init = init_params(&ds, &cfg).unwrap();
    let (best, history) = fit(init.clone(), &ds, &val, &cfg).unwrap();
    assert!(history.epochs[1].val.total > history.epochs[0].val.total);
    assert_eq!(history.stopped_epoch, 2);
    assert!(history.stopped_early);
    assert_eq!(history.best_epoch, 1);
    let (after_one, _) = fit(init, &ds, &val, &TrainConfig { max_epochs: 1, ..cfg }).unwrap();
    assert_eq!(best, after_one);
}

#[test]
fn crossval_folds_and_mean() {
    let ds = planted_semantic_task(
        &PlantedConfig {
            n: 100,
            ..PlantedConfig::default()
        },
        4,
    );
    let cfg = TrainConfig {
        seed: 4,
        max_epochs: 3,
        k_per_class: 2,
        k_per_polarity: 2,
        hidden: 4,
        ..TrainConfig::default()
    };
    let a = cross_validate(&ds, &cfg, 5).unwrap();
    assert_eq!(a.folds.len(), 5);
    assert!(a.folds.iter().all(|f| f.test_size == 20));
    let mean_f1 = a.folds.iter().map(|f| f.metrics.f1).sum::<f64>() / 5.0;
    assert!((a.mean.f1 - mean_f1).abs() < 1e-12);
    assert_eq!(a, cross_validate(&ds, &cfg, 5).unwrap());
}
