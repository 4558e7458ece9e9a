use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmeans::{init_semantic_prototypes, init_sentiment_prototypes, KMeansConfig};
use crate::losses::{evaluate_loss, LossBreakdown, LossWeights};
use crate::metrics::{evaluate, Metrics};
use crate::network::{IncongruityHead, ModelParams, OutputHead, PrototypeBank, TaggedBank};
use crate::seed;
use crate::store::{Dataset, EmbeddingRecord};
use crate::train::adam::AdamState;
use crate::train::grad::gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Micro-batches whose averaged gradient makes one optimizer step.
    pub accum_steps: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub k_per_class: usize,
    pub k_per_polarity: usize,
    pub sigma_semantic: f64,
    pub sigma_sentiment: f64,
    pub eps: f64,
    pub hidden: usize,
    pub kmeans: KMeansConfig,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            accum_steps: 1,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            weights: LossWeights::default(),
            k_per_class: 8,
            k_per_polarity: 4,
            sigma_semantic: 2.0,
            sigma_sentiment: 2.0,
            eps: 1e-4,
            hidden: 64,
            kmeans: KMeansConfig::default(),
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Optimizer settings of the original full-scale experiments: Adam at
    /// 1e-4, micro-batches of 60 and 30 accumulated micro-batches per step.
    pub fn paper_settings() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 60,
            accum_steps: 30,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("accum_steps", self.accum_steps),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
            ("k_per_class", self.k_per_class),
            ("k_per_polarity", self.k_per_polarity),
            ("hidden", self.hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [
            ("lr", self.lr),
            ("sigma_semantic", self.sigma_semantic),
            ("sigma_sentiment", self.sigma_sentiment),
            ("eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        self.weights.validate()
    }
}

/// Prototypes from per-class / per-polarity k-means, output weights from a
/// seeded uniform(-0.01, 0.01), incongruity head with Glorot-uniform first
/// layer and small second layer.
pub fn init_params(train: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let semantic = init_semantic_prototypes(train, cfg.k_per_class, cfg.seed, cfg.kmeans)?;
    let sentiment = init_sentiment_prototypes(train, cfg.k_per_polarity, cfg.seed, cfg.kmeans)?;
    let (k_a, k_b) = (semantic.len(), sentiment.len());

    let mut rng = seed::rng(cfg.seed, seed::stream::HEAD_INIT);
    let mut small = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect() };
    let theta = small(k_a + 2 * k_b);
    let bias = small(1)[0];

    let mut rng = seed::rng(cfg.seed ^ 0x5eed, seed::stream::HEAD_INIT);
    let limit = (6.0 / (k_b + cfg.hidden) as f64).sqrt();
    let w1 = (0..k_b)
        .map(|_| (0..cfg.hidden).map(|_| rng.gen_range(-limit..limit)).collect())
        .collect();
    let limit2 = (6.0 / (cfg.hidden + 1) as f64).sqrt();
    let w2 = (0..cfg.hidden).map(|_| rng.gen_range(-limit2..limit2)).collect();

    let params = ModelParams {
        bank: PrototypeBank {
            semantic: TaggedBank::new(semantic, cfg.sigma_semantic),
            sentiment: TaggedBank::new(sentiment, cfg.sigma_sentiment),
            eps: cfg.eps,
        },
        head: OutputHead { theta, bias },
        inco_head: IncongruityHead {
            w1,
            b1: vec![0.0; cfg.hidden],
            w2,
            b2: 0.0,
        },
    };
    params.validate()?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub train_metrics: Metrics,
    pub val_metrics: Metrics,
    /// Incongruity weight in effect (zero when the ablation switch is on).
    pub lambda_inco: f64,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Last epoch that ran.
    pub stopped_epoch: usize,
    pub stopped_early: bool,
    /// Excluded from equality-sensitive outputs; varies run to run.
    pub wall_clock_secs: f64,
}

fn refs(ds: &Dataset) -> Vec<&EmbeddingRecord> {
    ds.records.iter().collect()
}

fn average_into(acc: &mut [f64], count: usize) {
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|g| *g *= inv);
}

/// Initializes from `train_ds` and runs [`fit`].
pub fn train(train_ds: &Dataset, val_ds: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    let counts = train_ds.class_counts();
    if counts.contains(&0) {
        return Err(Error::Data(format!("training data must contain both classes, got {counts:?}")));
    }
    let params = init_params(train_ds, cfg)?;
    fit(params, train_ds, val_ds, cfg)
}

/// Trains `params` with Adam on seeded shuffled micro-batches, stepping once
/// per `accum_steps` micro-batches with their averaged gradient. Stops after
/// `patience` epochs without a strictly lower validation total and returns
/// the parameters of the best validation epoch.
pub fn fit(
    mut params: ModelParams,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    params.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Data("training and validation sets must be nonempty".into()));
    }
    let start = Instant::now();
    let w = cfg.weights;
    let train_refs = refs(train_ds);
    let val_refs = refs(val_ds);

    let mut adam = AdamState::new(params.n_params(), cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.adam_eps;
    let mut rng = seed::rng(cfg.seed, seed::stream::SHUFFLE);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc: Option<Vec<f64>> = None;
        let mut pending = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EmbeddingRecord> = chunk.iter().map(|&i| train_refs[i]).collect();
            let g = gradients(&batch, &params, &w)?.to_flat();
            match acc.as_mut() {
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                None => acc = Some(g),
            }
            pending += 1;
            if pending == cfg.accum_steps {
                let mut g = acc.take().unwrap();
                average_into(&mut g, pending);
                step(&mut params, &mut adam, &g);
                pending = 0;
            }
        }
        if let Some(mut g) = acc.take() {
            average_into(&mut g, pending);
            step(&mut params, &mut adam, &g);
        }

        let train_loss = evaluate_loss(&params, &train_refs, &w)?;
        let val_loss = evaluate_loss(&params, &val_refs, &w)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch}: train={train_loss:?} val={val_loss:?} \
                 |theta|_1={} bias={}",
                params.head.theta.iter().map(|t| t.abs()).sum::<f64>(),
                params.head.bias
            )));
        }
        epochs.push(EpochRecord {
            epoch,
            train: train_loss,
            val: val_loss,
            train_metrics: evaluate(&params, train_ds)?,
            val_metrics: evaluate(&params, val_ds)?,
            lambda_inco: w.inco,
            optimizer_steps: adam.t,
        });
        log::debug!(
            "epoch {epoch}: train {:.6} val {:.6}",
            train_loss.total,
            val_loss.total
        );

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss.total < *b);
        if improved {
            best = Some((val_loss.total, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let stopped_epoch = epochs.len();
    let (best_val_loss, best_epoch, best_params) = best.expect("max_epochs >= 1");
    Ok((
        best_params,
        TrainHistory {
            epochs,
            best_epoch,
            best_val_loss,
            stopped_epoch,
            stopped_early,
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

fn step(params: &mut ModelParams, adam: &mut AdamState, grad: &[f64]) {
    let mut flat = params.to_flat();
    adam.step(&mut flat, grad);
    params.set_flat(&flat);
}
