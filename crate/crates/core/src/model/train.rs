use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{quantize, AdamHyper};
use super::{ModelConfig, ModelError, NormStats, PreparedRoute, ScoringModel};
use crate::eval::{mse, select_best_snapshot, spearman};
use crate::features::{EmbeddingMode, RouteFeatures};
use crate::hash::derive_seed;

/// One route with its regression label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub features: RouteFeatures,
    pub label: f64,
}

/// Optimiser schedule (`train.*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        let a = AdamHyper::default();
        TrainHyper {
            epochs: 60,
            batch_size: 64,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            weight_decay: a.weight_decay,
        }
    }
}

impl TrainHyper {
    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        let a = self.adam();
        let ok = a.lr > 0.0
            && (0.0..1.0).contains(&a.beta1)
            && (0.0..1.0).contains(&a.beta2)
            && a.eps > 0.0
            && a.weight_decay >= 0.0;
        if !ok {
            return Err(ModelError::Config(
                "optimizer constants out of range".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_spearman: f64,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub model: ScoringModel,
    pub history: Vec<EpochRecord>,
    /// Epoch of the returned snapshot.
    pub best_epoch: usize,
}

fn evaluate(model: &ScoringModel, routes: &[PreparedRoute], labels: &[f64]) -> (f64, f64) {
    let preds: Vec<f64> = routes
        .iter()
        .map(|r| model.raw_prepared(r).max(0.0))
        .collect();
    let err = mse(&preds, labels).unwrap_or(f64::NAN);
    let rho = spearman(&preds, labels).unwrap_or(f64::NAN);
    (err, rho)
}

/// Train from scratch on `train`, selecting the epoch with the highest
/// validation Spearman correlation between predicted and true labels.
pub fn pretrain(
    train: &[TrainSample],
    val: &[TrainSample],
    config: &ModelConfig,
    embedding: EmbeddingMode,
    nbits: usize,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<Pretrained, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(ModelError::EmptySplit("validation"));
    }
    hyper.validate()?;
    let vocab: Vec<String> = train
        .iter()
        .flat_map(|s| s.features.reactions.iter().map(|x| x.class_id.clone()))
        .collect();
    let mut model = ScoringModel::new(config.clone(), embedding, vocab, nbits, seed)?;
    model.norm_stats = Some(NormStats::fit(train.iter().map(|s| &s.features)));
    let label_mean = train.iter().map(|s| s.label).sum::<f64>() / train.len() as f64;
    let out = model.scorer.last_mut().expect("output layer");
    out.bias[0] = label_mean;
    quantize(&mut out.bias);

    let prep = |set: &[TrainSample]| -> Result<Vec<PreparedRoute>, ModelError> {
        set.iter()
            .map(|s| model.prepare_route(&s.features))
            .collect()
    };
    let train_routes = prep(train)?;
    let val_routes = prep(val)?;
    let train_labels: Vec<f64> = train.iter().map(|s| s.label).collect();
    let val_labels: Vec<f64> = val.iter().map(|s| s.label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "pretrain.shuffle"));
    let mut opt = model.opt_state(hyper.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut best: Option<(f64, ScoringModel)> = None;
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<(&PreparedRoute, f64)> = chunk
                .iter()
                .map(|&i| (&train_routes[i], train_labels[i]))
                .collect();
            let (loss, grads) = model.forward_backward_prepared(&batch);
            if !loss.is_finite() {
                return Err(ModelError::NonFinite { epoch, batch: b });
            }
            total += loss * chunk.len() as f64;
            model.apply_adamw(&grads, &mut opt);
        }
        let (val_mse, val_spearman) = evaluate(&model, &val_routes, &val_labels);
        history.push(EpochRecord {
            epoch,
            train_mse: total / train.len() as f64,
            val_mse,
            val_spearman,
        });
        let improves = match &best {
            None => true,
            Some((score, _)) => better(val_spearman, *score),
        };
        if improves {
            best = Some((val_spearman, model.clone()));
        }
    }
    let curve: Vec<(usize, f64)> = history.iter().map(|h| (h.epoch, h.val_spearman)).collect();
    let best_epoch = select_best_snapshot(&curve).expect("non-empty history");
    let (_, model) = best.expect("at least one epoch");
    Ok(Pretrained {
        model,
        history,
        best_epoch,
    })
}

/// Strict improvement, with NaN below every number.
fn better(candidate: f64, incumbent: f64) -> bool {
    match (candidate.is_nan(), incumbent.is_nan()) {
        (true, _) => false,
        (false, true) => true,
        (false, false) => candidate > incumbent,
    }
}
