//! Expert-rating adaptation.
//!
//! Low-rank adapters on every encoder layer and a 5-way head on the
//! per-reaction encoding turn a frozen [`ScoringModel`] into a per-reaction
//! points classifier. Route ratings aggregate expected points by `min` or
//! `avg`, and tiers follow from the rounded rating.

mod io;
mod labels;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ReactionFeature, RouteFeatures};
use crate::hash::derive_seed;
use crate::model::nn::{
    adamw_update, nonzeros, quantize, relu_in_place, AdamHyper, Dense, OptState,
};
use crate::model::{ModelError, PreparedReaction, ScoringModel};
pub use io::{sha256_hex, ADAPTER_FORMAT_VERSION};
pub use labels::{parse_labels_csv, write_labels_csv, ExpertLabel};

pub const N_POINTS: usize = 5;
pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("points {0} outside [1, 5]")]
    Points(f64),
    #[error("cannot rate a route with no reaction points")]
    EmptyRating,
    #[error("label error: {0}")]
    Label(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite fine-tuning loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("adapter file: {0}")]
    Format(String),
    #[error("adapter was trained on base {expected} but the given base hashes to {found}")]
    BaseMismatch { expected: String, found: String },
    #[error("invalid fine-tuning configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Min,
    Avg,
}

/// What the cross-entropy is computed against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTarget {
    /// The route label, via the aggregation rule.
    #[default]
    Route,
    /// Per-reaction expert points; every label must carry them.
    Reaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Good,
    Plausible,
    Bad,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Good, Tier::Plausible, Tier::Bad];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_points(points: u8) -> Result<Tier, FinetuneError> {
        match points {
            5 => Ok(Tier::Good),
            3 | 4 => Ok(Tier::Plausible),
            1 | 2 => Ok(Tier::Bad),
            p => Err(FinetuneError::Points(f64::from(p))),
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Good => "Good",
            Tier::Plausible => "Plausible",
            Tier::Bad => "Bad",
        })
    }
}

impl std::str::FromStr for Tier {
    type Err = FinetuneError;

    fn from_str(s: &str) -> Result<Tier, FinetuneError> {
        Tier::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FinetuneError::Label(format!("unknown tier '{s}'")))
    }
}

/// Nearest integer, halves rounding up.
pub fn round_points(points: f64) -> Result<u8, FinetuneError> {
    if !(1.0..=5.0).contains(&points) {
        return Err(FinetuneError::Points(points));
    }
    Ok((points + 0.5).floor() as u8)
}

pub fn tier(points: f64) -> Result<Tier, FinetuneError> {
    Tier::from_points(round_points(points)?)
}

pub fn route_rating(points: &[f64], aggregation: Aggregation) -> Result<f64, FinetuneError> {
    if points.is_empty() {
        return Err(FinetuneError::EmptyRating);
    }
    Ok(match aggregation {
        Aggregation::Min => points.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Avg => points.iter().sum::<f64>() / points.len() as f64,
    })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

/// `Σ k · softmax(logits)_k` with classes indexed 1..=5.
pub fn expected_points(logits: &[f64]) -> f64 {
    softmax(logits)
        .iter()
        .enumerate()
        .map(|(k, p)| (k + 1) as f64 * p)
        .sum()
}

/// `-log softmax(logits)[class]`, stable.
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[class]
}

/// Fine-tuning settings (`lora.*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub agg: Aggregation,
    pub loss: LossTarget,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 8,
            alpha: 16.0,
            agg: Aggregation::Min,
            loss: LossTarget::Route,
            epochs: 150,
            batch_size: 16,
            lr: 3e-3,
            weight_decay: 0.0,
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<(), FinetuneError> {
        if self.rank == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(FinetuneError::Config(
                "rank, epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.lr > 0.0 && self.weight_decay >= 0.0) {
            return Err(FinetuneError::Config(
                "alpha and lr must be positive, weight_decay nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamHyper::default()
        }
    }
}

/// `ΔW = (α / r) · B A` for one layer. `a` is `r × in_dim` and `b` is
/// `out_dim × r`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub in_dim: usize,
    pub out_dim: usize,
    pub rank: usize,
    pub alpha: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LoraAdapter {
    pub fn zeros(in_dim: usize, out_dim: usize, rank: usize, alpha: f64) -> LoraAdapter {
        LoraAdapter {
            in_dim,
            out_dim,
            rank,
            alpha,
            a: vec![0.0; rank * in_dim],
            b: vec![0.0; out_dim * rank],
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `A x` for sparse `x`.
    fn project(&self, x: &[(usize, f64)]) -> Vec<f64> {
        (0..self.rank)
            .map(|k| {
                x.iter()
                    .map(|&(i, v)| self.a[k * self.in_dim + i] * v)
                    .sum()
            })
            .collect()
    }

    /// `(α / r) B u`.
    fn expand(&self, u: &[f64]) -> Vec<f64> {
        let s = self.scale();
        (0..self.out_dim)
            .map(|j| {
                s * (0..self.rank)
                    .map(|k| self.b[j * self.rank + k] * u[k])
                    .sum::<f64>()
            })
            .collect()
    }
}

fn add_nonzero(y: &mut [f64], delta: &[f64]) {
    for (v, d) in y.iter_mut().zip(delta) {
        if *d != 0.0 {
            *v += d;
        }
    }
}

/// `W x + bias + (α / r) B (A x)`. A zero update leaves the base output
/// bit-for-bit unchanged.
pub fn adapted_layer(
    layer: &Dense,
    adapter: &LoraAdapter,
    x: &[f64],
) -> Result<Vec<f64>, FinetuneError> {
    if x.len() != layer.in_dim || adapter.in_dim != layer.in_dim || adapter.out_dim != layer.out_dim
    {
        return Err(FinetuneError::Shape(format!(
            "layer {}x{}, adapter {}x{}, input {}",
            layer.in_dim,
            layer.out_dim,
            adapter.in_dim,
            adapter.out_dim,
            x.len()
        )));
    }
    let sparse = nonzeros(x);
    let mut y = layer.forward(&sparse);
    add_nonzero(&mut y, &adapter.expand(&adapter.project(&sparse)));
    Ok(y)
}

struct AdaptedTrace {
    inputs: Vec<Vec<(usize, f64)>>,
    projections: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl AdaptedTrace {
    fn encoding(&self) -> &[f64] {
        self.outputs.last().expect("layers")
    }
}

/// Gradients of the trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneGrads {
    pub adapters: Vec<LoraAdapter>,
    pub head: Dense,
}

impl FinetuneGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for a in &self.adapters {
            out.push(&a.a);
            out.push(&a.b);
        }
        out.extend(self.head.params());
        out
    }
}

/// Per-route prediction of a fine-tuned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePrediction {
    pub predicted_ted: f64,
    /// Expected points per reaction, in tie-break key order.
    pub per_reaction_points: Vec<f64>,
    pub rating: f64,
    pub points: u8,
    pub tier: Tier,
}

/// One labelled route for fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSample {
    pub features: RouteFeatures,
    pub label: ExpertLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetunedModel {
    pub base: ScoringModel,
    pub adapters: Vec<LoraAdapter>,
    /// Encoding width to [`N_POINTS`] logits; output `k` is `k + 1` points.
    pub head: Dense,
    pub config: LoraConfig,
}

impl FinetunedModel {
    /// Adapters with Gaussian `A` and zero `B`, and a zero head.
    pub fn new(
        base: ScoringModel,
        config: LoraConfig,
        seed: u64,
    ) -> Result<FinetunedModel, FinetuneError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "lora.init"));
        let normal = Normal::new(0.0, LORA_INIT_STD).expect("valid std");
        let adapters = base
            .encoder
            .iter()
            .map(|layer| {
                let mut ad =
                    LoraAdapter::zeros(layer.in_dim, layer.out_dim, config.rank, config.alpha);
                for v in &mut ad.a {
                    *v = normal.sample(&mut rng);
                }
                quantize(&mut ad.a);
                ad
            })
            .collect();
        let head = Dense::zeros(base.config.encoding_dim(), N_POINTS);
        Ok(FinetunedModel {
            base,
            adapters,
            head,
            config,
        })
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for a in &self.adapters {
            out.push(&a.a);
            out.push(&a.b);
        }
        out.extend(self.head.params());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for a in &mut self.adapters {
            out.push(&mut a.a);
            out.push(&mut a.b);
        }
        out.extend(self.head.params_mut());
        out
    }

    /// `Σ r (in + out)` over adapters plus the head.
    pub fn trainable_parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> FinetuneGrads {
        FinetuneGrads {
            adapters: self
                .adapters
                .iter()
                .map(|a| LoraAdapter::zeros(a.in_dim, a.out_dim, a.rank, a.alpha))
                .collect(),
            head: Dense::zeros(self.head.in_dim, self.head.out_dim),
        }
    }

    fn trace(&self, r: &PreparedReaction) -> AdaptedTrace {
        let mut x = self.base.encoder_input(r);
        let n = self.base.encoder.len();
        let mut t = AdaptedTrace {
            inputs: Vec::with_capacity(n),
            projections: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        for (layer, ad) in self.base.encoder.iter().zip(&self.adapters) {
            let mut y = layer.forward(&x);
            let u = ad.project(&x);
            add_nonzero(&mut y, &ad.expand(&u));
            relu_in_place(&mut y);
            t.inputs.push(std::mem::replace(&mut x, nonzeros(&y)));
            t.projections.push(u);
            t.outputs.push(y);
        }
        t
    }

    /// Adapted per-reaction encoding `f̃(x)`.
    pub fn reaction_encoding(&self, x: &ReactionFeature) -> Result<Vec<f64>, FinetuneError> {
        let r = self.base.prepare_reaction(x)?;
        Ok(self.trace(&r).encoding().to_vec())
    }

    pub fn reaction_points_logits(
        &self,
        x: &ReactionFeature,
    ) -> Result<[f64; N_POINTS], FinetuneError> {
        let r = self.base.prepare_reaction(x)?;
        Ok(self.logits(self.trace(&r).encoding()))
    }

    fn logits(&self, enc: &[f64]) -> [f64; N_POINTS] {
        let v = self.head.forward(&nonzeros(enc));
        [v[0], v[1], v[2], v[3], v[4]]
    }

    pub fn predict(&self, route: &RouteFeatures) -> Result<RoutePrediction, FinetuneError> {
        let reactions = self.base.prepare_reactions(&route.reactions)?;
        let per_reaction_points: Vec<f64> = reactions
            .iter()
            .map(|r| expected_points(&self.logits(self.trace(r).encoding())))
            .collect();
        let rating = route_rating(&per_reaction_points, self.config.agg)?;
        let points = round_points(rating.clamp(1.0, 5.0))?;
        Ok(RoutePrediction {
            predicted_ted: self.base.predict(route)?,
            per_reaction_points,
            rating,
            points,
            tier: Tier::from_points(points)?,
        })
    }

    /// Back-propagate `dlogits` for one reaction into `grads`.
    fn backward_reaction(&self, trace: &AdaptedTrace, dlogits: &[f64], grads: &mut FinetuneGrads) {
        let enc = trace.encoding();
        let enc_sparse = nonzeros(enc);
        self.head.accumulate(&enc_sparse, dlogits, &mut grads.head);
        let mut dy = vec![0.0; enc.len()];
        for &(i, _) in &enc_sparse {
            dy[i] = self.head.input_grad(i, dlogits);
        }
        for l in (0..self.base.encoder.len()).rev() {
            let layer = &self.base.encoder[l];
            let ad = &self.adapters[l];
            let g = &mut grads.adapters[l];
            for (d, &o) in dy.iter_mut().zip(&trace.outputs[l]) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
            let s = ad.scale();
            let u = &trace.projections[l];
            let mut du = vec![0.0; ad.rank];
            for j in 0..ad.out_dim {
                if dy[j] == 0.0 {
                    continue;
                }
                for k in 0..ad.rank {
                    g.b[j * ad.rank + k] += s * dy[j] * u[k];
                    du[k] += s * ad.b[j * ad.rank + k] * dy[j];
                }
            }
            let x = &trace.inputs[l];
            for k in 0..ad.rank {
                if du[k] == 0.0 {
                    continue;
                }
                for &(i, v) in x {
                    g.a[k * ad.in_dim + i] += du[k] * v;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.in_dim];
            for &(i, _) in x {
                let adapter_part: f64 = (0..ad.rank).map(|k| ad.a[k * ad.in_dim + i] * du[k]).sum();
                prev[i] = layer.input_grad(i, &dy) + adapter_part;
            }
            dy = prev;
        }
    }

    /// Loss for one route, accumulating `scale ×` its gradient.
    fn route_loss(
        &self,
        reactions: &[PreparedReaction],
        label: &ExpertLabel,
        scale: f64,
        grads: &mut FinetuneGrads,
    ) -> Result<f64, FinetuneError> {
        let traces: Vec<AdaptedTrace> = reactions.iter().map(|r| self.trace(r)).collect();
        let logits: Vec<[f64; N_POINTS]> =
            traces.iter().map(|t| self.logits(t.encoding())).collect();
        // (reaction index, target class, weight)
        let targets: Vec<(usize, usize, f64)> = match (self.config.loss, self.config.agg) {
            (LossTarget::Reaction, _) => {
                let steps = label.step_points.as_ref().ok_or_else(|| {
                    FinetuneError::Label(format!("{} has no step points", label.route_id))
                })?;
                if steps.len() != reactions.len() {
                    return Err(FinetuneError::Label(format!(
                        "{}: {} step points for {} reactions",
                        label.route_id,
                        steps.len(),
                        reactions.len()
                    )));
                }
                let w = 1.0 / steps.len() as f64;
                steps
                    .iter()
                    .enumerate()
                    .map(|(r, &p)| (r, usize::from(p) - 1, w))
                    .collect()
            }
            (LossTarget::Route, Aggregation::Min) => {
                let mut best = 0;
                let mut best_e = f64::INFINITY;
                for (r, l) in logits.iter().enumerate() {
                    let e = expected_points(l);
                    if e < best_e {
                        best = r;
                        best_e = e;
                    }
                }
                vec![(best, usize::from(label.points) - 1, 1.0)]
            }
            (LossTarget::Route, Aggregation::Avg) => {
                let w = 1.0 / reactions.len() as f64;
                (0..reactions.len())
                    .map(|r| (r, usize::from(label.points) - 1, w))
                    .collect()
            }
        };
        let mut loss = 0.0;
        for (r, class, w) in targets {
            loss += w * cross_entropy(&logits[r], class);
            let mut d = softmax(&logits[r]);
            d[class] -= 1.0;
            for v in &mut d {
                *v *= w * scale;
            }
            self.backward_reaction(&traces[r], &d, grads);
        }
        Ok(loss)
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// the adapters and head only.
    pub fn finetune_loss(
        &self,
        batch: &[(&RouteFeatures, &ExpertLabel)],
    ) -> Result<(f64, FinetuneGrads), FinetuneError> {
        let prepared = batch
            .iter()
            .map(|(f, l)| Ok((self.base.prepare_reactions(&f.reactions)?, *l)))
            .collect::<Result<Vec<_>, FinetuneError>>()?;
        let refs: Vec<(&[PreparedReaction], &ExpertLabel)> =
            prepared.iter().map(|(r, l)| (r.as_slice(), *l)).collect();
        self.loss_prepared(&refs)
    }

    fn loss_prepared(
        &self,
        batch: &[(&[PreparedReaction], &ExpertLabel)],
    ) -> Result<(f64, FinetuneGrads), FinetuneError> {
        if batch.is_empty() {
            return Err(FinetuneError::Model(ModelError::EmptySplit("batch")));
        }
        let mut grads = self.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (reactions, label) in batch {
            label.check()?;
            loss += self.route_loss(reactions, label, scale, &mut grads)?;
        }
        Ok((loss * scale, grads))
    }

    pub fn apply_adamw(&mut self, grads: &FinetuneGrads, opt: &mut OptState) {
        adamw_update(self.tensors_mut(), grads.tensors(), opt);
        for t in self.tensors_mut() {
            quantize(t);
        }
    }

    pub fn opt_state(&self) -> OptState {
        let sizes: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        OptState::new(self.config.adam(), &sizes)
    }
}

/// Adapt `base` to expert labels. The base model is cloned and never
/// modified.
pub fn finetune_train(
    base: &ScoringModel,
    labeled: &[FinetuneSample],
    config: LoraConfig,
    seed: u64,
) -> Result<FinetunedModel, FinetuneError> {
    if labeled.is_empty() {
        return Err(FinetuneError::Model(ModelError::EmptySplit("fine-tuning")));
    }
    let mut fm = FinetunedModel::new(base.clone(), config, seed)?;
    let prepared = labeled
        .iter()
        .map(|s| {
            s.label.check()?;
            Ok(fm.base.prepare_reactions(&s.features.reactions)?)
        })
        .collect::<Result<Vec<_>, FinetuneError>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "finetune.shuffle"));
    let mut opt = fm.opt_state();
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&[PreparedReaction], &ExpertLabel)> = chunk
                .iter()
                .map(|&i| (prepared[i].as_slice(), &labeled[i].label))
                .collect();
            let (loss, grads) = fm.loss_prepared(&batch)?;
            if !loss.is_finite() {
                return Err(FinetuneError::NonFinite { epoch, batch: b });
            }
            fm.apply_adamw(&grads, &mut opt);
        }
    }
    Ok(fm)
}
