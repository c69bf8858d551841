//! Set-based route scoring model.
//!
//! Each reaction feature is embedded by a shared encoder `f`; the route
//! encoding is the sum of reaction encodings taken in ascending tie-break
//! key order. The scorer `σ` maps the encoding, normalised route
//! properties and the folded target fingerprint to a predicted distance.

mod io;
pub mod nn;
mod train;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::Fingerprint;
use crate::features::{EmbeddingMode, ReactionFeature, RouteFeatures, RouteProperties};
use crate::hash::derive_seed;
pub(crate) use io::check_version;
pub use io::TensorRecord;
pub use nn::{adamw_update, AdamHyper, Dense, OptState};
use nn::{nonzeros, quantize, relu_in_place};
pub use train::{pretrain, EpochRecord, Pretrained, TrainHyper, TrainSample};

pub const FORMAT_VERSION: u32 = 1;
pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("feature does not fit the model: {0}")]
    Dimension(String),
    #[error("cannot encode an empty reaction set")]
    EmptySet,
    #[error("model has no normalisation statistics")]
    Uninitialized,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Architecture (`model.*`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub class_embed_dim: usize,
    pub fp_fold_dim: usize,
    pub rxn_embed_fold_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub scorer_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            class_embed_dim: 16,
            fp_fold_dim: 256,
            rxn_embed_fold_dim: 256,
            encoder_hidden: vec![256, 256],
            scorer_hidden: vec![256, 128],
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    /// Check widths, and that fold widths divide `nbits`.
    pub fn validate(&self, nbits: usize) -> Result<(), ModelError> {
        if self.class_embed_dim == 0 {
            return Err(ModelError::Config(
                "class_embed_dim must be at least 1".into(),
            ));
        }
        if self.encoder_hidden.is_empty() {
            return Err(ModelError::Config(
                "encoder_hidden needs at least one layer".into(),
            ));
        }
        if self
            .encoder_hidden
            .iter()
            .chain(&self.scorer_hidden)
            .any(|&w| w == 0)
        {
            return Err(ModelError::Config("layer widths must be at least 1".into()));
        }
        for (name, dim) in [
            ("fp_fold_dim", self.fp_fold_dim),
            ("rxn_embed_fold_dim", self.rxn_embed_fold_dim),
        ] {
            if !dim.is_power_of_two() || dim > nbits || !nbits.is_multiple_of(dim) {
                return Err(ModelError::Config(format!(
                    "{name} = {dim} must be a power of two dividing {nbits}"
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self, embedding: EmbeddingMode) -> usize {
        let rxn = match embedding {
            EmbeddingMode::None => 0,
            _ => self.rxn_embed_fold_dim,
        };
        self.class_embed_dim + 1 + self.fp_fold_dim + rxn
    }

    pub fn encoding_dim(&self) -> usize {
        *self.encoder_hidden.last().expect("validated non-empty")
    }

    pub fn scorer_input_dim(&self) -> usize {
        self.encoding_dim() + 3 + self.fp_fold_dim
    }
}

/// Training-split statistics. `(c, v, e)` are standardised with these;
/// the prior-points entries are informational since prior points enter
/// the model as `x / 6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub prior_mean: f64,
    pub prior_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt().max(NORM_FLOOR))
}

impl NormStats {
    /// Population statistics over `routes`.
    pub fn fit<'a>(routes: impl IntoIterator<Item = &'a RouteFeatures>) -> NormStats {
        let routes: Vec<&RouteFeatures> = routes.into_iter().collect();
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            let (m, s) = mean_std(routes.iter().map(|r| props_array(&r.props)[k]));
            mean[k] = m;
            std[k] = s;
        }
        let (prior_mean, prior_std) = mean_std(
            routes
                .iter()
                .flat_map(|r| r.reactions.iter().map(|x| f64::from(x.prior_points))),
        );
        NormStats {
            mean,
            std,
            prior_mean,
            prior_std,
        }
    }

    pub fn normalize(&self, props: &RouteProperties) -> [f64; 3] {
        let raw = props_array(props);
        [0, 1, 2].map(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}

fn props_array(p: &RouteProperties) -> [f64; 3] {
    [p.cost, f64::from(p.volume), p.complexity]
}

/// Reaction feature reduced to a class row and the sparse remainder of the
/// encoder input (indices already offset past the class embedding).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PreparedReaction {
    pub class_idx: usize,
    pub rest: Vec<(usize, f64)>,
    pub key: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PreparedRoute {
    /// Ascending tie-break key.
    pub reactions: Vec<PreparedReaction>,
    pub props: [f64; 3],
    /// Folded target bits, unoffset.
    pub target: Vec<usize>,
}

/// Per-layer sparse inputs and dense post-activation outputs.
#[derive(Debug, Clone, Default)]
pub(crate) struct Trace {
    pub inputs: Vec<Vec<(usize, f64)>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }
}

pub(crate) fn run_layers(layers: &[Dense], input: Vec<(usize, f64)>, relu_last: bool) -> Trace {
    let mut trace = Trace::default();
    let mut x = input;
    for (l, layer) in layers.iter().enumerate() {
        let mut y = layer.forward(&x);
        if relu_last || l + 1 < layers.len() {
            relu_in_place(&mut y);
        }
        trace.inputs.push(x);
        x = nonzeros(&y);
        trace.outputs.push(y);
    }
    trace
}

/// Back-propagate `dy` through a traced stack, accumulating into `grads`.
/// Returns the gradient at the first layer's pre-activation.
pub(crate) fn backprop_layers(
    layers: &[Dense],
    grads: &mut [Dense],
    trace: &Trace,
    mut dy: Vec<f64>,
    relu_last: bool,
) -> Vec<f64> {
    for l in (0..layers.len()).rev() {
        if relu_last || l + 1 < layers.len() {
            for (d, &o) in dy.iter_mut().zip(&trace.outputs[l]) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        layers[l].accumulate(&trace.inputs[l], &dy, &mut grads[l]);
        if l == 0 {
            return dy;
        }
        let mut prev = vec![0.0; layers[l].in_dim];
        for &(i, _) in &trace.inputs[l] {
            prev[i] = layers[l].input_grad(i, &dy);
        }
        dy = prev;
    }
    dy
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingMode,
    /// Sorted class ids; row `class_vocab.len()` is the fallback.
    pub class_vocab: Vec<String>,
    /// `(class_vocab.len() + 1) × class_embed_dim`, row-major.
    pub class_table: Vec<f64>,
    pub encoder: Vec<Dense>,
    pub scorer: Vec<Dense>,
    pub norm_stats: Option<NormStats>,
}

/// Gradients, shaped like the model's trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub class_table: Vec<f64>,
    pub encoder: Vec<Dense>,
    pub scorer: Vec<Dense>,
}

impl ModelGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.class_table.as_slice()];
        for layer in self.encoder.iter().chain(&self.scorer) {
            out.extend(layer.params());
        }
        out
    }
}

fn layer_stack(input: usize, widths: &[usize], rng: &mut ChaCha8Rng) -> Vec<Dense> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut prev = input;
    for &w in widths {
        layers.push(Dense::he_uniform(prev, w, rng));
        prev = w;
    }
    layers
}

impl ScoringModel {
    /// Fresh model. Weights are He-uniform, biases zero, all rounded to
    /// `f32`. Normalisation statistics are unset.
    pub fn new(
        config: ModelConfig,
        embedding: EmbeddingMode,
        class_vocab: Vec<String>,
        nbits: usize,
        seed: u64,
    ) -> Result<ScoringModel, ModelError> {
        config.validate(nbits)?;
        let mut vocab = class_vocab;
        vocab.sort();
        vocab.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "model.init"));
        let e = config.class_embed_dim;
        let table = Dense::he_uniform(vocab.len() + 1, e, &mut rng).weight;
        let encoder = layer_stack(
            config.input_dim(embedding),
            &config.encoder_hidden,
            &mut rng,
        );
        let mut scorer_widths = config.scorer_hidden.clone();
        scorer_widths.push(1);
        let scorer = layer_stack(config.scorer_input_dim(), &scorer_widths, &mut rng);
        let mut model = ScoringModel {
            config,
            embedding,
            class_vocab: vocab,
            class_table: table,
            encoder,
            scorer,
            norm_stats: None,
        };
        model.quantize();
        Ok(model)
    }

    pub(crate) fn quantize(&mut self) {
        for t in self.tensors_mut() {
            quantize(t);
        }
    }

    /// Trainable tensors: class table, then weight and bias of every
    /// encoder and scorer layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.class_table.as_slice()];
        for layer in self.encoder.iter().chain(&self.scorer) {
            out.extend(layer.params());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.class_table.as_mut_slice()];
        for layer in self.encoder.iter_mut().chain(self.scorer.iter_mut()) {
            out.extend(layer.params_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        let zeros = |layers: &[Dense]| {
            layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect()
        };
        ModelGrads {
            class_table: vec![0.0; self.class_table.len()],
            encoder: zeros(&self.encoder),
            scorer: zeros(&self.scorer),
        }
    }

    pub fn opt_state(&self, hyper: AdamHyper) -> OptState {
        let sizes: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        OptState::new(hyper, &sizes)
    }

    /// AdamW step followed by rounding the parameters to `f32`.
    pub fn apply_adamw(&mut self, grads: &ModelGrads, opt: &mut OptState) {
        adamw_update(self.tensors_mut(), grads.tensors(), opt);
        self.quantize();
    }

    pub fn class_index(&self, class_id: &str) -> usize {
        self.class_vocab
            .binary_search_by(|c| c.as_str().cmp(class_id))
            .unwrap_or(self.class_vocab.len())
    }

    pub(crate) fn class_row(&self, idx: usize) -> &[f64] {
        let e = self.config.class_embed_dim;
        &self.class_table[idx * e..(idx + 1) * e]
    }

    pub(crate) fn prepare_reaction(
        &self,
        x: &ReactionFeature,
    ) -> Result<PreparedReaction, ModelError> {
        let c = &self.config;
        let mut rest = Vec::new();
        let offset = c.class_embed_dim;
        if x.prior_points > 6 {
            return Err(ModelError::Dimension(format!(
                "prior points {} outside 0..=6",
                x.prior_points
            )));
        }
        if x.prior_points > 0 {
            rest.push((offset, f64::from(x.prior_points) / 6.0));
        }
        let fp_offset = offset + 1;
        rest.extend(
            fold_bits(&x.target_fp, c.fp_fold_dim)?
                .into_iter()
                .map(|b| (fp_offset + b, 1.0)),
        );
        let rxn_offset = fp_offset + c.fp_fold_dim;
        match (self.embedding, &x.rxn_embedding) {
            (EmbeddingMode::None, None) => {}
            (EmbeddingMode::None, Some(_)) => {
                return Err(ModelError::Dimension(
                    "reaction embedding given to a model without one".into(),
                ))
            }
            (mode, None) => {
                return Err(ModelError::Dimension(format!(
                    "model expects {mode:?} reaction embeddings"
                )))
            }
            (mode, Some(emb)) => {
                let dim = c.rxn_embed_fold_dim;
                if emb.dim < dim || emb.dim % dim != 0 {
                    return Err(ModelError::Dimension(format!(
                        "embedding width {} does not fold to {dim}",
                        emb.dim
                    )));
                }
                let mut folded: BTreeMap<usize, f64> = BTreeMap::new();
                for &(i, v) in &emb.entries {
                    let slot = folded.entry(i as usize % dim).or_insert(0.0);
                    match mode {
                        EmbeddingMode::Drfp => *slot = 1.0,
                        _ => *slot += v,
                    }
                }
                rest.extend(
                    folded
                        .into_iter()
                        .filter(|&(_, v)| v != 0.0)
                        .map(|(i, v)| (rxn_offset + i, v)),
                );
            }
        }
        Ok(PreparedReaction {
            class_idx: self.class_index(&x.class_id),
            rest,
            key: x.tiebreak_key,
        })
    }

    pub(crate) fn prepare_route(&self, route: &RouteFeatures) -> Result<PreparedRoute, ModelError> {
        let stats = self.norm_stats.as_ref().ok_or(ModelError::Uninitialized)?;
        Ok(PreparedRoute {
            reactions: self.prepare_reactions(&route.reactions)?,
            props: stats.normalize(&route.props),
            target: fold_bits(&route.target_fp, self.config.fp_fold_dim)?,
        })
    }

    pub(crate) fn prepare_reactions(
        &self,
        xs: &[ReactionFeature],
    ) -> Result<Vec<PreparedReaction>, ModelError> {
        if xs.is_empty() {
            return Err(ModelError::EmptySet);
        }
        let mut order: Vec<&ReactionFeature> = xs.iter().collect();
        order.sort_by(|a, b| {
            a.tiebreak_key
                .cmp(&b.tiebreak_key)
                .then_with(|| a.class_id.cmp(&b.class_id))
        });
        order
            .into_iter()
            .map(|x| self.prepare_reaction(x))
            .collect()
    }

    pub(crate) fn encoder_input(&self, r: &PreparedReaction) -> Vec<(usize, f64)> {
        let mut input: Vec<(usize, f64)> = self
            .class_row(r.class_idx)
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, &v)| (i, v))
            .collect();
        input.extend_from_slice(&r.rest);
        input
    }

    pub(crate) fn scorer_input(
        &self,
        enc: &[f64],
        props: &[f64; 3],
        target: &[usize],
    ) -> Vec<(usize, f64)> {
        let d = enc.len();
        let mut input = nonzeros(enc);
        input.extend(
            props
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (d + k, v)),
        );
        input.extend(target.iter().map(|&b| (d + 3 + b, 1.0)));
        input
    }

    /// Dense encoder input for one reaction.
    pub fn reaction_input(&self, x: &ReactionFeature) -> Result<Vec<f64>, ModelError> {
        let prepared = self.prepare_reaction(x)?;
        let mut v = vec![0.0; self.config.input_dim(self.embedding)];
        for (i, val) in self.encoder_input(&prepared) {
            v[i] = val;
        }
        Ok(v)
    }

    /// `f(x)` for a single reaction.
    pub fn reaction_encoding(&self, x: &ReactionFeature) -> Result<Vec<f64>, ModelError> {
        let prepared = self.prepare_reaction(x)?;
        Ok(
            run_layers(&self.encoder, self.encoder_input(&prepared), true)
                .outputs
                .pop()
                .expect("layers"),
        )
    }

    pub(crate) fn encode_prepared(&self, reactions: &[PreparedReaction]) -> (Vec<f64>, Vec<Trace>) {
        let mut enc = vec![0.0; self.config.encoding_dim()];
        let mut traces = Vec::with_capacity(reactions.len());
        for r in reactions {
            let trace = run_layers(&self.encoder, self.encoder_input(r), true);
            for (e, h) in enc.iter_mut().zip(trace.output()) {
                *e += h;
            }
            traces.push(trace);
        }
        (enc, traces)
    }

    /// Sum of reaction encodings in ascending tie-break key order.
    pub fn encode_route(&self, xs: &[ReactionFeature]) -> Result<Vec<f64>, ModelError> {
        Ok(self.encode_prepared(&self.prepare_reactions(xs)?).0)
    }

    /// Unclamped scorer output.
    pub fn raw_score(
        &self,
        enc: &[f64],
        props: &RouteProperties,
        target_fp: &Fingerprint,
    ) -> Result<f64, ModelError> {
        let stats = self.norm_stats.as_ref().ok_or(ModelError::Uninitialized)?;
        if enc.len() != self.config.encoding_dim() {
            return Err(ModelError::Dimension(format!(
                "encoding width {} != {}",
                enc.len(),
                self.config.encoding_dim()
            )));
        }
        let target = fold_bits(target_fp, self.config.fp_fold_dim)?;
        let input = self.scorer_input(enc, &stats.normalize(props), &target);
        Ok(run_layers(&self.scorer, input, false).output()[0])
    }

    /// Predicted distance, clamped at zero.
    pub fn score_route(
        &self,
        enc: &[f64],
        props: &RouteProperties,
        target_fp: &Fingerprint,
    ) -> Result<f64, ModelError> {
        Ok(self.raw_score(enc, props, target_fp)?.max(0.0))
    }

    pub(crate) fn raw_prepared(&self, route: &PreparedRoute) -> f64 {
        let (enc, _) = self.encode_prepared(&route.reactions);
        run_layers(
            &self.scorer,
            self.scorer_input(&enc, &route.props, &route.target),
            false,
        )
        .output()[0]
    }

    /// Full pipeline: encode and score, clamped.
    pub fn predict(&self, route: &RouteFeatures) -> Result<f64, ModelError> {
        Ok(self.raw_prepared(&self.prepare_route(route)?).max(0.0))
    }

    /// Accumulate `d loss / d raw = g` for one route into `grads`; returns
    /// the raw output.
    pub(crate) fn backward_route(
        &self,
        route: &PreparedRoute,
        label: f64,
        scale: f64,
        grads: &mut ModelGrads,
    ) -> f64 {
        let (enc, enc_traces) = self.encode_prepared(&route.reactions);
        let s_trace = run_layers(
            &self.scorer,
            self.scorer_input(&enc, &route.props, &route.target),
            false,
        );
        let raw = s_trace.output()[0];
        let g = 2.0 * (raw - label) * scale;
        let dz0 = backprop_layers(&self.scorer, &mut grads.scorer, &s_trace, vec![g], false);
        let mut denc = vec![0.0; enc.len()];
        for (i, d) in denc.iter_mut().enumerate() {
            if enc[i] != 0.0 {
                *d = self.scorer[0].input_grad(i, &dz0);
            }
        }
        let e = self.config.class_embed_dim;
        for (r, trace) in route.reactions.iter().zip(&enc_traces) {
            let dz = backprop_layers(&self.encoder, &mut grads.encoder, trace, denc.clone(), true);
            let row = &mut grads.class_table[r.class_idx * e..(r.class_idx + 1) * e];
            for (i, g) in row.iter_mut().enumerate() {
                *g += self.encoder[0].input_grad(i, &dz);
            }
        }
        raw
    }

    pub(crate) fn forward_backward_prepared(
        &self,
        batch: &[(&PreparedRoute, f64)],
    ) -> (f64, ModelGrads) {
        let mut grads = self.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (route, label) in batch {
            let raw = self.backward_route(route, *label, scale, &mut grads);
            loss += (raw - label) * (raw - label);
        }
        (loss * scale, grads)
    }

    /// Mean squared error of the raw output against `labels` and its exact
    /// gradient.
    pub fn forward_backward(
        &self,
        batch: &[(&RouteFeatures, f64)],
    ) -> Result<(f64, ModelGrads), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptySplit("batch"));
        }
        let prepared = batch
            .iter()
            .map(|(r, y)| Ok((self.prepare_route(r)?, *y)))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let refs: Vec<(&PreparedRoute, f64)> = prepared.iter().map(|(r, y)| (r, *y)).collect();
        let (loss, grads) = self.forward_backward_prepared(&refs);
        if !loss.is_finite() {
            return Err(ModelError::NonFinite { epoch: 0, batch: 0 });
        }
        Ok((loss, grads))
    }
}

/// Modulo OR-fold of the set bits of `fp` onto `dim` slots; sorted.
pub(crate) fn fold_bits(fp: &Fingerprint, dim: usize) -> Result<Vec<usize>, ModelError> {
    if fp.nbits() < dim || !fp.nbits().is_multiple_of(dim) {
        return Err(ModelError::Dimension(format!(
            "fingerprint width {} does not fold to {dim}",
            fp.nbits()
        )));
    }
    let mut bits: Vec<usize> = fp.ones().map(|b| b % dim).collect();
    bits.sort_unstable();
    bits.dedup();
    Ok(bits)
}
