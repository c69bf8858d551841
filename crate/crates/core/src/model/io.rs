//! Versioned JSON envelope with base64 little-endian `f32` tensors.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::nn::Dense;
use super::{ModelConfig, ModelError, NormStats, ScoringModel, FORMAT_VERSION};
use crate::features::EmbeddingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
}

impl TensorRecord {
    pub fn encode(name: impl Into<String>, shape: Vec<usize>, values: &[f64]) -> TensorRecord {
        let bytes: Vec<u8> = values
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        TensorRecord {
            name: name.into(),
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>, ModelError> {
        if self.name != name || self.shape != shape {
            return Err(ModelError::Format(format!(
                "expected tensor {name} {shape:?}, found {} {:?}",
                self.name, self.shape
            )));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| ModelError::Format(format!("{name}: {e}")))?;
        let n: usize = shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(ModelError::Format(format!(
                "{name}: {} bytes for {n} values",
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect())
    }
}

pub(crate) fn check_version(value: &Value, expected: u32) -> Result<(), ModelError> {
    match value.get("format_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(expected) => Ok(()),
        Some(v) => Err(ModelError::Format(format!(
            "format_version {v} is not supported (expected {expected})"
        ))),
        None => Err(ModelError::Format("missing format_version".into())),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    config: ModelConfig,
    embedding: EmbeddingMode,
    norm_stats: Option<NormStats>,
    class_vocab: Vec<String>,
    tensors: Vec<TensorRecord>,
}

fn layer_records(prefix: &str, layers: &[Dense], out: &mut Vec<TensorRecord>) {
    for (l, layer) in layers.iter().enumerate() {
        out.push(TensorRecord::encode(
            format!("{prefix}.{l}.weight"),
            vec![layer.in_dim, layer.out_dim],
            &layer.weight,
        ));
        out.push(TensorRecord::encode(
            format!("{prefix}.{l}.bias"),
            vec![layer.out_dim],
            &layer.bias,
        ));
    }
}

impl ScoringModel {
    /// Serialise. Layer weights are stored input-major with shape
    /// `[in_dim, out_dim]`.
    pub fn to_json(&self) -> String {
        let mut tensors = vec![TensorRecord::encode(
            "class_table",
            vec![self.class_vocab.len() + 1, self.config.class_embed_dim],
            &self.class_table,
        )];
        layer_records("encoder", &self.encoder, &mut tensors);
        layer_records("scorer", &self.scorer, &mut tensors);
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            embedding: self.embedding,
            norm_stats: self.norm_stats,
            class_vocab: self.class_vocab.clone(),
            tensors,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model serialises");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<ScoringModel, ModelError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        check_version(&value, FORMAT_VERSION)?;
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.class_vocab.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Format(
                "class_vocab must be sorted and unique".into(),
            ));
        }
        // Rebuild the shape skeleton, then fill it.
        let mut model = ScoringModel::new(
            file.config.clone(),
            file.embedding,
            file.class_vocab.clone(),
            file.config.fp_fold_dim.max(file.config.rxn_embed_fold_dim),
            0,
        )?;
        model.norm_stats = file.norm_stats;
        let mut records = file.tensors.iter();
        let mut next = |name: String, shape: Vec<usize>| -> Result<Vec<f64>, ModelError> {
            records
                .next()
                .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?
                .decode(&name, &shape)
        };
        model.class_table = next(
            "class_table".into(),
            vec![model.class_vocab.len() + 1, model.config.class_embed_dim],
        )?;
        for (prefix, layers) in [
            ("encoder", &mut model.encoder),
            ("scorer", &mut model.scorer),
        ] {
            for (l, layer) in layers.iter_mut().enumerate() {
                layer.weight = next(
                    format!("{prefix}.{l}.weight"),
                    vec![layer.in_dim, layer.out_dim],
                )?;
                layer.bias = next(format!("{prefix}.{l}.bias"), vec![layer.out_dim])?;
            }
        }
        if records.next().is_some() {
            return Err(ModelError::Format("unexpected extra tensors".into()));
        }
        Ok(model)
    }
}
