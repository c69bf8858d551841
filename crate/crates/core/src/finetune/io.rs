//! Adapter file: versioned JSON tied to its base model by content hash.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{FinetuneError, FinetunedModel, LoraAdapter, LoraConfig, N_POINTS};
use crate::model::nn::Dense;
use crate::model::{check_version, ModelError, ScoringModel, TensorRecord};

pub const ADAPTER_FORMAT_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterFile {
    format_version: u32,
    base_sha256: String,
    config: LoraConfig,
    tensors: Vec<TensorRecord>,
}

fn format_err(e: ModelError) -> FinetuneError {
    match e {
        ModelError::Format(m) => FinetuneError::Format(m),
        other => FinetuneError::Model(other),
    }
}

impl FinetunedModel {
    /// Hash of the base model's serialised bytes.
    pub fn base_hash(&self) -> String {
        sha256_hex(self.base.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut tensors = Vec::new();
        for (l, ad) in self.adapters.iter().enumerate() {
            tensors.push(TensorRecord::encode(
                format!("lora.{l}.a"),
                vec![ad.rank, ad.in_dim],
                &ad.a,
            ));
            tensors.push(TensorRecord::encode(
                format!("lora.{l}.b"),
                vec![ad.out_dim, ad.rank],
                &ad.b,
            ));
        }
        tensors.push(TensorRecord::encode(
            "head.weight",
            vec![self.head.in_dim, N_POINTS],
            &self.head.weight,
        ));
        tensors.push(TensorRecord::encode(
            "head.bias",
            vec![N_POINTS],
            &self.head.bias,
        ));
        let file = AdapterFile {
            format_version: ADAPTER_FORMAT_VERSION,
            base_sha256: self.base_hash(),
            config: self.config,
            tensors,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("adapter serialises");
        text.push('\n');
        text
    }

    /// Load adapters against the base model file contents `base_bytes`.
    pub fn from_json(text: &str, base_bytes: &[u8]) -> Result<FinetunedModel, FinetuneError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| FinetuneError::Format(e.to_string()))?;
        check_version(&value, ADAPTER_FORMAT_VERSION).map_err(format_err)?;
        let file: AdapterFile =
            serde_json::from_value(value).map_err(|e| FinetuneError::Format(e.to_string()))?;
        let found = sha256_hex(base_bytes);
        if found != file.base_sha256 {
            return Err(FinetuneError::BaseMismatch {
                expected: file.base_sha256,
                found,
            });
        }
        let base_text =
            std::str::from_utf8(base_bytes).map_err(|e| FinetuneError::Format(e.to_string()))?;
        let base = ScoringModel::from_json(base_text)?;
        file.config.validate()?;
        let mut records = file.tensors.iter();
        let mut next = |name: String, shape: Vec<usize>| -> Result<Vec<f64>, FinetuneError> {
            records
                .next()
                .ok_or_else(|| FinetuneError::Format(format!("missing tensor {name}")))?
                .decode(&name, &shape)
                .map_err(format_err)
        };
        let (rank, alpha) = (file.config.rank, file.config.alpha);
        let mut adapters = Vec::with_capacity(base.encoder.len());
        for (l, layer) in base.encoder.iter().enumerate() {
            let mut ad = LoraAdapter::zeros(layer.in_dim, layer.out_dim, rank, alpha);
            ad.a = next(format!("lora.{l}.a"), vec![rank, layer.in_dim])?;
            ad.b = next(format!("lora.{l}.b"), vec![layer.out_dim, rank])?;
            adapters.push(ad);
        }
        let mut head = Dense::zeros(base.config.encoding_dim(), N_POINTS);
        head.weight = next("head.weight".into(), vec![head.in_dim, N_POINTS])?;
        head.bias = next("head.bias".into(), vec![N_POINTS])?;
        if records.next().is_some() {
            return Err(FinetuneError::Format("unexpected extra tensors".into()));
        }
        Ok(FinetunedModel {
            base,
            adapters,
            head,
            config: file.config,
        })
    }
}
