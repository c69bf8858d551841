//! Run configuration: defaults, an optional TOML file, then `--set`
//! overrides, resolved into one strongly typed value.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use routescore::features::FeatureConfig;
use routescore::finetune::LoraConfig;
use routescore::model::TrainHyper;
use routescore::routes::{EditKind, GenConfig};
use routescore::{ChemConfig, CostConfig, ModelConfig};

/// Generator settings. Family `i` is generated from a seed derived from
/// `gen.seed` (or the global seed when unset) and `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_families: usize,
    pub n_candidates: usize,
    pub max_depth: usize,
    pub perturb_ops: usize,
    pub edit_kinds: Vec<EditKind>,
}

impl Default for GenSection {
    fn default() -> Self {
        let g = GenConfig::default();
        GenSection {
            seed: None,
            n_families: 200,
            n_candidates: g.n_candidates,
            max_depth: g.max_depth,
            perturb_ops: g.perturb_ops,
            edit_kinds: g.edit_kinds,
        }
    }
}

impl GenSection {
    pub fn generator(&self) -> GenConfig {
        GenConfig {
            n_candidates: self.n_candidates,
            max_depth: self.max_depth,
            perturb_ops: self.perturb_ops,
            edit_kinds: self.edit_kinds.clone(),
        }
    }
}

/// Splitting and reporting settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Cross-validation folds for fine-tuning.
    pub folds: usize,
    /// TED quantile bins used to stratify the pre-training validation split.
    pub ted_bins: usize,
    /// Fraction of families held out for snapshot selection.
    pub val_fraction: f64,
    /// Largest k in ranking reports.
    pub top_k: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            folds: 5,
            ted_bins: 4,
            val_fraction: 0.1,
            top_k: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenSection,
    pub chem: ChemConfig,
    pub feat: FeatureConfig,
    pub ted: CostConfig,
    pub model: ModelConfig,
    pub train: TrainHyper,
    pub lora: LoraConfig,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

impl RunConfig {
    /// Layer `file` (if any) and `key=value` overrides over the defaults.
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                text.parse::<Table>()
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Table::new(),
        };
        for set in sets {
            let (key, value) = set
                .split_once('=')
                .ok_or_else(|| anyhow!("--set expects key=value, got '{set}'"))?;
            insert_dotted(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let config: RunConfig = Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.eval.folds < 2 {
            bail!("eval.folds must be at least 2");
        }
        if self.eval.ted_bins == 0 || self.eval.top_k == 0 {
            bail!("eval.ted_bins and eval.top_k must be at least 1");
        }
        if !(self.eval.val_fraction > 0.0 && self.eval.val_fraction < 1.0) {
            bail!("eval.val_fraction must lie in (0, 1)");
        }
        if self.chem.nbits == 0 {
            bail!("chem.nbits must be at least 1");
        }
        self.ted.validate()?;
        self.train.validate()?;
        self.lora.validate()?;
        self.model.validate(self.chem.nbits)?;
        Ok(())
    }

    pub fn gen_seed(&self) -> u64 {
        self.gen.seed.unwrap_or(self.seed)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(text: &str) -> Value {
    format!("v = {text}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn insert_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| anyhow!("empty key in --set"))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("--set {key}: '{part}' is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::resolve(None, &[]).unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn sets_override_nested_keys() {
        let sets = [
            "feat.cost.kappa=2.5".to_string(),
            "lora.agg=avg".into(),
            "ted.label_cost=unit".into(),
            "model.encoder_hidden=[8, 4]".into(),
            "seed=7".into(),
        ];
        let c = RunConfig::resolve(None, &sets).unwrap();
        assert_eq!(c.feat.cost.kappa, 2.5);
        assert_eq!(c.lora.agg, routescore::Aggregation::Avg);
        assert_eq!(c.ted.label_cost, routescore::ted::LabelCost::Unit);
        assert_eq!(c.model.encoder_hidden, vec![8, 4]);
        assert_eq!(c.seed, 7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::resolve(None, &["gen.n_cands=3".into()]).is_err());
        assert!(RunConfig::resolve(None, &["colour=red".into()]).is_err());
        assert!(RunConfig::resolve(None, &["seed".into()]).is_err());
    }

    #[test]
    fn validation_applies() {
        assert!(RunConfig::resolve(None, &["eval.folds=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["train.lr=-1.0".into()]).is_err());
    }
}
