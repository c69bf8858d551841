//! Route featurisation: per-reaction feature sets and route properties
//! (cost, volume, complexity).

mod embed;

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{complexity_score, parse_smiles, ChemConfig, ChemError, Fingerprint};
use crate::routes::{route_reactions, RouteTree};

pub use embed::{drfp_embedding, sdf_embedding};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("chemistry error for '{smiles}': {source}")]
    Chem {
        smiles: String,
        #[source]
        source: ChemError,
    },
    #[error("success rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("prior table: {0}")]
    Table(String),
}

/// Prior points from historical evidence: a count band plus a rate band,
/// each 0..=3. Upper band edges belong to the lower band.
pub fn prior_points(experiment_count: u64, success_rate: f64) -> Result<u8, FeatureError> {
    if !(0.0..=1.0).contains(&success_rate) {
        return Err(FeatureError::Rate(success_rate));
    }
    let count_band = match experiment_count {
        c if c > 5000 => 3,
        c if c > 500 => 2,
        c if c > 50 => 1,
        _ => 0,
    };
    let rate_band = match success_rate {
        r if r > 0.9 => 3,
        r if r > 0.75 => 2,
        r if r > 0.6 => 1,
        _ => 0,
    };
    Ok(count_band + rate_band)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub experiment_count: u64,
    pub success_rate: f64,
}

/// Per-class prior evidence. Unknown classes score 0 points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorTable {
    entries: BTreeMap<String, PriorEntry>,
}

#[derive(Debug, Deserialize)]
struct PriorRow {
    class_id: String,
    experiment_count: u64,
    success_rate: f64,
}

impl PriorTable {
    pub fn new() -> PriorTable {
        PriorTable::default()
    }

    pub fn insert(
        &mut self,
        class_id: impl Into<String>,
        entry: PriorEntry,
    ) -> Result<(), FeatureError> {
        prior_points(entry.experiment_count, entry.success_rate)?;
        self.entries.insert(class_id.into(), entry);
        Ok(())
    }

    pub fn get(&self, class_id: &str) -> Option<&PriorEntry> {
        self.entries.get(class_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self, class_id: &str) -> u8 {
        self.entries.get(class_id).map_or(0, |e| {
            prior_points(e.experiment_count, e.success_rate).expect("validated on insert")
        })
    }

    /// CSV with header `class_id,experiment_count,success_rate`.
    pub fn from_csv<R: Read>(reader: R) -> Result<PriorTable, FeatureError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| FeatureError::Table(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["class_id", "experiment_count", "success_rate"] {
            return Err(FeatureError::Table(format!(
                "unexpected header {headers:?}"
            )));
        }
        let mut table = PriorTable::new();
        for row in rdr.deserialize::<PriorRow>() {
            let row = row.map_err(|e| FeatureError::Table(e.to_string()))?;
            table.insert(
                row.class_id,
                PriorEntry {
                    experiment_count: row.experiment_count,
                    success_rate: row.success_rate,
                },
            )?;
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,experiment_count,success_rate\n");
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        for (id, e) in &self.entries {
            w.serialize((id, e.experiment_count, e.success_rate))
                .expect("in-memory write");
        }
        out.push_str(std::str::from_utf8(&w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    /// The table backing the synthetic generator's classes.
    pub fn synthetic() -> PriorTable {
        let mut table = PriorTable::new();
        for c in crate::routes::synth::synthetic_classes() {
            table
                .insert(
                    c.id,
                    PriorEntry {
                        experiment_count: c.experiment_count,
                        success_rate: c.success_rate,
                    },
                )
                .expect("valid synthetic rates");
        }
        table
    }
}

/// Which reaction embedding to attach to each reaction feature.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    None,
    #[default]
    Sdf,
    Drfp,
}

/// Sparse real vector; entries sorted by index, zeros omitted.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn from_dense(values: impl IntoIterator<Item = f64>) -> SparseVec {
        let mut dim = 0;
        let entries = values
            .into_iter()
            .enumerate()
            .inspect(|_| dim += 1)
            .filter(|&(_, v)| v != 0.0)
            .map(|(i, v)| (i as u32, v))
            .collect();
        SparseVec { dim, entries }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionFeature {
    pub class_id: String,
    /// Prior points, 0..=6.
    pub prior_points: u8,
    /// Fingerprint of the route's final target.
    pub target_fp: Fingerprint,
    pub rxn_embedding: Option<SparseVec>,
    pub tiebreak_key: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteProperties {
    pub cost: f64,
    pub volume: u32,
    pub complexity: f64,
}

/// Cost model constants (`feat.cost.*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub kappa: f64,
    pub default_price: f64,
    pub nonstock_penalty: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            kappa: 1.0,
            default_price: 1.0,
            nonstock_penalty: 10.0,
        }
    }
}

/// Leaf prices (explicit, stock default or non-stock penalty) plus
/// `kappa` per reaction.
pub fn route_cost(route: &RouteTree, params: &CostParams) -> f64 {
    let leaves: f64 = route
        .leaves()
        .into_iter()
        .map(|leaf| match (leaf.price, leaf.in_stock) {
            (Some(p), _) => p,
            (None, Some(true)) => params.default_price,
            (None, _) => params.nonstock_penalty,
        })
        .sum();
    leaves + params.kappa * route.n_reactions() as f64
}

/// Number of intermediates, i.e. non-leaf molecules other than the target.
pub fn route_volume(route: &RouteTree) -> u32 {
    route.intermediates().len() as u32
}

/// Summed complexity of the intermediates counted by [`route_volume`].
pub fn route_complexity(route: &RouteTree) -> Result<f64, FeatureError> {
    route
        .intermediates()
        .into_iter()
        .map(|m| {
            parse_smiles(&m.smiles)
                .map(|g| complexity_score(&g))
                .map_err(|source| FeatureError::Chem {
                    smiles: m.smiles.clone(),
                    source,
                })
        })
        .sum()
}

/// Feature-extraction settings (`feat.*`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub mode: EmbeddingMode,
    pub cost: CostParams,
}

/// Model inputs for one route.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteFeatures {
    /// Sorted by tie-break key.
    pub reactions: Vec<ReactionFeature>,
    pub props: RouteProperties,
    pub target_fp: Fingerprint,
}

#[derive(Debug, Clone)]
pub struct Featurizer {
    pub chem: ChemConfig,
    pub config: FeatureConfig,
    pub priors: PriorTable,
}

impl Featurizer {
    pub fn new(chem: ChemConfig, config: FeatureConfig, priors: PriorTable) -> Featurizer {
        Featurizer {
            chem,
            config,
            priors,
        }
    }

    pub fn featurize(&self, route: &RouteTree) -> Result<RouteFeatures, FeatureError> {
        let target_fp =
            self.chem
                .fingerprint(route.target())
                .map_err(|source| FeatureError::Chem {
                    smiles: route.target().to_string(),
                    source,
                })?;
        let reactions = route_reactions(route)
            .into_iter()
            .map(|rec| {
                let rxn_embedding = match self.config.mode {
                    EmbeddingMode::None => None,
                    EmbeddingMode::Sdf => Some(SparseVec::from_dense(
                        sdf_embedding(&rec, &self.chem)?.into_iter().map(f64::from),
                    )),
                    EmbeddingMode::Drfp => {
                        let fp = drfp_embedding(&rec, &self.chem)?;
                        Some(SparseVec {
                            dim: fp.nbits(),
                            entries: fp.ones().map(|i| (i as u32, 1.0)).collect(),
                        })
                    }
                };
                Ok(ReactionFeature {
                    prior_points: self.priors.points(&rec.class_id),
                    class_id: rec.class_id,
                    target_fp: target_fp.clone(),
                    rxn_embedding,
                    tiebreak_key: rec.key,
                })
            })
            .collect::<Result<Vec<_>, FeatureError>>()?;
        let props = RouteProperties {
            cost: route_cost(route, &self.config.cost),
            volume: route_volume(route),
            complexity: route_complexity(route)?,
        };
        Ok(RouteFeatures {
            reactions,
            props,
            target_fp,
        })
    }
}

/// Featurise with default chemistry and cost settings.
pub fn featurize_route(
    route: &RouteTree,
    priors: &PriorTable,
    mode: EmbeddingMode,
) -> Result<RouteFeatures, FeatureError> {
    let config = FeatureConfig {
        mode,
        ..FeatureConfig::default()
    };
    Featurizer::new(ChemConfig::default(), config, priors.clone()).featurize(route)
}
