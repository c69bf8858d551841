//! Shared fixtures for the benchmarks in `benches/`.

use routescore::features::{FeatureConfig, Featurizer, RouteFeatures};
use routescore::model::NormStats;
use routescore::routes::{generate_synthetic_family, GenConfig};
use routescore::{ChemConfig, EmbeddingMode, ModelConfig, PriorTable, RouteFamily, ScoringModel};

pub fn families(n: u64) -> Vec<RouteFamily> {
    (0..n)
        .map(|s| {
            generate_synthetic_family(s, &GenConfig::default()).expect("default config generates")
        })
        .collect()
}

pub fn featurize(
    families: &[RouteFamily],
    chem: ChemConfig,
    mode: EmbeddingMode,
) -> Vec<RouteFeatures> {
    let fz = Featurizer::new(
        chem,
        FeatureConfig {
            mode,
            ..FeatureConfig::default()
        },
        PriorTable::synthetic(),
    );
    families
        .iter()
        .flat_map(|f| f.candidates.iter())
        .map(|r| fz.featurize(r).expect("synthetic routes featurise"))
        .collect()
}

/// An untrained model with normalisation fitted to `routes`.
pub fn model(
    routes: &[RouteFeatures],
    config: ModelConfig,
    mode: EmbeddingMode,
    nbits: usize,
) -> ScoringModel {
    let vocab = routes
        .iter()
        .flat_map(|r| r.reactions.iter().map(|x| x.class_id.clone()))
        .collect();
    let mut m = ScoringModel::new(config, mode, vocab, nbits, 1).expect("valid config");
    m.norm_stats = Some(NormStats::fit(routes));
    m
}
