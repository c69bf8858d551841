//! Synthesis-route scoring.
//!
//! Routes are featurised into sets of reaction vectors plus route properties,
//! scored by a permutation-invariant set model regressed onto tree edit
//! distance to a reference route, and optionally adapted to expert 1-5
//! ratings with low-rank adapters and a per-reaction classification head.

pub mod chem;
pub mod eval;
pub mod features;
pub mod finetune;
pub mod hash;
pub mod model;
pub mod routes;
pub mod ted;

pub use chem::{ChemConfig, ChemError, Fingerprint, MolGraph};
pub use features::{EmbeddingMode, PriorTable, ReactionFeature, RouteProperties};
pub use finetune::{Aggregation, FinetunedModel, Tier};
pub use model::{ModelConfig, ScoringModel};
pub use routes::{MoleculeNode, ReactionNode, RouteFamily, RouteTree};
pub use ted::{CostConfig, LabeledTree};
