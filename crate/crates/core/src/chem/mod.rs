//! SMILES parsing, circular fingerprints, Tanimoto similarity and a
//! deterministic complexity heuristic.

mod complexity;
mod fingerprint;
mod smiles;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use complexity::{complexity_score, COMPLEXITY_VERSION};
pub use fingerprint::{
    circular_environments, fold_environments, morgan_fingerprint, tanimoto, Fingerprint, MAX_BITS,
    MAX_RADIUS, MIN_BITS,
};
pub use smiles::{parse_smiles, Atom, Bond, BondOrder, MolGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemError {
    #[error("cannot parse SMILES '{smiles}' at position {position}: {message}")]
    Smiles {
        smiles: String,
        position: usize,
        message: String,
    },
    #[error("fingerprint width {0} is not a power of two in [{MIN_BITS}, {MAX_BITS}]")]
    InvalidWidth(usize),
    #[error("fingerprint radius {0} exceeds {MAX_RADIUS}")]
    InvalidRadius(u32),
    #[error("bit {bit} out of range for width {nbits}")]
    BitOutOfRange { bit: usize, nbits: usize },
    #[error("fingerprint widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
}

/// Fingerprint settings (`chem.nbits`, `chem.radius`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChemConfig {
    pub nbits: usize,
    pub radius: u32,
}

impl Default for ChemConfig {
    fn default() -> Self {
        ChemConfig {
            nbits: 2048,
            radius: 2,
        }
    }
}

impl ChemConfig {
    /// Parse `smiles` and fingerprint it with these settings.
    pub fn fingerprint(&self, smiles: &str) -> Result<Fingerprint, ChemError> {
        morgan_fingerprint(&parse_smiles(smiles)?, self.radius, self.nbits)
    }
}
