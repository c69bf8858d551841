//! Reaction fingerprints: structural difference (SDF) and differential
//! shingle (DRFP) embeddings.

use std::collections::BTreeSet;

use crate::chem::{
    circular_environments, fold_environments, parse_smiles, ChemConfig, Fingerprint,
};
use crate::routes::ReactionRecord;

use super::FeatureError;

fn environments(smiles: &str, radius: u32) -> Result<Vec<u64>, FeatureError> {
    let mol = parse_smiles(smiles).map_err(|source| FeatureError::Chem {
        smiles: smiles.to_string(),
        source,
    })?;
    circular_environments(&mol, radius).map_err(|source| FeatureError::Chem {
        smiles: smiles.to_string(),
        source,
    })
}

fn counts(smiles: &str, chem: &ChemConfig) -> Result<Vec<u32>, FeatureError> {
    let ids = environments(smiles, chem.radius)?;
    let fp = fold_environments(&ids, chem.nbits).map_err(|source| FeatureError::Chem {
        smiles: smiles.to_string(),
        source,
    })?;
    Ok(fp
        .counts()
        .expect("folded fingerprints carry counts")
        .to_vec())
}

/// Product counts minus summed reactant counts, componentwise.
pub fn sdf_embedding(rxn: &ReactionRecord, chem: &ChemConfig) -> Result<Vec<i32>, FeatureError> {
    let mut out: Vec<i32> = counts(&rxn.product, chem)?
        .into_iter()
        .map(|c| c as i32)
        .collect();
    for reactant in &rxn.reactants {
        for (o, c) in out.iter_mut().zip(counts(reactant, chem)?) {
            *o -= c as i32;
        }
    }
    Ok(out)
}

fn shingles<'a>(
    side: impl IntoIterator<Item = &'a str>,
    radius: u32,
) -> Result<BTreeSet<u64>, FeatureError> {
    let mut set = BTreeSet::new();
    for smiles in side {
        set.extend(environments(smiles, radius)?);
    }
    Ok(set)
}

/// Symmetric difference of reactant-side and product-side environment
/// identifier sets, folded into `chem.nbits` bits. Shingles are environment
/// hashes rather than substructure SMILES strings.
pub fn drfp_embedding(
    rxn: &ReactionRecord,
    chem: &ChemConfig,
) -> Result<Fingerprint, FeatureError> {
    let left = shingles(rxn.reactants.iter().map(String::as_str), chem.radius)?;
    let right = shingles([rxn.product.as_str()], chem.radius)?;
    let diff: Vec<u64> = left.symmetric_difference(&right).copied().collect();
    let fp = fold_environments(&diff, chem.nbits).map_err(|source| FeatureError::Chem {
        smiles: rxn.product.clone(),
        source,
    })?;
    Ok(fp.without_counts())
}
