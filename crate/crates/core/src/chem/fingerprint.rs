//! Morgan-style circular fingerprints and Tanimoto similarity.

use super::{ChemError, MolGraph};
use crate::hash::Fnv64;

pub const MIN_BITS: usize = 64;
pub const MAX_BITS: usize = 4096;
pub const MAX_RADIUS: u32 = 4;

/// Fixed-width bit vector with optional per-bit occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    nbits: usize,
    words: Vec<u64>,
    counts: Option<Vec<u32>>,
}

impl Fingerprint {
    /// All-zero fingerprint. `nbits` must be a power of two in `[64, 4096]`.
    pub fn zeros(nbits: usize) -> Result<Fingerprint, ChemError> {
        check_width(nbits)?;
        Ok(Fingerprint {
            nbits,
            words: vec![0; nbits / 64],
            counts: None,
        })
    }

    /// Fingerprint with the given bits set.
    pub fn from_bits(
        nbits: usize,
        bits: impl IntoIterator<Item = usize>,
    ) -> Result<Fingerprint, ChemError> {
        let mut fp = Fingerprint::zeros(nbits)?;
        for bit in bits {
            if bit >= nbits {
                return Err(ChemError::BitOutOfRange { bit, nbits });
            }
            fp.set(bit);
        }
        Ok(fp)
    }

    /// Fingerprint from occurrence counts; bit `i` is set iff `counts[i] > 0`.
    pub fn from_counts(counts: Vec<u32>) -> Result<Fingerprint, ChemError> {
        let mut fp = Fingerprint::zeros(counts.len())?;
        for (i, &c) in counts.iter().enumerate() {
            if c > 0 {
                fp.set(i);
            }
        }
        fp.counts = Some(counts);
        Ok(fp)
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn counts(&self) -> Option<&[u32]> {
        self.counts.as_deref()
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    /// Packed 64-bit words, least significant bit first.
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// Bits only; counts dropped.
    pub fn without_counts(&self) -> Fingerprint {
        Fingerprint {
            nbits: self.nbits,
            words: self.words.clone(),
            counts: None,
        }
    }
}

fn check_width(nbits: usize) -> Result<(), ChemError> {
    if nbits.is_power_of_two() && (MIN_BITS..=MAX_BITS).contains(&nbits) {
        Ok(())
    } else {
        Err(ChemError::InvalidWidth(nbits))
    }
}

/// Initial atom invariant: element, heavy degree, charge, aromaticity and
/// hydrogen count.
fn atom_invariant(mol: &MolGraph, adjacency: &[Vec<(usize, super::BondOrder)>], idx: usize) -> u64 {
    let atom = &mol.atoms[idx];
    let mut h = Fnv64::new();
    h.write(atom.element.as_bytes())
        .write_u8(0)
        .write_u8(adjacency[idx].len() as u8)
        .write_u8(atom.charge as u8)
        .write_u8(u8::from(atom.aromatic))
        .write_u8(atom.hydrogens);
    h.finish()
}

/// Every circular environment identifier for radii `0..=radius`, one per
/// (atom, radius) pair, in ascending order.
pub fn circular_environments(mol: &MolGraph, radius: u32) -> Result<Vec<u64>, ChemError> {
    if radius > MAX_RADIUS {
        return Err(ChemError::InvalidRadius(radius));
    }
    let adjacency = mol.adjacency();
    let mut current: Vec<u64> = (0..mol.atoms.len())
        .map(|i| atom_invariant(mol, &adjacency, i))
        .collect();
    let mut all = current.clone();
    for r in 1..=radius {
        let next: Vec<u64> = (0..mol.atoms.len())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = adjacency[i]
                    .iter()
                    .map(|&(n, order)| (order.code(), current[n]))
                    .collect();
                env.sort_unstable();
                let mut h = Fnv64::new();
                h.write_u8(r as u8).write_u64(current[i]);
                for (code, id) in env {
                    h.write_u8(code).write_u64(id);
                }
                h.finish()
            })
            .collect();
        all.extend_from_slice(&next);
        current = next;
    }
    all.sort_unstable();
    Ok(all)
}

/// Fold environment identifiers into `nbits` by `id mod nbits`, counting
/// occurrences.
pub fn fold_environments(ids: &[u64], nbits: usize) -> Result<Fingerprint, ChemError> {
    check_width(nbits)?;
    let mut counts = vec![0u32; nbits];
    for &id in ids {
        counts[(id % nbits as u64) as usize] += 1;
    }
    Fingerprint::from_counts(counts)
}

/// Morgan fingerprint with occurrence counts.
pub fn morgan_fingerprint(
    mol: &MolGraph,
    radius: u32,
    nbits: usize,
) -> Result<Fingerprint, ChemError> {
    check_width(nbits)?;
    let ids = circular_environments(mol, radius)?;
    fold_environments(&ids, nbits)
}

/// `|a ∧ b| / |a ∨ b|`, or 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, ChemError> {
    if a.nbits != b.nbits {
        return Err(ChemError::WidthMismatch(a.nbits, b.nbits));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        Ok(1.0)
    } else {
        Ok(f64::from(both) / f64::from(either))
    }
}
