use super::MolGraph;

/// Version tag of the complexity heuristic, echoed into output metadata.
pub const COMPLEXITY_VERSION: &str = "heuristic-v1";

/// Deterministic synthetic-complexity stand-in on the `[1, 5]` scale:
/// `clamp(1 + log2(1 + heavy)/2 + 0.3 * rings + 0.3 * sqrt(hetero), 1, 5)`.
pub fn complexity_score(mol: &MolGraph) -> f64 {
    unclamped_complexity(mol).clamp(1.0, 5.0)
}

pub(crate) fn unclamped_complexity(mol: &MolGraph) -> f64 {
    let heavy = mol.heavy_atom_count() as f64;
    let rings = mol.ring_count() as f64;
    let hetero = mol
        .atoms
        .iter()
        .filter(|a| a.element != "H" && a.element != "C")
        .count() as f64;
    1.0 + (1.0 + heavy).log2() / 2.0 + 0.3 * rings + 0.3 * hetero.sqrt()
}
