//! Seeded synthetic route families with known edit structure.
//!
//! A reference route is assembled from a closed vocabulary of valid SMILES
//! and "reference" reaction classes. Every other candidate is the reference
//! with `1..=perturb_ops` random edits applied:
//!
//! * [`EditKind::Relabel`]: swap a stock leaf for a non-stock building block,
//!   keeping its position in the canonical sibling order;
//! * [`EditKind::InsertLayer`]: make a leaf an intermediate produced by a new
//!   "alternative" class reaction from fresh stock leaves;
//! * [`EditKind::DeleteSubtree`]: replace an intermediate whose reactants are
//!   all leaves by a purchased stock leaf priced by the size of what it
//!   replaces.
//!
//! Edits only touch sites no earlier edit has marked, so every applied edit
//! stays visible in the candidate (a non-stock leaf, an alternative class or
//! a priced leaf). Fewer than the drawn number of edits are applied when a
//! route runs out of sites.
//!
//! Each reaction carries a `planted_quality` (1..=5) in its metadata, a pure
//! function of its class, from which expert-style labels are derived.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{MoleculeNode, ReactionNode, RouteError, RouteFamily, RouteTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Relabel,
    InsertLayer,
    DeleteSubtree,
}

/// Generator settings (`gen.*`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Routes per family, reference included.
    pub n_candidates: usize,
    /// Maximum reference depth in reactions.
    pub max_depth: usize,
    /// Maximum edits per non-reference candidate.
    pub perturb_ops: usize,
    pub edit_kinds: Vec<EditKind>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_candidates: 10,
            max_depth: 3,
            perturb_ops: 3,
            edit_kinds: vec![
                EditKind::Relabel,
                EditKind::InsertLayer,
                EditKind::DeleteSubtree,
            ],
        }
    }
}

/// A synthetic reaction class and the evidence behind its prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticClass {
    pub id: &'static str,
    pub quality: u8,
    pub experiment_count: u64,
    pub success_rate: f64,
}

const fn class(
    id: &'static str,
    quality: u8,
    experiment_count: u64,
    success_rate: f64,
) -> SyntheticClass {
    SyntheticClass {
        id,
        quality,
        experiment_count,
        success_rate,
    }
}

/// Classes used when building reference routes.
pub const REFERENCE_CLASSES: [SyntheticClass; 10] = [
    class("1.2.1 Aldehyde reductive amination", 5, 9200, 0.93),
    class("2.1.1 Amide Schotten-Baumann", 5, 14100, 0.95),
    class("3.1.1 Bromo Suzuki coupling", 5, 7400, 0.91),
    class("6.1.1 N-Boc deprotection", 5, 6100, 0.96),
    class("1.7.9 Williamson ether synthesis", 4, 2300, 0.86),
    class("2.1.2 Carboxylic acid amine condensation", 4, 4100, 0.82),
    class("7.1.1 Nitro to amino", 4, 900, 0.88),
    class("1.3.7 Chloro N-arylation", 3, 450, 0.72),
    class("6.2.1 Ester hydrolysis", 3, 380, 0.77),
    class("9.1.6 Hydroxy to chloro", 2, 120, 0.64),
];

/// Classes introduced by inserted reaction layers.
pub const ALTERNATIVE_CLASSES: [SyntheticClass; 6] = [
    class("1.6.2 Bromo N-alkylation", 3, 210, 0.66),
    class("3.3.1 Sonogashira coupling", 2, 95, 0.58),
    class("5.1.1 N-Boc protection", 2, 70, 0.62),
    class("8.1.4 Alcohol to aldehyde oxidation", 1, 40, 0.45),
    class("10.1.1 Bromination", 2, 55, 0.52),
    class("11.9 Unrecognized", 1, 12, 0.30),
];

pub fn synthetic_classes() -> impl Iterator<Item = &'static SyntheticClass> {
    REFERENCE_CLASSES.iter().chain(ALTERNATIVE_CLASSES.iter())
}

/// Planted quality of a class id, if it is one of the synthetic classes.
pub fn planted_quality(class_id: &str) -> Option<u8> {
    synthetic_classes()
        .find(|c| c.id == class_id)
        .map(|c| c.quality)
}

/// Purchasable building blocks.
pub const STOCK: [&str; 30] = [
    "C",
    "CC",
    "CO",
    "CCO",
    "CN",
    "CCN",
    "O=CO",
    "CC(=O)O",
    "CC(=O)Cl",
    "c1ccccc1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "Clc1ccccc1",
    "C1CCNCC1",
    "C1CCOC1",
    "CC(C)O",
    "CCOC(=O)C",
    "OB(O)c1ccccc1",
    "Brc1ccccc1",
    "C=O",
    "CS(=O)(=O)Cl",
    "NCC(=O)O",
    "OCCO",
    "CCCCBr",
    "N#Cc1ccccc1",
    "COc1ccccc1",
    "Cc1ccccc1",
    "O=C(O)c1ccccc1",
    "CNC",
    "CC(C)(C)OC(=O)OC(=O)OC(C)(C)C",
];

/// Building blocks used by relabel edits; never in stock.
pub const NON_STOCK: [&str; 14] = [
    "BrCCBr",
    "ICc1ccccc1",
    "P(c1ccccc1)(c1ccccc1)c1ccccc1",
    "CSC",
    "O=[N+]([O-])c1ccccc1",
    "FC(F)(F)c1ccccc1",
    "CC(C)(C)[Si](C)(C)Cl",
    "Ic1ccncc1",
    "Brc1cccs1",
    "ClC(Cl)Cl",
    "O=S(=O)(O)c1ccccc1",
    "CCCCCCCCBr",
    "N#CCC#N",
    "FC(F)Br",
];

const FRAGMENTS: [&str; 13] = [
    "C",
    "CC",
    "C(C)",
    "N",
    "O",
    "C(=O)",
    "C(=O)N",
    "S",
    "C(F)",
    "C(Cl)",
    "c1ccc(cc1)",
    "C1CCN(CC1)",
    "C1CC1",
];

/// Price per replaced node (the reaction and each reactant) of the
/// purchased intermediate left behind by a deletion edit.
pub const PURCHASED_PRICE_PER_NODE: f64 = 6.0;

fn assemble(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| *FRAGMENTS.choose(rng).expect("non-empty"))
        .collect()
}

fn stock_leaf(rng: &mut ChaCha8Rng) -> MoleculeNode {
    MoleculeNode::leaf(*STOCK.choose(rng).expect("non-empty"), true)
}

fn reaction(class: &SyntheticClass, reactants: Vec<MoleculeNode>) -> ReactionNode {
    let mut rxn = ReactionNode::new(class.id, reactants);
    rxn.metadata
        .insert("planted_quality".into(), Value::from(class.quality));
    rxn
}

fn build_reference(rng: &mut ChaCha8Rng, target: String, depth: usize) -> MoleculeNode {
    fn expand(rng: &mut ChaCha8Rng, smiles: String, depth: usize) -> MoleculeNode {
        let class = REFERENCE_CLASSES.choose(rng).expect("non-empty");
        let n = match rng.random_range(0..4) {
            0 => 1,
            1 | 2 => 2,
            _ => 3,
        };
        let spine = rng.random_range(0..n);
        let reactants = (0..n)
            .map(|i| {
                if depth > 1 && (i == spine || rng.random_bool(0.25)) {
                    let smiles = assemble(rng, 3, 5);
                    expand(rng, smiles, depth - 1)
                } else {
                    stock_leaf(rng)
                }
            })
            .collect();
        MoleculeNode::made_by(smiles, reaction(class, reactants))
    }
    expand(rng, target, depth)
}

type NodePath = Vec<usize>;

fn node_mut<'a>(root: &'a mut MoleculeNode, path: &[usize]) -> &'a mut MoleculeNode {
    let mut node = root;
    for &i in path {
        node = &mut node
            .reaction
            .as_mut()
            .expect("path through reaction")
            .reactants[i];
    }
    node
}

fn node_at<'a>(root: &'a MoleculeNode, path: &[usize]) -> &'a MoleculeNode {
    let mut node = root;
    for &i in path {
        node = &node
            .reaction
            .as_ref()
            .expect("path through reaction")
            .reactants[i];
    }
    node
}

fn molecule_paths(root: &MoleculeNode) -> Vec<NodePath> {
    fn go(m: &MoleculeNode, path: &mut NodePath, out: &mut Vec<NodePath>) {
        out.push(path.clone());
        if let Some(r) = &m.reaction {
            for (i, c) in r.reactants.iter().enumerate() {
                path.push(i);
                go(c, path, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(root, &mut Vec::new(), &mut out);
    out
}

/// Replacement SMILES for a leaf that keep its canonical sibling position.
fn order_preserving_replacements(root: &MoleculeNode, path: &[usize]) -> Vec<&'static str> {
    let old = node_at(root, path).smiles.as_str();
    let parent = node_at(root, &path[..path.len() - 1]);
    let me = path[path.len() - 1];
    let siblings: Vec<&str> = parent
        .reaction
        .as_ref()
        .expect("parent reaction")
        .reactants
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != me)
        .map(|(_, m)| m.smiles.as_str())
        .filter(|&s| s != old)
        .collect();
    NON_STOCK
        .iter()
        .copied()
        .filter(|&s| s != old && !siblings.contains(&s))
        .filter(|&s| siblings.iter().all(|&sib| s.cmp(sib) == old.cmp(sib)))
        .collect()
}

/// A stock leaf no earlier edit has touched.
fn pristine(m: &MoleculeNode) -> bool {
    m.is_leaf() && m.in_stock == Some(true) && m.price.is_none()
}

/// Edit sites. Edits never overwrite one another's traces: purchased
/// intermediates are not relabelled, layers are inserted only on untouched
/// stock leaves, and only reference reactions over untouched leaves are
/// deleted.
fn applicable(root: &MoleculeNode, kind: EditKind) -> Vec<NodePath> {
    let paths = molecule_paths(root);
    match kind {
        EditKind::Relabel => paths
            .into_iter()
            .filter(|p| !p.is_empty())
            .filter(|p| {
                let m = node_at(root, p);
                m.is_leaf() && m.price.is_none()
            })
            .filter(|p| !order_preserving_replacements(root, p).is_empty())
            .collect(),
        EditKind::InsertLayer => paths
            .into_iter()
            .filter(|p| !p.is_empty() && pristine(node_at(root, p)))
            .collect(),
        EditKind::DeleteSubtree => paths
            .into_iter()
            .filter(|p| !p.is_empty())
            .filter(|p| {
                node_at(root, p).reaction.as_ref().is_some_and(|r| {
                    REFERENCE_CLASSES.iter().any(|c| c.id == r.class_id)
                        && r.reactants.iter().all(pristine)
                })
            })
            .collect(),
    }
}

fn apply_edit(
    rng: &mut ChaCha8Rng,
    root: &mut MoleculeNode,
    kinds: &[EditKind],
) -> Result<EditKind, RouteError> {
    let options: Vec<(EditKind, Vec<NodePath>)> = kinds
        .iter()
        .map(|&k| (k, applicable(root, k)))
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let (kind, paths) = options
        .choose(rng)
        .ok_or_else(|| RouteError::Generation(format!("no applicable edit among {kinds:?}")))?;
    let path = paths.choose(rng).expect("non-empty").clone();
    match kind {
        EditKind::Relabel => {
            let replacement = *order_preserving_replacements(root, &path)
                .choose(rng)
                .expect("non-empty");
            let node = node_mut(root, &path);
            node.smiles = replacement.to_string();
            node.in_stock = Some(false);
            node.price = None;
        }
        EditKind::InsertLayer => {
            let class = ALTERNATIVE_CLASSES.choose(rng).expect("non-empty");
            let n = rng.random_range(1..=2);
            let reactants = (0..n).map(|_| stock_leaf(rng)).collect();
            let node = node_mut(root, &path);
            node.in_stock = None;
            node.price = None;
            node.reaction = Some(Box::new(reaction(class, reactants)));
        }
        EditKind::DeleteSubtree => {
            let node = node_mut(root, &path);
            let removed = node.reaction.take().map_or(0, |r| r.reactants.len() + 1);
            node.in_stock = Some(true);
            node.price = Some(PURCHASED_PRICE_PER_NODE * removed as f64);
        }
    }
    Ok(*kind)
}

const DISTINCT_ATTEMPTS: usize = 32;

/// Molecules and classes only, so candidates differing just in stock or
/// price annotations count as duplicates.
fn topology(node: &MoleculeNode) -> String {
    match &node.reaction {
        None => node.smiles.clone(),
        Some(rxn) => {
            let mut children: Vec<String> = rxn.reactants.iter().map(topology).collect();
            children.sort();
            format!("{}<{}>({})", node.smiles, rxn.class_id, children.join(","))
        }
    }
}

/// Generate one family. A pure function of `(seed, config)`.
pub fn generate_synthetic_family(seed: u64, config: &GenConfig) -> Result<RouteFamily, RouteError> {
    if config.n_candidates < 2 {
        return Err(RouteError::Generation(
            "n_candidates must be at least 2".into(),
        ));
    }
    if config.max_depth < 1 {
        return Err(RouteError::Generation(
            "max_depth must be at least 1".into(),
        ));
    }
    if config.perturb_ops > 0 && config.edit_kinds.is_empty() {
        return Err(RouteError::Generation(
            "perturb_ops > 0 but no edit kinds enabled".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = assemble(&mut rng, 5, 8);
    let depth = rng.random_range(1..=config.max_depth);
    let reference = RouteTree::new(build_reference(&mut rng, target, depth));
    let reference_index = rng.random_range(0..config.n_candidates);

    let mut candidates = Vec::with_capacity(config.n_candidates);
    let mut edit_counts = Vec::with_capacity(config.n_candidates);
    let mut seen = std::collections::BTreeSet::new();
    seen.insert(topology(&reference.root));
    for idx in 0..config.n_candidates {
        if idx == reference_index || config.perturb_ops == 0 {
            candidates.push(reference.clone());
            edit_counts.push(0);
            continue;
        }
        let n_edits = rng.random_range(1..=config.perturb_ops);
        let mut kinds = config.edit_kinds.clone();
        kinds.sort();
        kinds.dedup();
        let mut chosen = None;
        for _ in 0..DISTINCT_ATTEMPTS {
            let mut root = reference.root.clone();
            let mut applied = 0;
            for _ in 0..n_edits {
                match apply_edit(&mut rng, &mut root, &kinds) {
                    Ok(_) => applied += 1,
                    Err(e) if applied == 0 => return Err(e),
                    Err(_) => break,
                }
            }
            let route = RouteTree::new(root);
            let distinct = seen.insert(topology(&route.root));
            chosen = Some((route, applied));
            if distinct {
                break;
            }
        }
        let (route, applied) = chosen.expect("at least one attempt");
        candidates.push(route);
        edit_counts.push(applied);
    }
    let family = RouteFamily {
        molecule_id: format!("syn-{seed:016x}"),
        reference_index,
        candidates,
        edit_counts: Some(edit_counts),
        duplicates_removed: 0,
        extra: Default::default(),
    };
    family.check()?;
    Ok(family)
}

/// Expert-style labels from planted qualities: per-reaction points in
/// [`super::route_reactions`] order and the route minimum.
pub fn planted_labels(route: &RouteTree) -> Option<(u8, Vec<u8>)> {
    let mut by_key: Vec<(u64, String, u8)> = route
        .reactions_with_products()
        .into_iter()
        .map(|(product, rxn)| {
            let q = rxn
                .metadata
                .get("planted_quality")
                .and_then(Value::as_u64)
                .map(|q| q as u8)
                .or_else(|| planted_quality(&rxn.class_id));
            q.map(|q| (product.key(), product.smiles.clone(), q))
        })
        .collect::<Option<Vec<_>>>()?;
    by_key.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let steps: Vec<u8> = by_key.into_iter().map(|(_, _, q)| q).collect();
    let points = *steps.iter().min()?;
    Some((points, steps))
}
