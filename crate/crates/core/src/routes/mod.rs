//! Route trees: molecule/reaction alternating trees rooted at the target.
//!
//! The molecule → reaction → molecules alternation is encoded in the types: a
//! molecule holds at most one producing reaction, a reaction holds its
//! reactants. Everything else the route invariants demand is checked by
//! [`validate_route`].

mod io;
pub mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::Value;
use thiserror::Error;

use crate::chem::{parse_smiles, ChemError};
use crate::hash::fnv1a;

pub use io::{family_to_json, parse_route_file, write_route_file};
pub use synth::{generate_synthetic_family, EditKind, GenConfig};

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },
    #[error("invalid route structure at {path}: {message}")]
    Structure { path: String, message: String },
    #[error("at {path}: {source}")]
    Chem {
        path: String,
        #[source]
        source: ChemError,
    },
    #[error("route violates invariants: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("invalid route family: {0}")]
    Family(String),
    #[error("cannot generate family: {0}")]
    Generation(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("{}: {}", x.path, x.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// One violated route invariant, located by node path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoleculeNode {
    pub smiles: String,
    /// `None` when the source document did not state stock membership.
    pub in_stock: Option<bool>,
    pub price: Option<f64>,
    /// Unrecognised keys from the source document.
    pub extra: BTreeMap<String, Value>,
    pub reaction: Option<Box<ReactionNode>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNode {
    pub class_id: String,
    pub metadata: BTreeMap<String, Value>,
    pub extra: BTreeMap<String, Value>,
    pub reactants: Vec<MoleculeNode>,
}

impl MoleculeNode {
    pub fn leaf(smiles: impl Into<String>, in_stock: bool) -> MoleculeNode {
        MoleculeNode {
            smiles: smiles.into(),
            in_stock: Some(in_stock),
            price: None,
            extra: BTreeMap::new(),
            reaction: None,
        }
    }

    /// A molecule made by `reaction`.
    pub fn made_by(smiles: impl Into<String>, reaction: ReactionNode) -> MoleculeNode {
        MoleculeNode {
            smiles: smiles.into(),
            in_stock: None,
            price: None,
            extra: BTreeMap::new(),
            reaction: Some(Box::new(reaction)),
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.reaction.is_none()
    }

    /// Canonical structural serialization: smiles, stock flag, price and the
    /// producing reaction with reactants in sorted order. Metadata is not
    /// part of the structure.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        write!(out, "M[{}|", self.smiles).unwrap();
        match self.in_stock {
            Some(true) => out.push('1'),
            Some(false) => out.push('0'),
            None => out.push('-'),
        }
        out.push('|');
        match self.price {
            Some(p) => write!(out, "{p:?}").unwrap(),
            None => out.push('-'),
        }
        if let Some(rxn) = &self.reaction {
            out.push('|');
            out.push_str(&rxn.canonical_string());
        }
        out.push(']');
        out
    }

    /// Deterministic node key: FNV-1a of the canonical subtree serialization.
    pub fn key(&self) -> u64 {
        fnv1a(self.canonical_string().as_bytes())
    }
}

impl ReactionNode {
    pub fn new(class_id: impl Into<String>, reactants: Vec<MoleculeNode>) -> ReactionNode {
        ReactionNode {
            class_id: class_id.into(),
            metadata: BTreeMap::new(),
            extra: BTreeMap::new(),
            reactants,
        }
    }

    pub fn canonical_string(&self) -> String {
        let mut children: Vec<String> = self
            .reactants
            .iter()
            .map(MoleculeNode::canonical_string)
            .collect();
        children.sort();
        format!("R[{}|{}]", self.class_id, children.concat())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteTree {
    pub root: MoleculeNode,
}

/// One reaction of a route, as an order-free record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ReactionRecord {
    pub product: String,
    /// Sorted reactant SMILES.
    pub reactants: Vec<String>,
    pub class_id: String,
    /// Key of the product's subtree; canonical ordering and tie-breaks.
    pub key: u64,
}

impl RouteTree {
    pub fn new(root: MoleculeNode) -> RouteTree {
        RouteTree { root }
    }

    pub fn target(&self) -> &str {
        &self.root.smiles
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions_with_products().len()
    }

    /// Depth in reactions (a single-step route has depth 1).
    pub fn depth(&self) -> usize {
        fn go(m: &MoleculeNode) -> usize {
            m.reaction
                .as_ref()
                .map_or(0, |r| 1 + r.reactants.iter().map(go).max().unwrap_or(0))
        }
        go(&self.root)
    }

    pub fn canonical_string(&self) -> String {
        self.root.canonical_string()
    }

    pub fn key(&self) -> u64 {
        self.root.key()
    }

    /// Every molecule node, pre-order.
    pub fn molecules(&self) -> Vec<&MoleculeNode> {
        fn go<'a>(m: &'a MoleculeNode, out: &mut Vec<&'a MoleculeNode>) {
            out.push(m);
            if let Some(r) = &m.reaction {
                for c in &r.reactants {
                    go(c, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.root, &mut out);
        out
    }

    pub fn leaves(&self) -> Vec<&MoleculeNode> {
        self.molecules()
            .into_iter()
            .filter(|m| m.is_leaf())
            .collect()
    }

    /// Non-leaf molecules other than the target.
    pub fn intermediates(&self) -> Vec<&MoleculeNode> {
        self.molecules()
            .into_iter()
            .skip(1)
            .filter(|m| !m.is_leaf())
            .collect()
    }

    /// `(product molecule, reaction)` pairs, pre-order.
    pub fn reactions_with_products(&self) -> Vec<(&MoleculeNode, &ReactionNode)> {
        self.molecules()
            .into_iter()
            .filter_map(|m| m.reaction.as_deref().map(|r| (m, r)))
            .collect()
    }
}

/// The reactions of a route as records sorted by key (then content), so the
/// result is independent of reactant order in the source.
pub fn route_reactions(route: &RouteTree) -> Vec<ReactionRecord> {
    let mut records: Vec<ReactionRecord> = route
        .reactions_with_products()
        .into_iter()
        .map(|(product, rxn)| {
            let mut reactants: Vec<String> =
                rxn.reactants.iter().map(|m| m.smiles.clone()).collect();
            reactants.sort();
            ReactionRecord {
                product: product.smiles.clone(),
                reactants,
                class_id: rxn.class_id.clone(),
                key: product.key(),
            }
        })
        .collect();
    records.sort_by(|a, b| {
        a.key
            .cmp(&b.key)
            .then_with(|| a.product.cmp(&b.product))
            .then_with(|| a.reactants.cmp(&b.reactants))
            .then_with(|| a.class_id.cmp(&b.class_id))
    });
    records
}

/// Report every violated route invariant with its node path. Paths start at
/// `root` and follow the document layout (`root.children[0].children[1]`).
pub fn validate_route(route: &RouteTree) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    if route.root.reaction.is_none() {
        violations.push(Violation {
            path: "root".into(),
            message: "n_reactions ≥ 1".into(),
        });
    }
    validate_molecule(&route.root, "root", &mut violations);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn validate_molecule(m: &MoleculeNode, path: &str, out: &mut Vec<Violation>) {
    let mut push = |message: String| {
        out.push(Violation {
            path: path.to_string(),
            message,
        })
    };
    if let Err(e) = parse_smiles(&m.smiles) {
        push(e.to_string());
    }
    if let Some(p) = m.price {
        if !(p.is_finite() && p >= 0.0) {
            push(format!("price {p} must be a nonnegative real"));
        }
    }
    match &m.reaction {
        None => {
            if m.in_stock.is_none() && m.price.is_none() {
                push(format!(
                    "leaf '{}' has neither in_stock nor price",
                    m.smiles
                ));
            }
        }
        Some(rxn) => {
            let rpath = format!("{path}.children[0]");
            if rxn.class_id.trim().is_empty() {
                out.push(Violation {
                    path: rpath.clone(),
                    message: "empty class_id".into(),
                });
            }
            if rxn.reactants.is_empty() {
                out.push(Violation {
                    path: rpath.clone(),
                    message: "reaction has no reactants".into(),
                });
            }
            for (i, child) in rxn.reactants.iter().enumerate() {
                validate_molecule(child, &format!("{rpath}.children[{i}]"), out);
            }
        }
    }
}

/// One target molecule's candidate routes; the reference is one of them.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteFamily {
    pub molecule_id: String,
    pub reference_index: usize,
    pub candidates: Vec<RouteTree>,
    /// Number of edits applied to each candidate, when generated.
    pub edit_counts: Option<Vec<usize>>,
    /// Duplicate candidates dropped on ingestion.
    pub duplicates_removed: usize,
    pub extra: BTreeMap<String, Value>,
}

impl RouteFamily {
    pub fn reference(&self) -> &RouteTree {
        &self.candidates[self.reference_index]
    }

    pub fn target(&self) -> &str {
        self.reference().target()
    }

    pub fn is_reference(&self, idx: usize) -> bool {
        idx == self.reference_index
    }

    /// Stable per-candidate identifier `<molecule_id>#<index>`.
    pub fn route_id(&self, idx: usize) -> String {
        format!("{}#{}", self.molecule_id, idx)
    }

    /// Check family-level invariants.
    pub fn check(&self) -> Result<(), RouteError> {
        if self.candidates.is_empty() {
            return Err(RouteError::Family("no routes".into()));
        }
        if self.reference_index >= self.candidates.len() {
            return Err(RouteError::Family(format!(
                "reference_index {} out of range for {} routes",
                self.reference_index,
                self.candidates.len()
            )));
        }
        let target = self.target();
        if let Some((i, r)) = self
            .candidates
            .iter()
            .enumerate()
            .find(|(_, r)| r.target() != target)
        {
            return Err(RouteError::Family(format!(
                "routes[{i}] targets '{}' but the reference targets '{target}'",
                r.target()
            )));
        }
        if let Some(counts) = &self.edit_counts {
            if counts.len() != self.candidates.len() {
                return Err(RouteError::Family(
                    "edit_counts length differs from routes".into(),
                ));
            }
        }
        Ok(())
    }

    /// Drop structurally duplicate candidates, keeping the reference and the
    /// first occurrence of everything else. Returns the number removed.
    pub fn dedup(&mut self) -> usize {
        let reference = self.reference().canonical_string();
        let mut seen = std::collections::BTreeSet::new();
        seen.insert(reference);
        let mut keep = Vec::with_capacity(self.candidates.len());
        for (i, route) in self.candidates.iter().enumerate() {
            if i == self.reference_index || seen.insert(route.canonical_string()) {
                keep.push(i);
            }
        }
        let removed = self.candidates.len() - keep.len();
        if removed == 0 {
            return 0;
        }
        let new_ref = keep
            .iter()
            .position(|&i| i == self.reference_index)
            .expect("reference kept");
        let old = std::mem::take(&mut self.candidates);
        let mut old: Vec<Option<RouteTree>> = old.into_iter().map(Some).collect();
        self.candidates = keep
            .iter()
            .map(|&i| old[i].take().expect("unique"))
            .collect();
        if let Some(counts) = &self.edit_counts {
            self.edit_counts = Some(keep.iter().map(|&i| counts[i]).collect());
        }
        self.reference_index = new_ref;
        self.duplicates_removed += removed;
        removed
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Target "CCCCO" made in one step from two stock leaves.
    pub fn one_step() -> RouteTree {
        RouteTree::new(MoleculeNode::made_by(
            "CCCCO",
            ReactionNode::new(
                "R1",
                vec![
                    MoleculeNode::leaf("CCC", true),
                    MoleculeNode::leaf("CO", true),
                ],
            ),
        ))
    }

    /// T <- I1 <- I2 <- leaves: three reactions, intermediates "CC" and "CCC".
    pub fn three_step_linear() -> RouteTree {
        let step3 = ReactionNode::new(
            "R3",
            vec![MoleculeNode::leaf("C", true), MoleculeNode::leaf("O", true)],
        );
        let step2 = ReactionNode::new(
            "R2",
            vec![
                MoleculeNode::made_by("CC", step3),
                MoleculeNode::leaf("N", true),
            ],
        );
        let step1 = ReactionNode::new(
            "R1",
            vec![
                MoleculeNode::made_by("CCC", step2),
                MoleculeNode::leaf("Cl", true),
            ],
        );
        RouteTree::new(MoleculeNode::made_by("CCCN", step1))
    }

    /// Target with two intermediates under the same reaction.
    pub fn branched() -> RouteTree {
        let left = ReactionNode::new(
            "RA",
            vec![MoleculeNode::leaf("C", true), MoleculeNode::leaf("O", true)],
        );
        let right = ReactionNode::new(
            "RB",
            vec![MoleculeNode::leaf("N", true), MoleculeNode::leaf("S", true)],
        );
        let top = ReactionNode::new(
            "RT",
            vec![
                MoleculeNode::made_by("CO", left),
                MoleculeNode::made_by("CN", right),
            ],
        );
        RouteTree::new(MoleculeNode::made_by("COCN", top))
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn one_step_record() {
        let route = one_step();
        let records = route_reactions(&route);
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].product, route.target());
        assert_eq!(records[0].reactants, vec!["CCC", "CO"]);
        assert_eq!(route.n_reactions(), 1);
        assert!(validate_route(&route).is_ok());
    }

    #[test]
    fn linear_records_chain() {
        let route = three_step_linear();
        let records = route_reactions(&route);
        assert_eq!(records.len(), 3);
        let by_product: BTreeMap<_, _> = records.iter().map(|r| (r.product.as_str(), r)).collect();
        assert!(by_product["CCCN"].reactants.contains(&"CCC".to_string()));
        assert!(by_product["CCC"].reactants.contains(&"CC".to_string()));
        assert!(by_product["CC"].reactants.contains(&"C".to_string()));
        assert_eq!(route.depth(), 3);
        assert_eq!(route.intermediates().len(), 2);
    }

    #[test]
    fn branched_records() {
        let route = branched();
        let records = route_reactions(&route);
        assert_eq!(records.len(), 3);
        let feeding_target: Vec<_> = records
            .iter()
            .filter(|r| {
                route_reactions(&route)
                    .iter()
                    .any(|top| top.product == "COCN" && top.reactants.contains(&r.product))
            })
            .collect();
        assert_eq!(feeding_target.len(), 2);
    }

    #[test]
    fn records_ignore_reactant_order() {
        let mut route = branched();
        route.root.reaction.as_mut().unwrap().reactants.reverse();
        assert_eq!(route_reactions(&route), route_reactions(&branched()));
        assert_eq!(route.key(), branched().key());
    }

    #[test]
    fn zero_reactions_violation() {
        let route = RouteTree::new(MoleculeNode::leaf("CCO", true));
        let v = validate_route(&route).unwrap_err();
        assert_eq!(v[0].message, "n_reactions ≥ 1");
    }

    #[test]
    fn leaf_without_stock_or_price() {
        let mut route = one_step();
        route.root.reaction.as_mut().unwrap().reactants[1].in_stock = None;
        let v = validate_route(&route).unwrap_err();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "root.children[0].children[1]");
        assert!(v[0].message.contains("'CO'"));
    }

    #[test]
    fn collects_every_violation() {
        let mut route = one_step();
        let rxn = route.root.reaction.as_mut().unwrap();
        rxn.class_id = String::new();
        rxn.reactants[0].smiles = "C(".into();
        rxn.reactants[0].price = Some(-1.0);
        let v = validate_route(&route).unwrap_err();
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn dedup_keeps_reference() {
        let mut fam = RouteFamily {
            molecule_id: "m".into(),
            reference_index: 2,
            candidates: vec![
                three_step_linear(),
                one_step(),
                three_step_linear(),
                one_step(),
            ],
            edit_counts: Some(vec![1, 2, 0, 3]),
            duplicates_removed: 0,
            extra: BTreeMap::new(),
        };
        assert_eq!(fam.dedup(), 2);
        assert_eq!(fam.candidates.len(), 2);
        assert_eq!(fam.reference_index, 1);
        assert_eq!(fam.edit_counts, Some(vec![2, 0]));
        assert_eq!(fam.reference(), &three_step_linear());
    }
}
