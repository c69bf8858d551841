//! Tree edit distance between routes.
//!
//! Routes become ordered labelled trees whose children are sorted
//! canonically, so the ordered distance is independent of how reactants were
//! listed in the source. [`tree_edit_distance`] is Zhang–Shasha;
//! [`ted_oracle`] enumerates every valid ordered mapping and is only meant
//! for checking it on small trees.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chem::{tanimoto, ChemConfig, ChemError, Fingerprint};
use crate::features::sdf_embedding;
use crate::hash::Fnv64;
use crate::routes::{MoleculeNode, ReactionRecord, RouteTree};

#[derive(Debug, Error)]
pub enum TedError {
    #[error("tree kinds must alternate molecule/reaction from a molecule root ({0})")]
    Alternation(String),
    #[error("oracle limited to {max} nodes per tree, got {got}")]
    OracleTooLarge { max: usize, got: usize },
    #[error("candidate targets '{candidate}' but reference targets '{reference}'")]
    TargetMismatch {
        candidate: String,
        reference: String,
    },
    #[error("chemistry error for '{smiles}': {source}")]
    Chem {
        smiles: String,
        #[source]
        source: ChemError,
    },
    #[error("invalid cost configuration: {0}")]
    Cost(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Molecule,
    Reaction,
}

/// Owned recursive node used to build a [`LabeledTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledNode {
    pub kind: NodeKind,
    pub label_fp: Fingerprint,
    pub label_text: String,
    pub children: Vec<LabeledNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedNode {
    pub kind: NodeKind,
    pub label_fp: Fingerprint,
    pub label_text: String,
    pub children: Vec<usize>,
}

/// Canonically ordered labelled tree in pre-order; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTree {
    nodes: Vec<TedNode>,
}

fn serialize_subtree(node: &LabeledNode, children: &[String]) -> String {
    let mut h = Fnv64::new();
    for w in node.label_fp.words() {
        h.write_u64(*w);
    }
    let kind = match node.kind {
        NodeKind::Molecule => 'M',
        NodeKind::Reaction => 'R',
    };
    format!(
        "{kind}({}|{:016x}){{{}}}",
        node.label_text,
        h.finish(),
        children.concat()
    )
}

impl LabeledTree {
    /// Canonicalise and flatten. Children are sorted by label text, ties by
    /// the hash of their subtree serialization.
    pub fn new(root: LabeledNode) -> Result<LabeledTree, TedError> {
        if root.kind != NodeKind::Molecule {
            return Err(TedError::Alternation("root is not a molecule".into()));
        }
        fn check(node: &LabeledNode) -> Result<(), TedError> {
            for c in &node.children {
                if c.kind == node.kind {
                    return Err(TedError::Alternation(format!(
                        "'{}' has a child of the same kind",
                        node.label_text
                    )));
                }
                check(c)?;
            }
            Ok(())
        }
        check(&root)?;

        // Returns the subtree's serialization and a canonically ordered copy.
        fn canon(node: LabeledNode) -> (String, LabeledNode) {
            let mut kids: Vec<(String, LabeledNode)> =
                node.children.into_iter().map(canon).collect();
            kids.sort_by(|a, b| {
                a.1.label_text
                    .cmp(&b.1.label_text)
                    .then_with(|| {
                        crate::hash::fnv1a(a.0.as_bytes()).cmp(&crate::hash::fnv1a(b.0.as_bytes()))
                    })
                    .then_with(|| a.0.cmp(&b.0))
            });
            let serials: Vec<String> = kids.iter().map(|k| k.0.clone()).collect();
            let node = LabeledNode {
                children: kids.into_iter().map(|k| k.1).collect(),
                ..node
            };
            (serialize_subtree(&node, &serials), node)
        }
        let (_, root) = canon(root);

        let mut nodes = Vec::new();
        fn flatten(node: LabeledNode, nodes: &mut Vec<TedNode>) -> usize {
            let idx = nodes.len();
            nodes.push(TedNode {
                kind: node.kind,
                label_fp: node.label_fp,
                label_text: node.label_text,
                children: Vec::new(),
            });
            let kids: Vec<usize> = node
                .children
                .into_iter()
                .map(|c| flatten(c, nodes))
                .collect();
            nodes[idx].children = kids;
            idx
        }
        flatten(root, &mut nodes);
        Ok(LabeledTree { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TedNode] {
        &self.nodes
    }

    /// Post-order node ids and, per post-order position, the post-order
    /// position of the leftmost leaf descendant.
    fn postorder(&self) -> (Vec<usize>, Vec<usize>) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut leftmost = Vec::with_capacity(self.nodes.len());
        fn go(
            t: &LabeledTree,
            n: usize,
            order: &mut Vec<usize>,
            leftmost: &mut Vec<usize>,
        ) -> usize {
            let mut first = None;
            for &c in &t.nodes[n].children {
                let l = go(t, c, order, leftmost);
                first.get_or_insert(l);
            }
            let pos = order.len();
            order.push(n);
            let l = first.unwrap_or(pos);
            leftmost.push(l);
            l
        }
        go(self, 0, &mut order, &mut leftmost);
        (order, leftmost)
    }
}

/// How same-kind substitutions are priced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelCost {
    /// 0 for equal label text, 1 otherwise.
    Unit,
    /// `1 - tanimoto(fp_a, fp_b)`.
    #[default]
    Tanimoto,
}

/// Edit costs (`ted.*`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub insert: f64,
    pub delete: f64,
    pub cross_kind: f64,
    pub label_cost: LabelCost,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            insert: 1.0,
            delete: 1.0,
            cross_kind: 2.0,
            label_cost: LabelCost::Tanimoto,
        }
    }
}

impl CostConfig {
    pub fn unit() -> CostConfig {
        CostConfig {
            label_cost: LabelCost::Unit,
            ..CostConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TedError> {
        if !(self.insert > 0.0 && self.delete > 0.0) {
            return Err(TedError::Cost(
                "insert and delete costs must be positive".into(),
            ));
        }
        if self.cross_kind.is_nan() || self.cross_kind < self.insert + self.delete {
            return Err(TedError::Cost(
                "cross_kind must be at least insert + delete".into(),
            ));
        }
        Ok(())
    }

    pub fn substitute(&self, a: &TedNode, b: &TedNode) -> f64 {
        if a.kind != b.kind {
            return self.cross_kind;
        }
        match self.label_cost {
            LabelCost::Unit => {
                if a.label_text == b.label_text {
                    0.0
                } else {
                    1.0
                }
            }
            LabelCost::Tanimoto => 1.0 - tanimoto(&a.label_fp, &b.label_fp).unwrap_or(0.0),
        }
    }
}

/// Minimal cost of insertions, deletions and substitutions turning `a`
/// into `b` under ordered-tree semantics (Zhang–Shasha).
pub fn tree_edit_distance(a: &LabeledTree, b: &LabeledTree, cost: &CostConfig) -> f64 {
    let (order_a, l_a) = a.postorder();
    let (order_b, l_b) = b.postorder();
    let (n, m) = (order_a.len(), order_b.len());
    let sub: Vec<f64> = order_a
        .iter()
        .flat_map(|&i| order_b.iter().map(move |&j| (i, j)))
        .map(|(i, j)| cost.substitute(&a.nodes[i], &b.nodes[j]))
        .collect();
    let keyroots = |l: &[usize]| -> Vec<usize> {
        (0..l.len())
            .filter(|&k| !(k + 1..l.len()).any(|k2| l[k2] == l[k]))
            .collect()
    };
    let (kr_a, kr_b) = (keyroots(&l_a), keyroots(&l_b));

    let mut td = vec![0.0f64; n * m];
    let mut fd = vec![0.0f64; (n + 1) * (m + 1)];
    for &i in &kr_a {
        for &j in &kr_b {
            let (li, lj) = (l_a[i], l_b[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            let at = |x: usize, y: usize| x * cols + y;
            fd[at(0, 0)] = 0.0;
            for x in 1..rows {
                fd[at(x, 0)] = fd[at(x - 1, 0)] + cost.delete;
            }
            for y in 1..cols {
                fd[at(0, y)] = fd[at(0, y - 1)] + cost.insert;
            }
            for x in 1..rows {
                let node_x = li + x - 1;
                for y in 1..cols {
                    let node_y = lj + y - 1;
                    let del = fd[at(x - 1, y)] + cost.delete;
                    let ins = fd[at(x, y - 1)] + cost.insert;
                    if l_a[node_x] == li && l_b[node_y] == lj {
                        let s = fd[at(x - 1, y - 1)] + sub[node_x * m + node_y];
                        let v = del.min(ins).min(s);
                        fd[at(x, y)] = v;
                        td[node_x * m + node_y] = v;
                    } else {
                        let s =
                            fd[at(l_a[node_x] - li, l_b[node_y] - lj)] + td[node_x * m + node_y];
                        fd[at(x, y)] = del.min(ins).min(s);
                    }
                }
            }
        }
    }
    td[n * m - 1]
}

pub const ORACLE_MAX_NODES: usize = 8;

/// Exact distance by enumerating every ordered mapping (pre-order monotone,
/// ancestry preserving). Limited to [`ORACLE_MAX_NODES`] nodes per tree.
pub fn ted_oracle(a: &LabeledTree, b: &LabeledTree, cost: &CostConfig) -> Result<f64, TedError> {
    for t in [a, b] {
        if t.len() > ORACLE_MAX_NODES {
            return Err(TedError::OracleTooLarge {
                max: ORACLE_MAX_NODES,
                got: t.len(),
            });
        }
    }
    // Pre-order ids are the node indices themselves.
    fn ancestors(t: &LabeledTree) -> Vec<Vec<bool>> {
        let n = t.len();
        let mut anc = vec![vec![false; n]; n];
        fn go(t: &LabeledTree, node: usize, stack: &mut Vec<usize>, anc: &mut [Vec<bool>]) {
            for &s in stack.iter() {
                anc[s][node] = true;
            }
            stack.push(node);
            for &c in &t.nodes[node].children {
                go(t, c, stack, anc);
            }
            stack.pop();
        }
        go(t, 0, &mut Vec::new(), &mut anc);
        anc
    }
    let (anc_a, anc_b) = (ancestors(a), ancestors(b));

    struct Search<'a> {
        a: &'a LabeledTree,
        b: &'a LabeledTree,
        anc_a: Vec<Vec<bool>>,
        anc_b: Vec<Vec<bool>>,
        cost: &'a CostConfig,
        pairs: Vec<(usize, usize)>,
        best: f64,
    }
    impl Search<'_> {
        fn total(&self, sub: f64) -> f64 {
            let k = self.pairs.len() as f64;
            sub + self.cost.delete * (self.a.len() as f64 - k)
                + self.cost.insert * (self.b.len() as f64 - k)
        }
        fn run(&mut self, i: usize, min_j: usize, sub: f64) {
            if i == self.a.len() {
                let t = self.total(sub);
                if t < self.best {
                    self.best = t;
                }
                return;
            }
            self.run(i + 1, min_j, sub);
            for j in min_j..self.b.len() {
                let consistent = self
                    .pairs
                    .iter()
                    .all(|&(pi, pj)| self.anc_a[pi][i] == self.anc_b[pj][j]);
                if !consistent {
                    continue;
                }
                let s = self.cost.substitute(&self.a.nodes[i], &self.b.nodes[j]);
                self.pairs.push((i, j));
                self.run(i + 1, j + 1, sub + s);
                self.pairs.pop();
            }
        }
    }
    let mut search = Search {
        a,
        b,
        anc_a,
        anc_b,
        cost,
        pairs: Vec::new(),
        best: f64::INFINITY,
    };
    search.run(0, 0, 0.0);
    Ok(search.best)
}

fn chem_err(smiles: &str) -> impl FnOnce(ChemError) -> TedError + '_ {
    move |source| TedError::Chem {
        smiles: smiles.to_string(),
        source,
    }
}

/// Molecule labels are Morgan fingerprints and SMILES; reaction labels are
/// the SDF vector rendered to bits (bit set where nonzero) and the class id.
pub fn route_to_ted_tree(route: &RouteTree, chem: &ChemConfig) -> Result<LabeledTree, TedError> {
    fn molecule(m: &MoleculeNode, chem: &ChemConfig) -> Result<LabeledNode, TedError> {
        let fp = chem
            .fingerprint(&m.smiles)
            .map_err(chem_err(&m.smiles))?
            .without_counts();
        let children = match &m.reaction {
            None => Vec::new(),
            Some(rxn) => {
                let record = ReactionRecord {
                    product: m.smiles.clone(),
                    reactants: rxn.reactants.iter().map(|r| r.smiles.clone()).collect(),
                    class_id: rxn.class_id.clone(),
                    key: 0,
                };
                let sdf = sdf_embedding(&record, chem).map_err(|e| match e {
                    crate::features::FeatureError::Chem { smiles, source } => {
                        TedError::Chem { smiles, source }
                    }
                    other => TedError::Cost(other.to_string()),
                })?;
                let bits = sdf
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0)
                    .map(|(i, _)| i);
                let label_fp =
                    Fingerprint::from_bits(chem.nbits, bits).map_err(chem_err(&m.smiles))?;
                let reactants = rxn
                    .reactants
                    .iter()
                    .map(|r| molecule(r, chem))
                    .collect::<Result<Vec<_>, _>>()?;
                vec![LabeledNode {
                    kind: NodeKind::Reaction,
                    label_fp,
                    label_text: rxn.class_id.clone(),
                    children: reactants,
                }]
            }
        };
        Ok(LabeledNode {
            kind: NodeKind::Molecule,
            label_fp: fp,
            label_text: m.smiles.clone(),
            children,
        })
    }
    LabeledTree::new(molecule(&route.root, chem)?)
}

/// Distance from `candidate` to `reference`: the pre-training label.
pub fn score_route_ted(
    candidate: &RouteTree,
    reference: &RouteTree,
    cost: &CostConfig,
    chem: &ChemConfig,
) -> Result<f64, TedError> {
    if candidate.target() != reference.target() {
        return Err(TedError::TargetMismatch {
            candidate: candidate.target().to_string(),
            reference: reference.target().to_string(),
        });
    }
    Ok(tree_edit_distance(
        &route_to_ted_tree(candidate, chem)?,
        &route_to_ted_tree(reference, chem)?,
        cost,
    ))
}
