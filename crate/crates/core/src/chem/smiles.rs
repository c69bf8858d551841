//! Structural SMILES reader.
//!
//! Supported: organic-subset atoms, bracket atoms with explicit hydrogens and
//! charge, `-`/`=`/`#` bonds, lowercase aromatic atoms, ring closures (`1`,
//! `%12`), branches and `.`-separated components. Stereochemistry, isotopes,
//! atom classes and every other construct are rejected with a positioned
//! error. Valence is never checked.

use std::collections::BTreeMap;

use super::ChemError;

/// Bond multiplicity as written (or implied) in the SMILES string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Stable byte code used in hashing.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    fn valence_contribution(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    /// Capitalised element symbol (`"C"`, `"Cl"`), also for aromatic input.
    pub element: String,
    pub charge: i8,
    pub aromatic: bool,
    /// Hydrogen count: as written for bracket atoms, implied by the lowest
    /// default valence for organic-subset atoms.
    pub hydrogens: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

/// Molecular graph. Multi-component inputs keep every component in one graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub components: usize,
}

impl MolGraph {
    /// Neighbour lists as `(neighbour, order)` pairs.
    pub fn adjacency(&self) -> Vec<Vec<(usize, BondOrder)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for bond in &self.bonds {
            adj[bond.a].push((bond.b, bond.order));
            adj[bond.b].push((bond.a, bond.order));
        }
        adj
    }

    /// The same graph with atom `i` moved to position `perm[i]`.
    pub fn permute_atoms(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = vec![None; self.atoms.len()];
        for (old, atom) in self.atoms.iter().enumerate() {
            atoms[perm[old]] = Some(atom.clone());
        }
        MolGraph {
            atoms: atoms.into_iter().map(|a| a.expect("permutation")).collect(),
            bonds: self
                .bonds
                .iter()
                .map(|b| Bond {
                    a: perm[b.a],
                    b: perm[b.b],
                    order: b.order,
                })
                .collect(),
            components: self.components,
        }
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != "H").count()
    }

    /// Cyclomatic number `bonds - atoms + components`.
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + self.components).saturating_sub(self.atoms.len())
    }
}

const ORGANIC: [&str; 10] = ["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];

const ELEMENTS: [&str; 118] = [
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

const AROMATIC_BRACKET: [&str; 8] = ["b", "c", "n", "o", "p", "s", "se", "as"];

fn default_valences(element: &str) -> &'static [u32] {
    match element {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

fn capitalise(symbol: &str) -> String {
    let mut chars = symbol.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

struct PendingRing {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    /// Whether the atom came from the organic subset (needs implicit H).
    organic: Vec<bool>,
    bonds: Vec<Bond>,
    rings: BTreeMap<u32, PendingRing>,
    branches: Vec<(usize, usize)>,
    prev: Option<usize>,
    pending_bond: Option<(BondOrder, usize)>,
    components: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            bytes: text.as_bytes(),
            pos: 0,
            atoms: Vec::new(),
            organic: Vec::new(),
            bonds: Vec::new(),
            rings: BTreeMap::new(),
            branches: Vec::new(),
            prev: None,
            pending_bond: None,
            components: 0,
        }
    }

    fn err(&self, position: usize, message: impl Into<String>) -> ChemError {
        ChemError::Smiles {
            smiles: self.text.to_string(),
            position,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn run(mut self) -> Result<MolGraph, ChemError> {
        while let Some(c) = self.peek() {
            match c {
                b'(' => {
                    let prev = self
                        .prev
                        .ok_or_else(|| self.err(self.pos, "branch without a preceding atom"))?;
                    if self.pending_bond.is_some() {
                        return Err(self.err(self.pos, "bond symbol before '('"));
                    }
                    self.branches.push((prev, self.pos));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending_bond.is_some() {
                        return Err(self.err(self.pos, "dangling bond before ')'"));
                    }
                    let (atom, _) = self
                        .branches
                        .pop()
                        .ok_or_else(|| self.err(self.pos, "unmatched ')'"))?;
                    self.prev = Some(atom);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' => {
                    if self.prev.is_none() {
                        return Err(self.err(self.pos, "bond without a preceding atom"));
                    }
                    if self.pending_bond.is_some() {
                        return Err(self.err(self.pos, "two consecutive bond symbols"));
                    }
                    let order = match c {
                        b'-' => BondOrder::Single,
                        b'=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    };
                    self.pending_bond = Some((order, self.pos));
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending_bond.is_some() {
                        return Err(self.err(self.pos, "dangling bond before '.'"));
                    }
                    if !self.branches.is_empty() {
                        return Err(self.err(self.pos, "'.' inside a branch"));
                    }
                    if self.prev.is_none() {
                        return Err(self.err(self.pos, "empty component"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' | b'%' => self.ring_closure()?,
                b'[' => self.bracket_atom()?,
                b'/' | b'\\' => return Err(self.err(self.pos, "stereo bonds are not supported")),
                _ => self.organic_atom()?,
            }
        }
        if let Some((_, position)) = self.pending_bond {
            return Err(self.err(position, "dangling bond at end of input"));
        }
        if let Some(&(_, position)) = self.branches.last() {
            return Err(self.err(position, "unclosed branch"));
        }
        if let Some((_, ring)) = self.rings.iter().next() {
            return Err(self.err(ring.position, "unclosed ring bond"));
        }
        if self.atoms.is_empty() {
            return Err(self.err(0, "no atoms"));
        }
        self.assign_implicit_hydrogens();
        Ok(MolGraph {
            atoms: self.atoms,
            bonds: self.bonds,
            components: self.components,
        })
    }

    fn add_bond(
        &mut self,
        a: usize,
        b: usize,
        order: BondOrder,
        position: usize,
    ) -> Result<(), ChemError> {
        if a == b {
            return Err(self.err(position, "self-bond"));
        }
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return Err(self.err(position, "duplicate bond"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn implied_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn push_atom(&mut self, atom: Atom, organic: bool, position: usize) -> Result<(), ChemError> {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        self.organic.push(organic);
        match self.prev {
            Some(prev) => {
                let order = match self.pending_bond.take() {
                    Some((order, _)) => order,
                    None => self.implied_order(prev, idx),
                };
                self.add_bond(prev, idx, order, position)?;
            }
            None => self.components += 1,
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        let rest = &self.text[start..];
        let (symbol, aromatic) = if rest.starts_with("Cl") {
            ("Cl", false)
        } else if rest.starts_with("Br") {
            ("Br", false)
        } else {
            let c = rest.chars().next().expect("non-empty");
            match c {
                'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I' => (&rest[..1], false),
                'b' | 'c' | 'n' | 'o' | 'p' | 's' => (&rest[..1], true),
                _ => return Err(self.err(start, format!("unexpected character '{c}'"))),
            }
        };
        debug_assert!(ORGANIC.contains(&capitalise(symbol).as_str()));
        self.pos += symbol.len();
        let atom = Atom {
            element: capitalise(symbol),
            charge: 0,
            aromatic,
            hydrogens: 0,
        };
        self.push_atom(atom, true, start)
    }

    fn bracket_atom(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        let close = self.text[start..]
            .find(']')
            .map(|i| start + i)
            .ok_or_else(|| self.err(start, "unclosed bracket atom"))?;
        let body = &self.text[start + 1..close];
        let mut i = 0;
        let bytes = body.as_bytes();
        if bytes.first().is_some_and(u8::is_ascii_digit) {
            return Err(self.err(start + 1, "isotopes are not supported"));
        }
        // Element: two-letter symbols win over one-letter ones.
        let two = body.get(0..2);
        let one = body.get(0..1);
        let (symbol, aromatic) = if let Some(s) =
            two.filter(|s| ELEMENTS.contains(s) || AROMATIC_BRACKET.contains(s))
        {
            (s, s.chars().next().is_some_and(|c| c.is_ascii_lowercase()))
        } else if let Some(s) = one.filter(|s| ELEMENTS.contains(s) || AROMATIC_BRACKET.contains(s))
        {
            (s, s.chars().next().is_some_and(|c| c.is_ascii_lowercase()))
        } else {
            return Err(self.err(start + 1, format!("unknown element in '[{body}]'")));
        };
        i += symbol.len();
        let mut hydrogens = 0u8;
        if bytes.get(i) == Some(&b'@') {
            return Err(self.err(start + 1 + i, "stereochemistry is not supported"));
        }
        if bytes.get(i) == Some(&b'H') {
            i += 1;
            hydrogens = 1;
            let digits_start = i;
            while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
            if i > digits_start {
                hydrogens = body[digits_start..i].parse().map_err(|_| {
                    self.err(start + 1 + digits_start, "hydrogen count out of range")
                })?;
            }
        }
        let mut charge: i32 = 0;
        if let Some(&sign @ (b'+' | b'-')) = bytes.get(i) {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            let digits_start = i;
            while bytes.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
            if i > digits_start {
                let magnitude: i32 = body[digits_start..i]
                    .parse()
                    .map_err(|_| self.err(start + 1 + digits_start, "charge out of range"))?;
                charge = unit * magnitude;
            } else {
                charge = unit;
                while bytes.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }
        if i != bytes.len() {
            let c = body[i..].chars().next().expect("non-empty");
            let message = match c {
                '@' => "stereochemistry is not supported".to_string(),
                ':' => "atom classes are not supported".to_string(),
                _ => format!("unexpected character '{c}' in bracket atom"),
            };
            return Err(self.err(start + 1 + i, message));
        }
        let charge = i8::try_from(charge).map_err(|_| self.err(start, "charge out of range"))?;
        self.pos = close + 1;
        let atom = Atom {
            element: capitalise(symbol),
            charge,
            aromatic,
            hydrogens,
        };
        self.push_atom(atom, false, start)
    }

    fn ring_closure(&mut self) -> Result<(), ChemError> {
        let start = self.pos;
        let prev = self
            .prev
            .ok_or_else(|| self.err(start, "ring closure without a preceding atom"))?;
        let number = if self.peek() == Some(b'%') {
            let digits = self
                .text
                .get(start + 1..start + 3)
                .filter(|d| d.bytes().all(|b| b.is_ascii_digit()));
            let digits =
                digits.ok_or_else(|| self.err(start, "'%' must be followed by two digits"))?;
            self.pos += 3;
            digits.parse::<u32>().expect("two digits")
        } else {
            self.pos += 1;
            u32::from(self.bytes[start] - b'0')
        };
        let order = self.pending_bond.take().map(|(o, _)| o);
        match self.rings.remove(&number) {
            Some(open) => {
                let order = match (open.order, order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(self.err(start, "conflicting ring bond orders"))
                    }
                    (Some(a), _) | (None, Some(a)) => a,
                    (None, None) => self.implied_order(open.atom, prev),
                };
                self.add_bond(open.atom, prev, order, start)
            }
            None => {
                self.rings.insert(
                    number,
                    PendingRing {
                        atom: prev,
                        order,
                        position: start,
                    },
                );
                Ok(())
            }
        }
    }

    fn assign_implicit_hydrogens(&mut self) {
        let mut used = vec![0u32; self.atoms.len()];
        for bond in &self.bonds {
            used[bond.a] += bond.order.valence_contribution();
            used[bond.b] += bond.order.valence_contribution();
        }
        for (idx, atom) in self.atoms.iter_mut().enumerate() {
            if !self.organic[idx] {
                continue;
            }
            let valence = used[idx] + u32::from(atom.aromatic);
            let target = default_valences(&atom.element)
                .iter()
                .copied()
                .find(|&v| v >= valence);
            atom.hydrogens = target.map_or(0, |t| (t - valence) as u8);
        }
    }
}

/// Parse a SMILES string into a [`MolGraph`].
pub fn parse_smiles(text: &str) -> Result<MolGraph, ChemError> {
    if text.is_empty() {
        return Err(ChemError::Smiles {
            smiles: String::new(),
            position: 0,
            message: "empty SMILES".into(),
        });
    }
    Parser::new(text).run()
}
