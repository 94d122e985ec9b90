//! Molecular graphs: a SMILES-subset parser, tensor featurization for the
//! graph encoder, and 1-WL color refinement used as an expressivity oracle.

mod featurize;
mod smiles;
mod wl;

pub use featurize::{featurize, GraphTensors, EDGE_FEATURES, NODE_FEATURES};
pub use smiles::{parse_smiles, ParseError, ParseErrorKind};
pub use wl::wl_colors;

use thiserror::Error;

/// Elements accepted by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Element {
    B,
    C,
    N,
    O,
    P,
    S,
    F,
    Cl,
    Br,
    I,
    H,
}

pub const ELEMENT_COUNT: usize = 11;

impl Element {
    pub fn symbol(self) -> &'static str {
        match self {
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::P => "P",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
            Element::H => "H",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Element::B => 0,
            Element::C => 1,
            Element::N => 2,
            Element::O => 3,
            Element::P => 4,
            Element::S => 5,
            Element::F => 6,
            Element::Cl => 7,
            Element::Br => 8,
            Element::I => 9,
            Element::H => 10,
        }
    }

    /// Default valence used for implicit hydrogen counting.
    ///
    /// B 3, C 4, N 3, O 2, P 3, S 2, halogens 1, H 1. Hypervalent uses of
    /// S or P simply saturate to zero implicit hydrogens.
    pub fn valence(self) -> u8 {
        match self {
            Element::B => 3,
            Element::C => 4,
            Element::N => 3,
            Element::O => 2,
            Element::P => 3,
            Element::S => 2,
            Element::F | Element::Cl | Element::Br | Element::I => 1,
            Element::H => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub fn index(self) -> usize {
        match self {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        }
    }

    /// Twice the bond order, so aromatic (1.5) stays integral.
    fn order_x2(self) -> u32 {
        match self {
            BondOrder::Single => 2,
            BondOrder::Double => 4,
            BondOrder::Triple => 6,
            BondOrder::Aromatic => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub aromatic: bool,
    /// Hydrogen count written in a bracket atom; `None` means the count is
    /// implicit and derived from the valence table.
    pub explicit_h: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub endpoints: (usize, usize),
    pub order: BondOrder,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum MolError {
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("permutation is not a bijection over {0} atoms")]
    BadPermutation(usize),
}

impl MolGraph {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.endpoints.0 == atom || b.endpoints.1 == atom)
            .count()
    }

    /// Neighbors with bond orders, sorted by neighbor index.
    pub fn neighbors(&self, atom: usize) -> Vec<(usize, BondOrder)> {
        let mut out: Vec<(usize, BondOrder)> = self
            .bonds
            .iter()
            .filter_map(|b| {
                if b.endpoints.0 == atom {
                    Some((b.endpoints.1, b.order))
                } else if b.endpoints.1 == atom {
                    Some((b.endpoints.0, b.order))
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable_by_key(|&(n, o)| (n, o.index()));
        out
    }

    /// Hydrogen count for one atom: the explicit bracket count when given,
    /// otherwise `max(0, valence - total bond order)` from the table on
    /// [`Element::valence`].
    pub fn hydrogen_count(&self, atom: usize) -> Result<u8, MolError> {
        let a = self
            .atoms
            .get(atom)
            .ok_or(MolError::AtomOutOfRange(atom))?;
        if let Some(h) = a.explicit_h {
            return Ok(h);
        }
        let sum_x2: u32 = self
            .bonds
            .iter()
            .filter(|b| b.endpoints.0 == atom || b.endpoints.1 == atom)
            .map(|b| b.order.order_x2())
            .sum();
        let valence_x2 = 2 * a.element.valence() as u32;
        Ok((valence_x2.saturating_sub(sum_x2) / 2) as u8)
    }

    /// Relabels atoms: atom `i` becomes atom `perm[i]`. Bond endpoint pairs
    /// are kept in sorted order so equality is representation-independent.
    pub fn permuted(&self, perm: &[usize]) -> Result<MolGraph, MolError> {
        let n = self.atoms.len();
        let mut seen = vec![false; n];
        if perm.len() != n {
            return Err(MolError::BadPermutation(n));
        }
        for &p in perm {
            if p >= n || seen[p] {
                return Err(MolError::BadPermutation(n));
            }
            seen[p] = true;
        }
        let mut atoms = vec![
            Atom {
                element: Element::C,
                formal_charge: 0,
                aromatic: false,
                explicit_h: None,
            };
            n
        ];
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = a.clone();
        }
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| {
                let (u, v) = (perm[b.endpoints.0], perm[b.endpoints.1]);
                Bond {
                    endpoints: (u.min(v), u.max(v)),
                    order: b.order,
                }
            })
            .collect();
        bonds.sort_unstable_by_key(|b| (b.endpoints, b.order.index()));
        Ok(MolGraph { atoms, bonds })
    }
}
