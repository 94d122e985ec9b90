//! Fixed featurization scheme turning a molecular graph into dense inputs
//! for the graph encoder.
//!
//! Node features (25 per atom):
//!   one-hot element (11) | one-hot degree 0..6 (7) | formal charge
//!   clamped to [-4, 4] (1) | aromatic flag (1) | one-hot hydrogen count
//!   0..4 (5).
//! Edge features (4 per directed edge): one-hot bond order. Every
//! undirected bond emits both directions, back to back.

use super::{MolGraph, ELEMENT_COUNT};
use crate::tensor::Tensor;

pub const NODE_FEATURES: usize = ELEMENT_COUNT + 7 + 1 + 1 + 5; // 25
pub const EDGE_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphTensors {
    /// `n x NODE_FEATURES`, row i derived from atom i.
    pub node_features: Tensor,
    /// Directed pairs `(src, dst)`; both directions per bond.
    pub edge_index: Vec<(usize, usize)>,
    /// One row per directed edge, aligned with `edge_index`.
    pub edge_features: Vec<[f64; EDGE_FEATURES]>,
}

impl GraphTensors {
    pub fn node_count(&self) -> usize {
        self.node_features.shape()[0]
    }
}

pub fn featurize(g: &MolGraph) -> GraphTensors {
    let n = g.atom_count();
    let mut x = vec![0.0; n * NODE_FEATURES];
    for (i, atom) in g.atoms.iter().enumerate() {
        let row = &mut x[i * NODE_FEATURES..(i + 1) * NODE_FEATURES];
        row[atom.element.index()] = 1.0;
        let degree = g.degree(i).min(6);
        row[ELEMENT_COUNT + degree] = 1.0;
        let charge = (atom.formal_charge as f64).clamp(-4.0, 4.0);
        row[ELEMENT_COUNT + 7] = charge;
        row[ELEMENT_COUNT + 8] = if atom.aromatic { 1.0 } else { 0.0 };
        let h = g
            .hydrogen_count(i)
            .expect("atom index in range")
            .min(4) as usize;
        row[ELEMENT_COUNT + 9 + h] = 1.0;
    }

    let mut edge_index = Vec::with_capacity(2 * g.bond_count());
    let mut edge_features = Vec::with_capacity(2 * g.bond_count());
    for bond in &g.bonds {
        let mut feat = [0.0; EDGE_FEATURES];
        feat[bond.order.index()] = 1.0;
        let (a, b) = bond.endpoints;
        edge_index.push((a, b));
        edge_features.push(feat);
        edge_index.push((b, a));
        edge_features.push(feat);
    }

    GraphTensors {
        node_features: Tensor::new(vec![n, NODE_FEATURES], x)
            .expect("feature shape matches atom count"),
        edge_index,
        edge_features,
    }
}
