//! Graph Isomorphism Network encoder.
//!
//! Layer update: `h'_v = MLP_l((1 + eps_l) * h_v + sum_{u in N(v)} h_u)`,
//! with sum aggregation over neighbors. Node features are lifted by a
//! linear input map before layer 1, and bond features enter layer 1 only,
//! through a linear edge map added to the incoming messages. Readout is
//! the mean over nodes followed by a linear map to the embedding size.

use rand::Rng;

use super::EncoderError;
use crate::molgraph::{featurize, GraphTensors, MolGraph, EDGE_FEATURES, NODE_FEATURES};
use crate::nn::{lease, Lease, Linear, LinearVars};
use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};

pub const GIN_LAYERS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GinLayer {
    pub eps: Tensor,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GinParams {
    pub input: Linear,
    pub edge: Linear,
    pub layers: Vec<GinLayer>,
    pub readout: Linear,
    pub hidden: usize,
    pub out_dim: usize,
}

impl GinParams {
    pub fn new<R: Rng>(rng: &mut R, hidden: usize, out_dim: usize) -> Self {
        let layers = (0..GIN_LAYERS)
            .map(|_| GinLayer {
                eps: Tensor::zeros(vec![1]),
                mlp_in: Linear::new(rng, hidden, hidden),
                mlp_out: Linear::new(rng, hidden, hidden),
            })
            .collect();
        GinParams {
            input: Linear::new(rng, NODE_FEATURES, hidden),
            edge: Linear::new(rng, EDGE_FEATURES, hidden),
            layers,
            readout: Linear::new(rng, hidden, out_dim),
            hidden,
            out_dim,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = self.input.named(&format!("{prefix}.input"));
        out.extend(self.edge.named(&format!("{prefix}.edge")));
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.layer{i}.eps"), &l.eps));
            out.extend(l.mlp_in.named(&format!("{prefix}.layer{i}.mlp_in")));
            out.extend(l.mlp_out.named(&format!("{prefix}.layer{i}.mlp_out")));
        }
        out.extend(self.readout.named(&format!("{prefix}.readout")));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = self.input.named_mut(&format!("{prefix}.input"));
        out.extend(self.edge.named_mut(&format!("{prefix}.edge")));
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.layer{i}.eps"), &mut l.eps));
            out.extend(l.mlp_in.named_mut(&format!("{prefix}.layer{i}.mlp_in")));
            out.extend(l.mlp_out.named_mut(&format!("{prefix}.layer{i}.mlp_out")));
        }
        out.extend(self.readout.named_mut(&format!("{prefix}.readout")));
        out
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> GinVars {
        GinVars {
            input: self.input.bind(tape, mode),
            edge: self.edge.bind(tape, mode),
            layers: self
                .layers
                .iter()
                .map(|l| GinLayerVars {
                    eps: lease(tape, &l.eps, mode),
                    mlp_in: l.mlp_in.bind(tape, mode),
                    mlp_out: l.mlp_out.bind(tape, mode),
                })
                .collect(),
            readout: self.readout.bind(tape, mode),
        }
    }
}

pub struct GinLayerVars {
    pub eps: Var,
    pub mlp_in: LinearVars,
    pub mlp_out: LinearVars,
}

pub struct GinVars {
    pub input: LinearVars,
    pub edge: LinearVars,
    pub layers: Vec<GinLayerVars>,
    pub readout: LinearVars,
}

impl GinLayerVars {
    /// One GIN update given node states `h: [n x hidden]`, the dense
    /// adjacency constant, and an optional per-node extra message term.
    pub fn forward(
        &self,
        tape: &mut Tape,
        h: Var,
        adjacency: Var,
        extra_messages: Option<Var>,
    ) -> Result<Var, NumericsError> {
        let one = tape.constant(Tensor::scalar(1.0));
        let one_plus_eps = tape.add(self.eps, one)?;
        let self_term = tape.mul(h, one_plus_eps)?;
        let mut agg = tape.matmul(adjacency, h)?;
        if let Some(extra) = extra_messages {
            agg = tape.add(agg, extra)?;
        }
        let combined = tape.add(self_term, agg)?;
        let z = self.mlp_in.forward(tape, combined)?;
        let z = tape.gelu(z);
        self.mlp_out.forward(tape, z)
    }
}

impl GinVars {
    pub fn var_list(&self) -> Vec<Var> {
        let mut out = self.input.var_list();
        out.extend(self.edge.var_list());
        for l in &self.layers {
            out.push(l.eps);
            out.extend(l.mlp_in.var_list());
            out.extend(l.mlp_out.var_list());
        }
        out.extend(self.readout.var_list());
        out
    }

    /// Full encoder on the tape: lift, `GIN_LAYERS` updates, mean readout,
    /// projection to the output size. Returns a `[1 x out_dim]` row.
    pub fn encode(&self, tape: &mut Tape, gt: &GraphTensors) -> Result<Var, NumericsError> {
        let n = gt.node_count();
        let x = tape.constant(gt.node_features.clone());
        let mut h = self.input.forward(tape, x)?;

        let mut adj = vec![0.0; n * n];
        for &(src, dst) in &gt.edge_index {
            adj[dst * n + src] = 1.0;
        }
        let adjacency = tape.constant(Tensor::new(vec![n, n], adj).expect("square"));

        // bond features reach layer 1 only
        let edge_term = if gt.edge_index.is_empty() {
            None
        } else {
            let e = gt.edge_index.len();
            let flat: Vec<f64> = gt.edge_features.iter().flatten().copied().collect();
            let feats = tape.constant(
                Tensor::new(vec![e, EDGE_FEATURES], flat).expect("edge feature shape"),
            );
            let projected = self.edge.forward(tape, feats)?;
            let mut incidence = vec![0.0; n * e];
            for (idx, &(_, dst)) in gt.edge_index.iter().enumerate() {
                incidence[dst * e + idx] = 1.0;
            }
            let inc = tape.constant(Tensor::new(vec![n, e], incidence).expect("incidence"));
            Some(tape.matmul(inc, projected)?)
        };

        for (i, layer) in self.layers.iter().enumerate() {
            let extra = if i == 0 { edge_term } else { None };
            h = layer.forward(tape, h, adjacency, extra)?;
        }

        let pooled = tape.reduce(crate::tape::ReduceKind::Mean, h, Some(0))?;
        let pooled = tape.reshape(pooled, vec![1, tape.value(pooled).numel()])?;
        self.readout.forward(tape, pooled)
    }
}

/// Value-level encoding of a molecule to its graph feature vector.
pub fn gin_encode(mol: &MolGraph, params: &GinParams) -> Result<Tensor, EncoderError> {
    let gt = featurize(mol);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, Lease::Freeze);
    let g = vars.encode(&mut tape, &gt)?;
    Ok(tape
        .value(g)
        .reshaped(vec![params.out_dim])
        .expect("row reshapes to vector"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use crate::rng;

    fn identity_layer(hidden: usize) -> GinLayer {
        // MLP = identity: first linear is I with zero bias, gelu is skipped
        // by testing through forward() only when activation keeps values?
        // Instead we test the aggregation term directly with zero MLP bias
        // and identity second layer; see layer_matches_loop_oracle for the
        // general case.
        let eye = |n: usize| {
            let mut d = vec![0.0; n * n];
            for i in 0..n {
                d[i * n + i] = 1.0;
            }
            Tensor::new(vec![n, n], d).unwrap()
        };
        GinLayer {
            eps: Tensor::zeros(vec![1]),
            mlp_in: Linear {
                w: eye(hidden),
                b: Tensor::zeros(vec![hidden]),
            },
            mlp_out: Linear {
                w: eye(hidden),
                b: Tensor::zeros(vec![hidden]),
            },
        }
    }

    /// Aggregation check with the MLP stripped to near-identity: a single
    /// node with no edges must keep its state up to the gelu curve.
    #[test]
    fn isolated_node_keeps_state_through_aggregation() {
        let layer = identity_layer(2);
        let mut tape = Tape::new();
        let vars = GinLayerVars {
            eps: tape.constant(Tensor::zeros(vec![1])),
            mlp_in: layer.mlp_in.bind(&mut tape, Lease::Freeze),
            mlp_out: layer.mlp_out.bind(&mut tape, Lease::Freeze),
        };
        let h = tape.constant(Tensor::new(vec![1, 2], vec![3.0, -1.0]).unwrap());
        let adj = tape.constant(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
        let out = vars.forward(&mut tape, h, adj, None).unwrap();
        // gelu applies pointwise to the unchanged aggregation (1+0)*h + 0
        let expect: Vec<f64> = [3.0, -1.0]
            .iter()
            .map(|&x: &f64| {
                0.5 * x * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh())
            })
            .collect();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn path_graph_sums_neighbor() {
        // two nodes a-b, eps=0: pre-MLP state of a must be h_a + h_b
        let mut tape = Tape::new();
        let eps = tape.constant(Tensor::zeros(vec![1]));
        let one = tape.constant(Tensor::scalar(1.0));
        let ope = tape.add(eps, one).unwrap();
        let h = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap());
        let adj = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let self_term = tape.mul(h, ope).unwrap();
        let agg = tape.matmul(adj, h).unwrap();
        let combined = tape.add(self_term, agg).unwrap();
        assert_eq!(
            tape.value(combined).data(),
            &[11.0, 22.0, 11.0, 22.0]
        );
    }

    #[test]
    fn layer_matches_loop_oracle_exactly() {
        let mut r = rng(17);
        let params = GinParams::new(&mut r, 8, 4);
        let g = parse_smiles("CC(=O)NO").unwrap();
        let gt = featurize(&g);
        let n = gt.node_count();

        // tape path
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let x = tape.constant(gt.node_features.clone());
        let h0 = vars.input.forward(&mut tape, x).unwrap();
        let mut adj = vec![0.0; n * n];
        for &(s, d) in &gt.edge_index {
            adj[d * n + s] = 1.0;
        }
        let adjacency = tape.constant(Tensor::new(vec![n, n], adj).unwrap());
        let out = vars.layers[1]
            .forward(&mut tape, h0, adjacency, None)
            .unwrap();

        // naive loop oracle on the same lifted features
        let h0_val = tape.value(h0).clone();
        let layer = &params.layers[1];
        for v in 0..n {
            let mut combined: Vec<f64> = h0_val.row_slice(v).to_vec();
            // (1 + eps) * h_v first, then neighbors in ascending index order
            let eps = layer.eps.data()[0];
            combined.iter_mut().for_each(|c| *c *= 1.0 + eps);
            for (u, _) in g.neighbors(v) {
                for (c, hv) in combined.iter_mut().zip(h0_val.row_slice(u)) {
                    *c += hv;
                }
            }
            // MLP
            let hidden: Vec<f64> = (0..8)
                .map(|j| {
                    let z: f64 = (0..8)
                        .map(|i| combined[i] * layer.mlp_in.w.at(i, j))
                        .sum::<f64>()
                        + layer.mlp_in.b.data()[j];
                    0.5 * z * (1.0 + (0.7978845608028654 * (z + 0.044715 * z * z * z)).tanh())
                })
                .collect();
            let final_row: Vec<f64> = (0..8)
                .map(|j| {
                    (0..8)
                        .map(|i| hidden[i] * layer.mlp_out.w.at(i, j))
                        .sum::<f64>()
                        + layer.mlp_out.b.data()[j]
                })
                .collect();
            for (a, b) in tape.value(out).row_slice(v).iter().zip(&final_row) {
                assert!(
                    (a - b).abs() < 1e-12,
                    "node {v}: tape {a} vs oracle {b}"
                );
            }
        }
    }

    #[test]
    fn encode_is_permutation_invariant() {
        let mut r = rng(23);
        let params = GinParams::new(&mut r, 16, 8);
        let g = parse_smiles("CC(=O)Oc1ccccc1").unwrap();
        let base = gin_encode(&g, &params).unwrap();
        let n = g.atom_count();
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..20 {
            perm.shuffle(&mut r);
            let gp = g.permuted(&perm).unwrap();
            let e = gin_encode(&gp, &params).unwrap();
            for (a, b) in base.data().iter().zip(e.data()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn isomorphic_smiles_share_embedding() {
        let mut r = rng(29);
        let params = GinParams::new(&mut r, 16, 8);
        let a = gin_encode(&parse_smiles("CCO").unwrap(), &params).unwrap();
        let b = gin_encode(&parse_smiles("OCC").unwrap(), &params).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}
