//! Shared neural building blocks: linear layers, a transformer block used
//! by both the text encoder and the causal backbone, parameter naming, and
//! the SGD-with-momentum optimizer.
//!
//! Parameter structs expose `named`/`named_mut` listings in a fixed
//! construction order; the optimizer, checkpoints and digests all consume
//! that order, which keeps every update and serialization deterministic.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum NnError {
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How a parameter group is placed on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lease {
    /// Trainable leaf: backward reports a gradient entry.
    Train,
    /// Frozen leaf: gradients flow through, no entry is reported.
    Freeze,
}

pub fn lease(tape: &mut Tape, t: &Tensor, mode: Lease) -> Var {
    match mode {
        Lease::Train => tape.param(t.clone()),
        Lease::Freeze => tape.frozen(t.clone()),
    }
}

/// Copies `src` tensors into `dst` by name, checking shapes.
pub fn load_named(
    dst: Vec<(String, &mut Tensor)>,
    src: &BTreeMap<String, Tensor>,
) -> Result<(), NnError> {
    for (name, slot) in dst {
        let t = src
            .get(&name)
            .ok_or_else(|| NnError::MissingParam(name.clone()))?;
        if t.shape() != slot.shape() {
            return Err(NnError::ShapeMismatch {
                name,
                got: t.shape().to_vec(),
                want: slot.shape().to_vec(),
            });
        }
        *slot = t.clone();
    }
    Ok(())
}

// ── Linear ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::xavier(rng, fan_in, fan_out),
            b: Tensor::zeros(vec![fan_out]),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w"), &self.w),
            (format!("{prefix}.b"), &self.b),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.w"), &mut self.w),
            (format!("{prefix}.b"), &mut self.b),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> LinearVars {
        LinearVars {
            w: lease(tape, &self.w, mode),
            b: lease(tape, &self.b, mode),
        }
    }
}

impl LinearVars {
    /// `x @ w + b` for `x: [m x fan_in]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        let h = tape.matmul(x, self.w)?;
        tape.add_row(h, self.b)
    }

    pub fn var_list(&self) -> Vec<Var> {
        vec![self.w, self.b]
    }
}

/// Maps gradient entries back to parameter names. `vars` must list the
/// leased Vars in exactly the order of the `named` listing.
pub fn grads_by_name(
    named: &[(String, &Tensor)],
    vars: &[Var],
    grads: &mut crate::tape::Gradients,
) -> BTreeMap<String, Tensor> {
    assert_eq!(named.len(), vars.len(), "named/var listing order broke");
    named
        .iter()
        .zip(vars)
        .filter_map(|((name, _), &var)| grads.take(var).map(|g| (name.clone(), g)))
        .collect()
}

// ── Transformer block ───────────────────────────────────────────────────

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub heads: Vec<AttentionHead>,
    pub wo: Linear,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub mlp_in: Linear,
    pub mlp_out: Linear,
}

pub struct BlockVars {
    ln1_g: Var,
    ln1_b: Var,
    heads: Vec<(Var, Var, Var)>,
    wo: LinearVars,
    ln2_g: Var,
    ln2_b: Var,
    mlp_in: LinearVars,
    mlp_out: LinearVars,
    head_dim: usize,
}

impl BlockParams {
    /// Pre-norm block: `x + W_O concat(attn heads(LN(x)))`, then
    /// `+ MLP(LN(.))` with a gelu MLP of width `4 * dim`.
    pub fn new<R: Rng>(rng: &mut R, dim: usize, num_heads: usize) -> Self {
        assert!(
            dim % num_heads == 0,
            "model dim {dim} not divisible by {num_heads} heads"
        );
        let head_dim = dim / num_heads;
        let heads = (0..num_heads)
            .map(|_| AttentionHead {
                wq: Tensor::xavier(rng, dim, head_dim),
                wk: Tensor::xavier(rng, dim, head_dim),
                wv: Tensor::xavier(rng, dim, head_dim),
            })
            .collect();
        BlockParams {
            ln1_g: Tensor::full(vec![dim], 1.0),
            ln1_b: Tensor::zeros(vec![dim]),
            heads,
            wo: Linear::new(rng, dim, dim),
            ln2_g: Tensor::full(vec![dim], 1.0),
            ln2_b: Tensor::zeros(vec![dim]),
            mlp_in: Linear::new(rng, dim, 4 * dim),
            mlp_out: Linear::new(rng, 4 * dim, dim),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (format!("{prefix}.ln1.g"), &self.ln1_g),
            (format!("{prefix}.ln1.b"), &self.ln1_b),
        ];
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i}.wq"), &h.wq));
            out.push((format!("{prefix}.head{i}.wk"), &h.wk));
            out.push((format!("{prefix}.head{i}.wv"), &h.wv));
        }
        out.extend(self.wo.named(&format!("{prefix}.wo")));
        out.push((format!("{prefix}.ln2.g"), &self.ln2_g));
        out.push((format!("{prefix}.ln2.b"), &self.ln2_b));
        out.extend(self.mlp_in.named(&format!("{prefix}.mlp_in")));
        out.extend(self.mlp_out.named(&format!("{prefix}.mlp_out")));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            (format!("{prefix}.ln1.g"), &mut self.ln1_g),
            (format!("{prefix}.ln1.b"), &mut self.ln1_b),
        ];
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("{prefix}.head{i}.wq"), &mut h.wq));
            out.push((format!("{prefix}.head{i}.wk"), &mut h.wk));
            out.push((format!("{prefix}.head{i}.wv"), &mut h.wv));
        }
        out.extend(self.wo.named_mut(&format!("{prefix}.wo")));
        out.push((format!("{prefix}.ln2.g"), &mut self.ln2_g));
        out.push((format!("{prefix}.ln2.b"), &mut self.ln2_b));
        out.extend(self.mlp_in.named_mut(&format!("{prefix}.mlp_in")));
        out.extend(self.mlp_out.named_mut(&format!("{prefix}.mlp_out")));
        out
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> BlockVars {
        BlockVars {
            ln1_g: lease(tape, &self.ln1_g, mode),
            ln1_b: lease(tape, &self.ln1_b, mode),
            heads: self
                .heads
                .iter()
                .map(|h| {
                    (
                        lease(tape, &h.wq, mode),
                        lease(tape, &h.wk, mode),
                        lease(tape, &h.wv, mode),
                    )
                })
                .collect(),
            wo: self.wo.bind(tape, mode),
            ln2_g: lease(tape, &self.ln2_g, mode),
            ln2_b: lease(tape, &self.ln2_b, mode),
            mlp_in: self.mlp_in.bind(tape, mode),
            mlp_out: self.mlp_out.bind(tape, mode),
            head_dim: self.heads[0].wq.shape()[1],
        }
    }
}

impl BlockVars {
    pub fn var_list(&self) -> Vec<Var> {
        let mut out = vec![self.ln1_g, self.ln1_b];
        for &(q, k, v) in &self.heads {
            out.extend([q, k, v]);
        }
        out.extend(self.wo.var_list());
        out.push(self.ln2_g);
        out.push(self.ln2_b);
        out.extend(self.mlp_in.var_list());
        out.extend(self.mlp_out.var_list());
        out
    }
}

/// Attention visibility for one block application.
pub enum AttnMask<'a> {
    /// Row t sees columns 0..=t.
    Causal,
    /// Every row sees exactly the `true` columns.
    Columns(&'a [bool]),
}

impl BlockVars {
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        mask: &AttnMask,
    ) -> Result<Var, NumericsError> {
        let len = tape.value(x).nrows();
        let a = tape.layer_norm(x, self.ln1_g, self.ln1_b, LN_EPS)?;

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let full_mask: Vec<bool> = match mask {
            AttnMask::Causal => {
                let mut m = vec![false; len * len];
                for q in 0..len {
                    for k in 0..=q {
                        m[q * len + k] = true;
                    }
                }
                m
            }
            AttnMask::Columns(cols) => {
                assert_eq!(cols.len(), len, "column mask length");
                let mut m = vec![false; len * len];
                for q in 0..len {
                    for k in 0..len {
                        m[q * len + k] = cols[k];
                    }
                }
                m
            }
        };

        let mut head_outputs = Vec::with_capacity(self.heads.len());
        for &(wq, wk, wv) in &self.heads {
            let q = tape.matmul(a, wq)?;
            let k = tape.matmul(a, wk)?;
            let v = tape.matmul(a, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.masked_softmax_rows(scores, &full_mask)?;
            head_outputs.push(tape.matmul(attn, v)?);
        }
        let concat = tape.concat_cols(&head_outputs)?;
        let attn_out = self.wo.forward(tape, concat)?;
        let x1 = tape.add(x, attn_out)?;

        let m = tape.layer_norm(x1, self.ln2_g, self.ln2_b, LN_EPS)?;
        let h = self.mlp_in.forward(tape, m)?;
        let h = tape.gelu(h);
        let h = self.mlp_out.forward(tape, h)?;
        tape.add(x1, h)
    }
}

// ── Optimizer ───────────────────────────────────────────────────────────

/// Plain SGD with heavy-ball momentum and a fixed learning rate.
/// Gradients are rescaled when their global L2 norm exceeds `clip`, which
/// keeps late overfitting phases from blowing up the velocity. Buffers are
/// keyed by parameter name; update order follows the caller's parameter
/// listing, so two runs with the same inputs are bitwise equal.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip: Option<f64>,
    buffers: BTreeMap<String, Vec<f64>>,
}

pub const GRAD_CLIP: f64 = 1.0;

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            clip: Some(GRAD_CLIP),
            buffers: BTreeMap::new(),
        }
    }

    pub fn without_clip(mut self) -> Self {
        self.clip = None;
        self
    }

    pub fn step(
        &mut self,
        params: Vec<(String, &mut Tensor)>,
        grads: &BTreeMap<String, Tensor>,
    ) {
        let scale = match self.clip {
            Some(clip) => {
                let sq: f64 = grads
                    .values()
                    .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
                    .sum();
                let norm = sq.sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (name, tensor) in params {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            let buf = self
                .buffers
                .entry(name)
                .or_insert_with(|| vec![0.0; tensor.numel()]);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                buf[i] = self.momentum * buf[i] + scale * grad.data()[i];
                data[i] -= self.lr * buf[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn linear_forward_matches_manual() {
        let mut r = rng(1);
        let lin = Linear::new(&mut r, 3, 2);
        let mut tape = Tape::new();
        let vars = lin.bind(&mut tape, Lease::Freeze);
        let x = tape
            .constant(Tensor::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = vars.forward(&mut tape, x).unwrap();
        let manual: Vec<f64> = (0..2)
            .map(|j| {
                (0..3)
                    .map(|i| [1.0, -2.0, 0.5][i] * lin.w.at(i, j))
                    .sum::<f64>()
                    + lin.b.data()[j]
            })
            .collect();
        for (a, b) in tape.value(y).data().iter().zip(&manual) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_causal_prefix_is_isolated() {
        let mut r = rng(2);
        let block = BlockParams::new(&mut r, 8, 2);
        let run = |suffix: f64| {
            let mut tape = Tape::new();
            let vars = block.bind(&mut tape, Lease::Freeze);
            let mut data = vec![0.1; 4 * 8];
            for v in data.iter_mut().skip(3 * 8) {
                *v = suffix;
            }
            let x = tape.constant(Tensor::new(vec![4, 8], data).unwrap());
            let y = vars.forward(&mut tape, x, &AttnMask::Causal).unwrap();
            tape.value(y).data()[..3 * 8].to_vec()
        };
        assert_eq!(run(0.5), run(-2.0));
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut t = Tensor::scalar(1.0);
        let mut opt = Sgd::new(0.1, 0.9);
        let mut grads = BTreeMap::new();
        grads.insert("p".to_string(), Tensor::scalar(1.0));
        opt.step(vec![("p".to_string(), &mut t)], &grads);
        assert!((t.data()[0] - 0.9).abs() < 1e-12);
        opt.step(vec![("p".to_string(), &mut t)], &grads);
        // second step velocity = 0.9 * 1 + 1 = 1.9
        assert!((t.data()[0] - (0.9 - 0.19)).abs() < 1e-12);
    }

    #[test]
    fn load_named_checks_shapes() {
        let mut r = rng(3);
        let mut lin = Linear::new(&mut r, 2, 2);
        let mut src = BTreeMap::new();
        src.insert("lin.w".to_string(), Tensor::zeros(vec![2, 2]));
        src.insert("lin.b".to_string(), Tensor::zeros(vec![3]));
        let got = load_named(lin.named_mut("lin"), &src);
        assert!(matches!(got, Err(NnError::ShapeMismatch { .. })));
    }
}
