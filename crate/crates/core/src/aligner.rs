//! The graph tokenizer: compress the LM vocabulary embeddings into a small
//! set of semantic vectors, let the graph feature query them with cross
//! multi-head attention, and project the retrieved mixture back to the LM
//! embedding width.
//!
//! Per head: `Q = g W_Q`, `K = M' W_K`, `V = M' W_V`,
//! `out = softmax(Q K^T / sqrt(d)) V`; head outputs are concatenated and
//! mapped by `W_O` to the embedding dimension.

use rand::Rng;
use thiserror::Error;

use crate::encoders::{GinParams, GinVars};
use crate::molgraph::{featurize, MolGraph};
use crate::nn::{lease, Lease};
use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AlignerError {
    #[error("compressed vocabulary {m_prime} must be at most a quarter of {m}")]
    CompressionTooWeak { m_prime: usize, m: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignerDims {
    /// Graph feature size (query side).
    pub graph_dim: usize,
    /// Associative space size per head.
    pub head_dim: usize,
    pub num_heads: usize,
    /// Rows of the compressed vocabulary M'.
    pub compressed: usize,
    /// Rows of the full vocabulary M.
    pub vocab: usize,
    /// LM embedding width D.
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignerParams {
    /// Compressor C, a linear map over the vocabulary axis: M' = C M.
    pub compressor: Tensor,
    pub heads: Vec<AlignHead>,
    /// Output projection (k * head_dim) x embed_dim.
    pub out_proj: Tensor,
    pub dims: AlignerDims,
}

impl AlignerParams {
    pub fn new<R: Rng>(rng: &mut R, dims: AlignerDims) -> Result<Self, AlignerError> {
        if dims.compressed * 4 > dims.vocab {
            return Err(AlignerError::CompressionTooWeak {
                m_prime: dims.compressed,
                m: dims.vocab,
            });
        }
        let std = 1.0 / (dims.vocab as f64).sqrt();
        let heads = (0..dims.num_heads)
            .map(|_| AlignHead {
                wq: Tensor::xavier(rng, dims.graph_dim, dims.head_dim),
                wk: Tensor::xavier(rng, dims.embed_dim, dims.head_dim),
                wv: Tensor::xavier(rng, dims.embed_dim, dims.head_dim),
            })
            .collect();
        Ok(AlignerParams {
            compressor: Tensor::gaussian(rng, vec![dims.compressed, dims.vocab], std),
            heads,
            out_proj: Tensor::xavier(rng, dims.num_heads * dims.head_dim, dims.embed_dim),
            dims,
        })
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.compressor"), &self.compressor)];
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("{prefix}.head{i}.wq"), &h.wq));
            out.push((format!("{prefix}.head{i}.wk"), &h.wk));
            out.push((format!("{prefix}.head{i}.wv"), &h.wv));
        }
        out.push((format!("{prefix}.out_proj"), &self.out_proj));
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(format!("{prefix}.compressor"), &mut self.compressor)];
        for (i, h) in self.heads.iter_mut().enumerate() {
            out.push((format!("{prefix}.head{i}.wq"), &mut h.wq));
            out.push((format!("{prefix}.head{i}.wk"), &mut h.wk));
            out.push((format!("{prefix}.head{i}.wv"), &mut h.wv));
        }
        out.push((format!("{prefix}.out_proj"), &mut self.out_proj));
        out
    }

    /// Leases everything with one mode, except the compressor which gets
    /// its own (frozen during few-shot adaptation).
    pub fn bind_split(
        &self,
        tape: &mut Tape,
        compressor_mode: Lease,
        rest_mode: Lease,
    ) -> AlignerVars {
        AlignerVars {
            compressor: lease(tape, &self.compressor, compressor_mode),
            heads: self
                .heads
                .iter()
                .map(|h| {
                    (
                        lease(tape, &h.wq, rest_mode),
                        lease(tape, &h.wk, rest_mode),
                        lease(tape, &h.wv, rest_mode),
                    )
                })
                .collect(),
            out_proj: lease(tape, &self.out_proj, rest_mode),
            head_dim: self.dims.head_dim,
        }
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> AlignerVars {
        self.bind_split(tape, mode, mode)
    }
}

pub struct AlignerVars {
    pub compressor: Var,
    pub heads: Vec<(Var, Var, Var)>,
    pub out_proj: Var,
    head_dim: usize,
}

impl AlignerVars {
    pub fn var_list(&self) -> Vec<Var> {
        let mut out = vec![self.compressor];
        for &(q, k, v) in &self.heads {
            out.extend([q, k, v]);
        }
        out.push(self.out_proj);
        out
    }

    /// M' = C M, preserving the embedding width.
    pub fn compress_vocab(&self, tape: &mut Tape, m: Var) -> Result<Var, NumericsError> {
        tape.matmul(self.compressor, m)
    }

    /// Cross association and retrieval for one graph query row `g: [1 x e]`
    /// against the compressed vocabulary `m_prime: [m' x D]`. Returns the
    /// projected token embedding `[1 x D]` and per-head attention rows.
    pub fn cross_attend(
        &self,
        tape: &mut Tape,
        g: Var,
        m_prime: Var,
    ) -> Result<(Var, Vec<Var>), NumericsError> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut attentions = Vec::with_capacity(self.heads.len());
        for &(wq, wk, wv) in &self.heads {
            let q = tape.matmul(g, wq)?;
            let k = tape.matmul(m_prime, wk)?;
            let v = tape.matmul(m_prime, wv)?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            attentions.push(attn);
            outputs.push(tape.matmul(attn, v)?);
        }
        let concat = tape.concat_cols(&outputs)?;
        let projected = tape.matmul(concat, self.out_proj)?;
        Ok((projected, attentions))
    }
}

/// A tokenized molecular graph: the embedding that replaces `<|graph|>` in
/// the prompt, plus the attention rows kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphToken {
    pub embedding: Tensor,
    /// `num_heads x compressed` attention weights.
    pub attention: Tensor,
}

/// Mean of all vocabulary embedding rows. Recomputed from the frozen M on
/// demand; constant, never trainable.
pub fn value_placeholder_embedding(m: &Tensor) -> Tensor {
    let (rows, d) = (m.nrows(), m.ncols());
    let mut mean = vec![0.0; d];
    for r in 0..rows {
        for (c, v) in m.row_slice(r).iter().enumerate() {
            mean[c] += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= rows as f64);
    Tensor::vector(mean)
}

/// Tape-level tokenizer composition used by the training stages:
/// GIN encode, compress, cross-attend.
pub fn tokenize_on_tape(
    tape: &mut Tape,
    gt: &crate::molgraph::GraphTensors,
    gin: &GinVars,
    aligner: &AlignerVars,
    m: Var,
) -> Result<(Var, Vec<Var>), AlignerError> {
    let g = gin.encode(tape, gt)?;
    let m_prime = aligner.compress_vocab(tape, m)?;
    Ok(aligner.cross_attend(tape, g, m_prime)?)
}

/// Value-level tokenizer over a parsed molecule.
pub fn graph_tokenize(
    mol: &MolGraph,
    gin: &GinParams,
    m: &Tensor,
    params: &AlignerParams,
) -> Result<GraphToken, AlignerError> {
    let gt = featurize(mol);
    let mut tape = Tape::new();
    let gin_vars = gin.bind(&mut tape, Lease::Freeze);
    let aligner_vars = params.bind(&mut tape, Lease::Freeze);
    let m_var = tape.frozen(m.clone());
    let (embedding, attentions) =
        tokenize_on_tape(&mut tape, &gt, &gin_vars, &aligner_vars, m_var)?;

    let mut attn_rows = Vec::with_capacity(attentions.len());
    for a in &attentions {
        attn_rows.push(tape.value(*a).data().to_vec());
    }
    Ok(GraphToken {
        embedding: tape
            .value(embedding)
            .reshaped(vec![params.dims.embed_dim])?,
        attention: Tensor::from_rows(&attn_rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dims(e: usize, d: usize, k: usize, mp: usize, m: usize, dd: usize) -> AlignerDims {
        AlignerDims {
            graph_dim: e,
            head_dim: d,
            num_heads: k,
            compressed: mp,
            vocab: m,
            embed_dim: dd,
        }
    }

    #[test]
    fn compression_ratio_is_enforced() {
        let mut r = rng(61);
        assert!(matches!(
            AlignerParams::new(&mut r, dims(4, 2, 1, 100, 256, 8)),
            Err(AlignerError::CompressionTooWeak { .. })
        ));
        assert!(AlignerParams::new(&mut r, dims(4, 2, 1, 64, 256, 8)).is_ok());
    }

    #[test]
    fn selector_compressor_picks_rows() {
        let mut r = rng(62);
        let mut params = AlignerParams::new(&mut r, dims(4, 2, 1, 2, 8, 3)).unwrap();
        let mut c = vec![0.0; 2 * 8];
        c[0 * 8 + 2] = 1.0;
        c[1 * 8 + 5] = 1.0;
        params.compressor = Tensor::new(vec![2, 8], c).unwrap();
        let m = Tensor::uniform(&mut r, vec![8, 3], -1.0, 1.0);

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let mv = tape.constant(m.clone());
        let mp = vars.compress_vocab(&mut tape, mv).unwrap();
        assert_eq!(tape.value(mp).row_slice(0), m.row_slice(2));
        assert_eq!(tape.value(mp).row_slice(1), m.row_slice(5));
    }

    #[test]
    fn averaging_compressor_takes_column_mean() {
        let mut r = rng(63);
        let mut params = AlignerParams::new(&mut r, dims(4, 2, 1, 1, 4, 2)).unwrap();
        params.compressor = Tensor::new(vec![1, 4], vec![0.25; 4]).unwrap();
        let m = Tensor::new(vec![4, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let mv = tape.constant(m);
        let mp = vars.compress_vocab(&mut tape, mv).unwrap();
        assert_eq!(tape.value(mp).data(), &[4.0, 5.0]);
    }

    #[test]
    fn compress_matches_triple_loop_oracle() {
        let mut r = rng(64);
        let params = AlignerParams::new(&mut r, dims(4, 2, 1, 3, 16, 5)).unwrap();
        let m = Tensor::uniform(&mut r, vec![16, 5], -1.0, 1.0);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let mv = tape.constant(m.clone());
        let mp = vars.compress_vocab(&mut tape, mv).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0;
                for p in 0..16 {
                    s += params.compressor.at(i, p) * m.at(p, j);
                }
                assert_eq!(tape.value(mp).at(i, j), s);
            }
        }
    }

    #[test]
    fn single_compressed_row_gets_full_attention() {
        let mut r = rng(65);
        let params = AlignerParams::new(&mut r, dims(4, 2, 2, 1, 8, 3)).unwrap();
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let g = tape.constant(Tensor::uniform(&mut r, vec![1, 4], -1.0, 1.0));
        let m_prime = tape.constant(Tensor::uniform(&mut r, vec![1, 3], -1.0, 1.0));
        let (_, attns) = vars.cross_attend(&mut tape, g, m_prime).unwrap();
        for a in attns {
            assert_eq!(tape.value(a).data(), &[1.0]);
        }
    }

    #[test]
    fn identical_rows_make_query_irrelevant() {
        let mut r = rng(66);
        let params = AlignerParams::new(&mut r, dims(4, 2, 2, 3, 16, 3)).unwrap();
        let row = [0.3, -0.7, 1.1];
        let m_prime_t =
            Tensor::new(vec![3, 3], row.iter().cycle().take(9).copied().collect()).unwrap();
        let run = |g_data: Vec<f64>| {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, Lease::Freeze);
            let g = tape.constant(Tensor::new(vec![1, 4], g_data).unwrap());
            let mp = tape.constant(m_prime_t.clone());
            let (out, _) = vars.cross_attend(&mut tape, g, mp).unwrap();
            tape.value(out).data().to_vec()
        };
        let a = run(vec![1.0, 0.0, -1.0, 2.0]);
        let b = run(vec![-3.0, 0.5, 4.0, 0.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_row_closed_form_oracle() {
        let mut r = rng(67);
        let params = AlignerParams::new(&mut r, dims(3, 2, 2, 2, 8, 4)).unwrap();
        let g = Tensor::uniform(&mut r, vec![1, 3], -1.0, 1.0);
        let m_prime = Tensor::uniform(&mut r, vec![2, 4], -1.0, 1.0);

        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let gv = tape.constant(g.clone());
        let mpv = tape.constant(m_prime.clone());
        let (out, _) = vars.cross_attend(&mut tape, gv, mpv).unwrap();

        // dense reimplementation with plain loops
        let mut concat = Vec::new();
        for h in &params.heads {
            let q: Vec<f64> = (0..2)
                .map(|j| (0..3).map(|i| g.data()[i] * h.wq.at(i, j)).sum())
                .collect();
            let mut logits = [0.0f64; 2];
            for (ri, l) in logits.iter_mut().enumerate() {
                let krow: Vec<f64> = (0..2)
                    .map(|j| (0..4).map(|i| m_prime.at(ri, i) * h.wk.at(i, j)).sum())
                    .collect();
                *l = q.iter().zip(&krow).map(|(a, b)| a * b).sum::<f64>()
                    / (2.0f64).sqrt();
            }
            let mx = logits[0].max(logits[1]);
            let e0 = (logits[0] - mx).exp();
            let e1 = (logits[1] - mx).exp();
            let attn = [e0 / (e0 + e1), e1 / (e0 + e1)];
            for j in 0..2 {
                let v0: f64 = (0..4).map(|i| m_prime.at(0, i) * h.wv.at(i, j)).sum();
                let v1: f64 = (0..4).map(|i| m_prime.at(1, i) * h.wv.at(i, j)).sum();
                concat.push(attn[0] * v0 + attn[1] * v1);
            }
        }
        let expect: Vec<f64> = (0..4)
            .map(|j| {
                (0..concat.len())
                    .map(|i| concat[i] * params.out_proj.at(i, j))
                    .sum()
            })
            .collect();
        for (a, b) in tape.value(out).data().iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn placeholder_is_column_mean() {
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(value_placeholder_embedding(&m).data(), &[2.0, 3.0]);

        let single = Tensor::new(vec![1, 3], vec![7.0, 8.0, 9.0]).unwrap();
        assert_eq!(value_placeholder_embedding(&single).data(), &[7.0, 8.0, 9.0]);
    }

    #[test]
    fn placeholder_invariant_under_row_permutation() {
        let m = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = Tensor::new(vec![3, 2], vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            value_placeholder_embedding(&m).data(),
            value_placeholder_embedding(&p).data()
        );
    }

    #[test]
    fn tokenize_is_isomorphism_invariant_with_dim_d() {
        use crate::encoders::GinParams;
        use crate::molgraph::parse_smiles;
        let mut r = rng(68);
        let gin = GinParams::new(&mut r, 8, 6);
        let params = AlignerParams::new(&mut r, dims(6, 2, 2, 4, 16, 5)).unwrap();
        let m = Tensor::uniform(&mut r, vec![16, 5], -1.0, 1.0);
        let a = graph_tokenize(&parse_smiles("CCO").unwrap(), &gin, &m, &params).unwrap();
        let b = graph_tokenize(&parse_smiles("OCC").unwrap(), &gin, &m, &params).unwrap();
        assert_eq!(a.embedding.shape(), &[5]);
        for (x, y) in a.embedding.data().iter().zip(b.embedding.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn head_outputs_stay_in_value_hull() {
        // pre-projection outputs are convex combinations of V rows
        let mut r = rng(69);
        let params = AlignerParams::new(&mut r, dims(4, 3, 2, 4, 16, 5)).unwrap();
        for trial in 0..100 {
            let mut tr = rng(700 + trial);
            let g = Tensor::uniform(&mut tr, vec![1, 4], -2.0, 2.0);
            let m_prime = Tensor::uniform(&mut tr, vec![4, 5], -2.0, 2.0);
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape, Lease::Freeze);
            let gv = tape.constant(g);
            let mpv = tape.constant(m_prime.clone());
            for &(wq, wk, wv) in &vars.heads {
                let q = tape.matmul(gv, wq).unwrap();
                let k = tape.matmul(mpv, wk).unwrap();
                let v = tape.matmul(mpv, wv).unwrap();
                let kt = tape.transpose(k).unwrap();
                let scores = tape.matmul(q, kt).unwrap();
                let scores = tape.scale(scores, 1.0 / (3.0f64).sqrt());
                let attn = tape.softmax(scores, 1).unwrap();
                let out = tape.matmul(attn, v).unwrap();
                for j in 0..3 {
                    let col: Vec<f64> = (0..4).map(|i| tape.value(v).at(i, j)).collect();
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let val = tape.value(out).at(0, j);
                    assert!(
                        val >= lo - 1e-12 && val <= hi + 1e-12,
                        "coordinate {j} escaped the hull: {val} not in [{lo}, {hi}]"
                    );
                }
            }
        }
    }
}
