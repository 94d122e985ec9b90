//! The frozen toy causal language model: pretrained token embeddings M,
//! learned positions, and a two-block causal decoder with tied input and
//! output embeddings.
//!
//! After in-repo pretraining the parameters never receive gradients again;
//! every later stage binds them with `Lease::Freeze` and verifies the
//! recorded digest once training finishes.


use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::digest::{digest_named, ParamDigest};
use crate::nn::{lease, AttnMask, BlockParams, BlockVars, Lease, NnError, Sgd};
use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};
use crate::vocab::{Vocab, VocabError, BOS, EOS};

pub const BACKBONE_BLOCKS: usize = 2;
pub const BACKBONE_HEADS: usize = 4;
pub const CONTEXT: usize = 128;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BackboneError {
    #[error("sequence of {len} positions exceeds context {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("pretraining corpus has no usable lines")]
    EmptyCorpus,
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    /// Token embedding matrix M, also the tied output projection.
    pub embed: Tensor,
    pub pos: Tensor,
    pub blocks: Vec<BlockParams>,
    pub dim: usize,
}

impl BackboneParams {
    pub fn new(rng: &mut ChaCha12Rng, vocab_size: usize, dim: usize) -> Self {
        BackboneParams {
            embed: Tensor::gaussian(rng, vec![vocab_size, dim], 0.02),
            pos: Tensor::gaussian(rng, vec![CONTEXT, dim], 0.01),
            blocks: (0..BACKBONE_BLOCKS)
                .map(|_| BlockParams::new(rng, dim, BACKBONE_HEADS))
                .collect(),
            dim,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.shape()[0]
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("backbone.embed".to_string(), &self.embed),
            ("backbone.pos".to_string(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("backbone.block{i}")));
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("backbone.embed".to_string(), &mut self.embed),
            ("backbone.pos".to_string(), &mut self.pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("backbone.block{i}")));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> BackboneVars {
        BackboneVars {
            embed: lease(tape, &self.embed, mode),
            pos: lease(tape, &self.pos, mode),
            blocks: self.blocks.iter().map(|b| b.bind(tape, mode)).collect(),
        }
    }

    pub fn digest(&self) -> ParamDigest {
        digest_named(&self.named())
    }
}

pub struct BackboneVars {
    pub embed: Var,
    pub pos: Var,
    pub blocks: Vec<BlockVars>,
}

impl BackboneVars {
    /// Causal forward over an embedding sequence: adds positions and runs
    /// the decoder blocks. `hidden[t]` depends only on `embeds[0..=t]`.
    pub fn forward(&self, tape: &mut Tape, embeds: Var) -> Result<Var, BackboneError> {
        let len = tape.value(embeds).nrows();
        if len > CONTEXT {
            return Err(BackboneError::SequenceTooLong {
                len,
                max: CONTEXT,
            });
        }
        let positions: Vec<usize> = (0..len).collect();
        let pos_rows = tape.embedding_lookup(self.pos, &positions)?;
        let mut h = tape.add(embeds, pos_rows)?;
        for block in &self.blocks {
            h = block.forward(tape, h, &AttnMask::Causal)?;
        }
        Ok(h)
    }

    /// Tied-embedding logits: `hidden @ M^T`.
    pub fn logits(&self, tape: &mut Tape, hidden: Var) -> Result<Var, NumericsError> {
        let mt = tape.transpose(self.embed)?;
        tape.matmul(hidden, mt)
    }
}

/// Forward pass over injected embeddings with the backbone frozen:
/// gradients flow back to `embeds`, none are reported for the parameters.
pub fn lm_forward(
    params: &BackboneParams,
    embeds: &Tensor,
) -> Result<Tensor, BackboneError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, Lease::Freeze);
    let e = tape.constant(embeds.clone());
    let h = vars.forward(&mut tape, e)?;
    Ok(tape.value(h).clone())
}

/// True when the current parameters hash to the recorded digest.
pub fn freeze_check(params: &BackboneParams, before: &ParamDigest) -> bool {
    params.digest() == *before
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainStats {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

fn corpus_sequences(vocab: &Vocab, corpus: &[String]) -> Vec<Vec<usize>> {
    corpus
        .iter()
        .map(|line| {
            let mut ids = vec![BOS];
            ids.extend(vocab.tokenize(line));
            ids.push(EOS);
            ids.truncate(CONTEXT);
            ids
        })
        .filter(|ids| ids.len() >= 2)
        .collect()
}

fn mean_corpus_loss(
    params: &BackboneParams,
    sequences: &[Vec<usize>],
) -> Result<f64, BackboneError> {
    let mut total = 0.0;
    for ids in sequences {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let loss = sequence_loss(&mut tape, &vars, ids)?;
        total += tape.value(loss).item()?;
    }
    Ok(total / sequences.len() as f64)
}

fn sequence_loss(
    tape: &mut Tape,
    vars: &BackboneVars,
    ids: &[usize],
) -> Result<Var, BackboneError> {
    let inputs = &ids[..ids.len() - 1];
    let targets = &ids[1..];
    let embeds = tape.embedding_lookup(vars.embed, inputs)?;
    let hidden = vars.forward(tape, embeds)?;
    let logits = vars.logits(tape, hidden)?;
    Ok(tape.cross_entropy_rows(logits, targets)?)
}

/// Next-token pretraining on the description corpus. Deterministic given
/// the seeded RNG; returns the trained parameters, their digest, and the
/// whole-corpus loss before and after.
pub fn pretrain_backbone(
    corpus: &[String],
    vocab: &Vocab,
    dim: usize,
    cfg: &PretrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(BackboneParams, ParamDigest, PretrainStats), BackboneError> {
    let sequences = corpus_sequences(vocab, corpus);
    if sequences.is_empty() {
        return Err(BackboneError::EmptyCorpus);
    }

    let mut params = BackboneParams::new(rng, vocab.len(), dim);
    let initial_loss = mean_corpus_loss(&params, &sequences)?;

    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut cursor = order.len(); // force reshuffle on first step

    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Train);
        let mut batch_losses = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor >= order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let ids = &sequences[order[cursor]];
            cursor += 1;
            batch_losses.push(sequence_loss(&mut tape, &vars, ids)?);
        }
        let stacked = tape.concat_rows(&batch_losses.iter().map(|&l| l).collect::<Vec<_>>());
        let loss = match stacked {
            Ok(s) => tape.mean_all(s),
            Err(e) => return Err(e.into()),
        };
        let mut grads = tape.backward(loss)?;
        let named_grads =
            crate::nn::grads_by_name(&params.named(), &vars.var_list(), &mut grads);
        opt.step(params.named_mut(), &named_grads);
    }

    let final_loss = mean_corpus_loss(&params, &sequences)?;
    let digest = params.digest();
    Ok((
        params,
        digest,
        PretrainStats {
            initial_loss,
            final_loss,
            steps: cfg.steps,
        },
    ))
}

impl BackboneVars {
    pub fn var_list(&self) -> Vec<Var> {
        let mut out = vec![self.embed, self.pos];
        for b in &self.blocks {
            out.extend(b.var_list());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::vocab::MIN_VOCAB;

    fn tiny_vocab() -> Vocab {
        let corpus: Vec<String> = vec![
            "the molecule dissolves in water".into(),
            "a ring of carbon atoms".into(),
            "this compound contains oxygen and nitrogen".into(),
        ];
        Vocab::build(&corpus, MIN_VOCAB).unwrap()
    }

    #[test]
    fn causal_mask_isolates_prefix() {
        let mut r = rng(51);
        let params = BackboneParams::new(&mut r, MIN_VOCAB, 16);
        let base = Tensor::uniform(&mut r, vec![5, 16], -1.0, 1.0);
        let mut changed = base.clone();
        for v in changed.data_mut()[4 * 16..].iter_mut() {
            *v = 9.0;
        }
        let h1 = lm_forward(&params, &base).unwrap();
        let h2 = lm_forward(&params, &changed).unwrap();
        assert_eq!(h1.data()[..4 * 16], h2.data()[..4 * 16]);
        assert_ne!(h1.data()[4 * 16..], h2.data()[4 * 16..]);
    }

    #[test]
    fn single_position_shape() {
        let mut r = rng(52);
        let params = BackboneParams::new(&mut r, MIN_VOCAB, 16);
        let h = lm_forward(&params, &Tensor::zeros(vec![1, 16])).unwrap();
        assert_eq!(h.shape(), &[1, 16]);
    }

    #[test]
    fn context_limit_enforced() {
        let mut r = rng(53);
        let params = BackboneParams::new(&mut r, MIN_VOCAB, 16);
        let too_long = Tensor::zeros(vec![CONTEXT + 1, 16]);
        assert!(matches!(
            lm_forward(&params, &too_long),
            Err(BackboneError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn frozen_backbone_reports_no_gradients() {
        let mut r = rng(54);
        let params = BackboneParams::new(&mut r, MIN_VOCAB, 16);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, Lease::Freeze);
        let embeds = tape.param(Tensor::uniform(&mut r, vec![3, 16], -0.5, 0.5));
        let h = vars.forward(&mut tape, embeds).unwrap();
        let sq = tape.mul(h, h).unwrap();
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(vars.embed).is_none());
        assert!(grads.get(vars.pos).is_none());
        let ge = grads.get(embeds).unwrap();
        assert!(ge.data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn pretraining_reduces_loss_and_freezes() {
        let vocab = tiny_vocab();
        let corpus: Vec<String> = (0..12)
            .map(|i| {
                if i % 2 == 0 {
                    "the molecule dissolves in water".to_string()
                } else {
                    "a ring of carbon atoms".to_string()
                }
            })
            .collect();
        let cfg = PretrainConfig {
            steps: 80,
            batch_size: 2,
            learning_rate: 0.05,
            momentum: 0.9,
        };
        let mut r = rng(55);
        let (params, digest, stats) =
            pretrain_backbone(&corpus, &vocab, 16, &cfg, &mut r).unwrap();
        assert!(
            stats.final_loss < stats.initial_loss * 0.7,
            "init {} final {}",
            stats.initial_loss,
            stats.final_loss
        );
        assert!(freeze_check(&params, &digest));

        // same seed, same run, same digest
        let mut r2 = rng(55);
        let (_, digest2, _) = pretrain_backbone(&corpus, &vocab, 16, &cfg, &mut r2).unwrap();
        assert_eq!(digest, digest2);

        // corrupting one weight must break the check
        let mut corrupted = params.clone();
        corrupted.embed.data_mut()[0] += 1e-9;
        assert!(!freeze_check(&corrupted, &digest));
    }
}
