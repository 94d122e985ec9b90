//! Bidirectional text encoder: token embeddings, two transformer blocks,
//! masked mean pooling over non-pad positions.

use rand::Rng;

use super::EncoderError;
use crate::nn::{lease, BlockParams, BlockVars, AttnMask, Lease};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{PAD, UNK};

pub const MAX_TEXT_LEN: usize = 64;
const TEXT_BLOCKS: usize = 2;
const TEXT_HEADS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub embed: Tensor,
    pub blocks: Vec<BlockParams>,
    pub dim: usize,
}

impl TextEncoderParams {
    pub fn new<R: Rng>(rng: &mut R, vocab_size: usize, dim: usize) -> Self {
        TextEncoderParams {
            embed: Tensor::gaussian(rng, vec![vocab_size, dim], 0.02),
            blocks: (0..TEXT_BLOCKS)
                .map(|_| BlockParams::new(rng, dim, TEXT_HEADS))
                .collect(),
            dim,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![(format!("{prefix}.embed"), &self.embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(b.named(&format!("{prefix}.block{i}")));
        }
        out
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![(format!("{prefix}.embed"), &mut self.embed)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_mut(&format!("{prefix}.block{i}")));
        }
        out
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> TextEncoderVars {
        TextEncoderVars {
            embed: lease(tape, &self.embed, mode),
            blocks: self.blocks.iter().map(|b| b.bind(tape, mode)).collect(),
        }
    }
}

pub struct TextEncoderVars {
    pub embed: Var,
    pub blocks: Vec<BlockVars>,
}

impl TextEncoderVars {
    pub fn var_list(&self) -> Vec<Var> {
        let mut out = vec![self.embed];
        for b in &self.blocks {
            out.extend(b.var_list());
        }
        out
    }

    /// Encodes token ids to a `[1 x dim]` row. Pad positions are excluded
    /// from attention and pooling, so appending pads never changes the
    /// output. Empty (or all-pad) input encodes as a single UNK token.
    pub fn encode(&self, tape: &mut Tape, ids: &[usize]) -> Result<Var, EncoderError> {
        if ids.len() > MAX_TEXT_LEN {
            return Err(EncoderError::SequenceTooLong {
                len: ids.len(),
                max: MAX_TEXT_LEN,
            });
        }
        let owned: Vec<usize>;
        let ids = if ids.iter().any(|&t| t != PAD) {
            ids
        } else {
            owned = vec![UNK];
            &owned
        };
        let non_pad: Vec<bool> = ids.iter().map(|&t| t != PAD).collect();

        let mut h = tape.embedding_lookup(self.embed, ids)?;
        for block in &self.blocks {
            h = block.forward(tape, h, &AttnMask::Columns(&non_pad))?;
        }

        let count = non_pad.iter().filter(|&&k| k).count() as f64;
        let weights: Vec<f64> = non_pad
            .iter()
            .map(|&k| if k { 1.0 / count } else { 0.0 })
            .collect();
        let pool = tape.constant(Tensor::new(vec![1, ids.len()], weights).expect("row"));
        Ok(tape.matmul(pool, h)?)
    }
}

/// Value-level text encoding.
pub fn text_encode(ids: &[usize], params: &TextEncoderParams) -> Result<Tensor, EncoderError> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, Lease::Freeze);
    let out = vars.encode(&mut tape, ids)?;
    Ok(tape
        .value(out)
        .reshaped(vec![params.dim])
        .expect("row to vector"))
}
