//! Two-tower encoders for contrastive pretraining: a 5-layer GIN over
//! molecular graphs and a small bidirectional text encoder, plus the
//! projection heads into the shared contrastive space.

mod gin;
mod project;
mod text;

pub use gin::{gin_encode, GinParams, GinVars, GIN_LAYERS};
pub use project::{project_pair, ProjectionHeads, ProjectionVars};
pub use text::{text_encode, TextEncoderParams, TextEncoderVars, MAX_TEXT_LEN};

use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EncoderError {
    #[error("sequence of {len} tokens exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("projection produced an exactly zero vector")]
    ZeroVector,
    #[error(transparent)]
    Numerics(#[from] crate::tensor::NumericsError),
}

use crate::tape::{Tape, Var};

/// Scales a row vector to unit Euclidean norm on the tape.
pub(crate) fn l2_normalize_row(tape: &mut Tape, x: Var) -> Result<Var, EncoderError> {
    let sq = tape.mul(x, x)?;
    let s = tape.sum_all(sq);
    if tape.value(s).item()? == 0.0 {
        return Err(EncoderError::ZeroVector);
    }
    let norm = tape.sqrt(s);
    let inv = tape.recip(norm);
    Ok(tape.mul(x, inv)?)
}
