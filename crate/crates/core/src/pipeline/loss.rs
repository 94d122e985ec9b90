//! Symmetric InfoNCE over a batch of matched graph/text rows.

use super::PipelineError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const NORM_TOLERANCE: f64 = 1e-6;

fn check_rows_normalized(t: &Tensor) -> Result<(), PipelineError> {
    for r in 0..t.nrows() {
        let norm = t.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(PipelineError::NotNormalized { row: r, norm });
        }
    }
    Ok(())
}

/// `S = G T^t / tau`; loss is the mean of the row-wise and column-wise
/// cross entropies against the diagonal, halved. Swapping the towers
/// transposes S, so the loss is symmetric to the bit.
pub fn info_nce(
    tape: &mut Tape,
    graph_rows: Var,
    text_rows: Var,
    tau: Var,
) -> Result<Var, PipelineError> {
    let (g, t) = (tape.value(graph_rows), tape.value(text_rows));
    if g.shape() != t.shape() {
        return Err(PipelineError::Numerics(
            crate::tensor::NumericsError::ShapeMismatch {
                op: "info_nce",
                lhs: g.shape().to_vec(),
                rhs: t.shape().to_vec(),
            },
        ));
    }
    check_rows_normalized(g)?;
    check_rows_normalized(t)?;
    let batch = g.nrows();

    let tt = tape.transpose(text_rows)?;
    let sim = tape.matmul(graph_rows, tt)?;
    let inv_tau = tape.recip(tau);
    let scaled = tape.mul(sim, inv_tau)?;

    let targets: Vec<usize> = (0..batch).collect();
    let graph_to_text = tape.cross_entropy_rows(scaled, &targets)?;
    let transposed = tape.transpose(scaled)?;
    let text_to_graph = tape.cross_entropy_rows(transposed, &targets)?;
    let sum = tape.add(graph_to_text, text_to_graph)?;
    Ok(tape.scale(sum, 0.5))
}

/// Value-level InfoNCE for already-normalized row batches.
pub fn info_nce_value(
    graph_rows: &Tensor,
    text_rows: &Tensor,
    tau: f64,
) -> Result<f64, PipelineError> {
    let mut tape = Tape::new();
    let g = tape.constant(graph_rows.clone());
    let t = tape.constant(text_rows.clone());
    let tau = tape.constant(Tensor::scalar(tau));
    let loss = info_nce(&mut tape, g, t, tau)?;
    Ok(tape.value(loss).item()?)
}
