//! Projection heads into the shared contrastive space. Bias-free linear
//! maps, so normalize(project(s * x)) is scale invariant for s > 0.

use rand::Rng;

use super::{l2_normalize_row, EncoderError};
use crate::nn::{lease, Lease};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    pub graph: Tensor,
    pub text: Tensor,
    pub dim: usize,
}

impl ProjectionHeads {
    pub fn new<R: Rng>(rng: &mut R, graph_in: usize, text_in: usize, dim: usize) -> Self {
        ProjectionHeads {
            graph: Tensor::xavier(rng, graph_in, dim),
            text: Tensor::xavier(rng, text_in, dim),
            dim,
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.graph"), &self.graph),
            (format!("{prefix}.text"), &self.text),
        ]
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        vec![
            (format!("{prefix}.graph"), &mut self.graph),
            (format!("{prefix}.text"), &mut self.text),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> ProjectionVars {
        ProjectionVars {
            graph: lease(tape, &self.graph, mode),
            text: lease(tape, &self.text, mode),
        }
    }
}

pub struct ProjectionVars {
    pub graph: Var,
    pub text: Var,
}

impl ProjectionVars {
    pub fn var_list(&self) -> Vec<Var> {
        vec![self.graph, self.text]
    }

    pub fn project_graph(&self, tape: &mut Tape, g: Var) -> Result<Var, EncoderError> {
        let z = tape.matmul(g, self.graph)?;
        l2_normalize_row(tape, z)
    }

    pub fn project_text(&self, tape: &mut Tape, t: Var) -> Result<Var, EncoderError> {
        let z = tape.matmul(t, self.text)?;
        l2_normalize_row(tape, z)
    }
}

/// Projects one graph/text feature pair onto the unit sphere of the shared
/// space. Errors with `ZeroVector` when a projection lands exactly at zero.
pub fn project_pair(
    g: &Tensor,
    t: &Tensor,
    heads: &ProjectionHeads,
) -> Result<(Tensor, Tensor), EncoderError> {
    let mut tape = Tape::new();
    let vars = heads.bind(&mut tape, Lease::Freeze);
    let gr = tape.constant(g.reshaped(vec![1, g.numel()])?);
    let tr = tape.constant(t.reshaped(vec![1, t.numel()])?);
    let gp = vars.project_graph(&mut tape, gr)?;
    let tp = vars.project_text(&mut tape, tr)?;
    Ok((
        tape.value(gp).reshaped(vec![heads.dim])?,
        tape.value(tp).reshaped(vec![heads.dim])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn outputs_are_unit_norm_with_dim_p() {
        let mut r = rng(41);
        let heads = ProjectionHeads::new(&mut r, 8, 6, 4);
        let g = Tensor::uniform(&mut r, vec![8], -2.0, 2.0);
        let t = Tensor::uniform(&mut r, vec![6], -2.0, 2.0);
        let (gp, tp) = project_pair(&g, &t, &heads).unwrap();
        assert_eq!(gp.shape(), &[4]);
        assert_eq!(tp.shape(), &[4]);
        assert!((gp.l2_norm() - 1.0).abs() <= 1e-9);
        assert!((tp.l2_norm() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn positive_scaling_of_input_is_invisible() {
        let mut r = rng(42);
        let heads = ProjectionHeads::new(&mut r, 8, 6, 4);
        let g = Tensor::uniform(&mut r, vec![8], -2.0, 2.0);
        let t = Tensor::uniform(&mut r, vec![6], -2.0, 2.0);
        let g2 = Tensor::new(vec![8], g.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let (a, _) = project_pair(&g, &t, &heads).unwrap();
        let (b, _) = project_pair(&g2, &t, &heads).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_vector_is_an_error() {
        let mut r = rng(43);
        let heads = ProjectionHeads::new(&mut r, 8, 6, 4);
        let g = Tensor::zeros(vec![8]);
        let t = Tensor::uniform(&mut r, vec![6], -2.0, 2.0);
        assert!(matches!(
            project_pair(&g, &t, &heads),
            Err(EncoderError::ZeroVector)
        ));
    }
}
