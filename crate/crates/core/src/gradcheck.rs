//! Central-difference gradient verification.
//!
//! The finite-difference side never touches the reverse sweep, so it stays
//! an independent oracle for whatever the builder closure computes.

use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};

/// Builds a scalar loss on the given tape from the leased parameter vars.
/// The closure must be deterministic in its inputs.
pub type LossBuilder<'a> = &'a dyn Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>;

/// Compares reverse-mode gradients against central differences for every
/// coordinate of every parameter.
///
/// Step size is `1e-5 * max(1, |theta|)` per coordinate; the reported value
/// is the maximum of `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check(build: LossBuilder, params: &[Tensor]) -> Result<f64, NumericsError> {
    // reverse-mode side
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if !tape.value(loss).is_scalar() {
        return Err(NumericsError::NotScalar {
            shape: tape.value(loss).shape().to_vec(),
        });
    }
    let grads = tape.backward(loss)?;
    let ad: Vec<Tensor> = vars
        .iter()
        .map(|&v| grads.get(v).expect("param entry").clone())
        .collect();

    // finite-difference side
    let eval = |perturbed: &[Tensor]| -> Result<f64, NumericsError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        let l = build(&mut t, &vs)?;
        t.value(l).item()
    };

    let mut max_rel = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let theta = params[pi].data()[ci];
            let h = 1e-5 * theta.abs().max(1.0);

            work[pi].data_mut()[ci] = theta + h;
            let up = eval(&work)?;
            work[pi].data_mut()[ci] = theta - h;
            let down = eval(&work)?;
            work[pi].data_mut()[ci] = theta;

            let fd = (up - down) / (2.0 * h);
            let g = ad[pi].data()[ci];
            let rel = (g - fd).abs() / 1e-8f64.max(g.abs() + fd.abs());
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
