//! Task heads: one linear projection per task on top of the backbone's
//! output representation. The head reads the hidden state at the
//! `<|value|>` position when the prompt has one, otherwise at the last
//! position; nothing else in the sequence reaches the prediction.

use rand::Rng;

use crate::nn::{Lease, Linear, LinearVars};
use crate::tape::{Tape, Var};
use crate::tensor::{NumericsError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification(usize),
}

impl TaskKind {
    pub fn out_dim(self) -> usize {
        match self {
            TaskKind::Regression => 1,
            TaskKind::Classification(n) => n,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::Classification(_) => "classification",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub kind: TaskKind,
    pub linear: Linear,
}

impl TaskHead {
    pub fn new<R: Rng>(rng: &mut R, embed_dim: usize, kind: TaskKind) -> Self {
        TaskHead {
            kind,
            linear: Linear::new(rng, embed_dim, kind.out_dim()),
        }
    }

    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.linear.named(prefix)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.linear.named_mut(prefix)
    }

    pub fn bind(&self, tape: &mut Tape, mode: Lease) -> TaskHeadVars {
        TaskHeadVars {
            kind: self.kind,
            linear: self.linear.bind(tape, mode),
        }
    }
}

pub struct TaskHeadVars {
    pub kind: TaskKind,
    pub linear: LinearVars,
}

impl TaskHeadVars {
    pub fn var_list(&self) -> Vec<Var> {
        self.linear.var_list()
    }

    /// Selects the output representation and projects it: a `[1 x out]`
    /// prediction row (scalar for regression, logits for classification).
    pub fn forward(
        &self,
        tape: &mut Tape,
        hidden: Var,
        value_pos: Option<usize>,
    ) -> Result<Var, NumericsError> {
        let last = tape.value(hidden).nrows() - 1;
        let selected = tape.row(hidden, value_pos.unwrap_or(last))?;
        self.linear.forward(tape, selected)
    }
}

/// Value-level head application for evaluation paths.
pub fn apply_head(
    hidden: &Tensor,
    value_pos: Option<usize>,
    head: &TaskHead,
) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::new();
    let vars = head.bind(&mut tape, Lease::Freeze);
    let h = tape.constant(hidden.clone());
    let pred = vars.forward(&mut tape, h, value_pos)?;
    Ok(tape.value(pred).clone())
}
