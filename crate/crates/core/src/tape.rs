//! Define-by-run reverse-mode autodiff tape.
//!
//! Every forward op appends one node; `backward` walks the nodes once in
//! reverse and accumulates vector-Jacobian products. Nodes are appended in
//! execution order, so inputs always precede their consumers and the reverse
//! walk is a valid topological order.
//!
//! Leaf kinds:
//! * `constant` - no gradient is tracked or reported.
//! * `param`    - trainable; `backward` reports a gradient entry (zero if
//!   the loss never touched it).
//! * `frozen`   - gradients flow through ops that consume it, but no entry
//!   is ever reported for the leaf itself.
//!
//! A tape is confined to one execution context and dropped after backward;
//! parallelism, if any, is across independent tapes.

use crate::tensor::{NumericsError, Tensor};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape_id: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Constant,
    Param,
    Frozen,
    Interior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Relu,
    Gelu,
    Tanh,
    Recip,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Unary(usize, UnaryKind),
    MatMul(usize, usize),
    Transpose(usize),
    Softmax(usize, usize),
    /// Row-wise softmax over entries with `mask == true`; masked outputs are
    /// exactly zero and receive no gradient.
    MaskedSoftmax(usize, Vec<bool>),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
    },
    Embed(usize, Vec<usize>),
    Reduce(usize, ReduceKind, Option<usize>),
    CrossEntropyRows(usize, Vec<usize>),
    SetRow {
        x: usize,
        row: usize,
        index: usize,
    },
    Row(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    kind: NodeKind,
}

/// Gradients reported by [`Tape::backward`]: one entry per `param` leaf.
pub struct Gradients {
    tape_id: u64,
    entries: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        assert_eq!(v.tape_id, self.tape_id, "Var used with foreign gradients");
        self.entries.get(v.index).and_then(|e| e.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        assert_eq!(v.tape_id, self.tape_id, "Var used with foreign gradients");
        self.entries.get_mut(v.index).and_then(|e| e.take())
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

static TAPE_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, kind: NodeKind) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite values produced by {:?}",
            op_name(&op)
        );
        let index = self.nodes.len();
        self.nodes.push(Node { value, op, kind });
        Var {
            tape_id: self.id,
            index,
        }
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape_id, self.id, "Var used with foreign tape");
        &self.nodes[v.index]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, NodeKind::Constant)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, NodeKind::Param)
    }

    pub fn frozen(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, NodeKind::Frozen)
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    fn binary_shapes(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Vec<usize>, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(ta.shape().to_vec())
        } else if tb.is_scalar() {
            Ok(ta.shape().to_vec())
        } else if ta.is_scalar() {
            Ok(tb.shape().to_vec())
        } else {
            Err(NumericsError::ShapeMismatch {
                op,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })
        }
    }

    fn zip_broadcast(
        &self,
        a: Var,
        b: Var,
        shape: Vec<usize>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|i| {
                let x = if ta.is_scalar() && numel > 1 {
                    ta.data()[0]
                } else {
                    ta.data()[i]
                };
                let y = if tb.is_scalar() && numel > 1 {
                    tb.data()[0]
                } else {
                    tb.data()[i]
                };
                f(x, y)
            })
            .collect();
        Tensor::new(shape, data).expect("broadcast shape is consistent")
    }

    /// Elementwise sum; the smaller side may be a one-element scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let shape = self.binary_shapes("add", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x + y);
        Ok(self.push(out, Op::Add(a.index, b.index), NodeKind::Interior))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let shape = self.binary_shapes("sub", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a.index, b.index), NodeKind::Interior))
    }

    /// Hadamard product; the smaller side may be a one-element scalar.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let shape = self.binary_shapes("mul", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a.index, b.index), NodeKind::Interior))
    }

    /// Multiplication by a compile-time constant (not a tape value).
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|v| v * c).collect(),
        )
        .expect("shape preserved");
        self.push(out, Op::Scale(a.index, c), NodeKind::Interior)
    }

    /// Adds a length-n vector to every row of an m x n matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.ncols();
        if tb.shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let rows = ta.nrows();
        let mut data = Vec::with_capacity(rows * n);
        for r in 0..rows {
            for c in 0..n {
                data.push(ta.at(r, c) + tb.data()[c]);
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(out, Op::AddRow(a.index, b.index), NodeKind::Interior))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Relu)
    }

    /// GELU, tanh approximation:
    /// `0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Gelu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Tanh)
    }

    /// 1/x; caller must keep x away from zero.
    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Recip)
    }

    /// sqrt(x) for x > 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, UnaryKind::Sqrt)
    }

    fn unary(&mut self, a: Var, kind: UnaryKind) -> Var {
        let ta = self.value(a);
        let data: Vec<f64> = ta.data().iter().map(|&x| unary_fwd(kind, x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        self.push(out, Op::Unary(a.index, kind), NodeKind::Interior)
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n))
            .expect("product shape");
        Ok(self.push(out, Op::MatMul(a.index, b.index), NodeKind::Interior))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let out = Tensor::new(vec![n, m], transpose_raw(ta.data(), m, n)).expect("shape");
        Ok(self.push(out, Op::Transpose(a.index), NodeKind::Interior))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, NumericsError> {
        let out = self.value(a).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a.index), NodeKind::Interior))
    }

    // ── Softmax and normalization ───────────────────────────────────────

    /// Numerically stable softmax along `axis` (max subtraction per slice).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let rank = ta.shape().len();
        if axis >= rank {
            return Err(NumericsError::AxisOutOfRange { axis, rank });
        }
        let out = if rank == 1 || (rank == 2 && axis == 1) {
            let (rows, n) = (ta.nrows(), ta.ncols());
            let mut data = Vec::with_capacity(rows * n);
            for r in 0..rows {
                data.extend(softmax_row(ta.row_slice(r)));
            }
            Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
        } else {
            // axis 0 of a matrix: softmax down each column
            let (rows, n) = (ta.nrows(), ta.ncols());
            let mut data = vec![0.0; rows * n];
            for c in 0..n {
                let col: Vec<f64> = (0..rows).map(|r| ta.at(r, c)).collect();
                for (r, v) in softmax_row(&col).into_iter().enumerate() {
                    data[r * n + c] = v;
                }
            }
            Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
        };
        Ok(self.push(out, Op::Softmax(a.index, axis), NodeKind::Interior))
    }

    /// Row-wise softmax restricted to positions with `mask == true`.
    ///
    /// Masked outputs are exactly 0.0 and are excluded from the max and the
    /// normalizing sum, so the result is bitwise independent of masked
    /// logits. Each row must keep at least one unmasked entry.
    pub fn masked_softmax_rows(
        &mut self,
        a: Var,
        mask: &[bool],
    ) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let (rows, n) = (ta.nrows(), ta.ncols());
        if mask.len() != rows * n {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_softmax",
                lhs: ta.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let mut data = vec![0.0; rows * n];
        for r in 0..rows {
            let row = ta.row_slice(r);
            let keep = &mask[r * n..(r + 1) * n];
            assert!(
                keep.iter().any(|&k| k),
                "masked_softmax row {r} has no unmasked entry"
            );
            let max = row
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for c in 0..n {
                if keep[c] {
                    let e = (row[c] - max).exp();
                    data[r * n + c] = e;
                    denom += e;
                }
            }
            for c in 0..n {
                if keep[c] {
                    data[r * n + c] /= denom;
                }
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(out, Op::MaskedSoftmax(a.index, mask.to_vec()), NodeKind::Interior))
    }

    /// Per-row layer normalization with affine output: for each row,
    /// `y = gamma * (x - mean) / sqrt(var + eps) + beta` (biased variance).
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.ncols();
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(NumericsError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let rows = tx.nrows();
        let mut data = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let row = tx.row_slice(r);
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..n {
                data.push(tg.data()[c] * (row[c] - mean) * inv + tb.data()[c]);
            }
        }
        let out = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.index,
                gamma: gamma.index,
                beta: beta.index,
                eps,
            },
            NodeKind::Interior,
        ))
    }

    // ── Gather, scatter, assembly ───────────────────────────────────────

    /// Row gather from an embedding matrix; backward scatter-adds, so
    /// repeated ids accumulate.
    pub fn embedding_lookup(&mut self, m: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        let tm = self.value(m);
        let (rows, d) = (tm.nrows(), tm.ncols());
        for &id in ids {
            if id >= rows {
                return Err(NumericsError::IndexOutOfRange {
                    index: id,
                    extent: rows,
                });
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(tm.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data).expect("gather shape");
        Ok(self.push(out, Op::Embed(m.index, ids.to_vec()), NodeKind::Interior))
    }

    /// Copy of `x` with row `index` replaced by `row` (a 1 x n or length-n value).
    pub fn set_row(&mut self, x: Var, index: usize, row: Var) -> Result<Var, NumericsError> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (rows, n) = (tx.nrows(), tx.ncols());
        if index >= rows {
            return Err(NumericsError::IndexOutOfRange {
                index,
                extent: rows,
            });
        }
        if tr.numel() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "set_row",
                lhs: tx.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let mut data = tx.data().to_vec();
        data[index * n..(index + 1) * n].copy_from_slice(tr.data());
        let out = Tensor::new(tx.shape().to_vec(), data).expect("shape preserved");
        Ok(self.push(
            out,
            Op::SetRow {
                x: x.index,
                row: row.index,
                index,
            },
            NodeKind::Interior,
        ))
    }

    /// Selects one row as a 1 x n matrix.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var, NumericsError> {
        let tx = self.value(x);
        let (rows, n) = (tx.nrows(), tx.ncols());
        if index >= rows {
            return Err(NumericsError::IndexOutOfRange {
                index,
                extent: rows,
            });
        }
        let out = Tensor::new(vec![1, n], tx.row_slice(index).to_vec()).expect("row shape");
        Ok(self.push(out, Op::Row(x.index, index), NodeKind::Interior))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let n = self.value(parts[0]).ncols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.ncols() != n {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![rows, n],
                    rhs: tp.shape().to_vec(),
                });
            }
            rows += tp.nrows();
            data.extend_from_slice(tp.data());
        }
        let out = Tensor::new(vec![rows, n], data).expect("stack shape");
        Ok(self.push(
            out,
            Op::ConcatRows(parts.iter().map(|p| p.index).collect()),
            NodeKind::Interior,
        ))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rows = self.value(parts[0]).nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).ncols()).collect();
        for &p in parts {
            if self.value(p).nrows() != rows {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![rows],
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, _) in parts.iter().zip(&widths) {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data).expect("concat shape");
        Ok(self.push(
            out,
            Op::ConcatCols(parts.iter().map(|p| p.index).collect()),
            NodeKind::Interior,
        ))
    }

    // ── Reductions and losses ───────────────────────────────────────────

    /// Sum or mean, over everything (`axis: None`) or along one axis of a
    /// matrix (`axis 0` collapses rows, `axis 1` collapses columns).
    pub fn reduce(
        &mut self,
        kind: ReduceKind,
        a: Var,
        axis: Option<usize>,
    ) -> Result<Var, NumericsError> {
        let ta = self.value(a);
        let rank = ta.shape().len();
        if let Some(ax) = axis {
            if ax >= rank {
                return Err(NumericsError::AxisOutOfRange { axis: ax, rank });
            }
        }
        let out = match axis {
            None => {
                let s: f64 = ta.data().iter().sum();
                let v = match kind {
                    ReduceKind::Sum => s,
                    ReduceKind::Mean => s / ta.numel() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                let (rows, n) = (ta.nrows(), ta.ncols());
                if ax == 0 {
                    let mut acc = vec![0.0; n];
                    for r in 0..rows {
                        for c in 0..n {
                            acc[c] += ta.at(r, c);
                        }
                    }
                    if kind == ReduceKind::Mean {
                        acc.iter_mut().for_each(|v| *v /= rows as f64);
                    }
                    Tensor::vector(acc)
                } else {
                    let mut acc = vec![0.0; rows];
                    for r in 0..rows {
                        acc[r] = ta.row_slice(r).iter().sum();
                    }
                    if kind == ReduceKind::Mean {
                        acc.iter_mut().for_each(|v| *v /= n as f64);
                    }
                    Tensor::vector(acc)
                }
            }
        };
        Ok(self.push(out, Op::Reduce(a.index, kind, axis), NodeKind::Interior))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.reduce(ReduceKind::Sum, a, None).expect("axis None")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        self.reduce(ReduceKind::Mean, a, None).expect("axis None")
    }

    /// Mean squared error between same-shape tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NumericsError> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "mse",
                lhs: self.value(pred).shape().to_vec(),
                rhs: self.value(target).shape().to_vec(),
            });
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean_all(sq))
    }

    /// Cross entropy of a single logit vector against one class index:
    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumericsError> {
        let n = self.value(logits).numel();
        let flat = self.reshape(logits, vec![1, n])?;
        self.cross_entropy_rows(flat, &[target])
    }

    /// Mean over rows of `-log softmax(row)[target_row]`; log-softmax is
    /// applied internally with max subtraction.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &[usize],
    ) -> Result<Var, NumericsError> {
        let tl = self.value(logits);
        let (rows, n) = (tl.nrows(), tl.ncols());
        if targets.len() != rows {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![rows],
                rhs: vec![targets.len()],
            });
        }
        for &t in targets {
            if t >= n {
                return Err(NumericsError::IndexOutOfRange {
                    index: t,
                    extent: n,
                });
            }
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = tl.row_slice(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total += lse - row[t];
        }
        let out = Tensor::scalar(total / rows as f64);
        Ok(self.push(
            out,
            Op::CrossEntropyRows(logits.index, targets.to_vec()),
            NodeKind::Interior,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradient entries for every
    /// `param` leaf (zero-filled when unreachable); `frozen` leaves get no
    /// entry. Deterministic: nodes are visited exactly once in reverse
    /// insertion order and accumulation order is fixed.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, NumericsError> {
        assert_eq!(loss.tape_id, self.id, "loss Var from a different tape");
        if !self.nodes[loss.index].value.is_scalar() {
            return Err(NumericsError::NotScalar {
                shape: self.nodes[loss.index].value.shape().to_vec(),
            });
        }

        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[loss.index] = Some(vec![1.0]);

        for i in (0..loss.index + 1).rev() {
            let Some(g) = adj[i].take() else { continue };
            let keep = !matches!(self.nodes[i].kind, NodeKind::Constant | NodeKind::Frozen)
                || !matches!(self.nodes[i].op, Op::Leaf);
            let op = self.nodes[i].op.clone();
            self.accumulate(i, &g, &op, &mut adj);
            if keep {
                adj[i] = Some(g);
            }
        }

        let mut entries: Vec<Option<Tensor>> = vec![None; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.kind == NodeKind::Param {
                let grad_data = adj[i]
                    .take()
                    .unwrap_or_else(|| vec![0.0; node.value.numel()]);
                entries[i] = Some(
                    Tensor::new(node.value.shape().to_vec(), grad_data)
                        .expect("gradient shape matches value"),
                );
            }
        }
        Ok(Gradients {
            tape_id: self.id,
            entries,
        })
    }

    fn accumulate(&self, i: usize, g: &[f64], op: &Op, adj: &mut [Option<Vec<f64>>]) {
        let val = |idx: usize| &self.nodes[idx].value;
        let add_to = |adj: &mut [Option<Vec<f64>>], idx: usize, contrib: &[f64]| {
            let slot =
                adj[idx].get_or_insert_with(|| vec![0.0; self.nodes[idx].value.numel()]);
            for (s, c) in slot.iter_mut().zip(contrib) {
                *s += c;
            }
        };
        // scalar-broadcast aware accumulation for the elementwise ops
        let add_bcast = |adj: &mut [Option<Vec<f64>>], idx: usize, contrib: Vec<f64>| {
            if self.nodes[idx].value.is_scalar() && contrib.len() > 1 {
                let s: f64 = contrib.iter().sum();
                add_to(adj, idx, &[s]);
            } else {
                add_to(adj, idx, &contrib);
            }
        };

        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_bcast(adj, *a, g.to_vec());
                add_bcast(adj, *b, g.to_vec());
            }
            Op::Sub(a, b) => {
                add_bcast(adj, *a, g.to_vec());
                add_bcast(adj, *b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let numel = g.len();
                let pick = |t: &Tensor, i: usize| {
                    if t.is_scalar() && numel > 1 {
                        t.data()[0]
                    } else {
                        t.data()[i]
                    }
                };
                let da: Vec<f64> = (0..numel).map(|i| g[i] * pick(tb, i)).collect();
                let db: Vec<f64> = (0..numel).map(|i| g[i] * pick(ta, i)).collect();
                add_bcast(adj, *a, da);
                add_bcast(adj, *b, db);
            }
            Op::Scale(a, c) => {
                add_to(adj, *a, &g.iter().map(|v| v * c).collect::<Vec<_>>());
            }
            Op::AddRow(a, b) => {
                add_to(adj, *a, g);
                let n = val(*b).numel();
                let rows = g.len() / n;
                let mut db = vec![0.0; n];
                for r in 0..rows {
                    for c in 0..n {
                        db[c] += g[r * n + c];
                    }
                }
                add_to(adj, *b, &db);
            }
            Op::Unary(a, kind) => {
                let ta = val(*a);
                let out = &self.nodes[i].value;
                let da: Vec<f64> = g
                    .iter()
                    .enumerate()
                    .map(|(j, gv)| gv * unary_bwd(*kind, ta.data()[j], out.data()[j]))
                    .collect();
                add_to(adj, *a, &da);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                // dA = dC * B^T
                let bt = transpose_raw(tb.data(), k, n);
                add_to(adj, *a, &matmul_raw(g, &bt, m, n, k));
                // dB = A^T * dC
                let at = transpose_raw(ta.data(), m, k);
                add_to(adj, *b, &matmul_raw(&at, g, k, m, n));
            }
            Op::Transpose(a) => {
                let out = &self.nodes[i].value;
                let (m, n) = (out.shape()[0], out.shape()[1]);
                add_to(adj, *a, &transpose_raw(g, m, n));
            }
            Op::Softmax(a, axis) => {
                let y = &self.nodes[i].value;
                let (rows, n) = (y.nrows(), y.ncols());
                let mut da = vec![0.0; rows * n];
                if y.shape().len() == 1 || *axis == 1 {
                    for r in 0..rows {
                        softmax_vjp(
                            y.row_slice(r),
                            &g[r * n..(r + 1) * n],
                            &mut da[r * n..(r + 1) * n],
                        );
                    }
                } else {
                    for c in 0..n {
                        let yc: Vec<f64> = (0..rows).map(|r| y.at(r, c)).collect();
                        let gc: Vec<f64> = (0..rows).map(|r| g[r * n + c]).collect();
                        let mut dc = vec![0.0; rows];
                        softmax_vjp(&yc, &gc, &mut dc);
                        for r in 0..rows {
                            da[r * n + c] = dc[r];
                        }
                    }
                }
                add_to(adj, *a, &da);
            }
            Op::MaskedSoftmax(a, mask) => {
                let y = &self.nodes[i].value;
                let (rows, n) = (y.nrows(), y.ncols());
                let mut da = vec![0.0; rows * n];
                for r in 0..rows {
                    let yr = y.row_slice(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let keep = &mask[r * n..(r + 1) * n];
                    let dot: f64 = (0..n)
                        .filter(|&c| keep[c])
                        .map(|c| gr[c] * yr[c])
                        .sum();
                    for c in 0..n {
                        if keep[c] {
                            da[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                }
                add_to(adj, *a, &da);
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (tx, tg) = (val(*x), val(*gamma));
                let (rows, n) = (tx.nrows(), tx.ncols());
                let mut dx = vec![0.0; rows * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..rows {
                    let row = tx.row_slice(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let (mean, var) = mean_var(row);
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let dy_g: Vec<f64> =
                        (0..n).map(|c| gr[c] * tg.data()[c]).collect();
                    let mean_dy: f64 = dy_g.iter().sum::<f64>() / n as f64;
                    let mean_dy_xhat: f64 = (0..n)
                        .map(|c| dy_g[c] * xhat[c])
                        .sum::<f64>()
                        / n as f64;
                    for c in 0..n {
                        dgamma[c] += gr[c] * xhat[c];
                        dbeta[c] += gr[c];
                        dx[r * n + c] =
                            inv * (dy_g[c] - mean_dy - xhat[c] * mean_dy_xhat);
                    }
                }
                add_to(adj, *x, &dx);
                add_to(adj, *gamma, &dgamma);
                add_to(adj, *beta, &dbeta);
            }
            Op::Embed(m, ids) => {
                let tm = val(*m);
                let d = tm.ncols();
                let mut dm = vec![0.0; tm.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dm[id * d + c] += g[r * d + c];
                    }
                }
                add_to(adj, *m, &dm);
            }
            Op::Reduce(a, kind, axis) => {
                let ta = val(*a);
                let (rows, n) = (ta.nrows(), ta.ncols());
                let mut da = vec![0.0; ta.numel()];
                match axis {
                    None => {
                        let s = match kind {
                            ReduceKind::Sum => g[0],
                            ReduceKind::Mean => g[0] / ta.numel() as f64,
                        };
                        da.iter_mut().for_each(|v| *v = s);
                    }
                    Some(0) => {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / rows as f64,
                        };
                        for r in 0..rows {
                            for c in 0..n {
                                da[r * n + c] = g[c] * scale;
                            }
                        }
                    }
                    Some(_) => {
                        let scale = match kind {
                            ReduceKind::Sum => 1.0,
                            ReduceKind::Mean => 1.0 / n as f64,
                        };
                        for r in 0..rows {
                            for c in 0..n {
                                da[r * n + c] = g[r] * scale;
                            }
                        }
                    }
                }
                add_to(adj, *a, &da);
            }
            Op::CrossEntropyRows(logits, targets) => {
                let tl = val(*logits);
                let (rows, n) = (tl.nrows(), tl.ncols());
                let mut dl = vec![0.0; rows * n];
                let scale = g[0] / rows as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let sm = softmax_row(tl.row_slice(r));
                    for c in 0..n {
                        let indicator = if c == t { 1.0 } else { 0.0 };
                        dl[r * n + c] = (sm[c] - indicator) * scale;
                    }
                }
                add_to(adj, *logits, &dl);
            }
            Op::SetRow { x, row, index } => {
                let n = val(*row).numel();
                let mut dx = g.to_vec();
                dx[index * n..(index + 1) * n]
                    .iter_mut()
                    .for_each(|v| *v = 0.0);
                add_to(adj, *x, &dx);
                add_to(adj, *row, &g[index * n..(index + 1) * n]);
            }
            Op::Row(x, index) => {
                let tx = val(*x);
                let n = tx.ncols();
                let mut dx = vec![0.0; tx.numel()];
                dx[index * n..(index + 1) * n].copy_from_slice(g);
                add_to(adj, *x, &dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    add_to(adj, p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = val(parts[0]).nrows();
                let total: usize = parts.iter().map(|&p| val(p).ncols()).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    let mut dp = vec![0.0; rows * w];
                    for r in 0..rows {
                        dp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    add_to(adj, p, &dp);
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                add_to(adj, *a, g);
            }
        }
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────────

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

pub(crate) fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

fn softmax_vjp(y: &[f64], g: &[f64], out: &mut [f64]) {
    let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
    for c in 0..y.len() {
        out[c] = y[c] * (g[c] - dot);
    }
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn unary_fwd(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Recip => 1.0 / x,
        UnaryKind::Sqrt => x.sqrt(),
    }
}

fn unary_bwd(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Gelu => {
            let inner = GELU_C * (x + GELU_A * x * x * x);
            let t = inner.tanh();
            let sech2 = 1.0 - t * t;
            0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        }
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Recip => -y * y,
        UnaryKind::Sqrt => 0.5 / y,
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddRow(..) => "add_row",
        Op::Unary(..) => "unary",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Softmax(..) => "softmax",
        Op::MaskedSoftmax(..) => "masked_softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Embed(..) => "embedding_lookup",
        Op::Reduce(..) => "reduce",
        Op::CrossEntropyRows(..) => "cross_entropy",
        Op::SetRow { .. } => "set_row",
        Op::Row(..) => "row",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::Reshape(..) => "reshape",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f64>) -> Tensor {
        Tensor::vector(v)
    }

    #[test]
    fn add_vectors() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1.0, 2.0]));
        let b = tape.constant(t(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(a);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mul_by_zero_scalar_annihilates() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![2.0, 3.0]));
        let z = tape.constant(Tensor::scalar(0.0));
        let c = tape.mul(a, z).unwrap();
        assert_eq!(tape.value(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1.0, 2.0]));
        let b = tape.constant(t(vec![1.0, 2.0, 3.0]));
        assert!(matches!(
            tape.add(a, b),
            Err(NumericsError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_inner_product() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap());
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_bad_inner_dims() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![0.0, 0.0, 0.0]));
        let s = tape.softmax(a, 0).unwrap();
        for v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_ln2() {
        // e^0 / (e^0 + e^{ln 2}) = 1/3
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![0.0, 2.0f64.ln()]));
        let s = tape.softmax(a, 0).unwrap();
        let got = tape.value(s).data();
        assert!((got[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((got[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut tape = Tape::new();
        let x = vec![0.3, -1.2, 4.0, 2.2];
        let a = tape.constant(t(x.clone()));
        let b = tape.constant(t(x.iter().map(|v| v + 123.456).collect()));
        let sa = tape.softmax(a, 0).unwrap();
        let sb = tape.softmax(b, 0).unwrap();
        for (u, v) in tape.value(sa).data().iter().zip(tape.value(sb).data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_stable_at_large_magnitudes() {
        let mut tape = Tape::new();
        let a = tape.constant(t(vec![1e4, -1e4, 0.0]));
        let s = tape.softmax(a, 0).unwrap();
        let row = tape.value(s).data();
        assert!(row.iter().all(|v| *v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![5.0, 5.0, 5.0]).unwrap());
        let gamma = tape.constant(t(vec![1.0, 1.0, 1.0]));
        let beta = tape.constant(t(vec![0.0, 0.0, 0.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for v in tape.value(y).data() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let gamma = tape.constant(t(vec![1.0, 1.0]));
        let beta = tape.constant(t(vec![0.0, 0.0]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] + 1.0).abs() < 1e-4);
        assert!((got[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_output_mean_is_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(
            Tensor::new(vec![2, 4], vec![0.3, 1.9, -2.0, 0.7, 4.0, 4.5, 3.0, 1.0]).unwrap(),
        );
        let gamma = tape.constant(t(vec![1.0; 4]));
        let beta = tape.constant(t(vec![0.25; 4]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for r in 0..2 {
            let mean: f64 = tape.value(y).row_slice(r).iter().sum::<f64>() / 4.0;
            assert!((mean - 0.25).abs() <= 1e-9);
        }
    }

    #[test]
    fn embedding_lookup_gathers_rows() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = tape.embedding_lookup(m, &[1]).unwrap();
        assert_eq!(tape.value(e).data(), &[3.0, 4.0]);
    }

    #[test]
    fn embedding_lookup_bound_check() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(
            tape.embedding_lookup(m, &[5]),
            Err(NumericsError::IndexOutOfRange { index: 5, extent: 2 })
        ));
    }

    #[test]
    fn duplicate_ids_accumulate_gradient() {
        let mut tape = Tape::new();
        let m = tape.param(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = tape.embedding_lookup(m, &[0, 0]).unwrap();
        let loss = tape.sum_all(e);
        let grads = tape.backward(loss).unwrap();
        let gm = grads.get(m).unwrap();
        assert_eq!(gm.data(), &[2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn reduce_mean_axis0() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 3.0], vec![5.0, 7.0]]).unwrap());
        let m = tape.reduce(ReduceKind::Mean, a, Some(0)).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0, 5.0]);
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(
            tape.reduce(ReduceKind::Sum, a, Some(2)),
            Err(NumericsError::AxisOutOfRange { .. })
        ));
    }

    #[test]
    fn sum_matches_sequential_accumulation() {
        let mut rng = crate::rng(7);
        let vals = Tensor::uniform(&mut rng, vec![64], -3.0, 3.0);
        let mut seq = 0.0;
        for v in vals.data() {
            seq += v;
        }
        let mut tape = Tape::new();
        let a = tape.constant(vals);
        let s = tape.sum_all(a);
        assert_eq!(tape.value(s).item().unwrap(), seq);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = tape.constant(t(vec![1.0, 2.0]));
        let y = tape.constant(t(vec![1.0, 2.0]));
        let l = tape.mse(p, y).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);

        let p2 = tape.constant(t(vec![0.0]));
        let y2 = tape.constant(t(vec![2.0]));
        let l2 = tape.mse(p2, y2).unwrap();
        assert_eq!(tape.value(l2).item().unwrap(), 4.0);
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let logits = tape.constant(t(vec![0.0, 0.0]));
        let l = tape.cross_entropy(logits, 0).unwrap();
        assert!((tape.value(l).item().unwrap() - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn backward_square() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(t(vec![1.0, 2.0]));
        let y = tape.scale(x, 2.0);
        assert!(matches!(
            tape.backward(y),
            Err(NumericsError::NotScalar { .. })
        ));
    }

    #[test]
    fn frozen_leaf_gets_no_entry_but_gradient_flows() {
        let build = |freeze: bool| {
            let mut tape = Tape::new();
            let w = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 1.5]]).unwrap();
            let w = if freeze {
                tape.frozen(w)
            } else {
                tape.param(w)
            };
            let x = tape.param(Tensor::new(vec![1, 2], vec![0.7, -0.3]).unwrap());
            let h = tape.matmul(x, w).unwrap();
            let sq = tape.mul(h, h).unwrap();
            let loss = tape.sum_all(sq);
            let grads = tape.backward(loss).unwrap();
            (grads.get(w).map(|g| g.data().to_vec()), grads.get(x).unwrap().data().to_vec())
        };
        let (gw_frozen, gx_frozen) = build(true);
        let (gw_param, gx_param) = build(false);
        assert!(gw_frozen.is_none());
        assert!(gw_param.is_some());
        assert!(gx_frozen.iter().any(|v| *v != 0.0));
        // freezing w must not change the gradient of x at all
        assert_eq!(gx_frozen, gx_param);
    }

    #[test]
    fn unreachable_param_gets_zero_entry() {
        let mut tape = Tape::new();
        let used = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(t(vec![1.0, 1.0]));
        let loss = tape.mul(used, used).unwrap();
        let loss = tape.sum_all(loss);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut rng = crate::rng(11);
            let mut tape = Tape::new();
            let a = tape.param(Tensor::uniform(&mut rng, vec![4, 4], -1.0, 1.0));
            let b = tape.param(Tensor::uniform(&mut rng, vec![4, 4], -1.0, 1.0));
            let p = tape.matmul(a, b).unwrap();
            let s = tape.softmax(p, 1).unwrap();
            let loss = tape.mean_all(s);
            let grads = tape.backward(loss).unwrap();
            (
                grads.get(a).unwrap().data().to_vec(),
                grads.get(b).unwrap().data().to_vec(),
            )
        };
        let (ga1, gb1) = run();
        let (ga2, gb2) = run();
        assert_eq!(ga1, ga2);
        assert_eq!(gb1, gb2);
    }

    #[test]
    fn set_row_and_row_round_trip() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let r = tape.constant(Tensor::new(vec![1, 2], vec![9.0, 8.0]).unwrap());
        let y = tape.set_row(x, 0, r).unwrap();
        assert_eq!(tape.value(y).data(), &[9.0, 8.0, 3.0, 4.0]);
        let picked = tape.row(y, 1).unwrap();
        assert_eq!(tape.value(picked).data(), &[3.0, 4.0]);
    }

    #[test]
    fn masked_softmax_ignores_masked_logits_bitwise() {
        let logits = vec![0.4, -1.0, 99.0, 2.0];
        let mask = vec![true, true, false, true];
        let run = |hidden: f64| {
            let mut tape = Tape::new();
            let mut vals = logits.clone();
            vals[2] = hidden;
            let a = tape.constant(Tensor::new(vec![1, 4], vals).unwrap());
            let s = tape.masked_softmax_rows(a, &mask).unwrap();
            tape.value(s).data().to_vec()
        };
        let s1 = run(99.0);
        let s2 = run(-3.5e7);
        assert_eq!(s1, s2);
        assert_eq!(s1[2], 0.0);
        assert!((s1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
