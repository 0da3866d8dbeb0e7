//! Dense f64 tensor engine with reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`]: every operation records its inputs and a
//! backward rule, and [`Tape::backward`] replays the records in reverse to
//! accumulate gradients. The tape is rebuilt on every forward pass, which
//! keeps data-dependent control flow (Top-K expert routing) trivially
//! correct: whatever branch ran forward is exactly what gets differentiated.
//!
//! Everything is 64-bit: gradient checks against central finite differences
//! are part of the test suite and f32 would eat most of the tolerance.

mod adamw;

pub use adamw::{AdamWConfig, AdamWState};

use crate::error::{Error, Result};

/// Handle to a tensor on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(usize);

/// A dense row-major tensor, optionally carrying a gradient.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, bias: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    Relu { a: usize },
    Softmax { a: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f64 },
    Transpose { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    SliceCols { a: usize, start: usize, end: usize },
    SelectRows { a: usize, indices: Vec<usize> },
    ReplaceRows { base: usize, rows: usize, positions: Vec<usize> },
    MeanOverIndices { a: usize, indices: Vec<usize> },
    EmbeddingLookup { table: usize, ids: Vec<usize> },
    CrossEntropy { logits: usize, targets: Vec<usize>, pad_id: usize },
    EuclideanDistance { a: usize, b: usize },
    SumAll { a: usize },
    Reshape { a: usize },
}

/// Records operations for one forward pass.
///
/// Single-threaded by construction: a tape and its tensors stay on the
/// thread that built them. Distinct tapes on distinct threads are fine.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

fn acc(adjoint: &mut [Vec<f64>], node: usize, src: &[f64]) {
    for (t, s) in adjoint[node].iter_mut().zip(src) {
        *t += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a leaf tensor (parameter or constant input).
    pub fn leaf(&mut self, data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(data.len(), numel, "data length {} != shape {:?}", data.len(), shape);
        self.nodes.push(Tensor { shape, data, requires_grad, grad: None });
        self.ops.push(Op::Leaf);
        TensorId(self.nodes.len() - 1)
    }

    /// Leaf that does not require a gradient.
    pub fn constant(&mut self, data: Vec<f64>, shape: Vec<usize>) -> TensorId {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.constant(vec![v], vec![1])
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op) -> TensorId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {:?}",
            op
        );
        self.nodes.push(Tensor { shape, data, requires_grad: false, grad: None });
        self.ops.push(op);
        TensorId(self.nodes.len() - 1)
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Value of a single-element tensor.
    pub fn value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ── Forward operations ──────────────────────────────────────────

    /// `C[m,n] = A[m,k] · B[k,n]`
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        Ok(self.push(data, vec![m, n], Op::MatMul { a: a.0, b: b.0, m, k, n }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::ShapeMismatch { context: "add", lhs: sa.clone(), rhs: sb.clone() });
        }
        let shape = sa.clone();
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(data, shape, Op::Add { a: a.0, b: b.0 }))
    }

    /// `[rows, d] + [d]`: broadcast a bias vector over every row.
    pub fn add_row(&mut self, a: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[bias.0].shape);
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                context: "add_row",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let (rows, d) = (sa[0], sa[1]);
        let mut data = self.nodes[a.0].data.clone();
        for r in 0..rows {
            for j in 0..d {
                data[r * d + j] += self.nodes[bias.0].data[j];
            }
        }
        Ok(self.push(data, vec![rows, d], Op::AddRow { a: a.0, bias: bias.0 }))
    }

    /// Hadamard product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::ShapeMismatch { context: "mul", lhs: sa.clone(), rhs: sb.clone() });
        }
        let shape = sa.clone();
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(data, shape, Op::Mul { a: a.0, b: b.0 }))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x * c).collect();
        self.push(data, shape, Op::Scale { a: a.0, c })
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| x.max(0.0)).collect();
        self.push(data, shape, Op::Relu { a: a.0 })
    }

    /// Numerically stable softmax along `axis`; each slice sums to 1.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> TensorId {
        let shape = self.nodes[a.0].shape.clone();
        assert!(axis < shape.len(), "softmax axis {axis} out of range for {shape:?}");
        let axis_size = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |s: usize| o * axis_size * inner + s * inner + i;
                let max = (0..axis_size).map(|s| src[idx(s)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in 0..axis_size {
                    let e = (src[idx(s)] - max).exp();
                    out[idx(s)] = e;
                    sum += e;
                }
                for s in 0..axis_size {
                    out[idx(s)] /= sum;
                }
            }
        }
        self.push(out, shape, Op::Softmax { a: a.0, axis })
    }

    /// Normalize the last axis to zero mean / unit variance, then scale and
    /// shift with `gamma` / `beta`.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let sx = self.nodes[x.0].shape.clone();
        let d = *sx.last().expect("layer_norm on 0-rank tensor");
        if self.nodes[gamma.0].shape != [d] || self.nodes[beta.0].shape != [d] {
            return Err(Error::ShapeMismatch {
                context: "layer_norm",
                lhs: sx,
                rhs: self.nodes[gamma.0].shape.clone(),
            });
        }
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let rows = src.len() / d;
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        Ok(self.push(out, sx, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps }))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let s = &self.nodes[a.0].shape;
        assert_eq!(s.len(), 2, "transpose needs a 2-D tensor, got {s:?}");
        let (r, c) = (s[0], s[1]);
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; src.len()];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(out, vec![c, r], Op::Transpose { a: a.0 })
    }

    /// Concatenate 1-D or 2-D tensors along `axis`.
    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> TensorId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = self.nodes[parts[0].0].shape.len();
        assert!(axis < rank, "concat axis {axis} out of range for rank {rank}");
        for p in parts {
            let s = &self.nodes[p.0].shape;
            assert_eq!(s.len(), rank, "concat rank mismatch");
            for (ax, (da, db)) in self.nodes[parts[0].0].shape.iter().zip(s).enumerate() {
                assert!(ax == axis || da == db, "concat off-axis dim mismatch");
            }
        }
        let mut shape = self.nodes[parts[0].0].shape.clone();
        shape[axis] = parts.iter().map(|p| self.nodes[p.0].shape[axis]).sum();
        let mut out = Vec::with_capacity(shape.iter().product());
        if rank == 1 || axis == 0 {
            for p in parts {
                out.extend_from_slice(&self.nodes[p.0].data);
            }
        } else {
            // rank 2, axis 1: interleave per row
            let rows = shape[0];
            for r in 0..rows {
                for p in parts {
                    let c = self.nodes[p.0].shape[1];
                    out.extend_from_slice(&self.nodes[p.0].data[r * c..(r + 1) * c]);
                }
            }
        }
        let parts = parts.iter().map(|p| p.0).collect();
        self.push(out, shape, Op::Concat { parts, axis })
    }

    /// Column range `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, end: usize) -> TensorId {
        let s = &self.nodes[a.0].shape;
        assert_eq!(s.len(), 2, "slice_cols needs a 2-D tensor");
        assert!(start < end && end <= s[1], "slice_cols range {start}..{end} of {s:?}");
        let (rows, cols) = (s[0], s[1]);
        let w = end - start;
        let src = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + end]);
        }
        self.push(out, vec![rows, w], Op::SliceCols { a: a.0, start, end })
    }

    /// Gather rows of a 2-D tensor by index.
    pub fn select_rows(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        let s = &self.nodes[a.0].shape;
        assert_eq!(s.len(), 2, "select_rows needs a 2-D tensor");
        let (rows, cols) = (s[0], s[1]);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange { what: "select_rows", index: i, size: rows });
            }
        }
        let src = &self.nodes[a.0].data;
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            out,
            vec![indices.len(), cols],
            Op::SelectRows { a: a.0, indices: indices.to_vec() },
        ))
    }

    /// Copy `base` with row `positions[j]` replaced by row `j` of `rows`.
    /// Every other row is passed through bit-for-bit.
    pub fn replace_rows(
        &mut self,
        base: TensorId,
        rows: TensorId,
        positions: &[usize],
    ) -> Result<TensorId> {
        let sb = self.nodes[base.0].shape.clone();
        let sr = self.nodes[rows.0].shape.clone();
        assert_eq!(sb.len(), 2, "replace_rows base must be 2-D");
        if sr.len() != 2 || sr[0] != positions.len() || sr[1] != sb[1] {
            return Err(Error::ShapeMismatch { context: "replace_rows", lhs: sb, rhs: sr });
        }
        for &p in positions {
            if p >= sb[0] {
                return Err(Error::IndexOutOfRange {
                    what: "replace_rows",
                    index: p,
                    size: sb[0],
                });
            }
        }
        let cols = sb[1];
        let mut out = self.nodes[base.0].data.clone();
        for (j, &p) in positions.iter().enumerate() {
            out[p * cols..(p + 1) * cols]
                .copy_from_slice(&self.nodes[rows.0].data[j * cols..(j + 1) * cols]);
        }
        Ok(self.push(
            out,
            sb,
            Op::ReplaceRows { base: base.0, rows: rows.0, positions: positions.to_vec() },
        ))
    }

    /// Arithmetic mean of the selected rows, as a `[1, d]` tensor.
    pub fn mean_over_indices(&mut self, a: TensorId, indices: &[usize]) -> Result<TensorId> {
        if indices.is_empty() {
            return Err(Error::EmptyIndexSet("mean_over_indices"));
        }
        let s = &self.nodes[a.0].shape;
        assert_eq!(s.len(), 2, "mean_over_indices needs a 2-D tensor");
        let (rows, cols) = (s[0], s[1]);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "mean_over_indices",
                    index: i,
                    size: rows,
                });
            }
        }
        let src = &self.nodes[a.0].data;
        let mut out = vec![0.0; cols];
        for &i in indices {
            for j in 0..cols {
                out[j] += src[i * cols + j];
            }
        }
        let inv = 1.0 / indices.len() as f64;
        for v in &mut out {
            *v *= inv;
        }
        Ok(self.push(
            out,
            vec![1, cols],
            Op::MeanOverIndices { a: a.0, indices: indices.to_vec() },
        ))
    }

    /// Row lookup into an embedding table: `table[V, d]`, `ids` → `[len, d]`.
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let s = &self.nodes[table.0].shape;
        assert_eq!(s.len(), 2, "embedding table must be 2-D");
        let (vocab, d) = (s[0], s[1]);
        for &id in ids {
            if id >= vocab {
                return Err(Error::IndexOutOfRange {
                    what: "embedding_lookup",
                    index: id,
                    size: vocab,
                });
            }
        }
        let src = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            out,
            vec![ids.len(), d],
            Op::EmbeddingLookup { table: table.0, ids: ids.to_vec() },
        ))
    }

    /// Mean negative log-likelihood of `targets` under `logits[T, V]`.
    /// Positions where the target equals `pad_id` contribute nothing.
    pub fn cross_entropy(
        &mut self,
        logits: TensorId,
        targets: &[usize],
        pad_id: usize,
    ) -> Result<TensorId> {
        let s = &self.nodes[logits.0].shape;
        assert_eq!(s.len(), 2, "cross_entropy logits must be 2-D");
        let (t_len, vocab) = (s[0], s[1]);
        assert_eq!(targets.len(), t_len, "targets length != logits rows");
        let n_real = targets.iter().filter(|&&t| t != pad_id).count();
        if n_real == 0 {
            return Err(Error::AllPadTarget);
        }
        for &t in targets {
            if t != pad_id && t >= vocab {
                return Err(Error::IndexOutOfRange {
                    what: "cross_entropy target",
                    index: t,
                    size: vocab,
                });
            }
        }
        let src = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for (t, &tgt) in targets.iter().enumerate() {
            if tgt == pad_id {
                continue;
            }
            let row = &src[t * vocab..(t + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            total -= row[tgt] - lse;
        }
        let loss = total / n_real as f64;
        Ok(self.push(
            vec![loss],
            vec![1],
            Op::CrossEntropy { logits: logits.0, targets: targets.to_vec(), pad_id },
        ))
    }

    /// `‖a − b‖₂` of two same-shape tensors, as a scalar.
    pub fn euclidean_distance(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        if sa != sb {
            return Err(Error::ShapeMismatch {
                context: "euclidean_distance",
                lhs: sa.clone(),
                rhs: sb.clone(),
            });
        }
        let d: f64 = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        Ok(self.push(vec![d], vec![1], Op::EuclideanDistance { a: a.0, b: b.0 }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        self.push(vec![s], vec![1], Op::SumAll { a: a.0 })
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> TensorId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, self.nodes[a.0].data.len(), "reshape to {shape:?}");
        let data = self.nodes[a.0].data.clone();
        self.push(data, shape, Op::Reshape { a: a.0 })
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Adjoints are propagated through a
    /// scratch buffer and added into each tensor's persistent `grad` at the
    /// end, so repeated calls accumulate until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        let mut adjoint: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        adjoint[loss.0][0] = 1.0;
        for n in &mut self.nodes {
            if n.requires_grad && n.grad.is_none() {
                n.grad = Some(vec![0.0; n.data.len()]);
            }
        }

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut adjoint[i]);
            if self.nodes[i].requires_grad {
                let dst = self.nodes[i].grad.as_mut().unwrap();
                for (t, s) in dst.iter_mut().zip(&g) {
                    *t += s;
                }
            }
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            match self.ops[i].clone() {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let bd = &self.nodes[b].data;
                    let mut bt = vec![0.0; k * n];
                    for p in 0..k {
                        for j in 0..n {
                            bt[j * k + p] = bd[p * n + j];
                        }
                    }
                    let da = matmul_raw(&g, &bt, m, n, k);
                    let ad = &self.nodes[a].data;
                    let mut at = vec![0.0; m * k];
                    for ii in 0..m {
                        for p in 0..k {
                            at[p * m + ii] = ad[ii * k + p];
                        }
                    }
                    let db = matmul_raw(&at, &g, k, m, n);
                    acc(&mut adjoint, a, &da);
                    acc(&mut adjoint, b, &db);
                }
                Op::Add { a, b } => {
                    acc(&mut adjoint, a, &g);
                    acc(&mut adjoint, b, &g);
                }
                Op::AddRow { a, bias } => {
                    acc(&mut adjoint, a, &g);
                    let d = self.nodes[bias].data.len();
                    let mut db = vec![0.0; d];
                    for (i, gv) in g.iter().enumerate() {
                        db[i % d] += gv;
                    }
                    acc(&mut adjoint, bias, &db);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        g.iter().zip(&self.nodes[b].data).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> =
                        g.iter().zip(&self.nodes[a].data).map(|(g, x)| g * x).collect();
                    acc(&mut adjoint, a, &da);
                    acc(&mut adjoint, b, &db);
                }
                Op::Scale { a, c } => {
                    let da: Vec<f64> = g.iter().map(|g| g * c).collect();
                    acc(&mut adjoint, a, &da);
                }
                Op::Relu { a } => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a].data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut adjoint, a, &da);
                }
                Op::Softmax { a, axis } => {
                    // ds_i = s_i (g_i − Σ_j g_j s_j) per slice
                    let shape = &self.nodes[i].shape;
                    let axis_size = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let out = &self.nodes[i].data;
                    let mut da = vec![0.0; out.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |s: usize| o * axis_size * inner + s * inner + ii;
                            let dot: f64 = (0..axis_size).map(|s| g[idx(s)] * out[idx(s)]).sum();
                            for s in 0..axis_size {
                                da[idx(s)] = out[idx(s)] * (g[idx(s)] - dot);
                            }
                        }
                    }
                    acc(&mut adjoint, a, &da);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.nodes[x].shape.last().unwrap();
                    let xd = self.nodes[x].data.clone();
                    let gd = self.nodes[gamma].data.clone();
                    let rows = xd.len() / d;
                    let mut dx = vec![0.0; xd.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for r in 0..rows {
                        let row = &xd[r * d..(r + 1) * d];
                        let grow = &g[r * d..(r + 1) * d];
                        let mean = row.iter().sum::<f64>() / d as f64;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            grow.iter().zip(&gd).map(|(g, gm)| g * gm).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        for j in 0..d {
                            dgamma[j] += grow[j] * xhat[j];
                            dbeta[j] += grow[j];
                            dx[r * d + j] = inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    acc(&mut adjoint, x, &dx);
                    acc(&mut adjoint, gamma, &dgamma);
                    acc(&mut adjoint, beta, &dbeta);
                }
                Op::Transpose { a } => {
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let mut da = vec![0.0; g.len()];
                    for ii in 0..r {
                        for j in 0..c {
                            da[j * r + ii] = g[ii * c + j];
                        }
                    }
                    acc(&mut adjoint, a, &da);
                }
                Op::Concat { parts, axis } => {
                    let rank = self.nodes[i].shape.len();
                    if rank == 1 || axis == 0 {
                        let mut off = 0;
                        for p in parts {
                            let n = self.nodes[p].data.len();
                            let slice = g[off..off + n].to_vec();
                            acc(&mut adjoint, p, &slice);
                            off += n;
                        }
                    } else {
                        let rows = self.nodes[i].shape[0];
                        let total_cols = self.nodes[i].shape[1];
                        let mut col_off = 0;
                        for p in parts {
                            let c = self.nodes[p].shape[1];
                            let mut dp = vec![0.0; rows * c];
                            for r in 0..rows {
                                dp[r * c..(r + 1) * c].copy_from_slice(
                                    &g[r * total_cols + col_off..r * total_cols + col_off + c],
                                );
                            }
                            acc(&mut adjoint, p, &dp);
                            col_off += c;
                        }
                    }
                }
                Op::SliceCols { a, start, end } => {
                    let cols = self.nodes[a].shape[1];
                    let rows = self.nodes[a].shape[0];
                    let w = end - start;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        da[r * cols + start..r * cols + end]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(&mut adjoint, a, &da);
                }
                Op::SelectRows { a, indices } => {
                    let cols = self.nodes[a].shape[1];
                    let mut da = vec![0.0; self.nodes[a].data.len()];
                    for (j, &idx) in indices.iter().enumerate() {
                        for c in 0..cols {
                            da[idx * cols + c] += g[j * cols + c];
                        }
                    }
                    acc(&mut adjoint, a, &da);
                }
                Op::ReplaceRows { base, rows, positions } => {
                    let cols = self.nodes[base].shape[1];
                    let mut dbase = g.clone();
                    let mut drows = vec![0.0; self.nodes[rows].data.len()];
                    for (j, &p) in positions.iter().enumerate() {
                        drows[j * cols..(j + 1) * cols]
                            .copy_from_slice(&g[p * cols..(p + 1) * cols]);
                        for c in 0..cols {
                            dbase[p * cols + c] = 0.0;
                        }
                    }
                    acc(&mut adjoint, base, &dbase);
                    acc(&mut adjoint, rows, &drows);
                }
                Op::MeanOverIndices { a, indices } => {
                    let cols = self.nodes[a].shape[1];
                    let inv = 1.0 / indices.len() as f64;
                    let mut da = vec![0.0; self.nodes[a].data.len()];
                    for &idx in &indices {
                        for c in 0..cols {
                            da[idx * cols + c] += g[c] * inv;
                        }
                    }
                    acc(&mut adjoint, a, &da);
                }
                Op::EmbeddingLookup { table, ids } => {
                    let d = self.nodes[table].shape[1];
                    let mut dt = vec![0.0; self.nodes[table].data.len()];
                    for (j, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            dt[id * d + c] += g[j * d + c];
                        }
                    }
                    acc(&mut adjoint, table, &dt);
                }
                Op::CrossEntropy { logits, targets, pad_id } => {
                    let vocab = self.nodes[logits].shape[1];
                    let src = self.nodes[logits].data.clone();
                    let n_real = targets.iter().filter(|&&t| t != pad_id).count() as f64;
                    let mut dl = vec![0.0; src.len()];
                    for (t, &tgt) in targets.iter().enumerate() {
                        if tgt == pad_id {
                            continue;
                        }
                        let row = &src[t * vocab..(t + 1) * vocab];
                        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                        let sum: f64 = exps.iter().sum();
                        for c in 0..vocab {
                            let sm = exps[c] / sum;
                            let onehot = if c == tgt { 1.0 } else { 0.0 };
                            dl[t * vocab + c] = g[0] * (sm - onehot) / n_real;
                        }
                    }
                    acc(&mut adjoint, logits, &dl);
                }
                Op::EuclideanDistance { a, b } => {
                    let dist = self.nodes[i].data[0].max(1e-12);
                    let s = g[0] / dist;
                    let diff: Vec<f64> = self.nodes[a]
                        .data
                        .iter()
                        .zip(&self.nodes[b].data)
                        .map(|(x, y)| (x - y) * s)
                        .collect();
                    acc(&mut adjoint, a, &diff);
                    let neg: Vec<f64> = diff.iter().map(|v| -v).collect();
                    acc(&mut adjoint, b, &neg);
                }
                Op::SumAll { a } => {
                    let da = vec![g[0]; self.nodes[a].data.len()];
                    acc(&mut adjoint, a, &da);
                }
                Op::Reshape { a } => {
                    acc(&mut adjoint, a, &g);
                }
            }
        }
        Ok(())
    }
}
