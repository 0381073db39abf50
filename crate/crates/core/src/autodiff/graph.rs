//! Eager tape: every kernel computes its value on creation and records enough
//! to replay the chain rule in reverse.
//!
//! All tensors are dense 2-D (scalars are 1x1, vectors 1xN). The kernel set is
//! closed: matmul, transpose, add, row-broadcast add, scale, mul, relu, gelu,
//! softmax over the last axis, layer norm over the last axis, embedding
//! lookup, concat (rows/cols), row/col slices, train-only dropout, additive
//! key masking, sum, and a fused cross-entropy head.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Scalar;
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tid(pub(crate) usize);

const LN_EPS: f64 = 1e-5;

enum Op<F> {
    Leaf,
    Matmul(Tid, Tid),
    Transpose(Tid),
    Add(Tid, Tid),
    AddRow(Tid, Tid),
    Scale(Tid, F),
    Mul(Tid, Tid),
    Relu(Tid),
    Gelu(Tid),
    SoftmaxRows(Tid),
    LayerNormRows { x: Tid, gamma: Tid, beta: Tid },
    Embedding { table: Tid, ids: Vec<usize> },
    ConcatCols(Tid, Tid),
    ConcatRows(Vec<Tid>),
    SliceRows { x: Tid, start: usize },
    SliceCols { x: Tid, start: usize },
    Dropout { x: Tid, mask: Vec<F> },
    MaskAddRow(Tid),
    Sum(Tid),
    CrossEntropy { logits: Tid, gold: Vec<usize>, keep: Vec<bool> },
}

struct Node<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
    op: Op<F>,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
    train: bool,
    rng: ChaCha8Rng,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<F> {
    per_node: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn of(&self, t: Tid) -> &[F] {
        &self.per_node[t.0]
    }

    #[cfg(test)]
    pub(crate) fn set_for_test(&mut self, t: Tid, g: Vec<F>) {
        self.per_node[t.0] = g;
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new(train: bool, seed: u64) -> Self {
        Graph {
            nodes: Vec::new(),
            train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(false, 0)
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<F>, op: Op<F>) -> Tid {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node { rows, cols, data, op });
        Tid(self.nodes.len() - 1)
    }

    fn mismatch(&self, kernel: &'static str, a: Tid, b: Tid) -> Error {
        Error::ShapeMismatch {
            kernel,
            lhs: vec![self.nodes[a.0].rows, self.nodes[a.0].cols],
            rhs: vec![self.nodes[b.0].rows, self.nodes[b.0].cols],
        }
    }

    pub fn shape(&self, t: Tid) -> (usize, usize) {
        (self.nodes[t.0].rows, self.nodes[t.0].cols)
    }

    pub fn data(&self, t: Tid) -> &[F] {
        &self.nodes[t.0].data
    }

    pub fn scalar_value(&self, t: Tid) -> F {
        debug_assert_eq!(self.shape(t), (1, 1));
        self.nodes[t.0].data[0]
    }

    /// New constant/parameter leaf.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Tid {
        assert_eq!(data.len(), rows * cols, "leaf data length mismatch");
        self.push(rows, cols, data, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let out = matmul_raw(
            &self.nodes[a.0].data,
            &self.nodes[b.0].data,
            m,
            k,
            n,
            false,
            false,
        );
        Ok(self.push(m, n, out, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Tid) -> Tid {
        let (m, n) = self.shape(a);
        let src = &self.nodes[a.0].data;
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(n, m, out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let (m, n) = self.shape(a);
        let out: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(m, n, out, Op::Add(a, b)))
    }

    /// Adds a 1xN bias row to every row of an MxN tensor.
    pub fn add_row(&mut self, a: Tid, bias: Tid) -> Result<Tid> {
        let (m, n) = self.shape(a);
        if self.shape(bias) != (1, n) {
            return Err(self.mismatch("add_row", a, bias));
        }
        let mut out = self.nodes[a.0].data.clone();
        let b = &self.nodes[bias.0].data;
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += b[j];
            }
        }
        Ok(self.push(m, n, out, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Tid, c: f64) -> Tid {
        let (m, n) = self.shape(a);
        let c = F::of(c);
        let out: Vec<F> = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        self.push(m, n, out, Op::Scale(a, c))
    }

    pub fn mul(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let (m, n) = self.shape(a);
        let out: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(m, n, out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Tid) -> Tid {
        let (m, n) = self.shape(a);
        let out: Vec<F> = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| x.maximum(F::zero()))
            .collect();
        self.push(m, n, out, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Tid) -> Tid {
        let (m, n) = self.shape(a);
        let out: Vec<F> = self.nodes[a.0].data.iter().map(|&x| gelu_fwd(x)).collect();
        self.push(m, n, out, Op::Gelu(a))
    }

    /// Softmax over the last axis; rows sum to one.
    pub fn softmax_rows(&mut self, a: Tid) -> Tid {
        let (m, n) = self.shape(a);
        let src = &self.nodes[a.0].data;
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            softmax_row(&src[i * n..(i + 1) * n], &mut out[i * n..(i + 1) * n]);
        }
        self.push(m, n, out, Op::SoftmaxRows(a))
    }

    /// Layer norm over the last axis, then per-column affine (gamma, beta).
    pub fn layer_norm_rows(&mut self, x: Tid, gamma: Tid, beta: Tid) -> Result<Tid> {
        let (m, n) = self.shape(x);
        if self.shape(gamma) != (1, n) {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        if self.shape(beta) != (1, n) {
            return Err(self.mismatch("layer_norm", x, beta));
        }
        let mut out = vec![F::zero(); m * n];
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let src = &self.nodes[x.0].data;
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let (mean, inv_std) = row_stats(row);
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        Ok(self.push(m, n, out, Op::LayerNormRows { x, gamma, beta }))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Tid, ids: &[usize]) -> Result<Tid> {
        let (v, d) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::ShapeMismatch {
                kernel: "embedding_lookup",
                lhs: vec![v, d],
                rhs: vec![bad],
            });
        }
        let src = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        Ok(self.push(
            ids.len(),
            d,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn concat_cols(&mut self, a: Tid, b: Tid) -> Result<Tid> {
        let (m, n1) = self.shape(a);
        let (m2, n2) = self.shape(b);
        if m != m2 {
            return Err(self.mismatch("concat_cols", a, b));
        }
        let mut out = Vec::with_capacity(m * (n1 + n2));
        for i in 0..m {
            out.extend_from_slice(&self.nodes[a.0].data[i * n1..(i + 1) * n1]);
            out.extend_from_slice(&self.nodes[b.0].data[i * n2..(i + 1) * n2]);
        }
        Ok(self.push(m, n1 + n2, out, Op::ConcatCols(a, b)))
    }

    pub fn concat_rows(&mut self, parts: &[Tid]) -> Result<Tid> {
        assert!(!parts.is_empty(), "concat_rows needs at least one part");
        let (_, n) = self.shape(parts[0]);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.shape(p);
            if c != n {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += r;
            out.extend_from_slice(&self.nodes[p.0].data);
        }
        Ok(self.push(rows, n, out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Tid, start: usize, len: usize) -> Result<Tid> {
        let (m, n) = self.shape(x);
        if start + len > m {
            return Err(Error::ShapeMismatch {
                kernel: "slice_rows",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let out = self.nodes[x.0].data[start * n..(start + len) * n].to_vec();
        Ok(self.push(len, n, out, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Tid, start: usize, len: usize) -> Result<Tid> {
        let (m, n) = self.shape(x);
        if start + len > n {
            return Err(Error::ShapeMismatch {
                kernel: "slice_cols",
                lhs: vec![m, n],
                rhs: vec![start, len],
            });
        }
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(m, len, out, Op::SliceCols { x, start }))
    }

    /// Inverted dropout; identity in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Tid, rate: f64) -> Tid {
        if !self.train || rate <= 0.0 {
            return self.scale(x, 1.0);
        }
        let (m, n) = self.shape(x);
        let keep = 1.0 - rate;
        let mask: Vec<F> = (0..m * n)
            .map(|_| {
                if self.rng.gen::<f64>() < keep {
                    F::of(1.0 / keep)
                } else {
                    F::zero()
                }
            })
            .collect();
        let out: Vec<F> = self.nodes[x.0]
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect();
        self.push(m, n, out, Op::Dropout { x, mask })
    }

    /// Adds a per-column additive mask (0 for visible keys, a large negative
    /// value for padded keys) to every row of the score matrix.
    pub fn mask_add_row(&mut self, x: Tid, mask: &[f64]) -> Result<Tid> {
        let (m, n) = self.shape(x);
        if mask.len() != n {
            return Err(Error::ShapeMismatch {
                kernel: "mask_add",
                lhs: vec![m, n],
                rhs: vec![mask.len()],
            });
        }
        let mask: Vec<F> = mask.iter().map(|&v| F::of(v)).collect();
        let mut out = self.nodes[x.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += mask[j];
            }
        }
        Ok(self.push(m, n, out, Op::MaskAddRow(x)))
    }

    /// Sum of all elements, as a 1x1 tensor.
    pub fn sum(&mut self, x: Tid) -> Tid {
        let total: F = self.nodes[x.0].data.iter().copied().sum();
        self.push(1, 1, vec![total], Op::Sum(x))
    }

    /// Mean negative log-softmax of the gold class over non-ignored rows.
    pub fn cross_entropy(&mut self, logits: Tid, gold: &[usize], keep: &[bool]) -> Result<Tid> {
        let (m, n) = self.shape(logits);
        if gold.len() != m || keep.len() != m {
            return Err(Error::ShapeMismatch {
                kernel: "cross_entropy",
                lhs: vec![m, n],
                rhs: vec![gold.len(), keep.len()],
            });
        }
        if let Some(&bad) = gold.iter().find(|&&g| g >= n) {
            return Err(Error::ShapeMismatch {
                kernel: "cross_entropy",
                lhs: vec![m, n],
                rhs: vec![bad],
            });
        }
        let n_kept = keep.iter().filter(|&&k| k).count();
        if n_kept == 0 {
            return Err(Error::AllPositionsIgnored);
        }
        let src = &self.nodes[logits.0].data;
        let mut total = F::zero();
        for i in 0..m {
            if !keep[i] {
                continue;
            }
            let row = &src[i * n..(i + 1) * n];
            total += log_sum_exp(row) - row[gold[i]];
        }
        let loss = total / F::of(n_kept as f64);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                gold: gold.to_vec(),
                keep: keep.to_vec(),
            },
        ))
    }

    /// Reverse-mode accumulation from a scalar loss. Every node reachable from
    /// the loss receives a gradient; unreachable nodes keep zeros.
    pub fn backward(&self, loss: Tid) -> Result<Gradients<F>> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss { shape: vec![r, c] });
        }
        let mut grads: Vec<Vec<F>> = self
            .nodes
            .iter()
            .map(|n| vec![F::zero(); n.rows * n.cols])
            .collect();
        grads[loss.0][0] = F::one();

        // Nodes are appended in topological order, so a reverse scan visits
        // every consumer before its producers.
        for id in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[id]);
            if g.iter().all(|&v| v == F::zero()) {
                grads[id] = g;
                continue;
            }
            let node = &self.nodes[id];
            let (rows, cols) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let (_, n) = self.shape(*b);
                    // dA = G @ B^T ; dB = A^T @ G
                    let da = matmul_raw(&g, &self.nodes[b.0].data, m, n, k, false, true);
                    let db = matmul_raw(&self.nodes[a.0].data, &g, k, m, n, true, false);
                    axpy(&mut grads[a.0], &da);
                    axpy(&mut grads[b.0], &db);
                }
                Op::Transpose(a) => {
                    let ga = &mut grads[a.0];
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[j * rows + i] += g[i * cols + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], &g);
                    axpy(&mut grads[b.0], &g);
                }
                Op::AddRow(a, bias) => {
                    axpy(&mut grads[a.0], &g);
                    let gb = &mut grads[bias.0];
                    for i in 0..rows {
                        for j in 0..cols {
                            gb[j] += g[i * cols + j];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = &mut grads[a.0];
                    for (dst, &src) in ga.iter_mut().zip(&g) {
                        *dst += src * *c;
                    }
                }
                Op::Mul(a, b) => {
                    {
                        let bd = &self.nodes[b.0].data;
                        let prod: Vec<F> = g.iter().zip(bd).map(|(&x, &y)| x * y).collect();
                        axpy(&mut grads[a.0], &prod);
                    }
                    let ad = &self.nodes[a.0].data;
                    let prod: Vec<F> = g.iter().zip(ad).map(|(&x, &y)| x * y).collect();
                    axpy(&mut grads[b.0], &prod);
                }
                Op::Relu(a) => {
                    let xd = &self.nodes[a.0].data;
                    let ga = &mut grads[a.0];
                    for i in 0..g.len() {
                        if xd[i] > F::zero() {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Gelu(a) => {
                    let xd = &self.nodes[a.0].data;
                    let ga = &mut grads[a.0];
                    for i in 0..g.len() {
                        ga[i] += g[i] * gelu_bwd(xd[i]);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.data;
                    let ga = &mut grads[a.0];
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: F = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            ga[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNormRows { x, gamma, beta } => {
                    let xd = &self.nodes[x.0].data;
                    let gd = &self.nodes[gamma.0].data;
                    let n_f = F::of(cols as f64);
                    // Two passes so gamma/beta grads and x grads can share the
                    // recomputed row statistics.
                    for i in 0..rows {
                        let row = &xd[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let (mean, inv_std) = row_stats(row);
                        let xhat: Vec<F> =
                            row.iter().map(|&v| (v - mean) * inv_std).collect();
                        let gy_g: Vec<F> =
                            gr.iter().zip(gd).map(|(&a, &b)| a * b).collect();
                        let sum_gyg: F = gy_g.iter().copied().sum();
                        let sum_gyg_xhat: F =
                            gy_g.iter().zip(&xhat).map(|(&a, &b)| a * b).sum();
                        for j in 0..cols {
                            grads[x.0][i * cols + j] += inv_std
                                * (gy_g[j] - sum_gyg / n_f - xhat[j] * sum_gyg_xhat / n_f);
                            grads[gamma.0][j] += gr[j] * xhat[j];
                            grads[beta.0][j] += gr[j];
                        }
                    }
                }
                Op::Embedding { table, ids } => {
                    let gt = &mut grads[table.0];
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            gt[id * cols + j] += g[r * cols + j];
                        }
                    }
                }
                Op::ConcatCols(a, b) => {
                    let (_, n1) = self.shape(*a);
                    let (_, n2) = self.shape(*b);
                    for i in 0..rows {
                        for j in 0..n1 {
                            grads[a.0][i * n1 + j] += g[i * cols + j];
                        }
                        for j in 0..n2 {
                            grads[b.0][i * n2 + j] += g[i * cols + n1 + j];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, _) = self.shape(p);
                        let chunk = &g[offset * cols..(offset + r) * cols];
                        axpy(&mut grads[p.0], chunk);
                        offset += r;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (_, n) = self.shape(*x);
                    for i in 0..rows {
                        for j in 0..n {
                            grads[x.0][(start + i) * n + j] += g[i * n + j];
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (_, n) = self.shape(*x);
                    for i in 0..rows {
                        for j in 0..cols {
                            grads[x.0][i * n + start + j] += g[i * cols + j];
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let gx = &mut grads[x.0];
                    for i in 0..g.len() {
                        gx[i] += g[i] * mask[i];
                    }
                }
                Op::MaskAddRow(x) => {
                    axpy(&mut grads[x.0], &g);
                }
                Op::Sum(x) => {
                    let gx = &mut grads[x.0];
                    for v in gx.iter_mut() {
                        *v += g[0];
                    }
                }
                Op::CrossEntropy { logits, gold, keep } => {
                    let (m, n) = self.shape(*logits);
                    let n_kept = keep.iter().filter(|&&k| k).count();
                    let scale = g[0] / F::of(n_kept as f64);
                    let src = &self.nodes[logits.0].data;
                    let gl = &mut grads[logits.0];
                    let mut probs = vec![F::zero(); n];
                    for i in 0..m {
                        if !keep[i] {
                            continue;
                        }
                        softmax_row(&src[i * n..(i + 1) * n], &mut probs);
                        for j in 0..n {
                            let delta = if j == gold[i] { F::one() } else { F::zero() };
                            gl[i * n + j] += scale * (probs[j] - delta);
                        }
                    }
                }
            }
            grads[id] = g;
        }
        Ok(Gradients { per_node: grads })
    }
}

fn axpy<F: Scalar>(dst: &mut [F], src: &[F]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// C = op(A) . op(B) where op is optional transposition; A is logically m x k
/// and B is k x n AFTER transposition.
fn matmul_raw<F: Scalar>(
    a: &[F],
    b: &[F],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let av = if trans_a { a[l * m + i] } else { a[i * k + l] };
            if av == F::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            if trans_b {
                for (j, o) in out_row.iter_mut().enumerate() {
                    *o += av * b[j * k + l];
                }
            } else {
                let b_row = &b[l * n..(l + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
    }
    out
}

fn softmax_row<F: Scalar>(row: &[F], out: &mut [F]) {
    let max = row
        .iter()
        .copied()
        .fold(F::of(f64::NEG_INFINITY), F::maximum);
    let mut sum = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row
        .iter()
        .copied()
        .fold(F::of(f64::NEG_INFINITY), F::maximum);
    let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn row_stats<F: Scalar>(row: &[F]) -> (F, F) {
    let n = F::of(row.len() as f64);
    let mean = row.iter().copied().sum::<F>() / n;
    let var = row
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<F>()
        / n;
    let inv_std = F::one() / (var + F::of(LN_EPS)).sqrt();
    (mean, inv_std)
}

fn gelu_fwd<F: Scalar>(x: F) -> F {
    // tanh approximation
    let c = F::of(0.7978845608028654); // sqrt(2/pi)
    let k = F::of(0.044715);
    let u = c * (x + k * x * x * x);
    F::of(0.5) * x * (F::one() + u.tanh())
}

fn gelu_bwd<F: Scalar>(x: F) -> F {
    let c = F::of(0.7978845608028654);
    let k = F::of(0.044715);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let sech2 = F::one() - t * t;
    let du = c * (F::one() + F::of(3.0) * k * x * x);
    F::of(0.5) * (F::one() + t) + F::of(0.5) * x * sech2 * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "index {i}: {x} vs {y} (tol {tol})"
            );
        }
    }

    #[test]
    fn softmax_of_uniform_row_is_uniform() {
        let mut g: Graph<f64> = Graph::eval();
        let x = g.leaf(1, 4, vec![0.0; 4]);
        let y = g.softmax_rows(x);
        assert_close(g.data(y), &[0.25; 4], 1e-12);
    }

    #[test]
    fn matmul_hand_example() {
        // [[1,2,3],[4,5,6]] @ [[1,0,2,0],[0,1,0,2],[1,1,1,1]]
        let mut g: Graph<f64> = Graph::eval();
        let a = g.leaf(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = g.leaf(
            3,
            4,
            vec![1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0, 1.0, 1.0, 1.0, 1.0],
        );
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), (2, 4));
        // hand arithmetic
        assert_close(
            g.data(c),
            &[4.0, 5.0, 5.0, 7.0, 10.0, 11.0, 14.0, 16.0],
            1e-12,
        );
    }

    #[test]
    fn matmul_shape_mismatch_names_kernel() {
        let mut g: Graph<f64> = Graph::eval();
        let a = g.leaf(2, 3, vec![0.0; 6]);
        let b = g.leaf(2, 3, vec![0.0; 6]);
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { kernel, lhs, rhs }) => {
                assert_eq!(kernel, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn layer_norm_of_constant_row_is_beta() {
        let mut g: Graph<f64> = Graph::eval();
        let x = g.leaf(1, 4, vec![3.0; 4]);
        let gamma = g.leaf(1, 4, vec![1.0; 4]);
        let beta = g.leaf(1, 4, vec![0.0; 4]);
        let y = g.layer_norm_rows(x, gamma, beta).unwrap();
        assert_close(g.data(y), &[0.0; 4], 1e-9);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut g: Graph<f64> = Graph::eval();
        let x = g.leaf(2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.0, 9.0]);
        let gamma = g.leaf(1, 4, vec![1.0; 4]);
        let beta = g.leaf(1, 4, vec![0.0; 4]);
        let y = g.layer_norm_rows(x, gamma, beta).unwrap();
        for i in 0..2 {
            let row = &g.data(y)[i * 4..(i + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_c() {
        let mut g: Graph<f64> = Graph::eval();
        let logits = g.leaf(1, 7, vec![0.0; 7]);
        let loss = g.cross_entropy(logits, &[3], &[true]).unwrap();
        assert!((g.scalar_value(loss) - (7.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_hand_example() {
        // logits [1, 0], gold 0 -> ln(1 + e^-1) ~= 0.3133
        let mut g: Graph<f64> = Graph::eval();
        let logits = g.leaf(1, 2, vec![1.0, 0.0]);
        let loss = g.cross_entropy(logits, &[0], &[true]).unwrap();
        assert!((g.scalar_value(loss) - 0.31326168751822286).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_certain_prediction_is_zero() {
        let mut g: Graph<f64> = Graph::eval();
        let logits = g.leaf(1, 3, vec![100.0, 0.0, 0.0]);
        let loss = g.cross_entropy(logits, &[0], &[true]).unwrap();
        assert!(g.scalar_value(loss).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_all_ignored_is_an_error() {
        let mut g: Graph<f64> = Graph::eval();
        let logits = g.leaf(2, 3, vec![0.0; 6]);
        assert!(matches!(
            g.cross_entropy(logits, &[0, 1], &[false, false]),
            Err(Error::AllPositionsIgnored)
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut g: Graph<f64> = Graph::eval();
        let w = g.leaf(1, 3, vec![1.0, 2.0, 3.0]);
        let loss = g.sum(w);
        let grads = g.backward(loss).unwrap();
        assert_close(grads.of(w), &[1.0, 1.0, 1.0], 1e-12);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g: Graph<f64> = Graph::eval();
        let w = g.leaf(1, 2, vec![1.0, 2.0]);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_close(grads.of(w), &[2.0, 4.0], 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g: Graph<f64> = Graph::eval();
        let w = g.leaf(1, 3, vec![0.0; 3]);
        assert!(matches!(
            g.backward(w),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    #[test]
    fn unreachable_leaves_get_zero_grads() {
        let mut g: Graph<f64> = Graph::eval();
        let used = g.leaf(1, 2, vec![1.0, 1.0]);
        let unused = g.leaf(1, 2, vec![5.0, 5.0]);
        let loss = g.sum(used);
        let grads = g.backward(loss).unwrap();
        assert_close(grads.of(unused), &[0.0, 0.0], 0.0);
    }

    #[test]
    fn dropout_is_identity_in_eval_mode() {
        let mut g: Graph<f64> = Graph::eval();
        let x = g.leaf(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.dropout(x, 0.5);
        assert_close(g.data(y), g.data(x).to_vec().as_slice(), 0.0);
    }

    #[test]
    fn dropout_train_mode_scales_kept_entries() {
        let mut g: Graph<f64> = Graph::new(true, 42);
        let x = g.leaf(1, 1000, vec![1.0; 1000]);
        let y = g.dropout(x, 0.5);
        let kept: Vec<f64> = g.data(y).iter().copied().filter(|&v| v != 0.0).collect();
        assert!(kept.iter().all(|&v| (v - 2.0).abs() < 1e-12));
        assert!(kept.len() > 400 && kept.len() < 600);
    }

    #[test]
    fn embedding_backward_scatters_by_id() {
        let mut g: Graph<f64> = Graph::eval();
        let table = g.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = g.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.data(e), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(e);
        let grads = g.backward(loss).unwrap();
        assert_close(grads.of(table), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0], 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_non_negative() {
        let mut g: Graph<f64> = Graph::eval();
        let x = g.leaf(3, 5, (0..15).map(|i| (i as f64) * 0.7 - 5.0).collect());
        let y = g.softmax_rows(x);
        for i in 0..3 {
            let row = &g.data(y)[i * 5..(i + 1) * 5];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
