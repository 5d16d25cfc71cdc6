//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep. Parameters are
//! referenced from a borrowed [`ParamStore`] instead of being copied in.

use crate::kernels::{self, gelu, gelu_grad};
use crate::{Gradients, NumericsError, ParamId, ParamStore, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
        alpha: Real,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, Real),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<Real>,
        rstd: Vec<Real>,
    },
    Softmax(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad: usize,
        count: usize,
        probs: Vec<Real>,
    },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<Real>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for one forward pass and differentiates them.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grad_enabled: bool,
    track_frozen: bool,
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (shape[..shape.len() - 1].iter().product(), shape[shape.len() - 1]),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grad_enabled: true,
            track_frozen: false,
        }
    }

    /// A tape that records values only; `backward` is unavailable.
    pub fn inference(store: &'s ParamStore) -> Self {
        Self {
            grad_enabled: false,
            ..Self::new(store)
        }
    }

    /// Also compute gradients for frozen parameters (they are still never
    /// applied by the optimizer).
    pub fn track_frozen(mut self, flag: bool) -> Self {
        self.track_frozen = flag;
        self
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<Real>, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == data.len()
        );
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad: needs_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[Real] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.tensor(id).data(),
            _ => &node.data,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        rows_cols(self.shape(v))
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("tape nodes always hold consistent shapes")
    }

    pub fn scalar(&self, v: Var) -> Result<Real> {
        let data = self.value(v);
        if data.len() != 1 {
            return Err(NumericsError::NonScalar {
                shape: self.shape(v).to_vec(),
            });
        }
        Ok(data[0])
    }

    /// A constant input. Constants never receive gradients.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.store.tensor(id).shape().to_vec();
        let needs = self.store.is_trainable(id) || self.track_frozen;
        let v = self.push(shape, Vec::new(), Op::Param(id), needs);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.store.id(name)?;
        Ok(self.param(id))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// `a [m,k] x b [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ext(a, b, false, 1.0)
    }

    /// `alpha * a [m,k] x b^T` where `b` is `[n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var, alpha: Real) -> Result<Var> {
        self.matmul_ext(a, b, true, alpha)
    }

    fn matmul_ext(&mut self, a: Var, b: Var, trans_b: bool, alpha: Real) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_into(self.value(a), self.value(b), m, k, n, trans_b, alpha, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            vec![m, n],
            out,
            Op::MatMul {
                a,
                b,
                trans_b,
                alpha,
            },
            needs,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("add", a, b));
        }
        let out: Vec<Real> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let out: Vec<Real> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Mul(a, b), needs))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.dims(a);
        if self.value(bias).len() != cols {
            return Err(self.mismatch("add_bias", a, bias));
        }
        let b = self.value(bias);
        let out: Vec<Real> = self
            .value(a)
            .chunks(cols.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let needs = self.needs(a) || self.needs(bias);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::AddBias(a, bias), needs))
    }

    pub fn scale(&mut self, a: Var, c: Real) -> Var {
        let out: Vec<Real> = self.value(a).iter().map(|x| x * c).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c), needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<Real> = self.value(a).iter().map(|&x| gelu(x)).collect();
        let needs = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Gelu(a), needs)
    }

    /// Normalises each row of `x` and applies the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Real) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if self.value(gamma).len() != cols || self.value(beta).len() != cols {
            return Err(self.mismatch("layer_norm", x, gamma));
        }
        let mut out = vec![0.0; rows * cols];
        let mut mean = vec![0.0; rows];
        let mut rstd = vec![0.0; rows];
        kernels::layer_norm(
            self.value(x),
            rows,
            cols,
            self.value(gamma),
            self.value(beta),
            eps,
            &mut out,
            &mut mean,
            &mut rstd,
        );
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
            needs,
        ))
    }

    /// Row softmax. `key_mask[j] == false` hides column `j`; `causal_offset`
    /// hides columns `j > row + offset`.
    pub fn softmax(
        &mut self,
        x: Var,
        key_mask: Option<&[bool]>,
        causal_offset: Option<usize>,
    ) -> Result<Var> {
        let (rows, cols) = self.dims(x);
        if let Some(mask) = key_mask {
            if mask.len() != cols {
                return Err(NumericsError::ShapeMismatch {
                    op: "softmax mask",
                    left: self.shape(x).to_vec(),
                    right: vec![mask.len()],
                });
            }
        }
        if self.value(x).iter().any(|v| v.is_nan()) {
            return Err(NumericsError::NonFinite { op: "softmax" });
        }
        let mut out = vec![0.0; rows * cols];
        kernels::softmax_rows(self.value(x), rows, cols, key_mask, causal_offset, &mut out);
        let needs = self.needs(x);
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, out, Op::Softmax(x), needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if start + len > cols {
            return Err(NumericsError::ShapeMismatch {
                op: "slice_cols",
                left: self.shape(a).to_vec(),
                right: vec![start, len],
            });
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(vec![rows, len], out, Op::SliceCols { a, start }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.dims(p).0);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != rows {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, total], out, Op::ConcatCols(parts.to_vec()), needs))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.dims(p).1);
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).len() != 2 || self.dims(p).1 != cols {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += self.dims(p).0;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), needs))
    }

    /// Selects rows of a 2-D `table` by index.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(NumericsError::IndexOutOfRange { index: bad, len: rows });
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            vec![ids.len(), cols],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            needs,
        ))
    }

    /// Mean token cross-entropy of `logits [steps, vocab]` over non-pad targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], pad: usize) -> Result<Var> {
        let (rows, vocab) = self.dims(logits);
        if rows != targets.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape(logits).to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != pad && t >= vocab) {
            return Err(NumericsError::TargetOutOfRange { target: bad, vocab });
        }
        let mut probs = vec![0.0; rows * vocab];
        let (loss, count) =
            kernels::cross_entropy_rows(self.value(logits), rows, vocab, targets, pad, &mut probs);
        let needs = self.needs(logits);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                count,
                probs,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let needs = self.needs(a);
        self.push(vec![], vec![s], Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<Real>() / v.len() as Real
        };
        let needs = self.needs(a);
        self.push(vec![], vec![m], Op::Mean(a), needs)
    }

    /// Differentiates the scalar `loss` with respect to every parameter that
    /// needs a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(NumericsError::GradDisabled);
        }
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NonScalar {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut out = Gradients::new(self.store.len());
        let mut grads: Vec<Option<Vec<Real>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: &[Real],
        grads: &mut [Option<Vec<Real>>],
        out: &mut Gradients,
    ) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate(*id, g),
            Op::MatMul {
                a,
                b,
                trans_b,
                alpha,
            } => {
                let (m, k) = self.dims(*a);
                let n = node.shape[1];
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k_i, n_i) = (k as isize, n as isize);
                if self.needs(*a) {
                    let da = slot(grads, *a, m * k);
                    if *trans_b {
                        // dA = alpha * dC [m,n] * B [n,k]
                        kernels::gemm(m, n, k, *alpha, g, n_i, 1, bv, k_i, 1, 1.0, da, k_i, 1);
                    } else {
                        // dA = alpha * dC [m,n] * B^T, B is [k,n]
                        kernels::gemm(m, n, k, *alpha, g, n_i, 1, bv, 1, n_i, 1.0, da, k_i, 1);
                    }
                }
                if self.needs(*b) {
                    let db = slot(grads, *b, k * n);
                    if *trans_b {
                        // dB [n,k] = alpha * dC^T [n,m] * A [m,k]
                        kernels::gemm(n, m, k, *alpha, g, 1, n_i, av, k_i, 1, 1.0, db, k_i, 1);
                    } else {
                        // dB [k,n] = alpha * A^T [k,m] * dC [m,n]
                        kernels::gemm(k, m, n, *alpha, av, 1, k_i, g, n_i, 1, 1.0, db, n_i, 1);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        add_into(slot(grads, v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = self.value(*b);
                    let da = slot(grads, *a, g.len());
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.needs(*b) {
                    let av = self.value(*a);
                    let db = slot(grads, *b, g.len());
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, g.len()), g);
                }
                if self.needs(*bias) {
                    let cols = self.value(*bias).len();
                    let db = slot(grads, *bias, cols);
                    for row in g.chunks(cols.max(1)) {
                        add_into(db, row);
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let da = slot(grads, *a, g.len());
                    for (d, gi) in da.iter_mut().zip(g) {
                        *d += c * gi;
                    }
                }
            }
            Op::Gelu(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let da = slot(grads, *a, g.len());
                    for ((d, gi), xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gi * gelu_grad(*xi);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let (rows, cols) = self.dims(*x);
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let mut xhat = vec![0.0; cols];
                let mut dxhat = vec![0.0; cols];
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dx = if self.needs(*x) {
                    Some(vec![0.0; rows * cols])
                } else {
                    None
                };
                let inv_n = 1.0 / cols as Real;
                for r in 0..rows {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let xr = &xv[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        xhat[j] = (xr[j] - mean[r]) * rstd[r];
                        dgamma[j] += gr[j] * xhat[j];
                        dbeta[j] += gr[j];
                        dxhat[j] = gr[j] * gv[j];
                    }
                    if let Some(dx) = dx.as_mut() {
                        let m1 = dxhat.iter().sum::<Real>() * inv_n;
                        let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<Real>() * inv_n;
                        let dr = &mut dx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dr[j] = rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
                        }
                    }
                }
                if let Some(dx) = dx {
                    add_into(slot(grads, *x, rows * cols), &dx);
                }
                if self.needs(*gamma) {
                    add_into(slot(grads, *gamma, cols), &dgamma);
                }
                if self.needs(*beta) {
                    add_into(slot(grads, *beta, cols), &dbeta);
                }
            }
            Op::Softmax(x) => {
                if self.needs(*x) {
                    let (rows, cols) = self.dims(*x);
                    let p = &node.data;
                    let dx = slot(grads, *x, rows * cols);
                    for r in 0..rows {
                        let pr = &p[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: Real = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let dr = &mut dx[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dr[j] += pr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.needs(*a) {
                    let (rows, cols) = self.dims(*a);
                    let len = node.shape[1];
                    let da = slot(grads, *a, rows * cols);
                    for r in 0..rows {
                        add_into(
                            &mut da[r * cols + start..r * cols + start + len],
                            &g[r * len..(r + 1) * len],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if self.needs(p) {
                        let dp = slot(grads, p, rows * c);
                        for r in 0..rows {
                            add_into(
                                &mut dp[r * c..(r + 1) * c],
                                &g[r * total + offset..r * total + offset + c],
                            );
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.needs(p) {
                        add_into(slot(grads, p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let (rows, cols) = self.dims(*table);
                    let dt = slot(grads, *table, rows * cols);
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut dt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                count,
                probs,
            } => {
                if self.needs(*logits) && *count > 0 {
                    let (rows, vocab) = self.dims(*logits);
                    let scale = g[0] / *count as Real;
                    let dl = slot(grads, *logits, rows * vocab);
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *pad {
                            continue;
                        }
                        let pr = &probs[r * vocab..(r + 1) * vocab];
                        let dr = &mut dl[r * vocab..(r + 1) * vocab];
                        for j in 0..vocab {
                            dr[j] += scale * pr[j];
                        }
                        dr[t] -= scale;
                    }
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let n = self.value(*a).len();
                    let da = slot(grads, *a, n);
                    da.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let n = self.value(*a).len();
                    let da = slot(grads, *a, n);
                    let s = g[0] / n.max(1) as Real;
                    da.iter_mut().for_each(|d| *d += s);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<Real>>], v: Var, len: usize) -> &mut [Real] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [Real], src: &[Real]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamGroup;

    fn store_with(values: &[Real]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add(
                "x",
                Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
                ParamGroup::Slm,
            )
            .unwrap();
        (s, id)
    }

    #[test]
    fn sum_gives_ones() {
        let (s, id) = store_with(&[1.0, -2.0, 3.5]);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let loss = t.sum(x);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(id).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gives_two_x() {
        let (s, id) = store_with(&[1.0, -2.0, 3.5]);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(id).unwrap(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (s, id) = store_with(&[1.0, 2.0]);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        assert!(matches!(
            t.backward(x),
            Err(NumericsError::NonScalar { .. })
        ));
    }

    #[test]
    fn frozen_params_get_no_grad_unless_tracked() {
        let (mut s, id) = store_with(&[1.0, 2.0]);
        s.set_group_trainable(ParamGroup::Slm, false);
        let mut t = Tape::new(&s);
        let x = t.param(id);
        let loss = t.sum(x);
        assert!(t.backward(loss).unwrap().get(id).is_none());

        let mut t = Tape::new(&s).track_frozen(true);
        let x = t.param(id);
        let loss = t.sum(x);
        assert_eq!(t.backward(loss).unwrap().get(id).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let (s, id) = store_with(&[1.0]);
        let mut t = Tape::inference(&s);
        let x = t.param(id);
        let loss = t.sum(x);
        assert!(matches!(t.backward(loss), Err(NumericsError::GradDisabled)));
    }

    #[test]
    fn gather_rejects_bad_index() {
        let mut s = ParamStore::new();
        let id = s
            .add("e", Tensor::zeros(&[3, 2]), ParamGroup::Slm)
            .unwrap();
        let mut t = Tape::new(&s);
        let e = t.param(id);
        assert!(t.gather(e, &[0, 3]).is_err());
    }
}
