use super::kernels::{gemm, gemm_nt, gemm_tn};
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance guard used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { x: Var, w: Var },
    Affine { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Outer { p: Var, q: Var },
    LpNormalize { x: Var, p: u32, norms: Vec<f64>, guarded: Vec<bool> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    SoftmaxXent { logits: Var, probs: Vec<f64>, targets: Vec<usize>, weights: Vec<f64> },
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    Slice { x: Var, start: usize, end: usize },
    Reshape(Var),
    WeightedChunkSum { weights: Var, chunks: Var },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of forward operations.
///
/// Node ids are handed out in creation order, so inputs always precede the
/// nodes that consume them and a single reverse sweep visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf recorded before it.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, materialising zeros for unused leaves.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(AutodiffError::Dimension { op, lhs: other.to_vec(), rhs: vec![0, 0] }),
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Dimension { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `‖v‖_p`, rescaled by the largest magnitude so that `|v|^p` cannot overflow.
fn lp_norm(v: &[f64], p: u32) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let s: f64 = v.iter().map(|x| (x.abs() / scale).powi(p as i32)).sum();
    scale * s.powf(1.0 / p as f64)
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a differentiable input (parameter, data, or detached state).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var, AutodiffError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (b, i) = dims2("matmul", xv)?;
        let (wi, o) = dims2("matmul", wv)?;
        if wi != i {
            return Err(mismatch("matmul", xv, wv));
        }
        let mut out = vec![0.0; b * o];
        gemm(b, i, o, xv.data(), wv.data(), &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![b, o], out), Op::MatMul { x, w }))
    }

    /// `x · w + b` with `x: [B×D_in]`, `w: [D_in×D_out]`, `b: [D_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (rows, i) = dims2("affine", xv)?;
        let (wi, o) = dims2("affine", wv)?;
        if wi != i {
            return Err(mismatch("affine", xv, wv));
        }
        if bv.shape() != [o] {
            return Err(mismatch("affine", wv, bv));
        }
        let mut out = Vec::with_capacity(rows * o);
        for _ in 0..rows {
            out.extend_from_slice(bv.data());
        }
        gemm(rows, i, o, xv.data(), wv.data(), &mut out, true);
        Ok(self.push(Tensor::from_parts(vec![rows, o], out), Op::Affine { x, w, b }))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, AutodiffError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(av.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let t = self.zip("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(t, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::tanh);
        self.push(t, Op::Tanh(x))
    }

    /// Row-wise vectorised outer product: `out[b, i·s + j] = p[b,i] · q[b,j]`.
    pub fn outer(&mut self, p: Var, q: Var) -> Result<Var, AutodiffError> {
        let (pv, qv) = (self.value(p), self.value(q));
        let (bp, r) = dims2("outer_product", pv)?;
        let (bq, s) = dims2("outer_product", qv)?;
        if bp != bq {
            return Err(mismatch("outer_product", pv, qv));
        }
        let mut out = Vec::with_capacity(bp * r * s);
        for b in 0..bp {
            let qrow = qv.row(b);
            for &pi in pv.row(b) {
                out.extend(qrow.iter().map(|&qj| pi * qj));
            }
        }
        Ok(self.push(Tensor::from_parts(vec![bp, r * s], out), Op::Outer { p, q }))
    }

    /// Divides each row by `max(‖row‖_p, eps)`.
    pub fn lp_normalize(&mut self, x: Var, p: u32, eps: f64) -> Result<Var, AutodiffError> {
        if p == 0 {
            return Err(AutodiffError::InvalidArgument("lp_normalize requires p >= 1".into()));
        }
        let xv = self.value(x);
        let (rows, cols) = dims2("lp_normalize", xv)?;
        let mut out = Vec::with_capacity(rows * cols);
        let mut norms = Vec::with_capacity(rows);
        let mut guarded = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let norm = lp_norm(row, p);
            let (n, g) = if norm >= eps { (norm, false) } else { (eps, true) };
            out.extend(row.iter().map(|v| v / n));
            norms.push(n);
            guarded.push(g);
        }
        let t = Tensor::from_parts(vec![rows, cols], out);
        Ok(self.push(t, Op::LpNormalize { x, p, norms, guarded }))
    }

    /// Per-row standardisation followed by an elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = dims2("layer_norm", xv)?;
        if d < 2 {
            return Err(AutodiffError::InvalidArgument("layer_norm needs at least 2 features".into()));
        }
        if gv.shape() != [d] {
            return Err(mismatch("layer_norm", xv, gv));
        }
        if bv.shape() != [d] {
            return Err(mismatch("layer_norm", xv, bv));
        }
        let mut out = Vec::with_capacity(rows * d);
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, v) in row.iter().enumerate() {
                let xh = (v - mean) * rs;
                xhat.push(xh);
                out.push(xh * gv.data()[j] + bv.data()[j]);
            }
            rstd.push(rs);
        }
        let t = Tensor::from_parts(vec![rows, d], out);
        Ok(self.push(t, Op::LayerNorm { x, gain, bias, xhat, rstd }))
    }

    /// Mean cross-entropy over all rows of `logits`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, AutodiffError> {
        let mask = vec![true; targets.len()];
        self.masked_softmax_cross_entropy(logits, targets, &mask)
    }

    /// Cross-entropy averaged over the rows where `mask` is set.
    ///
    /// Targets of unmasked rows are still range-checked. With no masked rows
    /// the loss is exactly zero.
    pub fn masked_softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var, AutodiffError> {
        let lv = self.value(logits);
        let (rows, classes) = dims2("softmax_cross_entropy", lv)?;
        if targets.len() != rows || mask.len() != rows {
            return Err(AutodiffError::Dimension {
                op: "softmax_cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if let Some((row, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= classes) {
            return Err(AutodiffError::Index { row, target: t, classes });
        }
        let count = mask.iter().filter(|&&m| m).count();
        let w = if count > 0 { 1.0 / count as f64 } else { 0.0 };
        let weights: Vec<f64> = mask.iter().map(|&m| if m { w } else { 0.0 }).collect();
        let mut probs = Vec::with_capacity(rows * classes);
        let mut loss = 0.0;
        for r in 0..rows {
            let row = lv.row(r);
            let (arg, max) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(i, m), (j, &v)| if v > m { (j, v) } else { (i, m) });
            // 1 + rest, with the exp(0) of the argmax kept out so ln_1p stays exact for peaked rows
            let rest: f64 = row.iter().enumerate().filter(|&(j, _)| j != arg).map(|(_, v)| (v - max).exp()).sum();
            let denom = 1.0 + rest;
            probs.extend(row.iter().map(|v| (v - max).exp() / denom));
            if weights[r] != 0.0 {
                loss += weights[r] * (rest.ln_1p() - (row[targets[r]] - max));
            }
        }
        let op = Op::SoftmaxXent { logits, probs, targets: targets.to_vec(), weights };
        Ok(self.push(Tensor::scalar(loss), op))
    }

    /// Concatenates 2-D parts along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of zero parts".into()))?;
        let (rows, _) = dims2("concat", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (r, c) = dims2("concat", pv)?;
            if r != rows {
                return Err(mismatch("concat", self.value(*first), pv));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        Ok(self.push(Tensor::from_parts(vec![rows, total], out), Op::Concat(parts.to_vec())))
    }

    /// Concatenates 2-D parts along the batch axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("stack_rows of zero parts".into()))?;
        let (_, cols) = dims2("stack_rows", self.value(*first))?;
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            let (r, c) = dims2("stack_rows", pv)?;
            if c != cols {
                return Err(mismatch("stack_rows", self.value(*first), pv));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::StackRows(parts.to_vec())))
    }

    /// Extracts feature columns `start..end` of a 2-D tensor.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let (rows, cols) = dims2("slice", xv)?;
        if start >= end || end > cols {
            return Err(AutodiffError::Dimension { op: "slice", lhs: xv.shape().to_vec(), rhs: vec![start, end] });
        }
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.row(r)[start..end]);
        }
        Ok(self.push(Tensor::from_parts(vec![rows, end - start], out), Op::Slice { x, start, end }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let t = self.value(x).reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `out[b] = Σ_i weights[b,i] · chunks[b, i·m .. (i+1)·m]` for `weights: [B×k]`,
    /// `chunks: [B×(k·m)]`.
    pub fn weighted_chunk_sum(&mut self, weights: Var, chunks: Var) -> Result<Var, AutodiffError> {
        let (wv, cv) = (self.value(weights), self.value(chunks));
        let (b, k) = dims2("weighted_chunk_sum", wv)?;
        let (bc, km) = dims2("weighted_chunk_sum", cv)?;
        if b != bc || km % k != 0 {
            return Err(mismatch("weighted_chunk_sum", wv, cv));
        }
        let m = km / k;
        let mut out = vec![0.0; b * m];
        for r in 0..b {
            let dst = &mut out[r * m..(r + 1) * m];
            let crow = cv.row(r);
            for (i, &w) in wv.row(r).iter().enumerate() {
                for (d, c) in dst.iter_mut().zip(&crow[i * m..(i + 1) * m]) {
                    *d += w * c;
                }
            }
        }
        Ok(self.push(Tensor::from_parts(vec![b, m], out), Op::WeightedChunkSum { weights, chunks }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = vec![None; n];

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {
                    out[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::MatMul { x, w } | Op::Affine { x, w, .. } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (rows, din) = (xv.rows(), xv.cols());
                    let dout = wv.cols();
                    gemm_nt(rows, dout, din, &g, wv.data(), slot(&mut grads, *x, rows * din));
                    gemm_tn(din, rows, dout, xv.data(), &g, slot(&mut grads, *w, din * dout));
                    if let Op::Affine { b, .. } = &node.op {
                        let db = slot(&mut grads, *b, dout);
                        for r in 0..rows {
                            for (d, gv) in db.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    for (d, gv) in slot(&mut grads, *a, g.len()).iter_mut().zip(&g) {
                        *d += gv;
                    }
                    for (d, gv) in slot(&mut grads, *b, g.len()).iter_mut().zip(&g) {
                        *d += sign * gv;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let da = slot(&mut grads, *a, g.len());
                    for j in 0..g.len() {
                        da[j] += g[j] * bv[j];
                    }
                    let db = slot(&mut grads, *b, g.len());
                    for j in 0..g.len() {
                        db[j] += g[j] * av[j];
                    }
                }
                Op::Relu(x) => {
                    let dx = slot(&mut grads, *x, g.len());
                    for j in 0..g.len() {
                        if y[j] > 0.0 {
                            dx[j] += g[j];
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let dx = slot(&mut grads, *x, g.len());
                    for j in 0..g.len() {
                        dx[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Tanh(x) => {
                    let dx = slot(&mut grads, *x, g.len());
                    for j in 0..g.len() {
                        dx[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Outer { p, q } => {
                    let (pv, qv) = (self.value(*p), self.value(*q));
                    let (rows, r, s) = (pv.rows(), pv.cols(), qv.cols());
                    {
                        let dp = slot(&mut grads, *p, rows * r);
                        for b in 0..rows {
                            let qrow = qv.row(b);
                            for i in 0..r {
                                let gs = &g[b * r * s + i * s..b * r * s + (i + 1) * s];
                                dp[b * r + i] += gs.iter().zip(qrow).map(|(a, c)| a * c).sum::<f64>();
                            }
                        }
                    }
                    let dq = slot(&mut grads, *q, rows * s);
                    for b in 0..rows {
                        let prow = pv.row(b);
                        for i in 0..r {
                            let gs = &g[b * r * s + i * s..b * r * s + (i + 1) * s];
                            for (d, gv) in dq[b * s..(b + 1) * s].iter_mut().zip(gs) {
                                *d += prow[i] * gv;
                            }
                        }
                    }
                }
                Op::LpNormalize { x, p, norms, guarded } => {
                    let cols = node.value.cols();
                    let dx = slot(&mut grads, *x, g.len());
                    for (r, (&n, &gd)) in norms.iter().zip(guarded).enumerate() {
                        let gs = &g[r * cols..(r + 1) * cols];
                        let ys = &y[r * cols..(r + 1) * cols];
                        let d = &mut dx[r * cols..(r + 1) * cols];
                        if gd {
                            for (dv, gv) in d.iter_mut().zip(gs) {
                                *dv += gv / n;
                            }
                        } else {
                            let dot: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                let dn = ys[j].signum() * ys[j].abs().powi(*p as i32 - 1);
                                d[j] += (gs[j] - dot * dn) / n;
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let d = node.value.cols();
                    let gv = self.value(*gain).data();
                    {
                        let dg = slot(&mut grads, *gain, d);
                        for (r, chunk) in g.chunks(d).enumerate() {
                            for j in 0..d {
                                dg[j] += chunk[j] * xhat[r * d + j];
                            }
                        }
                    }
                    {
                        let db = slot(&mut grads, *bias, d);
                        for chunk in g.chunks(d) {
                            for j in 0..d {
                                db[j] += chunk[j];
                            }
                        }
                    }
                    let dx = slot(&mut grads, *x, g.len());
                    let mut dxhat = vec![0.0; d];
                    for (r, chunk) in g.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = chunk[j] * gv[j];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let scale = rstd[r] / d as f64;
                        for j in 0..d {
                            dx[r * d + j] += scale * (d as f64 * dxhat[j] - s1 - xh[j] * s2);
                        }
                    }
                }
                Op::SoftmaxXent { logits, probs, targets, weights } => {
                    let classes = self.value(*logits).cols();
                    let dl = slot(&mut grads, *logits, probs.len());
                    for (r, &w) in weights.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let scale = g[0] * w;
                        for c in 0..classes {
                            dl[r * classes + c] += scale * probs[r * classes + c];
                        }
                        dl[r * classes + targets[r]] -= scale;
                    }
                }
                Op::Concat(parts) => {
                    let total = node.value.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, c) = (self.value(p).rows(), self.value(p).cols());
                        let dp = slot(&mut grads, p, rows * c);
                        for r in 0..rows {
                            let src = &g[r * total + offset..r * total + offset + c];
                            for (d, gv) in dp[r * c..(r + 1) * c].iter_mut().zip(src) {
                                *d += gv;
                            }
                        }
                        offset += c;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        for (d, gv) in slot(&mut grads, p, len).iter_mut().zip(&g[offset..offset + len]) {
                            *d += gv;
                        }
                        offset += len;
                    }
                }
                Op::Slice { x, start, end } => {
                    let cols = self.value(*x).cols();
                    let rows = self.value(*x).rows();
                    let w = end - start;
                    let dx = slot(&mut grads, *x, rows * cols);
                    for r in 0..rows {
                        for j in 0..w {
                            dx[r * cols + start + j] += g[r * w + j];
                        }
                    }
                }
                Op::Reshape(x) => {
                    for (d, gv) in slot(&mut grads, *x, g.len()).iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::WeightedChunkSum { weights, chunks } => {
                    let (wv, cv) = (self.value(*weights), self.value(*chunks));
                    let (rows, k) = (wv.rows(), wv.cols());
                    let m = cv.cols() / k;
                    {
                        let dw = slot(&mut grads, *weights, rows * k);
                        for r in 0..rows {
                            let gs = &g[r * m..(r + 1) * m];
                            let crow = cv.row(r);
                            for i in 0..k {
                                dw[r * k + i] +=
                                    gs.iter().zip(&crow[i * m..(i + 1) * m]).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                    let dc = slot(&mut grads, *chunks, rows * k * m);
                    for r in 0..rows {
                        let gs = &g[r * m..(r + 1) * m];
                        for i in 0..k {
                            let w = wv.get(r, i);
                            let base = r * k * m + i * m;
                            for (d, gv) in dc[base..base + m].iter_mut().zip(gs) {
                                *d += w * gv;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let len = self.value(*x).len();
                    for d in slot(&mut grads, *x, len).iter_mut() {
                        *d += g[0];
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}
