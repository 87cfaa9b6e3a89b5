//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends a node holding its output value and whatever the backward
//! rule needs. Nodes only reference earlier nodes, so the tape is already in
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! One tape is built per training step and dropped afterwards. Gradients of
//! leaves accumulate across `backward` calls until [`Tape::zero_grad`].

use crate::error::{Result, VsaError};
use crate::tensor::{gemm_acc, Float, MatmulPlan, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for a user-defined op: `(inputs, output, grad_output) -> grad per input`.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

pub const LAYER_NORM_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op<T: Float> {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    MatMul { a: Var, b: Var, tb: bool, plan: MatmulPlan },
    Reshape { a: Var },
    Permute { a: Var, perm: Vec<usize> },
    Softmax { a: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { a: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { a: Var, axis: usize, start: usize },
    IndexSelect { a: Var, axis: usize, indices: Vec<usize> },
    GatherRows { a: Var, indices: Vec<Vec<usize>> },
    Sum { a: Var },
    Mean { a: Var },
    MeanAxis { a: Var, axis: usize },
    Mse { pred: Var, target: Tensor<T> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<T> },
    Custom { inputs: Vec<Var>, backward: CustomBackward<T> },
}

struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T: Float> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::with_capacity(512), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, if it received one.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise -------------------------------------------------------

    fn check_suffix(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(VsaError::shape(format!(
                "{what}: {sb:?} does not broadcast onto {sa:?}"
            )));
        }
        Ok(())
    }

    /// `a + b`, where `b`'s shape is a trailing suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix(a, b, "add")?;
        let bv = self.value(b).data();
        let inner = bv.len();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o = *o + x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    /// `a * b` elementwise, `b` broadcast as in [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix(a, b, "mul")?;
        let bv = self.value(b).data();
        let inner = bv.len();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(inner) {
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o = *o * x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
        let out = self.value(a).map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(out, Op::Gelu { a }, rg)
    }

    // ---- linear algebra and layout -------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a x b^T` without materializing the transpose (`b` is `[.., n, k]`).
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Result<Var> {
        let sb = self.shape(b).to_vec();
        let mut logical_b = sb.clone();
        if tb {
            if sb.len() < 2 {
                return Err(VsaError::shape(format!("matmul_nt needs rank >= 2, got {sb:?}")));
            }
            let r = sb.len();
            logical_b.swap(r - 2, r - 1);
        }
        let plan = MatmulPlan::new(self.shape(a), &logical_b)?;
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.run(self.value(a).data(), false, self.value(b).data(), tb, &mut out);
        let value = Tensor::new(plan.out_shape.clone(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul { a, b, tb, plan }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape { a }, rg))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(a).permute(perm)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Permute { a, perm: perm.to_vec() }, rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&values, axis)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat { parts: parts.to_vec(), axis }, rg))
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(a).narrow(axis, start, len)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Narrow { a, axis, start }, rg))
    }

    pub fn index_select(&mut self, a: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let out = self.value(a).index_select(axis, indices)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::IndexSelect { a, axis, indices: indices.to_vec() }, rg))
    }

    /// Per-batch row gather: `a[b, N, ..]` with `indices[b]` of equal length `M`
    /// gives `[b, M, ..]`.
    pub fn gather_rows(&mut self, a: Var, indices: &[Vec<usize>]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() < 2 || indices.len() != shape[0] {
            return Err(VsaError::shape(format!(
                "gather_rows: {} index lists for shape {shape:?}",
                indices.len()
            )));
        }
        let m = indices[0].len();
        if m == 0 || indices.iter().any(|ix| ix.len() != m) {
            return Err(VsaError::shape("gather_rows: index lists must be non-empty and equal length"));
        }
        let n = shape[1];
        if let Some(&bad) = indices.iter().flatten().find(|&&i| i >= n) {
            return Err(VsaError::invalid(format!("gather_rows: index {bad} out of range for {n} rows")));
        }
        let inner: usize = shape[2..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(shape[0] * m * inner);
        for (b, ix) in indices.iter().enumerate() {
            for &i in ix {
                let base = (b * n + i) * inner;
                out.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[1] = m;
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::GatherRows { a, indices: indices.to_vec() }, rg))
    }

    // ---- normalizations ----------------------------------------------------

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = *x.shape().last().expect("rank >= 1");
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(d) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax { a }, rg)
    }

    /// Layer norm over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("rank >= 1");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(VsaError::shape(format!(
                "layer_norm affine params must be [{d}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let eps = T::c(LAYER_NORM_EPS);
        let dn = T::c(d as f64);
        let xv = self.value(x);
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.numel() / d;
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(g[j] * h + bt[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    // ---- reductions and losses ---------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / T::c(v.numel() as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean { a }, rg)
    }

    /// Mean over one axis, which is removed from the shape (a rank-1 input
    /// reduces to shape `[1]`).
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(VsaError::shape(format!("mean_axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let extent = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let inv = T::one() / T::c(extent as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(&src[base..base + inner]) {
                    *acc = *acc + v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v = *v * inv);
        let mut out_shape: Vec<usize> = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MeanAxis { a, axis }, rg))
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(VsaError::shape(format!(
                "mse shape mismatch: prediction {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = T::c(p.numel() as f64);
        let s = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            / n;
        let rg = self.rg(pred);
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target: target.clone() }, rg))
    }

    /// Mean softmax cross-entropy of `logits[b, classes]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(VsaError::shape(format!(
                "cross_entropy expects [batch, classes] logits for {} labels, got {shape:?}",
                labels.len()
            )));
        }
        let c = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(VsaError::invalid(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut total = T::zero();
        for (row, &l) in probs.chunks_mut(c).zip(labels) {
            softmax_in_place(row);
            total = total - row[l].max(T::min_positive_value()).ln();
        }
        let loss = total / T::c(labels.len() as f64);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Record an op with a caller-supplied forward value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, rg)
    }

    // ---- backward ----------------------------------------------------------

    /// Propagate d(loss)/d(.) to every trainable leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(VsaError::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        if !self.rg(loss) {
            return Err(VsaError::Autodiff("loss is detached: no trainable leaf feeds it".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (input, ig) in self.input_grads(i, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&ig),
                    slot => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        let grads = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b } => {
                let mut gb = vec![T::zero(); self.value(*b).numel()];
                if self.rg(*b) {
                    for chunk in gd.chunks(gb.len()) {
                        for (acc, &x) in gb.iter_mut().zip(chunk) {
                            *acc = *acc + x;
                        }
                    }
                }
                vec![(*a, g.clone()), (*b, Tensor::new(self.shape(*b).to_vec(), gb)?)]
            }
            Op::Sub { a, b } => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let inner = bv.numel();
                let mut ga = g.clone();
                for chunk in ga.data_mut().chunks_mut(inner) {
                    for (o, &x) in chunk.iter_mut().zip(bv.data()) {
                        *o = *o * x;
                    }
                }
                let mut gb = vec![T::zero(); inner];
                for (gc, ac) in gd.chunks(inner).zip(av.data().chunks(inner)) {
                    for ((acc, &x), &y) in gb.iter_mut().zip(gc).zip(ac) {
                        *acc = *acc + x * y;
                    }
                }
                vec![(*a, ga), (*b, Tensor::new(bv.shape().to_vec(), gb)?)]
            }
            Op::Scale { a, factor } => vec![(*a, g.map(|x| x * *factor))],
            Op::MatMul { a, b, tb, plan } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut res = Vec::with_capacity(2);
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); av.numel()];
                    for bi in 0..plan.batch {
                        let ia = if plan.batch_a == 1 { 0 } else { bi };
                        let ib = if plan.batch_b == 1 { 0 } else { bi };
                        // dA = dC * op(B)^T
                        gemm_acc(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            false,
                            &bv.data()[ib * k * n..(ib + 1) * k * n],
                            !*tb,
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    res.push((*a, Tensor::new(av.shape().to_vec(), ga)?));
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); bv.numel()];
                    for bi in 0..plan.batch {
                        let ia = if plan.batch_a == 1 { 0 } else { bi };
                        let ib = if plan.batch_b == 1 { 0 } else { bi };
                        let dst = &mut gb[ib * k * n..(ib + 1) * k * n];
                        let dc = &gd[bi * m * n..(bi + 1) * m * n];
                        let a_blk = &av.data()[ia * m * k..(ia + 1) * m * k];
                        if *tb {
                            // stored B is n x k: dB = dC^T * A
                            gemm_acc(dc, true, a_blk, false, dst, n, m, k);
                        } else {
                            // dB = A^T * dC
                            gemm_acc(a_blk, true, dc, false, dst, k, m, n);
                        }
                    }
                    res.push((*b, Tensor::new(bv.shape().to_vec(), gb)?));
                }
                res
            }
            Op::Reshape { a } => vec![(*a, g.reshape(self.shape(*a).to_vec())?)],
            Op::Permute { a, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*a, g.permute(&inv)?)]
            }
            Op::Softmax { a } => {
                let d = *out.shape().last().expect("rank >= 1");
                let mut gx = Vec::with_capacity(out.numel());
                for (yr, gr) in out.data().chunks(d).zip(gd.chunks(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gv)| y * gv).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&y, &gv)| y * (gv - dot)));
                }
                vec![(*a, Tensor::new(out.shape().to_vec(), gx)?)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = *out.shape().last().expect("rank >= 1");
                let dn = T::c(d as f64);
                let gam = self.value(*gamma).data();
                let mut gx = Vec::with_capacity(out.numel());
                let mut ggamma = vec![T::zero(); d];
                let mut gbeta = vec![T::zero(); d];
                for ((gr, hr), &r) in gd.chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        sum_dh = sum_dh + dh;
                        sum_dh_h = sum_dh_h + dh * hr[j];
                        ggamma[j] = ggamma[j] + gr[j] * hr[j];
                        gbeta[j] = gbeta[j] + gr[j];
                    }
                    let (m1, m2) = (sum_dh / dn, sum_dh_h / dn);
                    for j in 0..d {
                        gx.push(r * (gr[j] * gam[j] - m1 - hr[j] * m2));
                    }
                }
                vec![
                    (*x, Tensor::new(out.shape().to_vec(), gx)?),
                    (*gamma, Tensor::new(vec![d], ggamma)?),
                    (*beta, Tensor::new(vec![d], gbeta)?),
                ]
            }
            Op::Gelu { a } => {
                let (c, k, half) = (T::c(GELU_C), T::c(GELU_A), T::c(0.5));
                let three = T::c(3.0);
                let gx = self.value(*a).zip_map(g, |x, gv| {
                    let t = (c * (x + k * x * x * x)).tanh();
                    let dt = (T::one() - t * t) * c * (T::one() + three * k * x * x);
                    gv * (half * (T::one() + t) + half * x * dt)
                })?;
                vec![(*a, gx)]
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    res.push((p, g.narrow(*axis, start, len)?));
                    start += len;
                }
                res
            }
            Op::Narrow { a, axis, start } => {
                let shape = self.shape(*a).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let len = out.shape()[*axis];
                let mut ga = vec![T::zero(); self.value(*a).numel()];
                for o in 0..outer {
                    let dst = (o * shape[*axis] + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![(*a, Tensor::new(shape, ga)?)]
            }
            Op::IndexSelect { a, axis, indices } => {
                let shape = self.shape(*a).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let mut ga = vec![T::zero(); self.value(*a).numel()];
                for o in 0..outer {
                    for (j, &ix) in indices.iter().enumerate() {
                        let dst = (o * shape[*axis] + ix) * inner;
                        let src = (o * indices.len() + j) * inner;
                        for (acc, &v) in ga[dst..dst + inner].iter_mut().zip(&gd[src..src + inner]) {
                            *acc = *acc + v;
                        }
                    }
                }
                vec![(*a, Tensor::new(shape, ga)?)]
            }
            Op::GatherRows { a, indices } => {
                let shape = self.shape(*a).to_vec();
                let n = shape[1];
                let inner: usize = shape[2..].iter().product();
                let m = indices[0].len();
                let mut ga = vec![T::zero(); self.value(*a).numel()];
                for (b, ix) in indices.iter().enumerate() {
                    for (j, &i) in ix.iter().enumerate() {
                        let dst = (b * n + i) * inner;
                        let src = (b * m + j) * inner;
                        for (acc, &v) in ga[dst..dst + inner].iter_mut().zip(&gd[src..src + inner]) {
                            *acc = *acc + v;
                        }
                    }
                }
                vec![(*a, Tensor::new(shape, ga)?)]
            }
            Op::Sum { a } => vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0]))],
            Op::Mean { a } => {
                let n = T::c(self.value(*a).numel() as f64);
                vec![(*a, Tensor::full(self.shape(*a).to_vec(), gd[0] / n))]
            }
            Op::MeanAxis { a, axis } => {
                let shape = self.shape(*a).to_vec();
                let outer: usize = shape[..*axis].iter().product();
                let extent = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let inv = T::one() / T::c(extent as f64);
                let mut ga = Vec::with_capacity(self.value(*a).numel());
                for o in 0..outer {
                    for _ in 0..extent {
                        ga.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * inv));
                    }
                }
                vec![(*a, Tensor::new(shape, ga)?)]
            }
            Op::Mse { pred, target } => {
                let scale = T::c(2.0) * gd[0] / T::c(target.numel() as f64);
                let gp = self.value(*pred).zip_map(target, |p, t| scale * (p - t))?;
                vec![(*pred, gp)]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let scale = gd[0] / T::c(labels.len() as f64);
                let mut gl = probs.clone();
                for (row, &l) in gl.chunks_mut(c).zip(labels) {
                    row[l] = row[l] - T::one();
                    row.iter_mut().for_each(|v| *v = *v * scale);
                }
                vec![(*logits, Tensor::new(vec![labels.len(), c], gl)?)]
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = backward(&ins, out, g);
                if gs.len() != inputs.len() {
                    return Err(VsaError::Autodiff(format!(
                        "custom backward returned {} grads for {} inputs",
                        gs.len(),
                        inputs.len()
                    )));
                }
                inputs.iter().copied().zip(gs).collect()
            }
        };
        Ok(grads)
    }
}

pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    for v in row.iter_mut() {
        *v = *v / total;
    }
}
