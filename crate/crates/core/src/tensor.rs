//! Dense row-major tensors and the numeric kernels shared by the tape.
//!
//! A [`Tensor`] is an immutable value: its buffer sits behind an `Arc`, so
//! clones are cheap and tensors can be handed across threads. Mutation goes
//! through [`Tensor::data_mut`], which copies on write when the buffer is
//! shared.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::Arc;

use num_traits::FromPrimitive;

use crate::error::{Result, VsaError};

/// Scalar precision a tensor can be instantiated with (`f32` or `f64`).
pub trait Float:
    num_traits::Float + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;
    const BYTES: usize;

    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-overlapping buffers for
    /// the given `m x k`, `k x n` and `m x n` operands.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

impl Float for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Float for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<&T> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(VsaError::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(VsaError::shape(format!(
                "shape {shape:?} needs {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data: Arc::new(data) })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor { shape, data: Arc::new(vec![value; numel]) }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        Tensor { shape, data: Arc::new((0..numel).map(&mut f).collect()) }
    }

    /// Square identity matrix.
    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::c(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|arc| (*arc).clone())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for axis {i} (extent {d})");
            off = off * d + ix;
        }
        self.data[off]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(VsaError::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Tensor { shape, data: Arc::clone(&self.data) })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|&x| f(x)).collect()) }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(VsaError::shape(format!(
                "elementwise shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data: Arc::new(data) })
    }

    /// In-place `self += other` (same shape).
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&x| U::c(x.as_f64())).collect()),
        }
    }

    /// Swap the last two axes.
    pub fn transpose(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(VsaError::shape(format!("transpose needs rank >= 2, got {:?}", self.shape)));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(&perm)
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(VsaError::shape(format!(
                "invalid permutation {perm:?} for shape {:?}",
                self.shape
            )));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        // trailing axes that stay in place move as contiguous blocks
        let mut keep = 0;
        while keep < r && perm[r - 1 - keep] == r - 1 - keep {
            keep += 1;
        }
        if keep == r {
            return Ok(self.clone());
        }
        if keep > 0 {
            let block: usize = self.shape[r - keep..].iter().product();
            let outer = self.reshape(self.shape[..r - keep].iter().copied().chain([block]).collect::<Vec<_>>())?;
            let mut p2: Vec<usize> = perm[..r - keep].to_vec();
            p2.push(r - keep);
            let moved = outer.permute_blocks(&p2)?;
            return moved.reshape(out_shape);
        }
        self.permute_elems(perm, &in_strides, out_shape)
    }

    /// Permutation whose last axis is fixed: copies contiguous rows.
    fn permute_blocks(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        let block = self.shape[r - 1];
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let src_strides: Vec<usize> = perm[..r - 1].iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let src = self.data();
        let lead = &out_shape[..r - 1];
        let mut idx = vec![0usize; r - 1];
        let mut off = 0usize;
        'outer: loop {
            out.extend_from_slice(&src[off..off + block]);
            let mut axis = r - 1;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                idx[axis] += 1;
                off += src_strides[axis];
                if idx[axis] < lead[axis] {
                    break;
                }
                off -= src_strides[axis] * lead[axis];
                idx[axis] = 0;
            }
        }
        Tensor::new(out_shape, out)
    }

    fn permute_elems(&self, perm: &[usize], in_strides: &[usize], out_shape: Vec<usize>) -> Result<Self> {
        let r = self.rank();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; r];
        let mut off = 0usize;
        let src = self.data();
        let last = r - 1;
        let last_extent = out_shape[last];
        let last_stride = src_strides[last];
        'outer: loop {
            for j in 0..last_extent {
                out.push(src[off + j * last_stride]);
            }
            // advance all axes but the innermost
            let mut axis = last;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                idx[axis] += 1;
                off += src_strides[axis];
                if idx[axis] < out_shape[axis] {
                    break;
                }
                off -= src_strides[axis] * out_shape[axis];
                idx[axis] = 0;
            }
        }
        Tensor::new(out_shape, out)
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| VsaError::invalid("concat of an empty list"))?;
        let r = first.rank();
        if axis >= r {
            return Err(VsaError::shape(format!("concat axis {axis} out of range for rank {r}")));
        }
        for p in parts {
            if p.rank() != r
                || p.shape.iter().zip(&first.shape).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(VsaError::shape(format!(
                    "concat extents mismatch off axis {axis}: {:?} vs {:?}",
                    p.shape, first.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        Tensor::new(shape, out)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || len == 0 || start + len > self.shape[axis] {
            return Err(VsaError::shape(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, out)
    }

    /// Select entries `indices` along `axis` (repeats allowed).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Self> {
        if axis >= self.rank() || indices.is_empty() {
            return Err(VsaError::shape(format!(
                "index_select on axis {axis} of {:?} with {} indices",
                self.shape,
                indices.len()
            )));
        }
        let extent = self.shape[axis];
        if let Some(&bad) = indices.iter().find(|&&i| i >= extent) {
            return Err(VsaError::invalid(format!("index {bad} out of range for extent {extent}")));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * extent + i) * inner;
                out.extend_from_slice(&self.data[base..base + inner]);
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = indices.len();
        Tensor::new(shape, out)
    }

    /// Plain matrix product with batch broadcasting, no autodiff.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(self.shape(), other.shape())?;
        let mut out = vec![T::zero(); plan.out_numel()];
        plan.run(self.data(), false, other.data(), false, &mut out);
        Tensor::new(plan.out_shape.clone(), out)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Shape bookkeeping for a batched `[.., m, k] x [.., k, n]` product.
///
/// Batch dimensions broadcast when one side has a single batch (rank 2 or
/// all-ones leading extents); otherwise they must be equal.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub batch_a: usize,
    pub batch_b: usize,
    pub batch: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(VsaError::shape(format!("matmul needs rank >= 2 operands, got {a:?} x {b:?}")));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(VsaError::shape(format!(
                "matmul inner dimensions differ: {a:?} x {b:?} ({k} != {k2})"
            )));
        }
        let lead_a = &a[..a.len() - 2];
        let lead_b = &b[..b.len() - 2];
        let batch_a: usize = lead_a.iter().product();
        let batch_b: usize = lead_b.iter().product();
        let lead = if batch_a == 1 && batch_b == 1 {
            if lead_a.len() >= lead_b.len() {
                lead_a
            } else {
                lead_b
            }
        } else if batch_a == 1 {
            lead_b
        } else if batch_b == 1 || lead_a == lead_b {
            lead_a
        } else {
            return Err(VsaError::shape(format!(
                "matmul batch dimensions not broadcastable: {a:?} x {b:?}"
            )));
        };
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        if batch_b == 1 {
            // a shared right operand: stack the batch into one tall product
            return Ok(MatmulPlan { m: m * batch_a, k, n, batch_a: 1, batch_b: 1, batch: 1, out_shape });
        }
        Ok(MatmulPlan { m, k, n, batch_a, batch_b, batch: batch_a.max(batch_b), out_shape })
    }

    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }

    /// `out[i] += a[i] * b[i]` for every batch `i`.
    pub fn run<T: Float>(&self, a: &[T], ta: bool, b: &[T], tb: bool, out: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        for i in 0..self.batch {
            let ai = if self.batch_a == 1 { 0 } else { i };
            let bi = if self.batch_b == 1 { 0 } else { i };
            gemm_acc(
                &a[ai * m * k..(ai + 1) * m * k],
                ta,
                &b[bi * k * n..(bi + 1) * k * n],
                tb,
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
    }
}

/// `c[m x n] += op(a) * op(b)` where `op` optionally transposes a stored
/// row-major matrix (`a` stored as `k x m` when `ta`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc<T: Float>(
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    c: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // packing overhead dominates for tiny or very short products
    if m * k * n <= 4096 || m < 8 {
        small_gemm_acc(a, ta, b, tb, c, m, k, n);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the m/k/n extents above.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::one(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn small_gemm_acc<T: Float>(a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T], m: usize, k: usize, n: usize) {
    if tb && !ta {
        // both operands are row-contiguous along k
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for (j, r) in c[i * n..(i + 1) * n].iter_mut().enumerate() {
                let brow = &b[j * k..(j + 1) * k];
                let dot = arow.iter().zip(brow).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
                *r = *r + dot;
            }
        }
        return;
    }
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == T::zero() {
                continue;
            }
            if tb {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = *r + av * b[j * k + p];
                }
            } else {
                let brow = &b[p * n..(p + 1) * n];
                for (r, &bv) in row.iter_mut().zip(brow) {
                    *r = *r + av * bv;
                }
            }
        }
    }
}
