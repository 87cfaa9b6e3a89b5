//! Attention and MLP building blocks, patch layout, and positional embeddings.
//!
//! Blocks are pre-norm residual transformers with an MLP hidden width of
//! `4 * dim`. Each block only stores [`ParamId`]s; the tensors live in a
//! [`ParamStore`] and are bound to a tape per forward pass.

use crate::error::{Result, VsaError};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

pub const MLP_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if dim == 0 || heads == 0 || dim % heads != 0 {
            return Err(VsaError::invalid(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(AttentionConfig { dim, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: &mut Init<'_>,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.trunc_normal(&[in_dim, out_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    /// Zero weights and bias; used for projections that feed a residual sum.
    pub fn zeros<T: Float>(store: &mut ParamStore<T>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros([in_dim, out_dim]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    /// `x[.., in] -> [.., out]`.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p[self.weight])?;
        tape.add(h, p[self.bias])
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones([dim]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros([dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gamma], p[self.beta])
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize, init: &mut Init<'_>) -> Self {
        let hidden = dim * MLP_RATIO;
        Mlp {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, hidden, init),
            fc2: Linear::zeros(store, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, p, x)?;
        let h = tape.gelu(h);
        self.fc2.forward(tape, p, h)
    }
}

/// Multi-head scaled dot-product attention on already-projected streams.
///
/// `q: [b, Lq, dim]`, `k, v: [b, Lk, dim]`. Returns the `[b, Lq, dim]`
/// output and the `[b * heads, Lq, Lk]` attention weights.
pub fn scaled_dot_product<T: Float>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
    cfg: AttentionConfig,
) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(VsaError::shape(format!(
            "attention expects [batch, len, dim] streams, got {sq:?}, {sk:?}, {sv:?}"
        )));
    }
    if sq[2] != cfg.dim || sk[2] != cfg.dim || sv[2] != cfg.dim {
        return Err(VsaError::shape(format!(
            "attention width mismatch: q {}, k {}, v {}, expected {}",
            sq[2], sk[2], sv[2], cfg.dim
        )));
    }
    if sk[1] != sv[1] {
        return Err(VsaError::shape(format!(
            "key length {} differs from value length {}",
            sk[1], sv[1]
        )));
    }
    if sq[0] != sk[0] || sk[0] != sv[0] {
        return Err(VsaError::shape(format!(
            "attention batch mismatch: {} / {} / {}",
            sq[0], sk[0], sv[0]
        )));
    }
    let (b, lq, lk) = (sq[0], sq[1], sk[1]);
    let (h, hd) = (cfg.heads, cfg.head_dim());
    let split = |tape: &mut Tape<T>, x: Var, len: usize| -> Result<Var> {
        let r = tape.reshape(x, &[b, len, h, hd])?;
        let p = tape.permute(r, &[0, 2, 1, 3])?;
        tape.reshape(p, &[b * h, len, hd])
    };
    let qh = split(tape, q, lq)?;
    let kh = split(tape, k, lk)?;
    let vh = split(tape, v, lk)?;
    let scores = tape.matmul_nt(qh, kh)?;
    let scores = tape.scale(scores, T::one() / T::c(hd as f64).sqrt());
    let weights = tape.softmax(scores);
    let ctx = tape.matmul(weights, vh)?;
    let ctx = tape.reshape(ctx, &[b, h, lq, hd])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let out = tape.reshape(ctx, &[b, lq, cfg.dim])?;
    Ok((out, weights))
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        init: &mut Init<'_>,
    ) -> Self {
        let d = cfg.dim;
        MultiHeadAttention {
            cfg,
            q: Linear::new(store, &format!("{name}.q"), d, d, init),
            k: Linear::new(store, &format!("{name}.k"), d, d, init),
            v: Linear::new(store, &format!("{name}.v"), d, d, init),
            out: Linear::zeros(store, &format!("{name}.out"), d, d),
        }
    }

    /// Projected attention; the output length is always the query length.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, q: Var, k: Var, v: Var) -> Result<Var> {
        Ok(self.forward_with_weights(tape, p, q, k, v)?.0)
    }

    pub fn forward_with_weights<T: Float>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<(Var, Var)> {
        let (lk, lv) = (tape.shape(k).get(1).copied(), tape.shape(v).get(1).copied());
        if lk != lv {
            return Err(VsaError::shape(format!("key length {lk:?} differs from value length {lv:?}")));
        }
        if lk == Some(0) {
            return Err(VsaError::shape("attention over an empty key sequence"));
        }
        let qp = self.q.forward(tape, p, q)?;
        let kp = self.k.forward(tape, p, k)?;
        let vp = self.v.forward(tape, p, v)?;
        let (ctx, w) = scaled_dot_product(tape, qp, kp, vp, self.cfg)?;
        Ok((self.out.forward(tape, p, ctx)?, w))
    }
}

/// `x + attn(norm(x))`, then `x + mlp(norm(x))`.
#[derive(Clone, Debug)]
pub struct SelfAttentionBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl SelfAttentionBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        init: &mut Init<'_>,
    ) -> Self {
        SelfAttentionBlock {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, init),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.dim),
            mlp: Mlp::new(store, &format!("{name}.mlp"), cfg.dim, init),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, p, x)?;
        let a = self.attn.forward(tape, p, h, h, h)?;
        let x = tape.add(x, a)?;
        let h = self.norm2.forward(tape, p, x)?;
        let m = self.mlp.forward(tape, p, h)?;
        tape.add(x, m)
    }
}

/// Cross-attention whose residual stream is the query:
/// `q + attn(norm(q), norm(k), norm(v))`, then an MLP residual.
#[derive(Clone, Debug)]
pub struct CrossAttentionBlock {
    pub norm_q: LayerNorm,
    pub norm_k: LayerNorm,
    pub norm_v: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl CrossAttentionBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: AttentionConfig,
        init: &mut Init<'_>,
    ) -> Self {
        CrossAttentionBlock {
            norm_q: LayerNorm::new(store, &format!("{name}.norm_q"), cfg.dim),
            norm_k: LayerNorm::new(store, &format!("{name}.norm_k"), cfg.dim),
            norm_v: LayerNorm::new(store, &format!("{name}.norm_v"), cfg.dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), cfg, init),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.dim),
            mlp: Mlp::new(store, &format!("{name}.mlp"), cfg.dim, init),
        }
    }

    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        value: Var,
        key: Var,
        query: Var,
    ) -> Result<Var> {
        let (lk, lv) = (tape.shape(key)[1], tape.shape(value)[1]);
        if lk != lv {
            return Err(VsaError::shape(format!(
                "cross-attention key length {lk} differs from value length {lv}"
            )));
        }
        let qn = self.norm_q.forward(tape, p, query)?;
        let kn = self.norm_k.forward(tape, p, key)?;
        let vn = self.norm_v.forward(tape, p, value)?;
        let a = self.attn.forward(tape, p, qn, kn, vn)?;
        let x = tape.add(query, a)?;
        let h = self.norm2.forward(tape, p, x)?;
        let m = self.mlp.forward(tape, p, h)?;
        tape.add(x, m)
    }
}

fn patch_grid(shape: &[usize], p: usize) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, c, hh, ww) = match *shape {
        [c, h, w] => (1, c, h, w),
        [b, c, h, w] => (b, c, h, w),
        _ => return Err(VsaError::shape(format!("patchify expects [c,H,W] or [b,c,H,W], got {shape:?}"))),
    };
    if p == 0 || hh % p != 0 || ww % p != 0 {
        return Err(VsaError::shape(format!("image {hh}x{ww} is not divisible into {p}x{p} patches")));
    }
    Ok((b, c, hh / p, ww / p, p))
}

/// `[c, H, W] -> [(H/p)(W/p), c*p*p]` (or batched `[b, ..]`), patches in
/// row-major grid order, each flattened as `(channel, row, col)`.
pub fn patchify<T: Float>(image: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let batched = image.rank() == 4;
    let (b, c, gh, gw, p) = patch_grid(image.shape(), p)?;
    let x = image.reshape(vec![b, c, gh, p, gw, p])?.permute(&[0, 2, 4, 1, 3, 5])?;
    if batched {
        x.reshape(vec![b, gh * gw, c * p * p])
    } else {
        x.reshape(vec![gh * gw, c * p * p])
    }
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Float>(patches: &Tensor<T>, h: usize, w: usize, p: usize) -> Result<Tensor<T>> {
    let (b, n, len, batched) = match *patches.shape() {
        [n, len] => (1, n, len, false),
        [b, n, len] => (b, n, len, true),
        ref s => return Err(VsaError::shape(format!("unpatchify expects [N, c*p*p], got {s:?}"))),
    };
    if p == 0 || h % p != 0 || w % p != 0 || n != (h / p) * (w / p) || len % (p * p) != 0 {
        return Err(VsaError::shape(format!(
            "{n} patches of length {len} do not tile a {h}x{w} image with patch {p}"
        )));
    }
    let (gh, gw, c) = (h / p, w / p, len / (p * p));
    let x = patches.reshape(vec![b, gh, gw, c, p, p])?.permute(&[0, 3, 1, 4, 2, 5])?;
    if batched {
        x.reshape(vec![b, c, h, w])
    } else {
        x.reshape(vec![c, h, w])
    }
}

/// Tape version of [`patchify`] for batched `[b, c, H, W]` inputs.
pub fn patchify_var<T: Float>(tape: &mut Tape<T>, images: Var, p: usize) -> Result<Var> {
    let (b, c, gh, gw, p) = patch_grid(tape.shape(images), p)?;
    let x = tape.reshape(images, &[b, c, gh, p, gw, p])?;
    let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
    tape.reshape(x, &[b, gh * gw, c * p * p])
}

/// Tape version of [`unpatchify`] for batched `[b, N, c*p*p]` inputs.
pub fn unpatchify_var<T: Float>(tape: &mut Tape<T>, patches: Var, h: usize, w: usize, p: usize) -> Result<Var> {
    let shape = tape.shape(patches).to_vec();
    let [b, n, len] = shape[..] else {
        return Err(VsaError::shape(format!("unpatchify expects [b, N, c*p*p], got {shape:?}")));
    };
    if p == 0 || h % p != 0 || w % p != 0 || n != (h / p) * (w / p) || len % (p * p) != 0 {
        return Err(VsaError::shape(format!(
            "{n} patches of length {len} do not tile a {h}x{w} image with patch {p}"
        )));
    }
    let (gh, gw, c) = (h / p, w / p, len / (p * p));
    let x = tape.reshape(patches, &[b, gh, gw, c, p, p])?;
    let x = tape.permute(x, &[0, 3, 1, 4, 2, 5])?;
    tape.reshape(x, &[b, c, h, w])
}

/// Fixed 2-D sine/cosine embedding for a square patch grid.
///
/// The first half of the width encodes the grid row, the second half the
/// column; within each half, even slots hold `sin(pos * w_f)` and odd slots
/// `cos(pos * w_f)` with `w_f = 10000^(-2f / half)`.
pub fn sincos_pos_embed<T: Float>(num_patches: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(VsaError::invalid(format!("positional embedding width must be even, got {dim}")));
    }
    let side = (num_patches as f64).sqrt().round() as usize;
    if side * side != num_patches || num_patches == 0 {
        return Err(VsaError::invalid(format!("{num_patches} patches do not form a square grid")));
    }
    let half = dim / 2;
    let axis_embed = |pos: usize, j: usize| -> f64 {
        let f = (j / 2) as f64;
        let omega = 10000f64.powf(-2.0 * f / half as f64);
        let a = pos as f64 * omega;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    };
    Ok(Tensor::from_fn([num_patches, dim], |i| {
        let (patch, j) = (i / dim, i % dim);
        let (row, col) = (patch / side, patch % side);
        T::c(if j < half { axis_embed(row, j) } else { axis_embed(col, j - half) })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, standard_normal};

    fn setup(dim: usize, heads: usize) -> (ParamStore<f64>, AttentionConfig) {
        (ParamStore::new(), AttentionConfig::new(dim, heads).unwrap())
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(seed, &[]);
        Tensor::from_fn(shape.to_vec(), |_| standard_normal(&mut rng))
    }

    #[test]
    fn attention_config_rejects_indivisible_width() {
        assert!(AttentionConfig::new(10, 3).is_err());
        assert_eq!(AttentionConfig::new(64, 4).unwrap().head_dim(), 16);
    }

    #[test]
    fn output_length_follows_the_query() {
        let (mut store, cfg) = setup(8, 2);
        let mut rng = rng_for(0, &[]);
        let mha = MultiHeadAttention::new(&mut store, "a", cfg, &mut Init { rng: &mut rng, std: 0.02 });
        for lq in [1usize, 4, 16, 49] {
            for lk in [1usize, 16, 32, 64] {
                let mut tape = Tape::new();
                let p = store.bind(&mut tape, |_| false);
                let q = tape.constant(randn(&[1, lq, 8], 1));
                let k = tape.constant(randn(&[1, lk, 8], 2));
                let (o, w) = mha.forward_with_weights(&mut tape, &p, q, k, k).unwrap();
                assert_eq!(tape.shape(o), &[1, lq, 8]);
                for row in tape.value(w).data().chunks(lk) {
                    assert!(row.iter().all(|&x| x >= 0.0));
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn forty_nine_queries_over_two_fused_views() {
        let cfg = AttentionConfig::new(16, 4).unwrap();
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(randn(&[1, 49, 16], 3));
        let kv = tape.constant(randn(&[1, 98, 16], 4));
        let (o, _) = scaled_dot_product(&mut tape, q, kv, kv, cfg).unwrap();
        assert_eq!(tape.shape(o), &[1, 49, 16]);
    }

    #[test]
    fn single_key_broadcasts_the_value_row() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(randn(&[1, 5, 4], 5));
        let k = tape.constant(randn(&[1, 1, 4], 6));
        let v = tape.constant(randn(&[1, 1, 4], 7));
        let (o, _) = scaled_dot_product(&mut tape, q, k, v, cfg).unwrap();
        let vrow = tape.value(v).data().to_vec();
        for row in tape.value(o).data().chunks(4) {
            for (a, b) in row.iter().zip(&vrow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let cfg = AttentionConfig::new(4, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(randn(&[1, 3, 4], 8));
        let row = randn(&[1, 1, 4], 9);
        let k = tape.constant(Tensor::concat(&[&row, &row, &row, &row, &row, &row], 1).unwrap());
        let (_, w) = scaled_dot_product(&mut tape, q, k, k, cfg).unwrap();
        for &x in tape.value(w).data() {
            assert!((x - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_errors() {
        let cfg = AttentionConfig::new(4, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(randn(&[1, 3, 4], 1));
        let k = tape.constant(randn(&[1, 2, 4], 2));
        let v = tape.constant(randn(&[1, 3, 4], 3));
        let wide = tape.constant(randn(&[1, 2, 6], 4));
        assert!(scaled_dot_product(&mut tape, q, k, v, cfg).is_err());
        assert!(scaled_dot_product(&mut tape, q, wide, wide, cfg).is_err());
    }

    #[test]
    fn zero_weight_blocks_are_identities() {
        let (mut store, cfg) = setup(64, 4);
        let mut rng = rng_for(0, &[]);
        let mut init = Init { rng: &mut rng, std: 0.0 };
        let sb = SelfAttentionBlock::new(&mut store, "s", cfg, &mut init);
        let cb = CrossAttentionBlock::new(&mut store, "c", cfg, &mut init);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| true);
        let x = tape.constant(randn(&[2, 16, 64], 10));
        let y = sb.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 16, 64]);
        assert_eq!(tape.value(y), tape.value(x));
        let kv = tape.constant(randn(&[2, 32, 64], 11));
        let z = cb.forward(&mut tape, &p, kv, kv, x).unwrap();
        assert_eq!(tape.value(z), tape.value(x));
    }

    #[test]
    fn cross_block_lengths() {
        let (mut store, cfg) = setup(8, 2);
        let mut rng = rng_for(0, &[]);
        let cb = CrossAttentionBlock::new(&mut store, "c", cfg, &mut Init { rng: &mut rng, std: 0.02 });
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| true);
        let q = tape.constant(randn(&[1, 16, 8], 1));
        let kv16 = tape.constant(randn(&[1, 16, 8], 2));
        let kv32 = tape.constant(randn(&[1, 32, 8], 3));
        let o = cb.forward(&mut tape, &p, kv16, kv16, q).unwrap();
        assert_eq!(tape.shape(o), &[1, 16, 8]);
        let o = cb.forward(&mut tape, &p, kv32, kv32, q).unwrap();
        assert_eq!(tape.shape(o), &[1, 16, 8]);
        assert!(cb.forward(&mut tape, &p, kv16, kv32, q).is_err());
    }

    #[test]
    fn patchify_examples() {
        let img = randn(&[3, 32, 32], 20);
        let p = patchify(&img, 8).unwrap();
        assert_eq!(p.shape(), &[16, 192]);
        assert_eq!(unpatchify(&p, 32, 32, 8).unwrap(), img);
        let single = patchify(&img, 32).unwrap();
        assert_eq!(single.shape(), &[1, 3 * 32 * 32]);
        assert!(patchify(&img, 5).is_err());
        assert!(unpatchify(&p, 32, 32, 4).is_err());
        // patch 1 (grid row 0, col 1), channel 2, row 3, col 4
        assert_eq!(p.at(&[1, 2 * 64 + 3 * 8 + 4]), img.at(&[2, 3, 12]));
    }

    #[test]
    fn tape_patchify_matches_tensor_version() {
        let imgs = randn(&[2, 3, 16, 16], 21);
        let mut tape = Tape::new();
        let x = tape.constant(imgs.clone());
        let pv = patchify_var(&mut tape, x, 8).unwrap();
        assert_eq!(tape.value(pv), &patchify(&imgs, 8).unwrap());
        let back = unpatchify_var(&mut tape, pv, 16, 16, 8).unwrap();
        assert_eq!(tape.value(back), &imgs);
    }

    #[test]
    fn sincos_examples() {
        let e = sincos_pos_embed::<f64>(16, 64).unwrap();
        assert_eq!(e.shape(), &[16, 64]);
        assert!(e.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(e, sincos_pos_embed::<f64>(16, 64).unwrap());
        assert!(sincos_pos_embed::<f64>(16, 63).is_err());
        // distinct patches get distinct rows
        assert_ne!(e.narrow(0, 0, 1).unwrap().data(), e.narrow(0, 5, 1).unwrap().data());
    }
}
