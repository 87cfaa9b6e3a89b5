//! The view-synthesis autoencoder: a ViT encoder over source views and a
//! cross-attention decoder queried by the target pose.
//!
//! Forward pass for one batch:
//!
//! 1. each source image is patchified, embedded, given a fixed sin/cos
//!    position, masked, run through the encoder and projected to the decoder
//!    width (the *value* stream);
//! 2. the source pose embeddings, with masked rows dropped, form the *key*;
//! 3. values and keys of all sources are concatenated along the sequence;
//! 4. the target pose embedding is the *query*; `dec_cross` cross blocks
//!    followed by self blocks and a pixel head produce one patch per query
//!    token.

use serde::{Deserialize, Serialize};

use crate::blocks::{
    patchify_var, sincos_pos_embed, unpatchify_var, AttentionConfig, CrossAttentionBlock, LayerNorm, Linear,
    SelfAttentionBlock,
};
use crate::camera::{pooled_ray_tokens, CameraPose, Rig};
use crate::error::{Result, VsaError};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::rng::{permutation, rng_for, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Float, Tensor};

pub const INIT_STD: f64 = 0.02;
const INIT_TAG: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    /// Learnable `(n, patches, dec_dim)` table indexed by rig view.
    Discrete,
    /// Per-patch pooled `concat(origin, direction)` rays, linearly lifted.
    Ray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VsaConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub enc_dim: usize,
    pub enc_depth: usize,
    pub enc_heads: usize,
    pub dec_dim: usize,
    /// Total decoder blocks, cross-attention blocks included.
    pub dec_depth: usize,
    pub dec_cross: usize,
    pub dec_heads: usize,
    pub n_views: usize,
    pub num_source_views: usize,
    pub mask_ratio: f64,
    pub pose_mode: PoseMode,
}

impl Default for VsaConfig {
    fn default() -> Self {
        VsaConfig {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            enc_dim: 192,
            enc_depth: 6,
            enc_heads: 3,
            dec_dim: 384,
            dec_depth: 4,
            dec_cross: 2,
            dec_heads: 6,
            n_views: 12,
            num_source_views: 1,
            mask_ratio: 0.0,
            pose_mode: PoseMode::Discrete,
        }
    }
}

impl VsaConfig {
    /// Image 32, patch 8, encoder 64 wide and 2 deep, decoder 64 wide, 4 deep
    /// with 2 cross blocks.
    pub fn tiny() -> Self {
        VsaConfig {
            enc_dim: 64,
            enc_depth: 2,
            enc_heads: 4,
            dec_dim: 64,
            dec_heads: 4,
            ..VsaConfig::default()
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(VsaError::Config(msg));
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        if self.enc_dim % 2 != 0 {
            return bad(format!("enc_dim {} must be even for the sin/cos embedding", self.enc_dim));
        }
        AttentionConfig::new(self.enc_dim, self.enc_heads).map_err(|e| VsaError::Config(e.to_string()))?;
        AttentionConfig::new(self.dec_dim, self.dec_heads).map_err(|e| VsaError::Config(e.to_string()))?;
        if self.enc_depth == 0 {
            return bad("enc_depth must be at least 1".into());
        }
        if self.dec_cross == 0 {
            return bad("dec_cross must be at least 1: without a cross block the decoder never sees the source".into());
        }
        if self.dec_cross > self.dec_depth {
            return bad(format!("dec_cross {} exceeds dec_depth {}", self.dec_cross, self.dec_depth));
        }
        if self.n_views == 0 || self.num_source_views == 0 {
            return bad("n_views and num_source_views must be positive".into());
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} must lie in [0, 1)", self.mask_ratio));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the architecture, stored in checkpoints.
    pub fn fingerprint(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Number of tokens kept out of `n` at the given mask ratio (at least one).
pub fn kept_count(n: usize, ratio: f64) -> usize {
    (((1.0 - ratio) * n as f64).round() as usize).clamp(1, n)
}

/// Uniformly chosen kept positions, sorted ascending.
pub fn mask_indices(n: usize, ratio: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(VsaError::invalid(format!("mask ratio {ratio} must lie in [0, 1)")));
    }
    if ratio == 0.0 {
        return Ok((0..n).collect());
    }
    let mut kept: Vec<usize> = permutation(rng, n).into_iter().take(kept_count(n, ratio)).collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Drop a random subset of rows of `tokens: [N, dim]`.
pub fn mask_patches<T: Float>(tokens: &Tensor<T>, ratio: f64, rng: &mut Rng) -> Result<(Tensor<T>, Vec<usize>)> {
    if tokens.rank() != 2 {
        return Err(VsaError::shape(format!("mask_patches expects [N, dim], got {:?}", tokens.shape())));
    }
    let kept = mask_indices(tokens.shape()[0], ratio, rng)?;
    Ok((tokens.index_select(0, &kept)?, kept))
}

/// Rig view index plus the camera it stands for. Discrete mode reads the
/// index, ray mode the camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPose {
    pub index: usize,
    pub camera: CameraPose,
}

/// Kept token indices, `[source][batch] -> indices`.
pub type Masks = Vec<Vec<Vec<usize>>>;

/// One training batch. Images are `[B, c, H, W]`.
#[derive(Clone, Debug)]
pub struct VsaBatch<T: Float> {
    pub sources: Vec<Tensor<T>>,
    pub source_poses: Vec<Vec<ViewPose>>,
    pub target_poses: Vec<ViewPose>,
    pub targets: Tensor<T>,
}

impl<T: Float> VsaBatch<T> {
    pub fn batch_size(&self) -> usize {
        self.targets.shape()[0]
    }

    /// Random images and rig poses, for shape and gradient tests.
    pub fn synthetic(cfg: &VsaConfig, batch: usize, seed: u64) -> Result<Self> {
        use rand::Rng as _;
        cfg.validate()?;
        let mut rng = rng_for(seed, &[]);
        let (c, h) = (cfg.channels, cfg.image_size);
        let rig = Rig::new(cfg.n_views);
        let image = |rng: &mut Rng| Tensor::from_fn([batch, c, h, h], |_| T::c(rng.gen::<f64>()));
        let sources = (0..cfg.num_source_views).map(|_| image(&mut rng)).collect();
        let targets = image(&mut rng);
        let pose = |rng: &mut Rng| -> Result<ViewPose> {
            let index = rng.gen_range(0..cfg.n_views);
            Ok(ViewPose { index, camera: rig.pose(index, h, h)? })
        };
        let source_poses = (0..cfg.num_source_views)
            .map(|_| (0..batch).map(|_| pose(&mut rng)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let target_poses = (0..batch).map(|_| pose(&mut rng)).collect::<Result<Vec<_>>>()?;
        Ok(VsaBatch { sources, source_poses, target_poses, targets })
    }

    /// Draw kept indices for every source of every sample at `cfg.mask_ratio`.
    pub fn draw_masks(&self, cfg: &VsaConfig, rng: &mut Rng) -> Result<Masks> {
        let n = cfg.num_patches();
        (0..self.sources.len())
            .map(|_| (0..self.batch_size()).map(|_| mask_indices(n, cfg.mask_ratio, rng)).collect())
            .collect()
    }
}

#[derive(Clone, Debug)]
pub enum PoseEmbedding {
    Table(ParamId),
    RayLift(Linear),
}

#[derive(Clone, Debug)]
pub struct VsaModel<T: Float> {
    pub cfg: VsaConfig,
    pub params: ParamStore<T>,
    pub patch_embed: Linear,
    pub pos_embed: Tensor<T>,
    pub enc_blocks: Vec<SelfAttentionBlock>,
    pub enc_norm: LayerNorm,
    pub enc_to_dec: Linear,
    pub pose: PoseEmbedding,
    pub cross_blocks: Vec<CrossAttentionBlock>,
    pub dec_blocks: Vec<SelfAttentionBlock>,
    pub dec_norm: LayerNorm,
    pub pixel_head: Linear,
}

/// Parameter-name prefix of everything the encoder owns.
pub const ENCODER_PREFIX: &str = "encoder.";

pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with(ENCODER_PREFIX)
}

impl<T: Float> VsaModel<T> {
    pub fn new(cfg: VsaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(seed, &[INIT_TAG]);
        let mut init = Init { rng: &mut rng, std: INIT_STD };
        let mut store = ParamStore::new();
        let n = cfg.num_patches();
        let enc_attn = AttentionConfig::new(cfg.enc_dim, cfg.enc_heads)?;
        let dec_attn = AttentionConfig::new(cfg.dec_dim, cfg.dec_heads)?;

        let patch_embed = Linear::new(&mut store, "encoder.patch_embed", cfg.patch_len(), cfg.enc_dim, &mut init);
        let enc_blocks = (0..cfg.enc_depth)
            .map(|i| SelfAttentionBlock::new(&mut store, &format!("encoder.block{i}"), enc_attn, &mut init))
            .collect();
        let enc_norm = LayerNorm::new(&mut store, "encoder.norm", cfg.enc_dim);

        let enc_to_dec = Linear::new(&mut store, "decoder.enc_proj", cfg.enc_dim, cfg.dec_dim, &mut init);
        let pose = match cfg.pose_mode {
            PoseMode::Discrete => {
                let table = init.trunc_normal(&[cfg.n_views, n, cfg.dec_dim]);
                PoseEmbedding::Table(store.add("decoder.pose_table", table))
            }
            PoseMode::Ray => PoseEmbedding::RayLift(Linear::new(&mut store, "decoder.ray_lift", 6, cfg.dec_dim, &mut init)),
        };
        let cross_blocks = (0..cfg.dec_cross)
            .map(|i| CrossAttentionBlock::new(&mut store, &format!("decoder.cross{i}"), dec_attn, &mut init))
            .collect();
        let dec_blocks = (cfg.dec_cross..cfg.dec_depth)
            .map(|i| SelfAttentionBlock::new(&mut store, &format!("decoder.block{i}"), dec_attn, &mut init))
            .collect();
        let dec_norm = LayerNorm::new(&mut store, "decoder.norm", cfg.dec_dim);
        let pixel_head = Linear::new(&mut store, "decoder.head", cfg.dec_dim, cfg.patch_len(), &mut init);

        Ok(VsaModel {
            pos_embed: sincos_pos_embed(n, cfg.enc_dim)?,
            cfg,
            params: store,
            patch_embed,
            enc_blocks,
            enc_norm,
            enc_to_dec,
            pose,
            cross_blocks,
            dec_blocks,
            dec_norm,
            pixel_head,
        })
    }

    /// Same architecture with every tensor converted to another precision.
    pub fn cast<U: Float>(&self) -> VsaModel<U> {
        VsaModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            patch_embed: self.patch_embed.clone(),
            pos_embed: self.pos_embed.cast(),
            enc_blocks: self.enc_blocks.clone(),
            enc_norm: self.enc_norm.clone(),
            enc_to_dec: self.enc_to_dec.clone(),
            pose: self.pose.clone(),
            cross_blocks: self.cross_blocks.clone(),
            dec_blocks: self.dec_blocks.clone(),
            dec_norm: self.dec_norm.clone(),
            pixel_head: self.pixel_head.clone(),
        }
    }

    /// Zero the discrete pose table (no-op in ray mode). Every target pose
    /// then looks the same to the decoder.
    pub fn zero_pose_embedding(&mut self) {
        if let PoseEmbedding::Table(id) = self.pose {
            let shape = self.params.get(id).shape().to_vec();
            *self.params.get_mut(id) = Tensor::zeros(shape);
        }
    }

    pub fn pose_table(&self) -> Option<&Tensor<T>> {
        match self.pose {
            PoseEmbedding::Table(id) => Some(self.params.get(id)),
            PoseEmbedding::RayLift(_) => None,
        }
    }

    fn check_images(&self, shape: &[usize]) -> Result<()> {
        let c = &self.cfg;
        if shape.len() != 4 || shape[1..] != [c.channels, c.image_size, c.image_size] {
            return Err(VsaError::shape(format!(
                "expected images [B, {}, {}, {}], got {shape:?}",
                c.channels, c.image_size, c.image_size
            )));
        }
        Ok(())
    }

    /// Encoder: `[B, c, H, W]` images to `[B, M, enc_dim]` tokens, keeping
    /// only the rows in `kept` (all rows when `None`).
    pub fn encode(&self, tape: &mut Tape<T>, p: &Bound, images: Var, kept: Option<&[Vec<usize>]>) -> Result<Var> {
        self.check_images(tape.shape(images))?;
        let patches = patchify_var(tape, images, self.cfg.patch_size)?;
        let x = self.patch_embed.forward(tape, p, patches)?;
        let pos = tape.constant(self.pos_embed.clone());
        let mut x = tape.add(x, pos)?;
        if let Some(kept) = kept {
            if kept.iter().any(|k| k.iter().any(|&i| i >= self.cfg.num_patches())) {
                return Err(VsaError::invalid("kept index beyond the patch count"));
            }
            x = tape.gather_rows(x, kept)?;
        }
        for blk in &self.enc_blocks {
            x = blk.forward(tape, p, x)?;
        }
        self.enc_norm.forward(tape, p, x)
    }

    /// Mean over encoder tokens of unmasked images: `[B, enc_dim]`.
    pub fn pooled_features(&self, tape: &mut Tape<T>, p: &Bound, images: Var) -> Result<Var> {
        let tokens = self.encode(tape, p, images, None)?;
        tape.mean_axis(tokens, 1)
    }

    /// Pose embedding tokens `[B, patches, dec_dim]` for a batch of poses.
    pub fn pose_tokens(&self, tape: &mut Tape<T>, p: &Bound, poses: &[ViewPose]) -> Result<Var> {
        let c = &self.cfg;
        match &self.pose {
            PoseEmbedding::Table(id) => {
                let idx: Vec<usize> = poses.iter().map(|v| v.index).collect();
                if let Some(bad) = idx.iter().find(|&&i| i >= c.n_views) {
                    return Err(VsaError::invalid(format!("view index {bad} out of range for {} views", c.n_views)));
                }
                tape.index_select(p[*id], 0, &idx)
            }
            PoseEmbedding::RayLift(lift) => {
                let n = c.num_patches();
                let mut data = Vec::with_capacity(poses.len() * n * 6);
                for v in poses {
                    let rays = pooled_ray_tokens(&v.camera, c.image_size, c.image_size, c.patch_size)?;
                    data.extend(rays.data().iter().map(|&x| T::c(x)));
                }
                let rays = tape.constant(Tensor::new([poses.len(), n, 6], data)?);
                lift.forward(tape, p, rays)
            }
        }
    }

    /// Concatenate per-source values and keys along the sequence axis.
    pub fn fuse_sources(tape: &mut Tape<T>, values: &[Var], keys: &[Var]) -> Result<(Var, Var)> {
        if values.len() != keys.len() || values.is_empty() {
            return Err(VsaError::invalid(format!("{} values but {} keys", values.len(), keys.len())));
        }
        for (i, (&v, &k)) in values.iter().zip(keys).enumerate() {
            if tape.shape(v)[..2] != tape.shape(k)[..2] {
                return Err(VsaError::shape(format!(
                    "source {i}: value {:?} and key {:?} are not aligned",
                    tape.shape(v),
                    tape.shape(k)
                )));
            }
        }
        if values.len() == 1 {
            return Ok((values[0], keys[0]));
        }
        Ok((tape.concat(values, 1)?, tape.concat(keys, 1)?))
    }

    /// Decoder on decoder-width streams. Returns `[B, patches, c*p*p]`.
    ///
    /// Every cross block receives the same query. The first consumes the
    /// fused source value and key; each later one takes the previous block's
    /// output as its value. Since that output is aligned with the target
    /// tokens, later blocks reuse the shared source key only when its length
    /// equals the query length, and otherwise attend with the query as key.
    pub fn decode(&self, tape: &mut Tape<T>, p: &Bound, value: Var, key: Var, query: Var) -> Result<Var> {
        let n = self.cfg.num_patches();
        if tape.shape(query).get(1) != Some(&n) {
            return Err(VsaError::shape(format!(
                "query {:?} must hold one token per target patch ({n})",
                tape.shape(query)
            )));
        }
        let mut x = value;
        for (i, blk) in self.cross_blocks.iter().enumerate() {
            let k = if i == 0 || tape.shape(key)[1] == tape.shape(x)[1] { key } else { query };
            x = blk.forward(tape, p, x, k, query)?;
        }
        for blk in &self.dec_blocks {
            x = blk.forward(tape, p, x)?;
        }
        let x = self.dec_norm.forward(tape, p, x)?;
        self.pixel_head.forward(tape, p, x)
    }

    /// Full forward pass; returns synthesized targets `[B, c, H, W]`.
    pub fn forward_batch(&self, tape: &mut Tape<T>, p: &Bound, batch: &VsaBatch<T>, masks: &Masks) -> Result<Var> {
        let c = &self.cfg;
        let b = batch.batch_size();
        if batch.sources.len() != c.num_source_views || batch.source_poses.len() != c.num_source_views {
            return Err(VsaError::invalid(format!(
                "batch has {} source views, config expects {}",
                batch.sources.len(),
                c.num_source_views
            )));
        }
        if masks.len() != c.num_source_views || batch.target_poses.len() != b {
            return Err(VsaError::invalid("masks or target poses do not match the batch"));
        }
        // a mask that keeps every sorted index is the identity
        let full = masks.iter().flatten().all(|k| k.len() == c.num_patches());
        let mut values = Vec::with_capacity(c.num_source_views);
        let mut keys = Vec::with_capacity(c.num_source_views);
        for ((img, poses), kept) in batch.sources.iter().zip(&batch.source_poses).zip(masks) {
            if img.shape()[0] != b || poses.len() != b || kept.len() != b {
                return Err(VsaError::invalid("source batch sizes disagree"));
            }
            let x = tape.constant(img.clone());
            let enc = self.encode(tape, p, x, if full { None } else { Some(kept) })?;
            values.push(self.enc_to_dec.forward(tape, p, enc)?);
            let key = self.pose_tokens(tape, p, poses)?;
            keys.push(if full { key } else { tape.gather_rows(key, kept)? });
        }
        let (value, key) = Self::fuse_sources(tape, &values, &keys)?;
        let query = self.pose_tokens(tape, p, &batch.target_poses)?;
        let patches = self.decode(tape, p, value, key, query)?;
        unpatchify_var(tape, patches, c.image_size, c.image_size, c.patch_size)
    }

    /// Inference for one target view from `[c, H, W]` source images.
    pub fn synthesize(
        &self,
        sources: &[Tensor<T>],
        source_poses: &[ViewPose],
        target_pose: &ViewPose,
        mask_ratio: f64,
        rng: &mut Rng,
    ) -> Result<Tensor<T>> {
        let c = &self.cfg;
        if sources.len() != c.num_source_views || source_poses.len() != sources.len() {
            return Err(VsaError::invalid(format!(
                "{} source images and {} poses for a model with {} source views",
                sources.len(),
                source_poses.len(),
                c.num_source_views
            )));
        }
        let mut batch_sources = Vec::with_capacity(sources.len());
        for s in sources {
            let mut shape = vec![1];
            shape.extend_from_slice(s.shape());
            batch_sources.push(s.reshape(shape)?);
        }
        let targets = Tensor::zeros([1, c.channels, c.image_size, c.image_size]);
        let batch = VsaBatch {
            sources: batch_sources,
            source_poses: source_poses.iter().map(|p| vec![p.clone()]).collect(),
            target_poses: vec![target_pose.clone()],
            targets,
        };
        let n = c.num_patches();
        let masks = (0..sources.len())
            .map(|_| Ok(vec![mask_indices(n, mask_ratio, rng)?]))
            .collect::<Result<Masks>>()?;
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let out = self.forward_batch(&mut tape, &p, &batch, &masks)?;
        tape.value(out).reshape(vec![c.channels, c.image_size, c.image_size])
    }

    /// Inference features: per-image mean encoder token, `[B, enc_dim]`.
    pub fn features(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, |_| false);
        let x = tape.constant(images.clone());
        let f = self.pooled_features(&mut tape, &p, x)?;
        Ok(tape.value(f).clone())
    }
}

/// Pixel MSE over the whole target image.
pub fn vsa_loss<T: Float>(tape: &mut Tape<T>, synthesized: Var, target: &Tensor<T>) -> Result<Var> {
    tape.mse(synthesized, target)
}
