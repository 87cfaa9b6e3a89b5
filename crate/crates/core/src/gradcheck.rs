//! Central finite-difference gradient checking at fp64.
//!
//! [`finite_diff_check`] compares tape gradients against numeric ones for a
//! scalar function of a set of leaf tensors. The `ops`, `blocks` and `model`
//! suites exercise every differentiable op, the attention blocks, and a
//! tiny end-to-end model.

use crate::blocks::{AttentionConfig, CrossAttentionBlock, SelfAttentionBlock};
use crate::error::Result;
use crate::model::{PoseMode, VsaBatch, VsaConfig, VsaModel};
use crate::params::{Init, ParamStore};
use crate::rng::{rng_for, standard_normal};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default central-difference step.
pub const FD_EPS: f64 = 1e-5;

pub const OPS_TOLERANCE: f64 = 1e-5;
pub const BLOCKS_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Max over all leaf entries of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` must build the same scalar on whatever tape it is handed; leaves are
/// passed as trainable vars for the analytic pass and as constants for the
/// numeric passes.
pub fn finite_diff_check<F>(leaves: &[Tensor<f64>], eps: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let analytic: Vec<Tensor<f64>> = if tape.requires_grad(loss) {
        tape.backward(loss)?;
        vars.iter()
            .zip(leaves)
            .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect()
    } else {
        leaves.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect()
    };

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut worst = 0.0f64;
    let mut inputs: Vec<Tensor<f64>> = leaves.to_vec();
    for (li, grad) in analytic.iter().enumerate() {
        for j in 0..leaves[li].numel() {
            let orig = leaves[li].data()[j];
            inputs[li].data_mut()[j] = orig + eps;
            let plus = eval(&inputs)?;
            inputs[li].data_mut()[j] = orig - eps;
            let minus = eval(&inputs)?;
            inputs[li].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Ops,
    Blocks,
    Model,
}

impl Level {
    pub fn tolerance(self) -> f64 {
        match self {
            Level::Ops => OPS_TOLERANCE,
            Level::Blocks => BLOCKS_TOLERANCE,
            Level::Model => MODEL_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckItem {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckItem {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn randn(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = rng_for(seed, &[0x6772_6164]);
    Tensor::from_fn(shape.to_vec(), |_| standard_normal(&mut rng) * scale)
}

fn item(name: &str, level: Level, err: f64) -> CheckItem {
    CheckItem { name: name.to_string(), max_rel_err: err, tolerance: level.tolerance() }
}

/// Run one level of the suite. With `inject_fault`, an extra item uses a
/// deliberately wrong GELU derivative and is expected to fail.
pub fn run_level(level: Level, inject_fault: bool) -> Result<Vec<CheckItem>> {
    let mut items = match level {
        Level::Ops => ops_suite()?,
        Level::Blocks => blocks_suite()?,
        Level::Model => model_suite()?,
    };
    if inject_fault {
        items.push(item("faulty_gelu", level, faulty_gelu_check()?));
    }
    Ok(items)
}

pub fn ops_suite() -> Result<Vec<CheckItem>> {
    let l = Level::Ops;
    let eps = FD_EPS;
    let mut out = Vec::new();

    let a = randn(&[3, 4], 1, 1.0);
    let b = randn(&[4, 2], 2, 1.0);
    out.push(item(
        "matmul",
        l,
        finite_diff_check(&[a.clone(), b.clone()], eps, |t, v| {
            let c = t.matmul(v[0], v[1])?;
            Ok(t.sum(c))
        })?,
    ));

    let ba = randn(&[2, 3, 4], 3, 1.0);
    let bb = randn(&[2, 5, 4], 4, 1.0);
    let w = randn(&[5, 3], 5, 1.0);
    out.push(item(
        "matmul_nt_batched",
        l,
        finite_diff_check(&[ba, bb, w], eps, |t, v| {
            let s = t.matmul_nt(v[0], v[1])?;
            let p = t.matmul(s, v[2])?;
            let q = t.mul(p, p)?;
            Ok(t.sum(q))
        })?,
    ));

    let x = randn(&[5], 6, 1.0);
    let wts = randn(&[5], 7, 1.0);
    out.push(item(
        "softmax",
        l,
        finite_diff_check(&[x], eps, |t, v| {
            let s = t.softmax(v[0]);
            let c = t.constant(wts.clone());
            let p = t.mul(s, c)?;
            Ok(t.sum(p))
        })?,
    ));

    let x = randn(&[3, 6], 8, 1.5);
    let g = randn(&[6], 9, 1.0);
    let bt = randn(&[6], 10, 1.0);
    let proj = randn(&[3, 6], 11, 1.0);
    out.push(item(
        "layer_norm",
        l,
        finite_diff_check(&[x, g, bt], eps, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            let c = t.constant(proj.clone());
            let p = t.mul(y, c)?;
            Ok(t.sum(p))
        })?,
    ));

    let x = randn(&[7], 12, 2.0);
    out.push(item(
        "gelu",
        l,
        finite_diff_check(&[x], eps, |t, v| {
            let y = t.gelu(v[0]);
            let q = t.mul(y, y)?;
            Ok(t.sum(q))
        })?,
    ));

    let a = randn(&[2, 3, 2], 13, 1.0);
    let b = randn(&[2, 1, 2], 14, 1.0);
    let wc = randn(&[2, 4, 2], 15, 1.0);
    out.push(item(
        "concat",
        l,
        finite_diff_check(&[a, b], eps, |t, v| {
            let c = t.concat(&[v[0], v[1]], 1)?;
            let k = t.constant(wc.clone());
            let p = t.mul(c, k)?;
            Ok(t.sum(p))
        })?,
    ));

    let pred = randn(&[2, 3], 16, 1.0);
    let target = randn(&[2, 3], 17, 1.0);
    out.push(item(
        "mse",
        l,
        finite_diff_check(&[pred], eps, |t, v| t.mse(v[0], &target))?,
    ));

    let logits = randn(&[4, 3], 18, 1.0);
    out.push(item(
        "cross_entropy",
        l,
        finite_diff_check(&[logits], eps, |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]))?,
    ));

    let x = randn(&[2, 4, 3], 19, 1.0);
    let wl = randn(&[3, 3, 2], 20, 1.0);
    out.push(item(
        "layout_ops",
        l,
        finite_diff_check(&[x], eps, |t, v| {
            let p = t.permute(v[0], &[2, 0, 1])?;
            let r = t.reshape(p, &[3, 2, 4])?;
            let n = t.narrow(r, 2, 1, 2)?;
            let s = t.index_select(n, 0, &[2, 0, 2])?;
            let g = t.gather_rows(s, &[vec![1], vec![0], vec![1]])?;
            let m = t.mean_axis(g, 1)?;
            let k = t.constant(wl.narrow(1, 0, 1)?.reshape(vec![3, 2])?);
            let q = t.mul(m, k)?;
            let sq = t.mul(q, q)?;
            Ok(t.mean(sq))
        })?,
    ));

    let a = randn(&[3, 4], 21, 1.0);
    let b = randn(&[4], 22, 1.0);
    out.push(item(
        "add_sub_scale",
        l,
        finite_diff_check(&[a.clone(), b], eps, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[0])?;
            let e = t.scale(d, 0.7);
            let f = t.mul(e, s)?;
            Ok(t.sum(f))
        })?,
    ));

    Ok(out)
}

pub fn blocks_suite() -> Result<Vec<CheckItem>> {
    let l = Level::Blocks;
    let cfg = AttentionConfig::new(8, 2)?;
    let mut store = ParamStore::<f64>::new();
    let mut rng = rng_for(31, &[]);
    let mut init = Init { rng: &mut rng, std: 0.3 };
    let sblock = SelfAttentionBlock::new(&mut store, "s", cfg, &mut init);
    let cblock = CrossAttentionBlock::new(&mut store, "c", cfg, &mut init);
    // zero-initialized projections would hide most of the backward path
    randomize(&mut store, 32, 0.3);
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let x = randn(&[2, 3, 8], 33, 1.0);
    let kv = randn(&[2, 5, 8], 34, 1.0);
    let key = randn(&[2, 5, 8], 35, 1.0);

    let mut leaves: Vec<Tensor<f64>> = store.iter().map(|(_, t)| t.clone()).collect();
    leaves.extend([x, kv, key]);
    let np = names.len();
    let rebuild = |v: &[Var]| crate::params::Bound::from_vars(v[..np].to_vec());
    let self_out = |t: &mut Tape<f64>, v: &[Var]| sblock.forward(t, &rebuild(v), v[np]);
    let cross_out = |t: &mut Tape<f64>, v: &[Var]| cblock.forward(t, &rebuild(v), v[np + 1], v[np + 2], v[np]);

    // Key biases have an exactly zero gradient (softmax ignores a shared
    // shift), so their numeric estimate is pure round-off of order
    // ulp(loss) / eps. Targets near the output keep the loss, and that
    // round-off, small.
    let near_output = |out: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, seed: u64| -> Result<Tensor<f64>> {
        let mut t = Tape::new();
        let v: Vec<Var> = leaves.iter().map(|l| t.constant(l.clone())).collect();
        let y = out(&mut t, &v)?;
        let y = t.value(y).clone();
        y.zip_map(&randn(y.shape(), seed, 0.1), |a, b| a + b)
    };
    let self_target = near_output(&self_out, 36)?;
    let cross_target = near_output(&cross_out, 37)?;

    let self_err = finite_diff_check(&leaves, FD_EPS, |t, v| {
        let y = self_out(t, v)?;
        t.mse(y, &self_target)
    })?;
    let cross_err = finite_diff_check(&leaves, FD_EPS, |t, v| {
        let y = cross_out(t, v)?;
        t.mse(y, &cross_target)
    })?;
    Ok(vec![item("self_attention_block", l, self_err), item("cross_attention_block", l, cross_err)])
}

/// Overwrite every parameter with N(0, std) draws; layer-norm gains are
/// drawn around 1 instead, so no normalized feature collapses to a constant.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64, std: f64) {
    let mut rng = rng_for(seed, &[0x7261_6e64]);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        let center = if store.name(id).ends_with(".gamma") { 1.0 } else { 0.0 };
        *store.get_mut(id) = Tensor::from_fn(shape, |_| center + standard_normal(&mut rng) * std);
    }
}

/// Full-model checks at image 16, patch 8, depths 1/2, one cross block:
/// discrete poses at widths 32/32, then ray poses with two masked sources
/// at widths 16/16.
pub fn model_suite() -> Result<Vec<CheckItem>> {
    let mut out = Vec::new();
    for (name, mode, sources, mask, width) in [
        ("model_discrete", PoseMode::Discrete, 1usize, 0.0, 32usize),
        ("model_ray_two_sources_masked", PoseMode::Ray, 2usize, 0.5, 16usize),
    ] {
        let cfg = VsaConfig {
            image_size: 16,
            patch_size: 8,
            channels: 3,
            enc_dim: width,
            enc_depth: 1,
            enc_heads: 2,
            dec_dim: width,
            dec_depth: 2,
            dec_cross: 1,
            dec_heads: 2,
            n_views: 4,
            num_source_views: sources,
            mask_ratio: mask,
            pose_mode: mode,
        };
        out.push(item(name, Level::Model, model_check(&cfg, 41)?));
    }
    Ok(out)
}

fn model_check(cfg: &VsaConfig, seed: u64) -> Result<f64> {
    let mut model = VsaModel::<f64>::new(cfg.clone(), seed)?;
    randomize(&mut model.params, seed + 1, 0.2);
    let batch = VsaBatch::synthetic(cfg, 1, seed + 2)?;
    let leaves: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();
    let masks = batch.draw_masks(cfg, &mut crate::rng::rng_for(seed + 3, &[]))?;
    // target near the prediction, as in the block checks
    let target = {
        let mut t = Tape::new();
        let bound = model.params.bind(&mut t, |_| false);
        let pred = model.forward_batch(&mut t, &bound, &batch, &masks)?;
        let y = t.value(pred).clone();
        y.zip_map(&randn(y.shape(), seed + 4, 0.1), |a, b| a + b)?
    };
    finite_diff_check(&leaves, FD_EPS, |t, v| {
        let bound = crate::params::Bound::from_vars(v.to_vec());
        let pred = model.forward_batch(t, &bound, &batch, &masks)?;
        t.mse(pred, &target)
    })
}

/// Negative control: a GELU whose backward is off by 50%.
pub fn faulty_gelu_check() -> Result<f64> {
    let x = randn(&[6], 51, 1.5);
    finite_diff_check(&[x], FD_EPS, |t, v| {
        let good = {
            let mut scratch = Tape::<f64>::new();
            let c = scratch.constant(t.value(v[0]).clone());
            let y = scratch.gelu(c);
            scratch.value(y).clone()
        };
        let y = t.custom(
            &[v[0]],
            good,
            Box::new(|ins, _out, g| {
                let x = ins[0];
                let mut scratch = Tape::<f64>::new();
                let xv = scratch.leaf(x.clone());
                let y = scratch.gelu(xv);
                let gc = scratch.constant(g.clone());
                let p = scratch.mul(y, gc).expect("same shape");
                let s = scratch.sum(p);
                scratch.backward(s).expect("scalar");
                vec![scratch.grad(xv).expect("grad").map(|d| d * 1.5)]
            }),
        );
        let q = t.mul(y, y)?;
        Ok(t.sum(q))
    })
}
