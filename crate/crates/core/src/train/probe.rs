//! Classification on top of the encoder: linear probing on frozen,
//! view-averaged features, and end-to-end fine-tuning.

use crate::blocks::Linear;
use crate::config::{FinetuneConfig, ProbeConfig};
use crate::data::augment::augment_image;
use crate::data::{AugmentPolicy, Dataset};
use crate::error::{Result, VsaError};
use crate::model::{is_encoder_param, VsaModel};
use crate::parallel::{par_map, thread_count};
use crate::params::ParamStore;
use crate::rng::{permutation, rng_for};
use crate::tape::Tape;
use crate::tensor::{Float, Tensor};
use crate::train::metrics::StepLog;
use crate::train::optim::{AdamW, Schedule};

const PROBE_ORDER_TAG: u64 = 0x9b0e;
const FT_ORDER_TAG: u64 = 0xf17e;
const FT_AUG_TAG: u64 = 0xf1a9;
/// Objects per feature-extraction call.
const FEATURE_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierResult {
    pub train_acc: f64,
    pub test_acc: f64,
    pub curve: Vec<StepLog>,
}

/// `k` evenly spaced view indices out of `n` (`k = 0` or `k >= n` means
/// all of them).
pub fn probe_views(n: usize, k: usize) -> Vec<usize> {
    if k == 0 || k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

fn stack_views<T: Float>(data: &Dataset, objects: &[usize], views: &[usize]) -> Result<Tensor<T>> {
    let (c, h, w) = (data.channels, data.height, data.width);
    let mut buf = Vec::with_capacity(objects.len() * views.len() * c * h * w);
    for &o in objects {
        for &v in views {
            buf.extend(data.samples[o].images[v].data().iter().map(|&x| T::c(x as f64)));
        }
    }
    Tensor::new([objects.len() * views.len(), c, h, w], buf)
}

/// Mean over `views` of the mean encoder token: `[objects, enc_dim]`.
pub fn view_features<T: Float>(model: &VsaModel<T>, data: &Dataset, views: &[usize]) -> Result<Tensor<f64>> {
    let d = model.cfg.enc_dim;
    let chunks: Vec<Vec<usize>> =
        (0..data.len()).collect::<Vec<_>>().chunks(FEATURE_CHUNK).map(<[usize]>::to_vec).collect();
    let parts = par_map(chunks.len(), thread_count(), |i| -> Result<Vec<f64>> {
        let objects = &chunks[i];
        let f = model.features(&stack_views::<T>(data, objects, views)?)?;
        let mut out = vec![0.0; objects.len() * d];
        for (row, feat) in f.data().chunks(d).enumerate() {
            let o = row / views.len();
            for (acc, &x) in out[o * d..(o + 1) * d].iter_mut().zip(feat) {
                *acc += x.as_f64() / views.len() as f64;
            }
        }
        Ok(out)
    });
    let mut all = Vec::with_capacity(data.len() * d);
    for p in parts {
        all.extend(p?);
    }
    Tensor::new([data.len(), d], all)
}

/// Per-column mean and standard deviation of `[n, d]` features.
pub fn feature_stats(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; d];
    for row in x.data().chunks(d) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut var = vec![0.0; d];
    for row in x.data().chunks(d) {
        var.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n as f64);
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(1e-8)).collect())
}

pub fn standardize(x: &Tensor<f64>, mean: &[f64], std: &[f64]) -> Tensor<f64> {
    let d = mean.len();
    Tensor::from_fn(x.shape().to_vec(), |i| (x.data()[i] - mean[i % d]) / std[i % d])
}

fn class_count(train: &Dataset, test: &Dataset) -> Result<usize> {
    let c = train.num_classes();
    if test.num_classes() > c {
        return Err(VsaError::invalid(format!(
            "test set has label {} but the training set only {} classes",
            test.num_classes() - 1,
            c
        )));
    }
    if c < 2 {
        return Err(VsaError::invalid("classification needs at least 2 classes in the training set"));
    }
    Ok(c)
}

fn labels(data: &Dataset) -> Vec<usize> {
    data.samples.iter().map(|s| s.label as usize).collect()
}

fn accuracy(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let c = logits.shape()[1];
    let hits = logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &l)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == l
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn head_logits(head: &Linear, store: &ParamStore<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, |_| false);
    let x = tape.constant(x.clone());
    let y = head.forward(&mut tape, &p, x)?;
    Ok(tape.value(y).clone())
}

/// Linear classifier on standardized `[n, d]` features, trained with AdamW
/// under the configured schedule.
pub fn train_linear(
    train_x: &Tensor<f64>,
    train_y: &[usize],
    test_x: &Tensor<f64>,
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ClassifierResult> {
    let (n, d) = (train_x.shape()[0], train_x.shape()[1]);
    let (mean, std) = feature_stats(train_x);
    let train_x = standardize(train_x, &mean, &std);
    let test_x = standardize(test_x, &mean, &std);

    let mut store = ParamStore::new();
    let head = Linear::zeros(&mut store, "head", d, classes);
    let mut opt = AdamW::new(&store, |_| true);
    let b = cfg.optim.batch_size.min(n);
    let spe = n.div_ceil(b) as u64;
    let schedule = Schedule::new(&cfg.optim, spe);
    let mut curve = Vec::new();
    for step in 0..schedule.total_steps {
        let (epoch, within) = (step / spe, (step % spe) as usize);
        let order = permutation(&mut rng_for(seed, &[PROBE_ORDER_TAG, epoch]), n);
        let rows = &order[within * b..((within + 1) * b).min(n)];
        let xb = train_x.index_select(0, rows)?;
        let yb: Vec<usize> = rows.iter().map(|&r| train_y[r]).collect();
        let lr = schedule.lr_at(step);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| true);
        let x = tape.constant(xb);
        let logits = head.forward(&mut tape, &p, x)?;
        let loss = tape.cross_entropy(logits, &yb)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(VsaError::NonFiniteLoss { step, loss: value });
        }
        tape.backward(loss)?;
        let grads: Vec<_> = p.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
        opt.step(&mut store, &grads, lr, &cfg.optim)?;
        curve.push(StepLog { step, lr, loss: value, acc: None });
    }
    Ok(ClassifierResult {
        train_acc: accuracy(&head_logits(&head, &store, &train_x)?, train_y),
        test_acc: accuracy(&head_logits(&head, &store, &test_x)?, test_y),
        curve,
    })
}

/// Frozen-encoder linear probe. The model is only read.
pub fn linear_probe<T: Float>(
    model: &VsaModel<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ClassifierResult> {
    if train.views != test.views {
        return Err(VsaError::invalid("train and test sets have different view counts"));
    }
    let classes = class_count(train, test)?;
    let views = probe_views(train.views, cfg.views);
    let train_x = view_features(model, train, &views)?;
    let test_x = view_features(model, test, &views)?;
    train_linear(&train_x, &labels(train), &test_x, &labels(test), classes, cfg, seed)
}

/// End-to-end fine-tuning of the encoder plus a linear head on
/// view-averaged pooled features. Returns the tuned model and accuracies.
pub fn finetune<T: Float>(
    mut model: VsaModel<T>,
    train: &Dataset,
    test: &Dataset,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<(VsaModel<T>, ClassifierResult)> {
    let classes = class_count(train, test)?;
    let views = probe_views(train.views, cfg.views);
    let k = views.len();
    let d = model.cfg.enc_dim;
    let n = train.len();
    let train_y = labels(train);

    let mut head_store = ParamStore::<T>::new();
    let head = Linear::zeros(&mut head_store, "head", d, classes);
    let mut enc_opt = AdamW::new(&model.params, is_encoder_param);
    let mut head_opt = AdamW::new(&head_store, |_| true);
    let b = cfg.optim.batch_size.min(n);
    let spe = n.div_ceil(b) as u64;
    let schedule = Schedule::new(&cfg.optim, spe);
    let mut curve = Vec::new();

    for step in 0..schedule.total_steps {
        let (epoch, within) = (step / spe, (step % spe) as usize);
        let order = permutation(&mut rng_for(seed, &[FT_ORDER_TAG, epoch]), n);
        let rows = &order[within * b..((within + 1) * b).min(n)];
        let images = augmented_views::<T>(train, rows, &views, cfg.augment, seed, step)?;
        let yb: Vec<usize> = rows.iter().map(|&r| train_y[r]).collect();
        let lr = schedule.lr_at(step);

        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, is_encoder_param);
        let hp_vars: Vec<_> = head_store.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        let hp = crate::params::Bound::from_vars(hp_vars);
        let x = tape.constant(images);
        let f = model.pooled_features(&mut tape, &p, x)?;
        let f = tape.reshape(f, &[rows.len(), k, d])?;
        let f = tape.mean_axis(f, 1)?;
        let logits = head.forward(&mut tape, &hp, f)?;
        let loss = tape.cross_entropy(logits, &yb)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(VsaError::NonFiniteLoss { step, loss: value });
        }
        tape.backward(loss)?;
        let grads: Vec<_> = p.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
        let head_grads: Vec<_> = hp.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
        drop(tape);
        enc_opt.step(&mut model.params, &grads, lr, &cfg.optim)?;
        head_opt.step(&mut head_store, &head_grads, lr, &cfg.optim)?;
        curve.push(StepLog { step, lr, loss: value, acc: None });
    }

    let head64 = head_store.cast::<f64>();
    let eval = |data: &Dataset| -> Result<f64> {
        let x = view_features(&model, data, &views)?;
        Ok(accuracy(&head_logits(&head, &head64, &x)?, &labels(data)))
    };
    let result = ClassifierResult { train_acc: eval(train)?, test_acc: eval(test)?, curve };
    Ok((model, result))
}

fn augmented_views<T: Float>(
    data: &Dataset,
    objects: &[usize],
    views: &[usize],
    policy: AugmentPolicy,
    seed: u64,
    step: u64,
) -> Result<Tensor<T>> {
    if policy.is_none() {
        return stack_views(data, objects, views);
    }
    let (c, h, w) = (data.channels, data.height, data.width);
    let mut buf = Vec::with_capacity(objects.len() * views.len() * c * h * w);
    for (i, &o) in objects.iter().enumerate() {
        let mut rng = rng_for(seed, &[FT_AUG_TAG, step, i as u64]);
        for &v in views {
            let img = augment_image(&data.samples[o].images[v], policy, &mut rng);
            buf.extend(img.data().iter().map(|&x| T::c(x as f64)));
        }
    }
    Tensor::new([objects.len() * views.len(), c, h, w], buf)
}
