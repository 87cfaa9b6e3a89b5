//! View-synthesis pretraining.
//!
//! Every random draw of step `s` comes from the master seed and `s` (epoch
//! order, view pairs, augmentation, masks), so a run resumed from a
//! checkpoint replays exactly what the uninterrupted run would have done.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::augment::augment_image;
use crate::data::sampler::sample_pair;
use crate::data::{Dataset, ViewPair};
use crate::error::{Result, VsaError};
use crate::model::{vsa_loss, ViewPose, VsaBatch, VsaModel};
use crate::parallel::par_map;
use crate::rng::{permutation, rng_for};
use crate::tape::Tape;
use crate::tensor::{Float, Tensor};
use crate::train::checkpoint::Checkpoint;
use crate::train::metrics::{MetricsLog, StepLog};
use crate::train::optim::{AdamW, Schedule};

const ORDER_TAG: u64 = 0x0de7;
const SAMPLE_TAG: u64 = 0x5a4e;
const MASK_TAG: u64 = 0x4a5c;

pub const CHECKPOINT_FILE: &str = "checkpoint.vsack";
pub const METRICS_FILE: &str = "metrics.csv";

/// Order-sensitive digest of tensor bit patterns.
pub fn checksum<T: Float>(tensors: &[&Tensor<T>]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tensors {
        for &x in t.data() {
            for b in x.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// One assembled batch plus the view pairs it was built from.
pub struct Assembled<T: Float> {
    pub batch: VsaBatch<T>,
    pub objects: Vec<usize>,
    pub pairs: Vec<ViewPair>,
}

pub struct Pretrainer<'d, T: Float> {
    pub run: RunConfig,
    pub model: VsaModel<T>,
    pub opt: AdamW<T>,
    pub schedule: Schedule,
    pub step: u64,
    pub threads: usize,
    data: &'d Dataset,
    order: Option<(u64, Vec<usize>)>,
}

fn check_geometry(run: &RunConfig, data: &Dataset) -> Result<()> {
    let m = &run.model;
    if data.is_empty() {
        return Err(VsaError::invalid("training set is empty"));
    }
    if data.views != m.n_views || data.height != m.image_size || data.width != m.image_size || data.channels != m.channels
    {
        return Err(VsaError::Config(format!(
            "dataset has {} views of {}x{}x{}, model expects {} views of {}x{}x{}",
            data.views, data.channels, data.height, data.width, m.n_views, m.channels, m.image_size, m.image_size
        )));
    }
    Ok(())
}

impl<'d, T: Float> Pretrainer<'d, T> {
    pub fn new(run: RunConfig, data: &'d Dataset) -> Result<Self> {
        run.validate()?;
        check_geometry(&run, data)?;
        let model = VsaModel::new(run.model.clone(), run.seed)?;
        let opt = AdamW::new(&model.params, |_| true);
        Self::assemble(run, data, model, opt, 0)
    }

    pub fn resume(ck: &Checkpoint<T>, data: &'d Dataset) -> Result<Self> {
        check_geometry(&ck.config, data)?;
        let model = ck.model()?;
        let opt = ck.optimizer.clone().unwrap_or_else(|| AdamW::new(&model.params, |_| true));
        let mut run = ck.config.clone();
        run.seed = ck.seed;
        Self::assemble(run, data, model, opt, ck.step)
    }

    fn assemble(run: RunConfig, data: &'d Dataset, model: VsaModel<T>, opt: AdamW<T>, step: u64) -> Result<Self> {
        let spe = Self::steps_per_epoch_for(&run, data);
        let schedule = Schedule::new(&run.optim, spe);
        Ok(Pretrainer { run, model, opt, schedule, step, threads: 1, data, order: None })
    }

    fn steps_per_epoch_for(run: &RunConfig, data: &Dataset) -> u64 {
        let items = data.len() * run.train.pairs_per_object;
        items.div_ceil(run.optim.batch_size) as u64
    }

    pub fn steps_per_epoch(&self) -> u64 {
        Self::steps_per_epoch_for(&self.run, self.data)
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.total_steps
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::from_model(&self.model, Some(&self.opt), &self.run, self.step, self.run.seed)
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        let items = self.data.len() * self.run.train.pairs_per_object;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = rng_for(self.run.seed, &[ORDER_TAG, epoch]);
            self.order = Some((epoch, permutation(&mut rng, items)));
        }
        &self.order.as_ref().expect("just set").1
    }

    /// Build the batch of step `step`: view pairs, augmented sources and
    /// the untouched (unless ablated) targets.
    pub fn assemble_batch(&mut self, step: u64) -> Result<Assembled<T>> {
        let spe = self.steps_per_epoch();
        let (epoch, within) = (step / spe, step % spe);
        let b = self.run.optim.batch_size;
        let seed = self.run.seed;
        let ppo = self.run.train.pairs_per_object;
        let order = self.epoch_order(epoch);
        let start = within as usize * b;
        let positions: Vec<(usize, usize)> =
            (start..(start + b).min(order.len())).map(|pos| (pos, order[pos] / ppo)).collect();

        let data = self.data;
        let tcfg = &self.run.train;
        let m = &self.run.model;
        type Item<T> = (ViewPair, Vec<Tensor<T>>, Tensor<T>);
        let items: Vec<Result<Item<T>>> = par_map(positions.len(), self.threads, |i| {
            let (pos, object) = positions[i];
            let sample = &data.samples[object];
            let mut rng = rng_for(seed, &[SAMPLE_TAG, epoch, pos as u64]);
            let pair = sample_pair(tcfg.sampler, data.views, m.num_source_views, &mut rng)?;
            let sources = pair
                .sources
                .iter()
                .map(|&v| augment_image(&sample.images[v], tcfg.source_aug, &mut rng).cast())
                .collect();
            let target = sample.images[pair.target].clone();
            let target = if tcfg.target_aug.is_none() { target } else { augment_image(&target, tcfg.target_aug, &mut rng) };
            Ok((pair, sources, target.cast()))
        });
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;

        let n = items.len();
        let (c, h) = (m.channels, m.image_size);
        let stack = |imgs: Vec<&Tensor<T>>| -> Result<Tensor<T>> {
            let mut data = Vec::with_capacity(n * c * h * h);
            for t in imgs {
                data.extend_from_slice(t.data());
            }
            Tensor::new([n, c, h, h], data)
        };
        let sources = (0..m.num_source_views)
            .map(|s| stack(items.iter().map(|it| &it.1[s]).collect()))
            .collect::<Result<Vec<_>>>()?;
        let targets = stack(items.iter().map(|it| &it.2).collect())?;
        let pose = |object: usize, v: usize| ViewPose { index: v, camera: data.samples[object].poses[v].clone() };
        let source_poses = (0..m.num_source_views)
            .map(|s| positions.iter().zip(&items).map(|(&(_, o), it)| pose(o, it.0.sources[s])).collect())
            .collect();
        let target_poses = positions.iter().zip(&items).map(|(&(_, o), it)| pose(o, it.0.target)).collect();

        if tcfg.target_aug.is_none() {
            // sentinel: the assembled targets are the stored views, bit for bit
            let stored: Vec<Tensor<T>> =
                positions.iter().zip(&items).map(|(&(_, o), it)| data.samples[o].images[it.0.target].cast()).collect();
            if checksum(&stored.iter().collect::<Vec<_>>()) != checksum(&[&targets]) {
                return Err(VsaError::invalid("target images were modified during batch assembly"));
            }
        }

        Ok(Assembled {
            batch: VsaBatch { sources, source_poses, target_poses, targets },
            objects: positions.iter().map(|p| p.1).collect(),
            pairs: items.into_iter().map(|it| it.0).collect(),
        })
    }

    /// One optimizer step. Returns the logged loss.
    pub fn train_step(&mut self) -> Result<StepLog> {
        let step = self.step;
        let lr = self.schedule.lr_at(step);
        let assembled = self.assemble_batch(step)?;
        let mut rng = rng_for(self.run.seed, &[MASK_TAG, step]);
        let masks = assembled.batch.draw_masks(&self.run.model, &mut rng)?;
        let mut tape = Tape::new();
        let p = self.model.params.bind(&mut tape, |_| true);
        let out = self.model.forward_batch(&mut tape, &p, &assembled.batch, &masks)?;
        let loss = vsa_loss(&mut tape, out, &assembled.batch.targets)?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(VsaError::NonFiniteLoss { step, loss: value });
        }
        tape.backward(loss)?;
        let grads: Vec<_> = p.vars().iter().map(|&v| tape.grad(v).cloned()).collect();
        drop(tape);
        self.opt.step(&mut self.model.params, &grads, lr, &self.run.optim)?;
        self.step += 1;
        Ok(StepLog { step, lr, loss: value, acc: None })
    }
}

/// Outcome of [`pretrain`].
pub struct PretrainOutput<T: Float> {
    pub checkpoint: Checkpoint<T>,
    pub curve: Vec<StepLog>,
}

/// Where a pretraining run writes its files.
#[derive(Clone, Debug)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join(CHECKPOINT_FILE)
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join(METRICS_FILE)
    }
}

/// Train until the schedule ends or `max_steps` more steps have run,
/// logging every step and checkpointing at the configured cadence and at
/// the end.
pub fn run_pretraining<T: Float>(
    trainer: &mut Pretrainer<'_, T>,
    max_steps: Option<u64>,
    files: Option<&RunFiles>,
) -> Result<PretrainOutput<T>> {
    let mut log = match files {
        Some(f) => {
            trainer.run.write_to_dir(&f.dir)?;
            Some(MetricsLog::append(&f.metrics())?)
        }
        None => None,
    };
    let every = trainer.run.train.checkpoint_every;
    let stop = max_steps.map_or(trainer.total_steps(), |m| (trainer.step + m).min(trainer.total_steps()));
    let mut curve = Vec::new();
    while trainer.step < stop {
        let entry = trainer.train_step()?;
        if let Some(log) = log.as_mut() {
            log.write(&entry)?;
        }
        if entry.step % 100 == 0 {
            log::info!("step {} lr {:.3e} loss {:.5}", entry.step, entry.lr, entry.loss);
        }
        curve.push(entry);
        if let Some(f) = files {
            if every > 0 && trainer.step % every == 0 {
                trainer.checkpoint().save(&f.checkpoint())?;
            }
        }
    }
    let checkpoint = trainer.checkpoint();
    if let Some(f) = files {
        checkpoint.save(&f.checkpoint())?;
    }
    Ok(PretrainOutput { checkpoint, curve })
}

/// Fresh run of `run.optim.total_epochs` epochs.
pub fn pretrain<T: Float>(run: &RunConfig, data: &Dataset, files: Option<&Path>) -> Result<PretrainOutput<T>> {
    let mut trainer = Pretrainer::<T>::new(run.clone(), data)?;
    trainer.threads = crate::parallel::thread_count();
    let files = files.map(RunFiles::new);
    run_pretraining(&mut trainer, None, files.as_ref())
}
