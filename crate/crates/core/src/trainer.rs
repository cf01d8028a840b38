//! Paired-patch training loop.
//!
//! Every random choice (split, shuffle, crop, noise target) comes from its own
//! seeded stream keyed by epoch/step and sample index, so a run resumed from a
//! checkpoint continues exactly as the uninterrupted run would have.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{CropMode, LrSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::imageio::{crop_pair_with, load_paired_dataset, PairedSample};
use crate::losses::{total_loss, total_loss_with_grad, LossBreakdown};
use crate::model::{backward, forward_cached, forward_one, init_model, ModelParams, ParamGrads};
use crate::noise::noise_target_with;
use crate::optim::AdamState;
use crate::rng::{stream_rng, Stream};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const VAL_LOG: &str = "val_log.csv";
pub const TRAIN_LOG_HEADER: &str = "step,epoch,rec,decom,sps,noise,total";
pub const VAL_LOG_HEADER: &str = "epoch,rec,decom,sps,noise,total";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}.bin")
}

/// One optimizer step as it appears in the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based global step.
    pub step: u64,
    /// 1-based epoch.
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.epoch, l.rec, l.decom, l.sps, l.noise, l.total
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Learning rate at a 0-based step.
pub fn learning_rate(config: &TrainConfig, step: u64, total_steps: u64) -> f64 {
    match config.lr_schedule {
        LrSchedule::Constant => config.lr,
        LrSchedule::Cosine => {
            let t = if total_steps == 0 { 0.0 } else { step as f64 / total_steps as f64 };
            0.5 * config.lr * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
        }
    }
}

/// Loss and averaged parameter gradient of one batch. Noise targets are
/// drawn from the low images with seeds keyed by `(step, index)`.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[PairedSample],
    config: &TrainConfig,
    step: u64,
) -> Result<(LossBreakdown, ParamGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_sample: Vec<(LossBreakdown, ParamGrads)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = stream_rng(config.seed, Stream::NoiseTarget, step, i as u64);
            let target = noise_target_with(&s.low, config.photon_scale, config.weights.alpha, &mut rng)?;
            let (triple, cache) = forward_cached(params, &s.low)?;
            let (loss, tg) = total_loss_with_grad(&s.low, &s.high, &triple, &target, &config.weights)?;
            Ok((loss, backward(params, &cache, &tg)))
        })
        .collect::<Result<_>>()?;

    let inv = 1.0 / batch.len() as f64;
    let mut grads = ParamGrads::zeros_like(params);
    let mut losses = Vec::with_capacity(per_sample.len());
    for (loss, g) in &per_sample {
        grads.add_scaled(g, inv);
        losses.push(*loss);
    }
    let mut loss = LossBreakdown::mean(&losses);
    loss.total = config.weights.combine(loss.rec, loss.decom, loss.sps, loss.noise);
    Ok((loss, grads))
}

/// Forward, loss, backward and one Adam update. `step` is the 0-based global
/// step and keys the noise-target draws.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut AdamState,
    batch: &[PairedSample],
    config: &TrainConfig,
    step: u64,
    lr: f64,
) -> Result<LossBreakdown> {
    let (loss, mut grads) = batch_gradient(params, batch, config, step)?;
    if let Some((constituent, value)) = loss.non_finite() {
        return Err(Error::NonFiniteLoss {
            step: step + 1,
            constituent,
            value,
        });
    }
    if config.grad_clip > 0.0 {
        let norm = grads.norm();
        if norm > config.grad_clip {
            grads.scale(config.grad_clip / norm);
        }
    }
    opt.update(
        &config.adam(),
        lr,
        params.tensors_mut().iter_mut().map(|t| t.data.as_mut_slice()),
        &grads.tensors,
    );
    Ok(loss)
}

/// Deterministic hold-out split. Returns sorted (train, validation) indices.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Split, 0, 0));
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Visiting order of training pairs in a 0-based epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle, epoch as u64, 0));
    order
}

fn center_crop(s: &PairedSample, patch: usize) -> Result<PairedSample> {
    let (h, w, _) = s.low.dims();
    let ph = patch.min(h / 8 * 8);
    let pw = patch.min(w / 8 * 8);
    if ph == 0 || pw == 0 {
        return Err(Error::ImageTooSmall { height: h, width: w, min: 8 });
    }
    let (top, left) = ((h - ph) / 2, (w - pw) / 2);
    PairedSample::new(s.id.clone(), s.low.crop(top, left, ph, pw)?, s.high.crop(top, left, ph, pw)?)
}

/// Training state over an in-memory list of pairs.
pub struct Trainer {
    config: TrainConfig,
    params: ModelParams,
    opt: AdamState,
    epoch: usize,
    step: u64,
    history: Vec<f64>,
    train: Vec<PairedSample>,
    val: Vec<PairedSample>,
    fixed: Option<Vec<PairedSample>>,
}

impl Trainer {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: TrainConfig, samples: Vec<PairedSample>) -> Result<Self> {
        config.validate()?;
        let mut params = init_model(config.seed, config.width)?;
        params.set_noise_activation(config.noise_head_activation);
        let opt = AdamState::new(params.tensors().iter().map(|t| t.data.len()));
        Self::assemble(config, params, opt, 0, 0, Vec::new(), samples)
    }

    /// Continue from a checkpoint. `config.epochs` may be raised to extend a run.
    pub fn resume(ckpt: Checkpoint, samples: Vec<PairedSample>) -> Result<Self> {
        ckpt.config.validate()?;
        Self::assemble(
            ckpt.config,
            ckpt.params,
            ckpt.optimizer,
            ckpt.epoch,
            ckpt.step,
            ckpt.history,
            samples,
        )
    }

    fn assemble(
        config: TrainConfig,
        params: ModelParams,
        opt: AdamState,
        epoch: usize,
        step: u64,
        history: Vec<f64>,
        samples: Vec<PairedSample>,
    ) -> Result<Self> {
        let (train_idx, val_idx) = split_indices(samples.len(), config.val_fraction, config.seed);
        if train_idx.is_empty() {
            return Err(Error::TooFewImages {
                needed: val_idx.len() + 1,
                found: samples.len(),
            });
        }
        let mut slots: Vec<Option<PairedSample>> = samples.into_iter().map(Some).collect();
        let train: Vec<PairedSample> = train_idx.iter().map(|&i| slots[i].take().unwrap()).collect();
        let val = val_idx
            .iter()
            .map(|&i| center_crop(slots[i].as_ref().unwrap(), config.patch))
            .collect::<Result<Vec<_>>>()?;
        let fixed = match config.crop_mode {
            CropMode::Random => None,
            CropMode::Fixed => Some(
                train
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| crop_pair_with(s, config.patch, &mut stream_rng(config.seed, Stream::Crop, 0, i as u64)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(Trainer {
            config,
            params,
            opt,
            epoch,
            step,
            history,
            train,
            val,
            fixed,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut TrainConfig {
        &mut self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn validation_set(&self) -> &[PairedSample] {
        &self.val
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.train.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: self.opt.clone(),
            epoch: self.epoch,
            step: self.step,
            config: self.config.clone(),
            history: self.history.clone(),
        }
    }

    fn crops_for(&self, epoch: usize, indices: &[usize]) -> Result<Vec<PairedSample>> {
        match &self.fixed {
            Some(fixed) => Ok(indices.iter().map(|&i| fixed[i].clone()).collect()),
            None => indices
                .par_iter()
                .map(|&i| {
                    let mut rng = stream_rng(self.config.seed, Stream::Crop, epoch as u64 + 1, i as u64);
                    crop_pair_with(&self.train[i], self.config.patch, &mut rng)
                })
                .collect(),
        }
    }

    /// One pass over the training pairs. `on_step` sees each record as soon
    /// as it is produced.
    pub fn run_epoch(&mut self, mut on_step: impl FnMut(&StepRecord) -> Result<()>) -> Result<Vec<StepRecord>> {
        let epoch = self.epoch;
        let order = epoch_order(self.train.len(), self.config.seed, epoch);
        let total_steps = self.config.epochs as u64 * self.steps_per_epoch();
        let mut records = Vec::with_capacity(self.steps_per_epoch() as usize);
        for chunk in order.chunks(self.config.batch_size) {
            let batch = self.crops_for(epoch, chunk)?;
            let lr = learning_rate(&self.config, self.step, total_steps);
            let loss = train_step(&mut self.params, &mut self.opt, &batch, &self.config, self.step, lr)?;
            self.step += 1;
            let rec = StepRecord {
                step: self.step,
                epoch: epoch + 1,
                loss,
            };
            on_step(&rec)?;
            records.push(rec);
        }
        let mean = records.iter().map(|r| r.loss.total).sum::<f64>() / records.len().max(1) as f64;
        self.history.push(mean);
        self.epoch += 1;
        Ok(records)
    }

    /// Loss on the held-out pairs with fixed noise targets, or `None` when
    /// nothing is held out.
    pub fn validate(&self) -> Result<Option<LossBreakdown>> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let losses = self
            .val
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = stream_rng(self.config.seed, Stream::Validation, 0, i as u64);
                let target = noise_target_with(&s.low, self.config.photon_scale, self.config.weights.alpha, &mut rng)?;
                let triple = forward_one(&self.params, &s.low)?;
                total_loss(&s.low, &s.high, &triple, &target, &self.config.weights)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut loss = LossBreakdown::mean(&losses);
        loss.total = self.config.weights.combine(loss.rec, loss.decom, loss.sps, loss.noise);
        Ok(Some(loss))
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Steps run by this invocation (a resumed run omits earlier steps).
    pub log: Vec<StepRecord>,
    pub val_log: Vec<ValRecord>,
    /// Checkpoint files written, in order.
    pub checkpoints: Vec<PathBuf>,
}

/// CSV writer that keeps earlier rows up to a step when resuming.
struct CsvLog {
    out: BufWriter<File>,
}

impl CsvLog {
    fn open(path: &Path, header: &str, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let mut kept = Vec::new();
        if let Ok(f) = File::open(path) {
            for line in BufReader::new(f).lines().skip(1) {
                let line = line.map_err(|e| Error::io(path, e))?;
                if keep(&line) {
                    kept.push(line);
                }
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut log = CsvLog { out: BufWriter::new(f) };
        log.line(path, header)?;
        for l in kept {
            log.line(path, &l)?;
        }
        Ok(log)
    }

    fn line(&mut self, path: &Path, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(path, e))
    }
}

fn leading_number(line: &str) -> Option<u64> {
    line.split(',').next()?.parse().ok()
}

/// Drive a trainer to `config.epochs`, writing logs and checkpoints into
/// `run_dir` when given.
pub fn run_to_end(mut trainer: Trainer, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    let mut logs = match run_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let (step, epoch) = (trainer.step(), trainer.epoch() as u64);
            let tp = dir.join(TRAIN_LOG);
            let vp = dir.join(VAL_LOG);
            let t = CsvLog::open(&tp, TRAIN_LOG_HEADER, |l| leading_number(l).is_some_and(|s| s <= step))?;
            let v = CsvLog::open(&vp, VAL_LOG_HEADER, |l| leading_number(l).is_some_and(|e| e <= epoch))?;
            Some(((tp, t), (vp, v)))
        }
        None => None,
    };

    let every = trainer.config().checkpoint_every;
    let mut log = Vec::new();
    let mut val_log = Vec::new();
    let mut checkpoints = Vec::new();
    while !trainer.is_finished() {
        let records = trainer.run_epoch(|r| {
            if let Some(((tp, t), _)) = logs.as_mut() {
                t.line(tp, &r.csv_row())?;
            }
            Ok(())
        })?;
        let epoch = trainer.epoch();
        log::info!(
            "epoch {epoch}/{}: mean total {:.6}",
            trainer.config().epochs,
            trainer.history().last().copied().unwrap_or(f64::NAN)
        );
        log.extend(records);
        if let Some(loss) = trainer.validate()? {
            let rec = ValRecord { epoch, loss };
            if let Some((_, (vp, v))) = logs.as_mut() {
                let l = &rec.loss;
                v.line(vp, &format!("{},{},{},{},{},{}", epoch, l.rec, l.decom, l.sps, l.noise, l.total))?;
            }
            val_log.push(rec);
        }
        if let Some(((tp, t), (vp, v))) = logs.as_mut() {
            t.out.flush().map_err(|e| Error::io(tp.as_path(), e))?;
            v.out.flush().map_err(|e| Error::io(vp.as_path(), e))?;
        }
        if let Some(dir) = run_dir {
            if every > 0 && epoch.is_multiple_of(every) && !trainer.is_finished() {
                let p = dir.join(checkpoint_name(epoch));
                save_checkpoint(&trainer.checkpoint(), &p)?;
                checkpoints.push(p);
            }
        }
    }
    if let Some(((tp, t), (vp, v))) = logs.as_mut() {
        t.out.flush().map_err(|e| Error::io(tp.as_path(), e))?;
        v.out.flush().map_err(|e| Error::io(vp.as_path(), e))?;
    }
    let checkpoint = trainer.checkpoint();
    if let Some(dir) = run_dir {
        let p = dir.join(checkpoint_name(checkpoint.epoch));
        save_checkpoint(&checkpoint, &p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        val_log,
        checkpoints,
    })
}

/// Train from scratch on in-memory pairs.
pub fn train_samples(config: TrainConfig, samples: Vec<PairedSample>, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    run_to_end(Trainer::new(config, samples)?, run_dir)
}

/// Train on a `low/` + `high/` dataset directory.
pub fn train(config: TrainConfig, dataset_root: &Path, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    let samples = load_paired_dataset(dataset_root)?;
    train_samples(config, samples, run_dir)
}

/// Read a loss log back.
pub fn read_train_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRAIN_LOG_HEADER => {}
        _ => return Err(Error::Config(format!("{}: missing log header", path.display()))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let bad = || Error::Config(format!("{}: malformed row {l:?}", path.display()));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(StepRecord {
                step: f[0].parse().map_err(|_| bad())?,
                epoch: f[1].parse().map_err(|_| bad())?,
                loss: LossBreakdown {
                    rec: num(2)?,
                    decom: num(3)?,
                    sps: num(4)?,
                    noise: num(5)?,
                    total: num(6)?,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::Image;

    fn pairs(n: usize, size: usize) -> Vec<PairedSample> {
        (0..n)
            .map(|i| {
                let high = Image::from_fn(size, size, 3, |c, y, x| {
                    0.2 + 0.6 * (((x + 2 * y + c + i) % 7) as f64 / 6.0)
                });
                let low = high.map(|v| 0.2 * v);
                PairedSample::new(format!("p{i}"), low, high).unwrap()
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            width: 8,
            patch: 8,
            batch_size: 2,
            epochs: 2,
            val_fraction: 0.0,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn split_is_partition() {
        let (t, v) = split_indices(40, 0.05, 1);
        assert_eq!(v.len(), 2);
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn shuffle_is_permutation_and_varies() {
        let a = epoch_order(16, 9, 0);
        let b = epoch_order(16, 9, 1);
        let mut s = a.clone();
        s.sort_unstable();
        assert_eq!(s, (0..16).collect::<Vec<_>>());
        assert_ne!(a, b);
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let cfg = TrainConfig { epochs: 0, ..small_config() };
        let out = train_samples(cfg.clone(), pairs(3, 8), None).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.checkpoint.params, init_model(cfg.seed, cfg.width).unwrap());
        assert_eq!(out.checkpoint.step, 0);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let cfg = TrainConfig { lr: 0.0, ..small_config() };
        let out = train_samples(cfg.clone(), pairs(3, 16), None).unwrap();
        assert_eq!(out.checkpoint.params, init_model(cfg.seed, cfg.width).unwrap());
        assert_eq!(out.log.len(), 4);
    }

    #[test]
    fn logged_total_is_sum_of_constituents() {
        let cfg = small_config();
        let out = train_samples(cfg.clone(), pairs(4, 16), None).unwrap();
        for r in &out.log {
            let l = r.loss;
            let sum = cfg.weights.combine(l.rec, l.decom, l.sps, l.noise);
            assert!((sum - l.total).abs() <= 1e-12 * l.total.abs());
        }
    }

    #[test]
    fn log_and_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            checkpoint_every: 2,
            ..small_config()
        };
        let out = train_samples(cfg, pairs(3, 8), Some(dir.path())).unwrap();
        assert!(dir.path().join("ckpt_epoch2.bin").exists());
        assert!(dir.path().join("ckpt_epoch3.bin").exists());
        assert_eq!(out.checkpoints.len(), 2);
        let back = read_train_log(&dir.path().join(TRAIN_LOG)).unwrap();
        assert_eq!(back, out.log);
    }

    #[test]
    fn non_finite_loss_names_constituent() {
        let mut p = pairs(2, 8);
        p[0].low.data_mut()[0] = f64::NAN;
        let err = train_samples(small_config(), p, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
    }

    #[test]
    fn too_small_for_patch() {
        let cfg = TrainConfig { patch: 16, ..small_config() };
        assert!(matches!(
            train_samples(cfg, pairs(2, 8), None),
            Err(Error::CropTooLarge { .. })
        ));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = TrainConfig {
            lr_schedule: LrSchedule::Cosine,
            ..Default::default()
        };
        assert_eq!(learning_rate(&cfg, 0, 10), cfg.lr);
        assert!(learning_rate(&cfg, 10, 10).abs() < 1e-18);
        assert!((learning_rate(&cfg, 5, 10) - cfg.lr / 2.0).abs() < 1e-15);
    }
}
