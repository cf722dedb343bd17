//! Minibatch SGD with momentum.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{synth_dataset, SamplePair};
use super::metrics::psnr;
use super::model::{SRModel, SRModelConfig, MODEL_KEYS};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    #[default]
    L1,
    Mse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L1 => "l1",
            LossKind::Mse => "mse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(LossKind::L1),
            "mse" | "l2" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    Constant,
    /// `lr · (1 + cos(π · (t − 1) / steps)) / 2` at 1-based step `t`.
    #[default]
    Cosine,
}

impl Schedule {
    pub fn factor(self, step: usize, steps: usize) -> f64 {
        match self {
            Schedule::Constant => 1.0,
            Schedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * (step - 1) as f64 / steps as f64).cos()),
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Constant => "constant",
            Schedule::Cosine => "cosine",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            _ => Err(Error::Config(format!("unknown schedule `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// LR patch side in pixels.
    pub patch: usize,
    pub lr: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Validation period in steps; the final step is always validated.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch: 1,
            patch: 16,
            lr: 0.05,
            schedule: Schedule::Cosine,
            momentum: 0.9,
            loss: LossKind::L1,
            seed: 0,
            val_every: 100,
        }
    }
}

pub const TRAIN_KEYS: [&str; 9] = ["steps", "batch", "patch", "lr", "schedule", "momentum", "loss", "train_seed", "val_every"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.val_every == 0 {
            return Err(Error::Config("steps, batch and val_every must be positive".into()));
        }
        if self.patch < 8 {
            return Err(Error::Config(format!("patch {} is below the minimum of 8", self.patch)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "need lr >= 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            steps: kv.parse_or("steps", d.steps)?,
            batch: kv.parse_or("batch", d.batch)?,
            patch: kv.parse_or("patch", d.patch)?,
            lr: kv.parse_or("lr", d.lr)?,
            schedule: kv.parse_or("schedule", d.schedule)?,
            momentum: kv.parse_or("momentum", d.momentum)?,
            loss: kv.parse_or("loss", d.loss)?,
            seed: kv.parse_or("train_seed", d.seed)?,
            val_every: kv.parse_or("val_every", d.val_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("steps", self.steps);
        kv.set("batch", self.batch);
        kv.set("patch", self.patch);
        kv.set("lr", self.lr);
        kv.set("schedule", self.schedule);
        kv.set("momentum", self.momentum);
        kv.set("loss", self.loss);
        kv.set("train_seed", self.seed);
        kv.set("val_every", self.val_every);
        kv
    }
}

/// Synthetic train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_images: usize,
    pub val_images: usize,
    pub hr_size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_images: 16,
            val_images: 4,
            hr_size: 48,
            seed: 1,
        }
    }
}

pub const DATA_KEYS: [&str; 4] = ["train_images", "val_images", "hr_size", "data_seed"];

impl DataConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = DataConfig::default();
        Ok(DataConfig {
            train_images: kv.parse_or("train_images", d.train_images)?,
            val_images: kv.parse_or("val_images", d.val_images)?,
            hr_size: kv.parse_or("hr_size", d.hr_size)?,
            seed: kv.parse_or("data_seed", d.seed)?,
        })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("train_images", self.train_images);
        kv.set("val_images", self.val_images);
        kv.set("hr_size", self.hr_size);
        kv.set("data_seed", self.seed);
        kv
    }

    /// `(train, validation)`; the validation images use a derived seed so
    /// they never coincide with training images.
    pub fn generate<T: Scalar>(&self, scale: usize) -> Result<(Vec<SamplePair<T>>, Vec<SamplePair<T>>)> {
        if self.train_images == 0 {
            return Err(Error::Config("train_images must be positive".into()));
        }
        let train = synth_dataset(self.seed, self.train_images, self.hr_size, scale)?;
        let val = synth_dataset(self.seed.wrapping_add(0x0DDB_A11), self.val_images, self.hr_size, scale)?;
        Ok((train, val))
    }
}

/// Model, optimizer and data settings of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: SRModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let known: Vec<&str> = MODEL_KEYS.iter().chain(&TRAIN_KEYS).chain(&DATA_KEYS).copied().collect();
        kv.reject_unknown(&known)?;
        Ok(RunConfig {
            model: SRModelConfig::from_kv(kv)?,
            train: TrainConfig::from_kv(kv)?,
            data: DataConfig::from_kv(kv)?,
        })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.model.to_kv();
        kv.merge(&self.train.to_kv());
        kv.merge(&self.data.to_kv());
        kv
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    /// Mean batch loss before the update.
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<StepRecord>,
}

pub const HISTORY_HEADER: &str = "step,loss,val_psnr";

impl TrainingHistory {
    /// CSV with an empty `val_psnr` field on unvalidated steps.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            let v = r.val_psnr.map(|p| p.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", r.step, r.loss, v).unwrap();
        }
        out
    }

    pub fn final_val_psnr(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.val_psnr)
    }
}

/// Top-left `size × size` window at `(r0, c0)` of a `(C, H, W)` tensor.
fn crop<T: Scalar>(x: &Tensor<T>, r0: usize, c0: usize, size: usize) -> Tensor<T> {
    let (c, w) = (x.shape()[0], x.shape()[2]);
    let h = x.shape()[1];
    Tensor::from_fn(&[c, size, size], |f| {
        let ch = f / (size * size);
        let (r, col) = ((f / size) % size, f % size);
        x.data()[(ch * h + r0 + r) * w + c0 + col]
    })
}

/// Mean PSNR of clamped predictions over `set` (0 if empty).
pub fn validate<T: Scalar>(model: &mut SRModel<T>, set: &[SamplePair<T>]) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pair in set {
        let pred = model.predict(&pair.lr)?.map(|v| v.max(T::zero()).min(T::one()));
        total += psnr(&pred, &pair.hr)?;
    }
    Ok(total / set.len() as f64)
}

/// Trains `model` in place. Identical inputs give bitwise-identical histories.
pub fn train<T: Scalar>(
    model: &mut SRModel<T>,
    train_set: &[SamplePair<T>],
    val_set: &[SamplePair<T>],
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let s = model.config.scale;
    for p in train_set {
        let (h, w) = (p.lr.shape()[1], p.lr.shape()[2]);
        if h < cfg.patch || w < cfg.patch || p.hr.shape() != [1, h * s, w * s] {
            return Err(Error::dim("training pair (lr)", p.lr.shape(), &[1, cfg.patch, cfg.patch]));
        }
    }
    let loss_node = match cfg.loss {
        LossKind::L1 => model.l1_loss,
        LossKind::Mse => model.mse_loss,
    };
    let params = model.graph.params();
    let mut velocity: Vec<Vec<T>> = params
        .iter()
        .map(|&id| vec![T::zero(); model.graph.value(id).unwrap().numel()])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mu = T::of(cfg.momentum);
    let inv_batch = T::of(1.0 / cfg.batch as f64);
    let mut history = TrainingHistory::default();

    for step in 1..=cfg.steps {
        let mut grads: Vec<Vec<T>> = velocity.iter().map(|v| vec![T::zero(); v.len()]).collect();
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch {
            let pair = &train_set[rng.random_range(0..train_set.len())];
            let (h, w) = (pair.lr.shape()[1], pair.lr.shape()[2]);
            let r0 = rng.random_range(0..=h - cfg.patch);
            let c0 = rng.random_range(0..=w - cfg.patch);
            let lr_patch = crop(&pair.lr, r0, c0, cfg.patch);
            let hr_patch = crop(&pair.hr, r0 * s, c0 * s, cfg.patch * s);
            model.graph.set_input(model.input, lr_patch)?;
            model.graph.set_input(model.target, hr_patch)?;
            model.graph.forward_to(loss_node)?;
            loss_sum += model.graph.value(loss_node).unwrap().data()[0].as_f64();
            let d = model.graph.backward(loss_node)?;
            for (acc, &id) in grads.iter_mut().zip(&params) {
                if let Some(g) = d.get(id) {
                    acc.iter_mut().zip(g.data()).for_each(|(a, &v)| *a += v);
                }
            }
        }
        let loss = loss_sum / cfg.batch as f64;
        let grads_finite = grads.iter().flatten().all(|v| v.is_finite());
        if !loss.is_finite() || !grads_finite {
            return Err(Error::Divergence { step, loss });
        }
        let lr = T::of(cfg.lr * cfg.schedule.factor(step, cfg.steps));
        for ((&id, v), g) in params.iter().zip(&mut velocity).zip(&grads) {
            let mut t = model.graph.value(id).unwrap().clone();
            for ((p, vel), &gr) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = mu * *vel + gr * inv_batch;
                *p -= lr * *vel;
            }
            model.graph.set_value(id, t)?;
        }
        let val_psnr = if step % cfg.val_every == 0 || step == cfg.steps {
            Some(validate(model, val_set)?)
        } else {
            None
        };
        history.records.push(StepRecord { step, loss, val_psnr });
    }
    Ok(history)
}
