//! Batch-size-one SGD with exponential learning-rate decay.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::gradcheck::Parameters;
use crate::model::{LabelingModel, ModelParams};
use crate::numerics::{lit, rng_from_seed, Scalar};

/// Parameter groups with separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Rnn,
    Embed,
}

impl Part {
    fn of(tensor: &str) -> Part {
        if tensor.starts_with("embed.") {
            Part::Embed
        } else {
            Part::Rnn
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr_rnn: f64,
    pub base_lr_embed: f64,
    pub decay_rate: f64,
    pub decay_start_epoch: usize,
    pub seed: u64,
    /// Evaluate every this many epochs; 0 disables evaluation.
    pub eval_every: usize,
    /// Rescale each gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            base_lr_rnn: 1e-2,
            base_lr_embed: 1e-4,
            decay_rate: 0.9,
            decay_start_epoch: 10,
            seed: 0,
            eval_every: 1,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("base_lr_rnn", self.base_lr_rnn), ("base_lr_embed", self.base_lr_embed)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {lr}")));
            }
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "decay_rate must lie in (0, 1], got {}",
                self.decay_rate
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Base rate before `decay_start_epoch`, then one factor of `decay_rate` per
/// epoch, the first decayed epoch included.
pub fn lr_schedule(epoch: usize, config: &TrainConfig, part: Part) -> f64 {
    let base = match part {
        Part::Rnn => config.base_lr_rnn,
        Part::Embed => config.base_lr_embed,
    };
    if epoch < config.decay_start_epoch {
        base
    } else {
        base * config.decay_rate.powi((epoch - config.decay_start_epoch + 1) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub rnn: f64,
    pub embed: f64,
}

impl LearningRates {
    pub fn at(epoch: usize, config: &TrainConfig) -> Self {
        LearningRates {
            rnn: lr_schedule(epoch, config, Part::Rnn),
            embed: lr_schedule(epoch, config, Part::Embed),
        }
    }

    fn get(&self, part: Part) -> f64 {
        match part {
            Part::Rnn => self.rnn,
            Part::Embed => self.embed,
        }
    }
}

/// `θ ← θ − lr·g` for every tensor. Nothing is updated if any gradient
/// entry is non-finite.
pub fn sgd_step<T: Scalar, P: Parameters<T>>(params: &mut P, grads: &P, lrs: LearningRates) -> Result<()> {
    let grads = grads.tensors();
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(name.clone()));
    }
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() {
        return Err(Error::shape("sgd_step", tensors.len(), grads.len()));
    }
    for ((name, theta), (_, g)) in tensors.iter_mut().zip(&grads) {
        if theta.len() != g.len() {
            return Err(Error::shape("sgd_step", theta.len(), g.len()));
        }
        let lr: T = lit(lrs.get(Part::of(name)));
        for (t, &d) in theta.iter_mut().zip(g.iter()) {
            *t = *t - lr * d;
        }
    }
    Ok(())
}

pub fn grad_norm<T: Scalar, P: Parameters<T>>(grads: &P) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn clip<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) {
    let norm = grad_norm(grads);
    if norm > max_norm {
        let s: T = lit(max_norm / norm);
        for (_, g) in grads.tensors_mut() {
            g.iter_mut().for_each(|v| *v = *v * s);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub miou: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// `epoch,loss,miou`, with an empty field for skipped evaluations.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,miou\n");
        for r in &self.epochs {
            let miou = r.miou.map(|m| m.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", r.epoch, r.loss, miou).expect("write to String");
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_csv())?)
    }
}

pub fn train<T: Scalar>(dataset: &[Sample], model: &mut LabelingModel<T>, config: &TrainConfig) -> Result<History> {
    train_with(dataset, None, model, config, |_| {})
}

/// Trains in place. `eval_set` defaults to the training set; `on_epoch` sees
/// every record as soon as it is produced. On divergence the model is rolled
/// back to its state at the start of the failing epoch.
pub fn train_with<T: Scalar>(
    dataset: &[Sample],
    eval_set: Option<&[Sample]>,
    model: &mut LabelingModel<T>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("train"));
    }
    let mut rng = rng_from_seed(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = History::default();
    for epoch in 0..config.epochs {
        let checkpoint = model.params.clone();
        let lrs = LearningRates::at(epoch, config);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let s = &dataset[i];
            let (loss, mut grads) = model.loss_and_grad(&s.image, &s.labels)?;
            let loss = loss.to_f64().unwrap_or(f64::NAN);
            if !loss.is_finite() || loss > 1e3 {
                model.params = checkpoint;
                return Err(Error::Diverged { epoch, loss });
            }
            if let Some(c) = config.clip_norm {
                clip(&mut grads, c);
            }
            if let Err(e) = sgd_step(&mut model.params, &grads, lrs) {
                model.params = checkpoint;
                return Err(e);
            }
            total += loss;
        }
        let loss = total / dataset.len() as f64;
        let miou = if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
            Some(evaluate(model, eval_set.unwrap_or(dataset))?.miou()?)
        } else {
            None
        };
        let record = EpochRecord { epoch, loss, miou };
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok(history)
}
