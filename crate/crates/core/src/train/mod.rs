//! Weighted-loss training with Adam, exponential learning-rate decay and weight decay.

mod adam;
mod loss;

use alloc::format;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use loss::{weighted_cross_entropy, LossOutput};

use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::eval::{evaluate, ConfusionMatrix, EvalOptions, MetricsReport};
use crate::grid::NUM_CLASSES;
use crate::model::Model;
use crate::ops::Mode;
use crate::pipeline::{shuffle_epoch, PreparedSample};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub class_weights: [f64; NUM_CLASSES],
    pub lr0: f64,
    /// Learning-rate multiplier applied once per epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
    pub mask_background_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            class_weights: [100.0, 100.0, 2000.0],
            lr0: 8e-4,
            lr_decay: 0.97,
            weight_decay: 5e-4,
            epochs: 200,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            eval_every: 1,
            mask_background_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if !self.class_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return bad("class weights must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr0 must be > 0 and lr_decay in (0, 1]");
        }
        if !(self.weight_decay >= 0.0) || self.batch_size == 0 || self.eval_every == 0 {
            return bad("weight_decay must be >= 0, batch_size and eval_every >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_epsilon > 0.0)
        {
            return bad("Adam betas must be in [0, 1) and epsilon > 0");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
            weight_decay: self.weight_decay,
        }
    }

    /// Learning rate used during zero-based epoch `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi(epoch as i32)
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            class_weights: self.class_weights,
            mask_background_loss: self.mask_background_loss,
            ..EvalOptions::default()
        }
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Number of completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub confusion: Option<ConfusionMatrix>,
}

/// Hooks called while training; checkpointing and progress output live here.
pub trait TrainObserver<T: Scalar> {
    fn on_step(&mut self, _epoch: usize, _step: usize, _loss: f64) {}

    fn on_epoch(&mut self, _trainer: &Trainer<T>, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

/// Owns a model during training together with its optimizer state and history.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar = f32> {
    model: Model<T>,
    optimizer: OptimizerState<T>,
    config: TrainConfig,
    epochs_done: usize,
    history: Vec<EpochRecord>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::new(model.params(), config.lr0);
        Ok(Self {
            model,
            optimizer,
            config,
            epochs_done: 0,
            history: Vec::new(),
        })
    }

    /// Continues a run saved after `epochs_done` epochs.
    pub fn resume(
        model: Model<T>,
        optimizer: OptimizerState<T>,
        epochs_done: usize,
        history: Vec<EpochRecord>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        optimizer.check(model.params())?;
        Ok(Self {
            model,
            optimizer,
            config,
            epochs_done,
            history,
        })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState<T> {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn into_parts(self) -> (Model<T>, OptimizerState<T>, Vec<EpochRecord>) {
        (self.model, self.optimizer, self.history)
    }

    /// Forward, loss, backward and one optimizer update on a batch. Returns the loss.
    pub fn step(&mut self, batch: &[&PreparedSample<T>], step: usize) -> Result<f64> {
        let images: Vec<&Tensor<T>> = batch.iter().map(|s| &s.image).collect();
        let targets: Vec<&Tensor<T>> = batch.iter().map(|s| &s.one_hot).collect();
        let input = Tensor::stack(&images)?;
        let target = Tensor::stack(&targets)?;
        let mut tape = Tape::recording();
        let x = tape.leaf(input, false);
        let out = self.model.forward(&mut tape, x, Mode::Training)?;
        let loss = weighted_cross_entropy(
            tape.value(out.probs),
            &target,
            &self.config.class_weights,
            self.config.mask_background_loss,
        )?;
        if !loss.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.epochs_done + 1,
                step,
                loss: loss.loss,
            });
        }
        let updates = tape.take_stat_updates();
        let grads = tape.backward(self.model.params(), out.logits, loss.grad_logits)?;
        adam_step(
            self.model.params_mut(),
            grads.params(),
            &mut self.optimizer,
            &self.config.adam(),
        )?;
        self.model.apply_stat_updates(&updates);
        Ok(loss.loss)
    }

    /// One pass over a freshly shuffled training set, followed by validation when due.
    pub fn run_epoch(
        &mut self,
        train: &[PreparedSample<T>],
        val: &[PreparedSample<T>],
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let epoch = self.epochs_done;
        self.optimizer.lr = self.config.lr_at(epoch);
        let order = shuffle_epoch(train.len(), derive_seed(self.config.seed, epoch as u64));
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PreparedSample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = self.step(&batch, steps + 1)?;
            observer.on_step(epoch + 1, steps + 1, loss);
            total += loss;
            steps += 1;
        }
        self.epochs_done += 1;
        let due = self.epochs_done % self.config.eval_every == 0
            || self.epochs_done >= self.config.epochs;
        let (val_loss, metrics, confusion) = if due && !val.is_empty() {
            let summary = evaluate(&self.model, val, &self.config.eval_options())?;
            (
                Some(summary.loss),
                Some(summary.report()?),
                Some(summary.confusion),
            )
        } else {
            (None, None, None)
        };
        let record = EpochRecord {
            epoch: self.epochs_done,
            lr: self.optimizer.lr,
            train_loss: total / steps as f64,
            val_loss,
            metrics,
            confusion,
        };
        self.history.push(record.clone());
        observer.on_epoch(self, &record)?;
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete.
    pub fn fit(
        &mut self,
        train: &[PreparedSample<T>],
        val: &[PreparedSample<T>],
        observer: &mut dyn TrainObserver<T>,
    ) -> Result<()> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch(train, val, observer)?;
        }
        Ok(())
    }
}

/// Trains `model` from scratch and returns it with its history.
pub fn train<T: Scalar>(
    model: Model<T>,
    train_set: &[PreparedSample<T>],
    val_set: &[PreparedSample<T>],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<(Model<T>, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.fit(train_set, val_set, observer)?;
    let (model, _, history) = trainer.into_parts();
    Ok((model, history))
}
