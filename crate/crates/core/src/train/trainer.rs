use alloc::format;
use alloc::vec::Vec;

use super::{eval_metrics, forward_kld, reverse_kld, Adam, AdamConfig, Metrics};
use crate::error::{config, Error, Result};
use crate::flows::FlowModel;
use crate::numcore::{Matrix, Rng, Stream, Tape};
use crate::targets::TargetDensity;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    ReverseKl,
    ForwardKl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub iterations: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub seed: u64,
    /// Model samples for the final metric block; 0 skips it.
    pub eval_samples: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 1 {
            return config("batch must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return config(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return config(format!("clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// What the loss is measured against.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Target(&'a TargetDensity),
    Data(&'a Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: f64,
    pub metrics: Option<Metrics>,
}

/// A training run that stopped early. The model holds the parameters from
/// before the failing iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFailure {
    pub iteration: usize,
    pub losses: Vec<f64>,
    pub error: Error,
}

/// Resumable training state: optimizer, random streams and iteration count.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: Adam,
    pub rng: Rng,
    pub iteration: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut adam = AdamConfig::new(config.lr);
        adam.clip = config.clip;
        Ok(Trainer {
            rng: Rng::new(config.seed),
            optimizer: Adam::new(adam),
            iteration: 0,
            config,
        })
    }

    fn data_init(&mut self, model: &mut FlowModel, objective: Objective<'_>) -> Result<()> {
        if !model.needs_data_init() {
            return Ok(());
        }
        match objective {
            Objective::Data(data) => {
                let batch = self.minibatch(data);
                model.data_init_inverse(&batch)
            }
            Objective::Target(_) => {
                let (z, _) = model.base.sample(&model.params, self.config.batch.max(2), &mut self.rng)?;
                model.data_init_forward(&z)
            }
        }
    }

    fn minibatch(&mut self, data: &Matrix) -> Matrix {
        let mut s = self.rng.stream(Stream::Data);
        let idx: Vec<usize> = (0..self.config.batch).map(|_| s.below(data.rows())).collect();
        data.select_rows(&idx)
    }

    /// Runs one optimization step and returns the loss before the update.
    pub fn step(&mut self, model: &mut FlowModel, objective: Objective<'_>) -> Result<f64> {
        if self.iteration == 0 {
            self.data_init(model, objective)?;
        }
        let tape = Tape::new();
        let loss = match (self.config.loss, objective) {
            (LossKind::ReverseKl, Objective::Target(t)) => {
                reverse_kld(model, t, &tape, self.config.batch, &mut self.rng)?
            }
            (LossKind::ForwardKl, Objective::Data(d)) => {
                let batch = self.minibatch(d);
                forward_kld(model, &tape, &batch)?
            }
            (LossKind::ReverseKl, Objective::Data(_)) => {
                return config("reverse KL training needs a target density")
            }
            (LossKind::ForwardKl, Objective::Target(_)) => {
                return config("forward KL training needs a data set")
            }
        };
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: format!("loss {value} at iteration {}", self.iteration),
            });
        }
        let grads = tape.backward(loss)?;
        self.optimizer.step(&mut model.params, &grads)?;
        self.iteration += 1;
        Ok(value)
    }

    /// Steps until `config.iterations`, reporting each loss to `on_loss`.
    pub fn run(
        &mut self,
        model: &mut FlowModel,
        objective: Objective<'_>,
        mut on_loss: impl FnMut(usize, f64),
    ) -> core::result::Result<Vec<f64>, TrainFailure> {
        let mut losses = Vec::new();
        while self.iteration < self.config.iterations {
            let it = self.iteration;
            match self.step(model, objective) {
                Ok(l) => {
                    on_loss(it, l);
                    losses.push(l);
                }
                Err(error) => {
                    return Err(TrainFailure {
                        iteration: it,
                        losses,
                        error,
                    })
                }
            }
        }
        Ok(losses)
    }
}

/// Trains from scratch and evaluates against the target when one is given.
pub fn train_loop(
    model: &mut FlowModel,
    objective: Objective<'_>,
    config: &TrainConfig,
) -> core::result::Result<TrainReport, TrainFailure> {
    let fail = |error| TrainFailure {
        iteration: 0,
        losses: Vec::new(),
        error,
    };
    let mut trainer = Trainer::new(config.clone()).map_err(fail)?;
    let losses = trainer.run(model, objective, |_, _| {})?;
    let metrics = match objective {
        Objective::Target(t) if config.eval_samples > 0 => {
            let mut rng = Rng::new(config.seed ^ 0x5EED_E7A1);
            Some(eval_metrics(model, t, config.eval_samples, &mut rng).map_err(fail)?)
        }
        _ => None,
    };
    Ok(TrainReport {
        losses,
        wall_time_secs: 0.0,
        metrics,
    })
}
