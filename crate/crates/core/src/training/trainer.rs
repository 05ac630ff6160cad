use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Subset};
use crate::error::{Error, Result};
use crate::separator::checkpoint::{kernel_unit_deviation, Checkpoint, TrainingMeta};
use crate::separator::{batch_gradient, batch_losses, SeparatorConfig, SeparatorParams};
use crate::states::DensityMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub subset: Subset,
    pub seed: u64,
    pub separator: SeparatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 256,
            optimizer: Optimizer::Adam,
            subset: Subset::Sep,
            seed: 0,
            separator: SeparatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        self.separator.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean `|K − I₄|` over all kernels after the epoch.
    pub kernel_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss and kernel deviation of the initial parameters.
    pub initial_val_loss: f64,
    pub initial_kernel_deviation: f64,
    pub epochs: Vec<EpochStats>,
    /// 1-based index of the epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainReport {
    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch - 1]
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mini-batch training with best-on-validation selection. Both datasets are
/// restricted to `config.subset` first. When `checkpoint_path` is given the
/// best parameters are written there after every improving epoch.
pub fn train(
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    checkpoint_path: Option<&Path>,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = SeparatorParams::init(config.separator, &mut rng)?;
    run(config, params, rng, train, val, checkpoint_path, on_epoch)
}

/// Like [`train`] but starting from `initial` instead of a random
/// near-identity draw. Its configuration must match `config.separator`.
pub fn train_from(
    config: &TrainConfig,
    initial: SeparatorParams,
    train: &Dataset,
    val: &Dataset,
    checkpoint_path: Option<&Path>,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if *initial.config() != config.separator {
        return Err(Error::invalid("initial parameters do not match the separator config"));
    }
    let rng = ChaCha8Rng::seed_from_u64(config.seed);
    run(config, initial, rng, train, val, checkpoint_path, on_epoch)
}

fn run(
    config: &TrainConfig,
    mut params: SeparatorParams,
    mut rng: ChaCha8Rng,
    train: &Dataset,
    val: &Dataset,
    checkpoint_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let train_states: Vec<DensityMatrix> = train.filter(config.subset).states();
    let val_states: Vec<DensityMatrix> = val.filter(config.subset).states();
    if train_states.is_empty() || val_states.is_empty() {
        return Err(Error::invalid(format!(
            "subset {} leaves {} training and {} validation records",
            config.subset.name(),
            train_states.len(),
            val_states.len()
        )));
    }

    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..train_states.len()).collect();

    let initial_val_loss = mean(&batch_losses(&params, &val_states));
    let initial_kernel_deviation = kernel_unit_deviation(&params);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, SeparatorParams)> = None;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut batch_means = Vec::new();
        let mut weights = Vec::new();
        for idx in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_states[i].clone()));
            let out = batch_gradient(&params, &batch)
                .map_err(|e| divergence_context(e, epoch))?;
            match config.optimizer {
                Optimizer::Adam => {
                    adam.step(params.as_mut_slice(), out.grad.as_slice(), config.learning_rate)
                }
                Optimizer::Sgd => params.add_scaled(&out.grad, -config.learning_rate),
            }
            batch_means.push(out.mean_loss * idx.len() as f64);
            weights.push(idx.len());
        }
        let train_loss = batch_means.iter().sum::<f64>() / weights.iter().sum::<usize>() as f64;
        let val_loss = mean(&batch_losses(&params, &val_states));
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: validation loss {val_loss}, parameters finite: {}",
                params.is_finite()
            )));
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            kernel_deviation: kernel_unit_deviation(&params),
        };
        on_epoch(&stats);
        epochs.push(stats);
        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
            if let Some(path) = checkpoint_path {
                Checkpoint::new(params.clone(), meta(epoch, val_loss, config.seed)).save(path)?;
            }
        }
    }

    let (best_epoch, best_val, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        report: TrainReport {
            initial_val_loss,
            initial_kernel_deviation,
            epochs,
            best_epoch,
            checkpoint_path: checkpoint_path.map(Path::to_path_buf),
        },
        checkpoint: Checkpoint::new(best_params, meta(best_epoch, best_val, config.seed)),
    })
}

fn meta(epoch: usize, val_loss: f64, seed: u64) -> TrainingMeta {
    TrainingMeta {
        epoch,
        val_loss,
        seed,
    }
}

fn divergence_context(e: Error, epoch: usize) -> Error {
    match e {
        Error::Divergence(msg) => Error::Divergence(format!("epoch {epoch}: {msg}")),
        other => other,
    }
}
