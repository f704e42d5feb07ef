//! Adam training with early stopping on a held-out tail of the training split.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::forward::{forward_chunk, run_series, NoiseMode, RecurrentState};
use super::{EpochRecord, Hyperparams, Model, ModelCheckpoint, ModelParams, OptimizerConfig};
use crate::autograd::Tape;
use crate::data::{Dataset, NormalizerParams, SampleWindow, TimeSeriesMatrix};
use crate::error::{Error, Result};
use crate::scoring::ErrorTerms;

/// Bias-corrected Adam over the tensors of [`ModelParams`].
pub struct Adam {
    pub config: OptimizerConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &ModelParams) -> Self {
        let zeros: Vec<Array2<f64>> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.dim()))
            .collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// `grads` follows the order of `named_tensors_mut`; `None` entries
    /// (parameters unused under an ablation) are left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<&Array2<f64>>]) {
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (k, (_, p)) in params.named_tensors_mut().into_iter().enumerate() {
            let Some(g) = grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            });
        }
    }
}

/// Tracks the best validation loss; stops after `patience` epochs without a
/// strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Returns whether `loss` is a new best.
    pub fn update(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Train/validation boundary: the first index of the held-out tail.
pub fn validation_start(len: usize, val_fraction: f64) -> usize {
    len - ((len as f64 * val_fraction).ceil() as usize).min(len)
}

pub fn train(ds: &Dataset, hp: &Hyperparams) -> Result<ModelCheckpoint> {
    train_with_progress(ds, hp, &mut |_| {})
}

/// Fits the normalizer on the training split, trains on all but its last
/// `val_fraction`, early-stops on the held-out tail, and stores that tail's
/// error terms for threshold calibration.
pub fn train_with_progress(
    ds: &Dataset,
    hp: &Hyperparams,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<ModelCheckpoint> {
    hp.validate()?;
    let normalizer = NormalizerParams::fit(&ds.train, hp.normalization);
    let x = normalizer.apply(&ds.train)?;
    let dims = hp.dims(x.n_sensors(), x.dim());
    let val_start = validation_start(x.len(), hp.val_fraction);
    if val_start <= hp.width || val_start >= x.len() {
        return Err(Error::InsufficientData(format!(
            "training split of length {} leaves no training or validation windows \
             for width {} and val_fraction {}",
            x.len(),
            hp.width,
            hp.val_fraction
        )));
    }
    let mut model = Model::new(dims, hp.clone())?;
    let optimizer = OptimizerConfig::adam(hp.learning_rate);
    let mut adam = Adam::new(optimizer.clone(), &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed.wrapping_add(1));
    let mut stopper = EarlyStopping::new(hp.patience);
    let mut best = model.params.clone();
    let mut history = Vec::new();
    let names = ds.train.sensor_names().to_vec();

    let mut chunks: Vec<usize> = (hp.width..val_start).step_by(hp.batch_size).collect();
    for epoch in 0..hp.max_epochs {
        let started = Instant::now();
        if hp.reset_per_batch {
            chunks.shuffle(&mut rng);
        }
        let mut state = RecurrentState::zeros(dims);
        let mut loss_sum = 0.0;
        for &start in &chunks {
            let end = (start + hp.batch_size).min(val_start);
            let windows = (start..end)
                .map(|t| SampleWindow::at(&x, t, hp.width))
                .collect::<Result<Vec<_>>>()?;
            if hp.reset_per_batch {
                state = RecurrentState::zeros(dims);
            }
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let out = forward_chunk(&mut tape, &model, &vars, &windows, &state, &mut NoiseMode::Sample(&mut rng));
            let loss = tape.scalar(out.loss);
            if !loss.is_finite() {
                return Err(diverged(epoch, &model, best, &optimizer, &normalizer, &names, history));
            }
            loss_sum += loss;
            state = out.final_state(&tape);
            let grads = tape.backward(out.loss);
            let named = vars.named();
            let g: Vec<Option<&Array2<f64>>> = named.iter().map(|(_, v)| grads.get(*v)).collect();
            adam.step(&mut model.params, &g);
            if !model.params.is_finite() {
                return Err(diverged(epoch, &model, best, &optimizer, &normalizer, &names, history));
            }
        }
        model.refresh_graph()?;
        let val_loss = validation_loss(&model, &x, val_start)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, &model, best, &optimizer, &normalizer, &names, history));
        }
        if stopper.update(epoch, val_loss) {
            best = model.params.clone();
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / chunks.len() as f64,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        progress(&record);
        history.push(record);
        if stopper.should_stop() {
            break;
        }
    }

    let model = Model::from_params(dims, hp.clone(), best)?;
    let calibration = run_series(&model, &x, val_start..x.len(), false)?
        .iter()
        .map(|w| ErrorTerms::new(&w.target, &w.x_hat, &w.history, &w.reconstruction))
        .collect();
    Ok(ModelCheckpoint::new(
        &model,
        optimizer,
        normalizer,
        names,
        history,
        stopper.best_epoch(),
        calibration,
    ))
}

fn validation_loss(model: &Model, x: &TimeSeriesMatrix, val_start: usize) -> Result<f64> {
    let outs = run_series(model, x, val_start..x.len(), false)?;
    Ok(outs.iter().map(|o| o.loss).sum::<f64>() / outs.len() as f64)
}

fn diverged(
    epoch: usize,
    model: &Model,
    best: ModelParams,
    optimizer: &OptimizerConfig,
    normalizer: &NormalizerParams,
    names: &[String],
    history: Vec<EpochRecord>,
) -> Error {
    let mut last = model.clone();
    last.params = best;
    Error::Diverged {
        epoch,
        checkpoint: Box::new(ModelCheckpoint::new(
            &last,
            optimizer.clone(),
            normalizer.clone(),
            names.to_vec(),
            history,
            None,
            Vec::new(),
        )),
    }
}
