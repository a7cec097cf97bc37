//! Mini-batch training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, project_features, Normalizer, Trace, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{EpochStats, Model, ModelKind, ModelSpec, TrainedModel};
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor, TensorError};

/// Training epochs per architecture.
pub fn default_epochs(kind: ModelKind) -> usize {
    match kind {
        ModelKind::ConvLstm => 10,
        ModelKind::Lstm => 125,
        ModelKind::CnnLstm => 100,
        ModelKind::Transformer => 150,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
    /// Share of traces (not windows) held out for validation loss.
    pub val_fraction: f64,
    /// Return the parameters of the epoch with the lowest validation loss
    /// instead of the last epoch's. No effect without validation traces.
    #[serde(default)]
    pub keep_best: bool,
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        TrainConfig {
            epochs: default_epochs(kind),
            batch_size: 32,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
            val_fraction: 0.1,
            keep_best: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Model("epochs and batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Model(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        self.adam.validate()?;
        Ok(())
    }
}

/// Splits trace indices into (train, validation); at least one trace always
/// stays in training.
pub fn split_traces(n_traces: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_traces).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5011));
    let n_val = ((n_traces as f64 * val_fraction).floor() as usize).min(n_traces.saturating_sub(1));
    let val = idx.split_off(n_traces - n_val);
    (idx, val)
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Mean squared error in normalized units over a whole dataset.
pub fn dataset_loss(model: &Model, ds: &WindowedDataset) -> Result<f64> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (x, y) = ds.batch(chunk);
        let pred = model.predict_normalized(&x)?;
        total += mse(&pred, y.data()) * chunk.len() as f64;
    }
    Ok(total / ds.len() as f64)
}

fn diverged(e: TensorError, epoch: usize, step: usize, last_loss: f64) -> Error {
    match e {
        TensorError::NonFinite { .. } => Error::Diverged { epoch, step, last_loss },
        other => Error::Tensor(other),
    }
}

/// Trains `model` on a normalized dataset. Windows of the traces picked by
/// the validation split only feed the per-epoch validation loss.
pub fn train(mut model: Model, dataset: &WindowedDataset, normalizer: Normalizer, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let spec = model.spec().clone();
    if dataset.is_empty() {
        return Err(Error::Data(crate::data::DataError::EmptyDataset {
            window: dataset.window,
            horizon: dataset.horizon,
        }));
    }
    if dataset.feature_set != spec.feature_set || dataset.window != spec.window {
        return Err(Error::Model(format!(
            "dataset ({}, window {}) does not match model ({}, window {})",
            dataset.feature_set, dataset.window, spec.feature_set, spec.window
        )));
    }
    let (train_traces, val_traces) = split_traces(dataset.trace_ids.len(), cfg.val_fraction, cfg.shuffle_seed);
    let (train_ds, val_ds) = if val_traces.is_empty() {
        (dataset.clone(), None)
    } else {
        let tr = dataset.filter_traces(|t| train_traces.contains(&t));
        let va = dataset.filter_traces(|t| val_traces.contains(&t));
        if tr.is_empty() {
            (dataset.clone(), None)
        } else {
            (tr, (!va.is_empty()).then_some(va))
        }
    };

    let mut adam = AdamState::new(cfg.adam, model.params().tensors())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_loss = f64::NAN;
    let mut global_step = 0;
    let mut best: Option<(f64, crate::models::ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train_ds.batch(chunk);
            let loss = train_step(&mut model, &mut adam, x, y).map_err(|e| diverged(e, epoch, global_step, last_loss))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step: global_step, last_loss });
            }
            last_loss = loss;
            sum += loss * chunk.len() as f64;
            steps += 1;
            global_step += 1;
        }
        let val_loss = match &val_ds {
            Some(v) => Some(dataset_loss(&model, v)?),
            None => None,
        };
        if let (true, Some(v)) = (cfg.keep_best, val_loss) {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params().clone()));
            }
        }
        history.push(EpochStats {
            epoch,
            train_loss: sum / train_ds.len() as f64,
            val_loss,
            steps,
        });
    }
    if let Some((_, params)) = best {
        *model.params_mut() = params;
    }
    model.params_mut().tensors_mut().iter_mut().for_each(Tensor::zero_grad);
    TrainedModel::new(model, normalizer, history)
}

fn train_step(model: &mut Model, adam: &mut AdamState, x: Tensor, y: Tensor) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let p = model.bind(&mut g);
    let xv = g.constant(x);
    let yv = g.constant(y);
    let pred = model.forward(&mut g, &p, xv).map_err(|e| match e {
        Error::Tensor(t) => t,
        other => TensorError::contract("forward", other.to_string()),
    })?;
    let loss = g.mse_loss(pred, yv)?;
    g.backward(loss)?;
    let value = g.value(loss).item();
    for (t, &v) in model.params_mut().tensors_mut().iter_mut().zip(&p) {
        t.grad = g.grad(v);
    }
    adam.step(model.params_mut().tensors_mut())?;
    Ok(value)
}

/// Projects, normalizes (fitted on the training traces only) and windows
/// `traces`, then trains a freshly built model.
pub fn fit(spec: ModelSpec, traces: &[Trace], cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let mats = traces
        .iter()
        .map(|t| project_features(t, spec.feature_set))
        .collect::<Result<Vec<_>, _>>()?;
    let (train_idx, _) = split_traces(mats.len(), cfg.val_fraction, cfg.shuffle_seed);
    let fit_on: Vec<_> = train_idx.iter().map(|&i| mats[i].clone()).collect();
    let normalizer = Normalizer::fit(&fit_on)?;
    let normed = mats.iter().map(|m| normalizer.apply(m)).collect::<Result<Vec<_>, _>>()?;
    let ds = make_windows(&normed, spec.window, 1)?;
    let model = Model::build(spec)?;
    train(model, &ds, normalizer, cfg)
}
