//! Loss, minibatch training with on-the-fly stretch augmentation, and
//! validation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelError, Params};
use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tape, Var};
use crate::boundary::BoundaryMap;
use crate::metrics::{pixel_error, MetricError};
use crate::rng::stream;
use crate::synth::{stretch_image, stretch_map, StretchFactors, SynthError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {index}: map width {got} does not match model width {expected}")]
    WidthMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// An image with its target map (`y_w` holds the smoothed corner target).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    pub map: BoundaryMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    /// Random stretch of every training sample.
    pub augment: bool,
    /// Seeds the shuffle and augmentation streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 4,
            adam: AdamConfig::default(),
            augment: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_pixel_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: Params,
    pub log: Vec<EpochLog>,
}

/// `L1(y_c) + L1(y_f) + BCE(y_w)`, each averaged over columns.
pub fn boundary_loss(tape: &mut Tape, out: Var, target: &BoundaryMap) -> Result<Var, AutodiffError> {
    let rows = [&target.y_c, &target.y_f, &target.y_w]
        .map(|r| Tensor::from_vec(r.clone()));
    let yc = tape.row(out, 0)?;
    let yf = tape.row(out, 1)?;
    let yw = tape.row(out, 2)?;
    let lc = tape.l1_loss(yc, &rows[0])?;
    let lf = tape.l1_loss(yf, &rows[1])?;
    let lw = tape.bce_with_logits(yw, &rows[2])?;
    let s = tape.add(lc, lf)?;
    tape.add(s, lw)
}

/// Mean pixel error of the model's predictions at the model's input height.
pub fn evaluate_pixel_error(model: &Model, params: &Params, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let h = model.config().height;
    let mut total = 0.0;
    for s in samples {
        let pred = model.predict(params, &s.image)?;
        total += pixel_error(&pred, &s.map, h)?;
    }
    Ok(total / samples.len() as f64)
}

/// Loss and parameter gradients of one sample.
fn sample_gradients(
    model: &Model,
    params: &Params,
    sample: &Sample,
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    let mut tape = Tape::new();
    let p = model.bind(&mut tape, params);
    let x = model.input(&mut tape, &sample.image)?;
    let out = model.forward(&mut tape, &p, x)?;
    let loss = boundary_loss(&mut tape, out, &sample.map)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    let g = p
        .iter()
        .zip(&params.tensors)
        .map(|(v, t)| grads.get_or_zeros(*v, t.len()))
        .collect();
    Ok((value, g))
}

/// Adam over shuffled minibatches; the batch gradient is the mean of the
/// per-sample gradients. `on_epoch` sees every log line as it is produced.
pub fn train(
    model: &Model,
    init: Params,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    model.check_params(&init)?;
    let width = model.config().width;
    for (index, s) in train_set.iter().chain(val_set).enumerate() {
        if s.map.width() != width {
            return Err(TrainError::WidthMismatch {
                index,
                expected: width,
                got: s.map.width(),
            });
        }
    }
    let mut params = init;
    let mut adam = AdamState::new(cfg.adam);
    let mut shuffle = stream(cfg.seed, "shuffle");
    let mut augment = stream(cfg.seed, "augment");
    let batch = cfg.batch.max(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            for &i in chunk {
                let sample = if cfg.augment {
                    let k = StretchFactors::sample(&mut augment);
                    let s = &train_set[i];
                    Sample {
                        image: stretch_image(&s.image, k)?,
                        map: stretch_map(&s.map, k),
                    }
                } else {
                    train_set[i].clone()
                };
                let (loss, g) = sample_gradients(model, &params, &sample)?;
                loss_sum += loss;
                for (a, gi) in acc.iter_mut().zip(&g) {
                    a.iter_mut().zip(gi).for_each(|(x, y)| *x += y);
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            acc.iter_mut().flatten().for_each(|v| *v *= scale);
            adam.step(&mut params.tensors, &acc)?;
        }
        let val_pixel_error = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_pixel_error(model, &params, val_set)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_pixel_error,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainReport { params, log })
}
