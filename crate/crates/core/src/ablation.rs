//! Evaluation of predicted maps against annotations, and the conv-mode
//! comparison harness.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::BoundaryMap;
use crate::geom::DEFAULT_CAMERA_HEIGHT;
use crate::layout::RoomLayout3D;
use crate::metrics::{
    corner_error, corner_points, iou_3d, pixel_error, pool_row_groups, row_group_error,
    CornerError, MetricError, RowGroup, RowGroupReport,
};
use crate::model::{train, EpochLog, Model, ModelConfig, ModelError, Sample, TrainConfig, TrainError};
use crate::recover::{recover_layout, RecoverError};
use crate::sampling::GridMode;
use crate::synth::{list_samples, project_corners, read_sample, Annotation, SynthError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("invalid ablation config: {0}")]
    InvalidConfig(String),
    #[error("ground-truth layout: {0}")]
    GroundTruth(#[from] RecoverError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// An image with its annotation.
#[derive(Debug, Clone)]
pub struct Example {
    pub image: Tensor,
    pub annotation: Annotation,
}

impl Example {
    pub fn sample(&self) -> Sample {
        Sample {
            image: self.image.clone(),
            map: self.annotation.map(),
        }
    }
}

/// Every sample of a dataset directory, in file order.
pub fn load_examples(dir: &Path) -> Result<Vec<Example>, SynthError> {
    list_samples(dir)?
        .iter()
        .map(|json| {
            let (image, annotation) = read_sample(json)?;
            Ok(Example { image, annotation })
        })
        .collect()
}

/// The annotated room, or the room recovered from the annotated map when the
/// annotation carries no generator spec.
pub fn gt_layout(ann: &Annotation) -> Result<RoomLayout3D, AblationError> {
    match &ann.spec {
        Some(spec) => Ok(spec.layout()),
        None => Ok(recover_layout(&ann.map(), DEFAULT_CAMERA_HEIGHT)?.layout().clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Rows of the raster used for pixel and row-group errors.
    pub eval_height: usize,
    pub group_rows: usize,
    /// Row groups counted as polar.
    pub polar_groups: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            eval_height: 512,
            group_rows: 25,
            polar_groups: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEval {
    pub pixel_error: f64,
    /// Absent when recovery failed.
    pub corner_error: Option<CornerError>,
    /// Zero when recovery failed.
    pub iou: f64,
    pub recovery_error: Option<String>,
    pub row_groups: Vec<RowGroup>,
}

pub fn evaluate_prediction(
    pred: &BoundaryMap,
    ann: &Annotation,
    gt: &RoomLayout3D,
    opts: &EvalOptions,
) -> Result<PredictionEval, AblationError> {
    let gt_map = ann.map();
    let pixel = pixel_error(pred, &gt_map, opts.eval_height)?;
    let row_groups = row_group_error(pred, &gt_map, opts.eval_height, opts.group_rows)?;
    let (corner, iou, recovery_error) = match recover_layout(pred, gt.camera_height) {
        Ok(rec) => {
            let layout = rec.layout();
            let pred_pts = corner_points(&project_corners(layout, ann.width, ann.height));
            let gt_pts = corner_points(&ann.corners);
            let ce = corner_error(&pred_pts, &gt_pts, ann.width, ann.height)?;
            (Some(ce), iou_3d(layout, gt)?, None)
        }
        Err(e) => (None, 0.0, Some(e.to_string())),
    };
    Ok(PredictionEval {
        pixel_error: pixel,
        corner_error: corner,
        iou,
        recovery_error,
        row_groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub pixel_error: f64,
    /// Mean over recovered samples with matching corner counts.
    pub corner_error: Option<f64>,
    pub corner_unequal_count: usize,
    /// Failed recoveries count as zero.
    pub iou: f64,
    pub recovery_failures: usize,
    /// Pooled pixel error of the polar row groups.
    pub polar_error: f64,
    pub row_groups: Vec<RowGroup>,
}

pub fn summarize(evals: &[PredictionEval], opts: &EvalOptions) -> EvalSummary {
    let n = evals.len().max(1) as f64;
    let corners: Vec<f64> = evals
        .iter()
        .filter_map(|e| e.corner_error)
        .filter(|c| !c.unequal_count)
        .map(|c| c.percent)
        .collect();
    let groups: Vec<Vec<RowGroup>> = evals.iter().map(|e| e.row_groups.clone()).collect();
    let row_groups = if groups.is_empty() { Vec::new() } else { pool_row_groups(&groups) };
    let polar: Vec<&RowGroup> = row_groups.iter().take(opts.polar_groups).collect();
    let polar_pixels: usize = polar.iter().map(|g| g.pixels).sum();
    let polar_wrong: usize = polar.iter().map(|g| g.wrong).sum();
    EvalSummary {
        count: evals.len(),
        pixel_error: evals.iter().map(|e| e.pixel_error).sum::<f64>() / n,
        corner_error: (!corners.is_empty()).then(|| corners.iter().sum::<f64>() / corners.len() as f64),
        corner_unequal_count: evals
            .iter()
            .filter(|e| e.corner_error.is_some_and(|c| c.unequal_count))
            .count(),
        iou: evals.iter().map(|e| e.iou).sum::<f64>() / n,
        recovery_failures: evals.iter().filter(|e| e.recovery_error.is_some()).count(),
        polar_error: if polar_pixels == 0 {
            0.0
        } else {
            100.0 * polar_wrong as f64 / polar_pixels as f64
        },
        row_groups,
    }
}

/// Runs the model on every example and evaluates the predictions.
pub fn evaluate_model(
    model: &Model,
    params: &crate::model::Params,
    examples: &[Example],
    opts: &EvalOptions,
) -> Result<Vec<PredictionEval>, AblationError> {
    examples
        .iter()
        .map(|ex| {
            let pred = model.predict(params, &ex.image)?;
            evaluate_prediction(&pred, &ex.annotation, &gt_layout(&ex.annotation)?, opts)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub modes: Vec<GridMode>,
    pub seeds: Vec<u64>,
    /// Shared by every run; `mode` and `seed` are overridden per run.
    pub model: ModelConfig,
    /// Shared by every run; `seed` is overridden per run.
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            modes: GridMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: GridMode,
    pub seed: u64,
    pub summary: EvalSummary,
    pub train_log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: GridMode,
    pub pixel_error: Stat,
    /// Over runs that produced a corner error.
    pub corner_error: Option<Stat>,
    pub iou: Stat,
    pub polar_error: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub config: AblationConfig,
    pub runs: Vec<RunResult>,
    pub modes: Vec<ModeSummary>,
    /// Planar against equirect, pooled over seeds, when both modes ran.
    pub row_groups: Option<RowGroupReport>,
}

/// One model per `(mode, seed)`. Runs with the same seed share data order,
/// augmentation draws and initial parameters, whatever the mode.
pub fn ablation_compare(
    train_set: &[Sample],
    test_set: &[Example],
    cfg: &AblationConfig,
    mut progress: impl FnMut(GridMode, u64, &EpochLog),
) -> Result<AblationReport, AblationError> {
    if cfg.seeds.len() < 3 {
        return Err(AblationError::InvalidConfig(format!(
            "need at least 3 seeds per mode, got {}",
            cfg.seeds.len()
        )));
    }
    if cfg.modes.is_empty() || test_set.is_empty() {
        return Err(AblationError::InvalidConfig("no modes or no test examples".into()));
    }
    let mut runs = Vec::with_capacity(cfg.modes.len() * cfg.seeds.len());
    for &mode in &cfg.modes {
        for &seed in &cfg.seeds {
            let model = Model::new(ModelConfig {
                mode,
                seed,
                ..cfg.model.clone()
            })?;
            let tc = TrainConfig {
                seed,
                ..cfg.train.clone()
            };
            let report = train(&model, model.init_params(), train_set, &[], &tc, |l| {
                progress(mode, seed, l)
            })?;
            let evals = evaluate_model(&model, &report.params, test_set, &cfg.eval)?;
            runs.push(RunResult {
                mode,
                seed,
                summary: summarize(&evals, &cfg.eval),
                train_log: report.log,
            });
        }
    }
    let modes = cfg
        .modes
        .iter()
        .map(|&mode| {
            let of = |f: &dyn Fn(&EvalSummary) -> Option<f64>| {
                let v: Vec<f64> = runs
                    .iter()
                    .filter(|r| r.mode == mode)
                    .filter_map(|r| f(&r.summary))
                    .collect();
                (!v.is_empty()).then(|| Stat::of(&v))
            };
            ModeSummary {
                mode,
                pixel_error: of(&|s| Some(s.pixel_error)).unwrap(),
                corner_error: of(&|s| s.corner_error),
                iou: of(&|s| Some(s.iou)).unwrap(),
                polar_error: of(&|s| Some(s.polar_error)).unwrap(),
            }
        })
        .collect();
    let pooled = |mode: GridMode| {
        let groups: Vec<Vec<RowGroup>> = runs
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.summary.row_groups.clone())
            .collect();
        (!groups.is_empty()).then(|| pool_row_groups(&groups))
    };
    let row_groups = match (pooled(GridMode::Planar), pooled(GridMode::Equirect)) {
        (Some(planar), Some(equirect)) => Some(RowGroupReport {
            group_rows: cfg.eval.group_rows,
            planar,
            equirect,
        }),
        _ => None,
    };
    Ok(AblationReport {
        config: cfg.clone(),
        runs,
        modes,
        row_groups,
    })
}
