//! The tiny boundary network: a strided grid-conv encoder whose stage outputs
//! are folded into column strips, a Bi-GRU over the strips and a dense head
//! that emits `g` columns of `(y_c, y_f, y_w)` per step.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, ParamEntry};
pub use train::{
    boundary_loss, evaluate_pixel_error, train, EpochLog, Sample, TrainConfig, TrainError,
    TrainReport,
};

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, GruParams, Tape, Var};
use crate::boundary::BoundaryMap;
use crate::rng::stream;
use crate::sampling::{GridCache, GridMode, GridSpec, SamplingError, SamplingGrid};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input shape {got:?} does not match model input {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub mode: GridMode,
    /// Output channels of each encoder stage.
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub hidden: usize,
    /// Output columns predicted per GRU step.
    pub group: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 3,
            height: 64,
            width: 128,
            mode: GridMode::Equirect,
            widths: vec![16, 32, 64, 128],
            blocks_per_stage: 1,
            hidden: 64,
            group: 4,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.channels == 0 || self.widths.is_empty() || self.widths.contains(&0) {
            return bad("channels and stage widths must be positive".into());
        }
        if self.blocks_per_stage == 0 || self.hidden == 0 || self.group == 0 {
            return bad("blocks_per_stage, hidden and group must be positive".into());
        }
        let stages = self.widths.len() as u32;
        if self.width % (4 * self.group) != 0 {
            return bad(format!("width {} is not divisible by 4·g = {}", self.width, 4 * self.group));
        }
        if self.height % (1 << stages) != 0 || self.width % (1 << stages) != 0 {
            return bad(format!(
                "input {}x{} is not divisible by 2^{stages}",
                self.height, self.width
            ));
        }
        let steps = self.steps();
        for s in 1..=stages {
            let w = self.width >> s;
            if w % steps != 0 && steps % w != 0 {
                return bad(format!("stage width {w} cannot be resampled to {steps} steps"));
            }
        }
        Ok(())
    }

    /// GRU sequence length.
    pub fn steps(&self) -> usize {
        self.width / self.group
    }

    /// Feature width of the concatenated strips.
    pub fn strip_features(&self) -> usize {
        self.widths
            .iter()
            .enumerate()
            .map(|(s, c)| c * (self.height >> (s + 1)))
            .sum()
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }
}

struct ConvLayer {
    weight: usize,
    bias: usize,
    grid: Arc<SamplingGrid>,
}

struct Block {
    first: ConvLayer,
    second: ConvLayer,
    shortcut: Option<ConvLayer>,
}

struct GruIndex {
    w_z: usize,
    w_r: usize,
    w_h: usize,
    b_z: usize,
    b_r: usize,
    b_h: usize,
}

/// Network structure: grids and parameter slots. Parameters live in [`Params`].
pub struct Model {
    cfg: ModelConfig,
    stages: Vec<Vec<Block>>,
    gru: [GruIndex; 2],
    head_w: usize,
    head_b: usize,
    shapes: Vec<(String, Vec<usize>, Init)>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He(usize),
    Uniform(f64),
    Const(f64),
    /// Head bias: one prior per output channel, repeated `g` times.
    HeadBias,
}

/// Initial head bias of the three outputs: a ceiling above and a floor below
/// the horizon and a low corner probability.
const HEAD_PRIORS: [f64; 3] = [0.3, -0.3, -2.0];

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let cache = GridCache::global();
        let mut shapes: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let mut slot = |name: String, shape: Vec<usize>, init: Init| {
            shapes.push((name, shape, init));
            shapes.len() - 1
        };
        let conv = |name: &str,
                        slot: &mut dyn FnMut(String, Vec<usize>, Init) -> usize,
                        cin: usize,
                        cout: usize,
                        k: usize,
                        input: (usize, usize),
                        stride: usize|
         -> Result<ConvLayer, ModelError> {
            let grid = cache.get(
                GridSpec::new(cfg.mode, (k, k), input).with_stride((stride, stride)),
            )?;
            Ok(ConvLayer {
                weight: slot(format!("{name}.weight"), vec![cout, cin, k, k], Init::He(cin * k * k)),
                bias: slot(format!("{name}.bias"), vec![cout], Init::Const(0.0)),
                grid,
            })
        };

        let mut stages = Vec::with_capacity(cfg.widths.len());
        let mut cin = cfg.channels;
        let mut size = (cfg.height, cfg.width);
        for (s, &cout) in cfg.widths.iter().enumerate() {
            let mut blocks = Vec::with_capacity(cfg.blocks_per_stage);
            for b in 0..cfg.blocks_per_stage {
                let stride = if b == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{b}");
                let out_size = (size.0.div_ceil(stride), size.1.div_ceil(stride));
                let first = conv(&format!("{name}.conv1"), &mut slot, cin, cout, 3, size, stride)?;
                let second = conv(&format!("{name}.conv2"), &mut slot, cout, cout, 3, out_size, 1)?;
                let shortcut = if stride != 1 || cin != cout {
                    Some(conv(&format!("{name}.shortcut"), &mut slot, cin, cout, 1, size, stride)?)
                } else {
                    None
                };
                blocks.push(Block {
                    first,
                    second,
                    shortcut,
                });
                cin = cout;
                size = out_size;
            }
            stages.push(blocks);
        }

        let d = cfg.strip_features();
        let k = cfg.hidden;
        let bound = 1.0 / (k as f64).sqrt();
        let mut gru_slots = |dir: &str| GruIndex {
            w_z: slot(format!("gru.{dir}.w_z"), vec![k, d + k], Init::Uniform(bound)),
            w_r: slot(format!("gru.{dir}.w_r"), vec![k, d + k], Init::Uniform(bound)),
            w_h: slot(format!("gru.{dir}.w_h"), vec![k, d + k], Init::Uniform(bound)),
            b_z: slot(format!("gru.{dir}.b_z"), vec![k], Init::Uniform(bound)),
            b_r: slot(format!("gru.{dir}.b_r"), vec![k], Init::Uniform(bound)),
            b_h: slot(format!("gru.{dir}.b_h"), vec![k], Init::Uniform(bound)),
        };
        let gru = [gru_slots("fwd"), gru_slots("bwd")];
        let out = 3 * cfg.group;
        let head_w = slot("head.weight".into(), vec![out, 2 * k], Init::Uniform(1.0 / (2.0 * k as f64).sqrt()));
        let head_b = slot("head.bias".into(), vec![out], Init::HeadBias);

        Ok(Self {
            cfg,
            stages,
            gru,
            head_w,
            head_b,
            shapes,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.shapes.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn param_shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.shapes.iter().map(|(_, s, _)| s.as_slice())
    }

    /// Seeded initialization from the `"init"` stream of the config seed.
    pub fn init_params(&self) -> Params {
        let mut rng = stream(self.cfg.seed, "init");
        let g = self.cfg.group;
        let tensors = self
            .shapes
            .iter()
            .map(|(_, shape, init)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match *init {
                    Init::He(fan_in) => {
                        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                        (0..n).map(|_| dist.sample(&mut rng)).collect()
                    }
                    Init::Uniform(b) => {
                        let dist = Uniform::new_inclusive(-b, b).unwrap();
                        (0..n).map(|_| dist.sample(&mut rng)).collect()
                    }
                    Init::Const(v) => vec![v; n],
                    Init::HeadBias => (0..n).map(|i| HEAD_PRIORS[i / g]).collect(),
                };
                Tensor::new(shape.clone(), data).expect("shape and data agree")
            })
            .collect();
        Params {
            names: self.shapes.iter().map(|(n, _, _)| n.clone()).collect(),
            tensors,
        }
    }

    /// Checks that `params` fits this structure.
    pub fn check_params(&self, params: &Params) -> Result<(), ModelError> {
        if params.tensors.len() != self.shapes.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.shapes.len(),
                params.tensors.len()
            )));
        }
        for ((name, shape, _), (n, t)) in self.shapes.iter().zip(params.names.iter().zip(&params.tensors)) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {n} {:?} does not match {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Puts every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape, params: &Params) -> Vec<Var> {
        params.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect()
    }

    /// Image `[C, H, W]` in `[0, 1]`, centered by subtracting 0.5.
    pub fn input(&self, tape: &mut Tape, image: &Tensor) -> Result<Var, ModelError> {
        let expected = vec![self.cfg.channels, self.cfg.height, self.cfg.width];
        if image.shape() != expected.as_slice() {
            return Err(ModelError::ShapeMismatch {
                expected,
                got: image.shape().to_vec(),
            });
        }
        let data = image.data().iter().map(|v| v - 0.5).collect();
        Ok(tape.constant(Tensor::new(expected, data)?))
    }

    fn conv(&self, tape: &mut Tape, p: &[Var], layer: &ConvLayer, x: Var) -> Result<Var, AutodiffError> {
        tape.grid_conv(x, p[layer.weight], p[layer.bias], Arc::clone(&layer.grid))
    }

    /// Encoder outputs of every stage.
    pub fn trunk(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Vec<Var>, ModelError> {
        let mut x = x;
        let mut outs = Vec::with_capacity(self.stages.len());
        for blocks in &self.stages {
            for b in blocks {
                let y = self.conv(tape, p, &b.first, x)?;
                let y = tape.relu(y);
                let y = self.conv(tape, p, &b.second, y)?;
                let skip = match &b.shortcut {
                    Some(s) => self.conv(tape, p, s, x)?,
                    None => x,
                };
                let sum = tape.add(y, skip)?;
                x = tape.relu(sum);
            }
            outs.push(x);
        }
        Ok(outs)
    }

    /// Full forward pass: `[3, W]` holding `y_c`, `y_f` and the `y_w` logits.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var, ModelError> {
        let steps = self.cfg.steps();
        let stage_outs = self.trunk(tape, p, x)?;
        let strips = stage_outs
            .iter()
            .map(|s| tape.strip(*s, steps))
            .collect::<Result<Vec<_>, _>>()?;
        let seq = tape.concat_cols(&strips)?;
        let params = |g: &GruIndex| GruParams {
            w_z: p[g.w_z],
            w_r: p[g.w_r],
            w_h: p[g.w_h],
            b_z: p[g.b_z],
            b_r: p[g.b_r],
            b_h: p[g.b_h],
        };
        let hidden = tape.bi_gru(seq, &params(&self.gru[0]), &params(&self.gru[1]))?;
        let head = tape.linear(hidden, p[self.head_w], p[self.head_b])?;
        // head row t holds [y_c × g, y_f × g, y_w × g] for columns t·g..(t+1)·g
        let g = self.cfg.group;
        let w = self.cfg.width;
        let index = (0..3)
            .flat_map(|ch| (0..w).map(move |c| (c / g) * 3 * g + ch * g + c % g))
            .collect();
        Ok(tape.gather(head, index, vec![3, w])?)
    }

    /// Boundary map with `y_w` as probabilities.
    pub fn predict(&self, params: &Params, image: &Tensor) -> Result<BoundaryMap, ModelError> {
        let mut tape = Tape::new();
        let p: Vec<Var> = params.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        let x = self.input(&mut tape, image)?;
        let out = self.forward(&mut tape, &p, x)?;
        Ok(logits_to_map(tape.value(out)))
    }
}

/// Splits a `[3, W]` output into a boundary map, applying the sigmoid to `y_w`.
pub fn logits_to_map(out: &Tensor) -> BoundaryMap {
    let w = out.shape()[1];
    let d = out.data();
    BoundaryMap {
        y_c: d[..w].to_vec(),
        y_f: d[w..2 * w].to_vec(),
        y_w: d[2 * w..].iter().map(|v| crate::autodiff::sigmoid_scalar(*v)).collect(),
    }
}

/// Draws a random image for shape checks.
pub fn random_image<R: Rng>(rng: &mut R, cfg: &ModelConfig) -> Tensor {
    let n = cfg.channels * cfg.height * cfg.width;
    Tensor::new(
        vec![cfg.channels, cfg.height, cfg.width],
        (0..n).map(|_| rng.random::<f64>()).collect(),
    )
    .expect("shape and data agree")
}
