//! Kernel sampling grids for convolution over equirectangular images.
//!
//! A grid stores, for every output row and kernel tap, the continuous source
//! coordinate and its four bilinear neighbours. Equirect and gnomonic taps
//! depend only on the output row: moving one output column right moves every
//! tap by exactly `stride_w` input columns, so storage is `O(H_out · kh · kw)`.
//!
//! Output pixel `(r, c)` is centered on input pixel `(r · stride_h, c · stride_w)`.
//! Horizontal coordinates wrap around the panorama; vertical ones clamp to the
//! first/last row.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::{Arc, OnceLock, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{gnomonic_inverse, lat_to_v, row_lat, LatLon};
use crate::tensor::Tensor;

/// Tap latitudes are kept this far (radians) from the poles before trig.
pub const POLE_EPSILON: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("kernel dimensions must be odd and positive, got {0}x{1}")]
    EvenKernel(usize, usize),
    #[error("kernel {kernel:?} does not fit input {input:?}")]
    KernelExceedsInput {
        kernel: (usize, usize),
        input: (usize, usize),
    },
    #[error("stride must be positive")]
    ZeroStride,
    #[error("kernel half extent {0:.4} rad reaches a quarter turn")]
    KernelTooLarge(f64),
    #[error("image shape {got:?} does not match grid input {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridMode {
    Planar,
    Equirect,
    Gnomonic,
}

impl GridMode {
    pub const ALL: [GridMode; 3] = [GridMode::Planar, GridMode::Equirect, GridMode::Gnomonic];

    pub fn as_str(self) -> &'static str {
        match self {
            GridMode::Planar => "planar",
            GridMode::Equirect => "equirect",
            GridMode::Gnomonic => "gnomonic",
        }
    }
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "planar" | "standard" => Ok(GridMode::Planar),
            "equirect" | "equirectangular" => Ok(GridMode::Equirect),
            "gnomonic" => Ok(GridMode::Gnomonic),
            other => Err(format!(
                "unknown grid mode `{other}` (expected planar, equirect or gnomonic)"
            )),
        }
    }
}

/// Which latitude scales the horizontal tap spacing of an equirect kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SecLatitude {
    /// Latitude of the tap after its vertical offset.
    #[default]
    Tap,
    /// Latitude of the kernel center.
    Center,
}

/// Everything that determines a grid; also the cache key.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    pub mode: GridMode,
    pub kernel: (usize, usize),
    pub input: (usize, usize),
    pub stride: (usize, usize),
    /// Angular spacing between taps `(vertical, horizontal)` in radians.
    /// Defaults to one input pixel pitch, `(π/H, 2π/W)`.
    pub angular_step: Option<(f64, f64)>,
    #[serde(default)]
    pub sec_latitude: SecLatitude,
}

impl GridSpec {
    pub fn new(mode: GridMode, kernel: (usize, usize), input: (usize, usize)) -> Self {
        Self {
            mode,
            kernel,
            input,
            stride: (1, 1),
            angular_step: None,
            sec_latitude: SecLatitude::Tap,
        }
    }

    pub fn with_stride(mut self, stride: (usize, usize)) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_angular_step(mut self, step: (f64, f64)) -> Self {
        self.angular_step = Some(step);
        self
    }

    pub fn with_sec_latitude(mut self, sec: SecLatitude) -> Self {
        self.sec_latitude = sec;
        self
    }

    pub fn output(&self) -> (usize, usize) {
        (
            self.input.0.div_ceil(self.stride.0),
            self.input.1.div_ceil(self.stride.1),
        )
    }

    fn step(&self) -> (f64, f64) {
        self.angular_step
            .unwrap_or((PI / self.input.0 as f64, TAU / self.input.1 as f64))
    }

    fn key(&self) -> (GridMode, [usize; 6], Option<(u64, u64)>, SecLatitude) {
        (
            self.mode,
            [
                self.kernel.0,
                self.kernel.1,
                self.input.0,
                self.input.1,
                self.stride.0,
                self.stride.1,
            ],
            self.angular_step.map(|(a, b)| (a.to_bits(), b.to_bits())),
            self.sec_latitude,
        )
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for GridSpec {}

impl Hash for GridSpec {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state);
    }
}

/// One kernel tap of one output row, resolved for output column 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    /// Continuous source column (unwrapped; output column 0 is centered at 0).
    pub u_src: f64,
    /// Continuous source row (before vertical clamping).
    pub v_src: f64,
    pub rows: [usize; 4],
    /// Source columns for output column 0, already wrapped into `[0, W)`.
    pub cols: [usize; 4],
    pub weights: [f64; 4],
}

impl Tap {
    fn bilinear(u: f64, v: f64, height: usize, width: usize) -> Self {
        let vc = v.clamp(0.0, (height - 1) as f64);
        let v0 = vc.floor();
        let fv = vc - v0;
        let r0 = v0 as usize;
        let r1 = (r0 + 1).min(height - 1);
        let u0 = u.floor();
        let fu = u - u0;
        let c0 = (u0 as i64).rem_euclid(width as i64) as usize;
        let c1 = (c0 + 1) % width;
        Self {
            u_src: u,
            v_src: v,
            rows: [r0, r0, r1, r1],
            cols: [c0, c1, c0, c1],
            weights: [
                (1.0 - fu) * (1.0 - fv),
                fu * (1.0 - fv),
                (1.0 - fu) * fv,
                fu * fv,
            ],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SamplingGrid {
    spec: GridSpec,
    out: (usize, usize),
    taps: Vec<Tap>,
}

impl SamplingGrid {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mode(&self) -> GridMode {
        self.spec.mode
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.spec.kernel
    }

    pub fn input(&self) -> (usize, usize) {
        self.spec.input
    }

    pub fn stride(&self) -> (usize, usize) {
        self.spec.stride
    }

    pub fn output(&self) -> (usize, usize) {
        self.out
    }

    pub fn taps_per_row(&self) -> usize {
        self.spec.kernel.0 * self.spec.kernel.1
    }

    /// All taps of output row `row`, in kernel raster order.
    pub fn row_taps(&self, row: usize) -> &[Tap] {
        let t = self.taps_per_row();
        &self.taps[row * t..(row + 1) * t]
    }

    /// Tap `(i, j)` of `row`, with `i`, `j` centered at zero (`i` grows downward).
    pub fn tap(&self, row: usize, i: isize, j: isize) -> &Tap {
        let (kh, kw) = self.spec.kernel;
        let ii = (i + (kh / 2) as isize) as usize;
        let jj = (j + (kw / 2) as isize) as usize;
        &self.row_taps(row)[ii * kw + jj]
    }

    /// Source column of bilinear neighbour `q` of `tap` for output column `col`.
    #[inline]
    pub fn source_col(&self, tap: &Tap, q: usize, col: usize) -> usize {
        let w = self.spec.input.1;
        let c = tap.cols[q] + col * self.spec.stride.1;
        if c >= w {
            c - w
        } else {
            c
        }
    }

    /// Continuous source coordinate of `tap` for output column `col`.
    pub fn source_coord(&self, tap: &Tap, col: usize) -> (f64, f64) {
        (tap.u_src + (col * self.spec.stride.1) as f64, tap.v_src)
    }
}

pub fn build_grid(spec: GridSpec) -> Result<SamplingGrid, SamplingError> {
    let (kh, kw) = spec.kernel;
    let (h, w) = spec.input;
    if kh == 0 || kw == 0 || kh % 2 == 0 || kw % 2 == 0 {
        return Err(SamplingError::EvenKernel(kh, kw));
    }
    if kh > h || kw > w {
        return Err(SamplingError::KernelExceedsInput {
            kernel: spec.kernel,
            input: spec.input,
        });
    }
    if spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(SamplingError::ZeroStride);
    }
    let (dv, du) = spec.step();
    if spec.mode != GridMode::Planar {
        // the outermost tap must stay within a quarter turn of the center
        let extent = ((kh / 2) as f64 * dv).max((kw / 2) as f64 * du);
        if extent >= FRAC_PI_2 {
            return Err(SamplingError::KernelTooLarge(extent));
        }
    }

    let out = spec.output();
    let pole = FRAC_PI_2 - POLE_EPSILON;
    let px_per_rad = w as f64 / TAU;
    let (hk, hw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut taps = Vec::with_capacity(out.0 * kh * kw);
    for r in 0..out.0 {
        let center_row = r * spec.stride.0;
        let lat0 = row_lat(center_row, h);
        for i in -hk..=hk {
            for j in -hw..=hw {
                let (u, v) = match spec.mode {
                    GridMode::Planar => (j as f64, center_row as f64 + i as f64),
                    GridMode::Equirect => {
                        let lat = (lat0 - i as f64 * dv).clamp(-pole, pole);
                        let sec_at = match spec.sec_latitude {
                            SecLatitude::Tap => lat,
                            SecLatitude::Center => lat0.clamp(-pole, pole),
                        };
                        let dlon = j as f64 * du / sec_at.cos();
                        (dlon * px_per_rad, lat_to_v(lat, h))
                    }
                    GridMode::Gnomonic => {
                        let x = (j as f64 * du).tan();
                        let y = (-(i as f64) * dv).tan();
                        let p = gnomonic_inverse(LatLon { lat: lat0, lon: 0.0 }, x, y);
                        (p.lon * px_per_rad, lat_to_v(p.lat.clamp(-pole, pole), h))
                    }
                };
                taps.push(Tap::bilinear(u, v, h, w));
            }
        }
    }
    Ok(SamplingGrid { spec, out, taps })
}

/// Bilinear sample of every channel of `image` at one tap of one output pixel.
pub fn sample(
    image: &Tensor,
    grid: &SamplingGrid,
    out_row: usize,
    out_col: usize,
    tap: usize,
) -> Result<Vec<f64>, SamplingError> {
    let shape = image.shape();
    let (h, w) = grid.input();
    if shape.len() != 3 || shape[1] != h || shape[2] != w {
        return Err(SamplingError::ShapeMismatch {
            expected: vec![0, h, w],
            got: shape.to_vec(),
        });
    }
    let t = &grid.row_taps(out_row)[tap];
    let data = image.data();
    Ok((0..shape[0])
        .map(|ch| {
            (0..4)
                .map(|q| {
                    let col = grid.source_col(t, q, out_col);
                    t.weights[q] * data[(ch * h + t.rows[q]) * w + col]
                })
                .sum()
        })
        .collect())
}

/// Process-wide cache of built grids. Readers run concurrently; insertion is serialized.
#[derive(Default)]
pub struct GridCache {
    grids: RwLock<HashMap<GridSpec, Arc<SamplingGrid>>>,
}

impl GridCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn global() -> &'static GridCache {
        static CACHE: OnceLock<GridCache> = OnceLock::new();
        CACHE.get_or_init(GridCache::new)
    }

    pub fn get(&self, spec: GridSpec) -> Result<Arc<SamplingGrid>, SamplingError> {
        if let Some(g) = self.grids.read().unwrap().get(&spec) {
            return Ok(Arc::clone(g));
        }
        let built = Arc::new(build_grid(spec)?);
        let mut map = self.grids.write().unwrap();
        Ok(Arc::clone(map.entry(spec).or_insert(built)))
    }

    pub fn len(&self) -> usize {
        self.grids.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Correlation of two equirectangular maps under rotations about the vertical axis.
///
/// `out[k] = Σ h[r, (c − k) mod W] · f[r, c] · cos(lat_r) · (2π/W) · (π/H)`, the
/// area-weighted sphere inner product of `f` with `h` rotated by `k` columns.
pub fn azimuthal_correlate(f: &Tensor, h: &Tensor) -> Result<Tensor, SamplingError> {
    if f.shape().len() != 2 || f.shape() != h.shape() {
        return Err(SamplingError::ShapeMismatch {
            expected: f.shape().to_vec(),
            got: h.shape().to_vec(),
        });
    }
    let (rows, w) = (f.shape()[0], f.shape()[1]);
    let cell = (TAU / w as f64) * (PI / rows as f64);
    let mut out = vec![0.0; w];
    for r in 0..rows {
        let weight = row_lat(r, rows).cos() * cell;
        let fr = &f.data()[r * w..(r + 1) * w];
        let hr = &h.data()[r * w..(r + 1) * w];
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (c, fv) in fr.iter().enumerate() {
                acc += hr[(c + w - k) % w] * fv;
            }
            *o += acc * weight;
        }
    }
    Ok(Tensor::from_vec(out))
}
