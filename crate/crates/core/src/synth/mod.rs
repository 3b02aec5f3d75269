//! Synthetic Manhattan rooms: sampling, ground truth, rendering, augmentation
//! and the on-disk dataset format.

mod dataset;
mod render;
mod stretch;
mod truth;

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::DEFAULT_CAMERA_HEIGHT;
use crate::layout::{boundary_distance, contains, validate_rectilinear, LayoutError, Point, RoomLayout3D};
use crate::rng::stream;
use crate::tensor::TensorError;

pub use dataset::{
    generate_dataset, list_samples, load_png, read_annotation, read_sample, save_png,
    write_sample, Annotation,
};
pub use render::render;
pub use stretch::{
    pano_stretch_layout, pano_stretch_map, stretch_image, stretch_layout, stretch_map,
    StretchFactors,
};
pub use truth::{classify, gt_boundaries, project_corners, CornerAnnotation, GroundTruth, Surface};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("column {0}: ray from the camera does not hit the footprint")]
    DegenerateRay(usize),
    #[error("stretch factor must be positive, got {0}")]
    InvalidFactor(f64),
    #[error("could not sample a valid room in {0} attempts")]
    Exhausted(usize),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("png: {0}")]
    Png(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    /// Alternating squares of side `size` meters.
    Checker { size: f64 },
    /// Sawtooth brightness ramp repeating every `period` meters.
    Gradient { period: f64 },
}

impl Texture {
    /// Brightness factor at surface coordinates `(s, t)` in meters.
    pub fn factor(&self, s: f64, t: f64) -> f64 {
        match *self {
            Texture::Checker { size } => {
                let k = (s / size).floor() as i64 + (t / size).floor() as i64;
                if k.rem_euclid(2) == 0 {
                    1.0
                } else {
                    0.78
                }
            }
            Texture::Gradient { period } => 0.75 + 0.25 * (s / period).rem_euclid(1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    pub texture: Texture,
}

/// Generative description of a room. Coordinates are world meters with the
/// footprint counter-clockwise in `(x, z)`; `walls[i]` styles edge
/// `footprint[i] → footprint[i + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub footprint: Vec<Point>,
    pub height: f64,
    pub camera: Point,
    pub camera_height: f64,
    pub walls: Vec<Material>,
    pub floor: Material,
    pub ceiling: Material,
    pub seed: u64,
}

impl RoomSpec {
    /// The room in the camera frame.
    pub fn layout(&self) -> RoomLayout3D {
        RoomLayout3D {
            footprint: self
                .footprint
                .iter()
                .map(|p| [p[0] - self.camera[0], p[1] - self.camera[1]])
                .collect(),
            height: self.height,
            camera_height: self.camera_height,
        }
    }

    pub fn is_l_shape(&self) -> bool {
        self.footprint.len() == 6
    }

    /// Checks the structural invariants every sampled room satisfies.
    pub fn validate(&self, clearance: f64) -> Result<(), SynthError> {
        validate_rectilinear(&self.footprint)?;
        let n = self.footprint.len();
        if n != 4 && n != 6 {
            return Err(SynthError::Invalid(format!("{n} vertices")));
        }
        if crate::layout::signed_area(&self.footprint) <= 0.0 {
            return Err(SynthError::Invalid("footprint is clockwise".into()));
        }
        if self.walls.len() != n {
            return Err(SynthError::Invalid("one material per wall required".into()));
        }
        if !(self.height > self.camera_height && self.camera_height > 0.0) {
            return Err(SynthError::Invalid(format!("height {}", self.height)));
        }
        if !contains(&self.footprint, self.camera) {
            return Err(SynthError::Invalid("camera outside footprint".into()));
        }
        let gap = boundary_distance(&self.footprint, self.camera);
        if gap < clearance {
            return Err(SynthError::Invalid(format!("camera {gap:.3} m from a wall")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub extent_min: f64,
    pub extent_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    pub l_fraction: f64,
    /// Notch size of an L-room as a fraction of each side.
    pub notch_min: f64,
    pub notch_max: f64,
    pub clearance: f64,
    /// Smallest allowed angular gap between two corners seen from the camera.
    pub min_corner_separation_deg: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            extent_min: 3.0,
            extent_max: 8.0,
            height_min: 2.4,
            height_max: 3.6,
            l_fraction: 0.5,
            notch_min: 0.3,
            notch_max: 0.7,
            clearance: 0.3,
            min_corner_separation_deg: 12.0,
        }
    }
}

const MAX_ATTEMPTS: usize = 10_000;

/// Samples a room deterministically from `seed`.
///
/// The camera is placed where it sees every wall: anywhere in a cuboid, and in
/// the rectangle shared by both arms of an L, at least `clearance` from walls
/// and from the extensions of the two walls meeting at the reflex corner.
pub fn sample_room(cfg: &GeneratorConfig, seed: u64) -> Result<RoomSpec, SynthError> {
    let mut rng = stream(seed, "room");
    // the shape class is drawn once so rejections cannot bias the mix
    let l_shape = rng.random_bool(cfg.l_fraction);
    for _ in 0..MAX_ATTEMPTS {
        if let Some(spec) = try_room(cfg, seed, l_shape, &mut rng) {
            return Ok(spec);
        }
    }
    Err(SynthError::Exhausted(MAX_ATTEMPTS))
}

fn try_room(
    cfg: &GeneratorConfig,
    seed: u64,
    l_shape: bool,
    rng: &mut ChaCha8Rng,
) -> Option<RoomSpec> {
    let a = rng.random_range(cfg.extent_min..=cfg.extent_max);
    let b = rng.random_range(cfg.extent_min..=cfg.extent_max);
    let height = rng.random_range(cfg.height_min..=cfg.height_max);

    let (footprint, kernel) = if l_shape {
        let na = a * rng.random_range(cfg.notch_min..=cfg.notch_max);
        let nb = b * rng.random_range(cfg.notch_min..=cfg.notch_max);
        let quadrant = rng.random_range(0..4u8);
        let poly = vec![
            [0.0, 0.0],
            [a, 0.0],
            [a, b - nb],
            [a - na, b - nb],
            [a - na, b],
            [0.0, b],
        ];
        let (fx, fz) = (quadrant & 1 == 1, quadrant & 2 == 2);
        let flip = |p: Point| [if fx { a - p[0] } else { p[0] }, if fz { b - p[1] } else { p[1] }];
        let mut poly: Vec<Point> = poly.into_iter().map(flip).collect();
        if fx != fz {
            poly.reverse();
        }
        let k0 = flip([0.0, 0.0]);
        let k1 = flip([a - na, b - nb]);
        let kernel = [k0[0].min(k1[0]), k0[0].max(k1[0]), k0[1].min(k1[1]), k0[1].max(k1[1])];
        (poly, kernel)
    } else {
        (vec![[0.0, 0.0], [a, 0.0], [a, b], [0.0, b]], [0.0, a, 0.0, b])
    };

    let c = cfg.clearance;
    let (x0, x1, z0, z1) = (kernel[0] + c, kernel[1] - c, kernel[2] + c, kernel[3] - c);
    if x0 >= x1 || z0 >= z1 {
        return None;
    }
    let camera = [rng.random_range(x0..x1), rng.random_range(z0..z1)];

    let mut lons: Vec<f64> = footprint
        .iter()
        .map(|p| (p[0] - camera[0]).atan2(p[1] - camera[1]))
        .collect();
    lons.sort_by(f64::total_cmp);
    let min_gap = lons
        .iter()
        .zip(lons.iter().cycle().skip(1))
        .map(|(a, b)| (b - a).rem_euclid(TAU))
        .fold(f64::INFINITY, f64::min);
    if min_gap < cfg.min_corner_separation_deg.to_radians() {
        return None;
    }

    let walls = (0..footprint.len()).map(|_| wall_material(rng)).collect();
    let floor = Material {
        albedo: [
            rng.random_range(0.30..0.50),
            rng.random_range(0.22..0.36),
            rng.random_range(0.12..0.26),
        ],
        texture: random_texture(rng),
    };
    let tone = rng.random_range(0.82..0.95);
    let ceiling = Material {
        albedo: [tone, tone, tone - rng.random_range(0.0..0.05)],
        texture: Texture::Gradient {
            period: rng.random_range(1.0..3.0),
        },
    };
    let spec = RoomSpec {
        footprint,
        height,
        camera,
        camera_height: DEFAULT_CAMERA_HEIGHT,
        walls,
        floor,
        ceiling,
        seed,
    };
    spec.validate(cfg.clearance).ok()?;
    Some(spec)
}

fn random_texture(rng: &mut ChaCha8Rng) -> Texture {
    if rng.random_bool(0.5) {
        Texture::Checker {
            size: rng.random_range(0.3..0.8),
        }
    } else {
        Texture::Gradient {
            period: rng.random_range(0.5..2.0),
        }
    }
}

fn wall_material(rng: &mut ChaCha8Rng) -> Material {
    Material {
        albedo: [
            rng.random_range(0.40..0.80),
            rng.random_range(0.40..0.80),
            rng.random_range(0.40..0.80),
        ],
        texture: random_texture(rng),
    }
}
