//! Sphere geometry shared by every stage of the pipeline.
//!
//! Conventions:
//! - latitude is measured from the equator, `+π/2` at the top image row (zenith);
//! - longitude lives in `[-π, π)` and increases left to right;
//! - pixel centers sit at half-integer angular offsets, so column `i` covers
//!   longitude `((i + 0.5) / W)·2π − π` at its center;
//! - world frame: camera at the origin, `y` up, floor at `y = −camera_height`,
//!   a column at longitude `lon` looks along `(sin lon, 0, cos lon)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera height assumed throughout recovery and synthesis (meters).
pub const DEFAULT_CAMERA_HEIGHT: f64 = 1.6;

/// Horizontal distances are clamped here for boundaries that graze the horizon.
pub const MAX_FLOOR_DISTANCE: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("floor boundary latitude must be below the horizon, got {0} rad")]
    NonNegativeLatitude(f64),
    #[error("ceiling boundary latitude must be above the horizon, got {0} rad")]
    NonPositiveLatitude(f64),
    #[error("wall distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
}

/// Wraps a longitude into `[-π, π)`. Values already in range are returned untouched.
pub fn normalize_lon(lon: f64) -> f64 {
    if (-PI..PI).contains(&lon) {
        return lon;
    }
    let wrapped = (lon + PI).rem_euclid(TAU) - PI;
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self {
            lat: lat.clamp(-FRAC_PI_2, FRAC_PI_2),
            lon: normalize_lon(lon),
        }
    }

    /// Unit direction in the world frame.
    pub fn to_unit(self) -> [f64; 3] {
        let (sl, cl) = self.lat.sin_cos();
        let (so, co) = self.lon.sin_cos();
        [cl * so, sl, cl * co]
    }

    pub fn from_unit(v: [f64; 3]) -> Self {
        let horiz = v[0].hypot(v[2]);
        Self::new(v[1].atan2(horiz), v[0].atan2(v[2]))
    }
}

/// Continuous pixel position in an equirectangular image of `width × height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub height_m: f64,
    pub width: usize,
    pub image_height: usize,
}

impl CameraModel {
    pub fn new(width: usize, image_height: usize) -> Self {
        Self {
            height_m: DEFAULT_CAMERA_HEIGHT,
            width,
            image_height,
        }
    }

    pub fn with_height(mut self, height_m: f64) -> Self {
        assert!(height_m > 0.0, "camera height must be positive");
        self.height_m = height_m;
        self
    }
}

impl Default for CameraModel {
    fn default() -> Self {
        Self::new(1024, 512)
    }
}

pub fn pixel_to_latlon(p: PixelCoord) -> LatLon {
    let w = p.width as f64;
    let h = p.height as f64;
    let v = p.v.clamp(-0.5, h - 0.5);
    let lon = (p.u + 0.5) / w * TAU - PI;
    let lat = FRAC_PI_2 - (v + 0.5) / h * PI;
    LatLon::new(lat, lon)
}

pub fn latlon_to_pixel(a: LatLon, width: usize, height: usize) -> PixelCoord {
    let w = width as f64;
    let h = height as f64;
    let lon = normalize_lon(a.lon);
    let mut u = (lon + PI) / TAU * w - 0.5;
    if u >= w - 0.5 {
        u -= w;
    }
    let v = (FRAC_PI_2 - a.lat) / PI * h - 0.5;
    PixelCoord {
        u,
        v,
        width,
        height,
    }
}

/// Longitude of the center of column `col`.
pub fn column_lon(col: usize, width: usize) -> f64 {
    normalize_lon((col as f64 + 0.5) / width as f64 * TAU - PI)
}

/// Latitude of the center of row `row`.
pub fn row_lat(row: usize, height: usize) -> f64 {
    FRAC_PI_2 - (row as f64 + 0.5) / height as f64 * PI
}

/// Continuous column coordinate of a longitude (pixel centers at integers).
pub fn lon_to_u(lon: f64, width: usize) -> f64 {
    latlon_to_pixel(LatLon { lat: 0.0, lon }, width, 1).u
}

/// Continuous row coordinate of a latitude.
pub fn lat_to_v(lat: f64, height: usize) -> f64 {
    (FRAC_PI_2 - lat) / PI * height as f64 - 0.5
}

/// Horizontal distance to the wall whose floor boundary is seen at `lat_f`.
pub fn floor_boundary_to_distance(lat_f: f64, cam: &CameraModel) -> Result<f64, GeomError> {
    if lat_f >= 0.0 || lat_f.is_nan() {
        return Err(GeomError::NonNegativeLatitude(lat_f));
    }
    let d = cam.height_m / (-lat_f).tan();
    Ok(d.min(MAX_FLOOR_DISTANCE))
}

/// Floor-boundary latitude of a wall at horizontal distance `d`.
pub fn distance_to_floor_latitude(d: f64, cam: &CameraModel) -> f64 {
    -(cam.height_m / d).atan()
}

/// Room height implied by a ceiling boundary at `lat_c` above a wall at distance `d`.
pub fn ceiling_height_at_column(lat_c: f64, d: f64, cam: &CameraModel) -> Result<f64, GeomError> {
    if lat_c <= 0.0 || lat_c.is_nan() {
        return Err(GeomError::NonPositiveLatitude(lat_c));
    }
    if d <= 0.0 || d.is_nan() {
        return Err(GeomError::NonPositiveDistance(d));
    }
    Ok(cam.height_m + d * lat_c.tan())
}

/// Inverse gnomonic projection from tangent-plane offsets `(x, y)` around `center`.
///
/// `x` points east (increasing longitude), `y` north.
pub fn gnomonic_inverse(center: LatLon, x: f64, y: f64) -> LatLon {
    let rho = x.hypot(y);
    if rho == 0.0 {
        return center;
    }
    let nu = rho.atan();
    let (sin_nu, cos_nu) = nu.sin_cos();
    let (sin_lat0, cos_lat0) = center.lat.sin_cos();
    let lat = (cos_nu * sin_lat0 + y * sin_nu * cos_lat0 / rho)
        .clamp(-1.0, 1.0)
        .asin();
    let dlon = (x * sin_nu).atan2(rho * cos_lat0 * cos_nu - y * sin_lat0 * sin_nu);
    LatLon::new(lat, center.lon + dlon)
}
