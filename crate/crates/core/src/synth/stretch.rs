//! PanoStretch: scale the scene per axis around the camera and re-project.
//!
//! A scene point `(x, y, z)` moves to `(kx·x, y', kz·z)` where heights above
//! the camera scale by `ky` and heights below stay put, so the camera keeps
//! its distance to the floor. The map sends rays to rays, which lets the
//! image be warped without knowing the scene.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::boundary::BoundaryMap;
use crate::geom::{column_lon, lat_to_v, lon_to_u, row_lat};
use crate::layout::RoomLayout3D;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchFactors {
    pub kx: f64,
    pub ky: f64,
    pub kz: f64,
}

impl StretchFactors {
    pub fn new(kx: f64, ky: f64, kz: f64) -> Result<Self, SynthError> {
        for k in [kx, ky, kz] {
            if !(k > 0.0 && k.is_finite()) {
                return Err(SynthError::InvalidFactor(k));
            }
        }
        Ok(Self { kx, ky, kz })
    }

    pub fn identity() -> Self {
        Self {
            kx: 1.0,
            ky: 1.0,
            kz: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn inverse(&self) -> Self {
        Self {
            kx: 1.0 / self.kx,
            ky: 1.0 / self.ky,
            kz: 1.0 / self.kz,
        }
    }

    /// `kx`, `kz` log-uniform in `[1/2, 2]`, `ky = 1`.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self {
            kx: rng.random_range(-ln2..=ln2).exp(),
            ky: 1.0,
            kz: rng.random_range(-ln2..=ln2).exp(),
        }
    }

    /// Source longitude of stretched longitude `lon`, and the ratio
    /// `source distance / stretched distance` along it.
    fn unstretch_lon(&self, lon: f64) -> (f64, f64) {
        let (s, c) = lon.sin_cos();
        let x = s / self.kx;
        let z = c / self.kz;
        (x.atan2(z), x.hypot(z))
    }
}

pub fn stretch_layout(layout: &RoomLayout3D, k: StretchFactors) -> RoomLayout3D {
    let cam = layout.camera_height;
    RoomLayout3D {
        footprint: layout
            .footprint
            .iter()
            .map(|p| [p[0] * k.kx, p[1] * k.kz])
            .collect(),
        height: cam + k.ky * (layout.height - cam),
        camera_height: cam,
    }
}

/// Value of `a·sin + b·cos` through two samples.
fn great_circle(l0: f64, v0: f64, l1: f64, v1: f64) -> (f64, f64) {
    let (s0, c0) = l0.sin_cos();
    let (s1, c1) = l1.sin_cos();
    let det = s0 * c1 - c0 * s1;
    ((v0 * c1 - v1 * c0) / det, (s0 * v1 - s1 * v0) / det)
}

fn eval_gc((a, b): (f64, f64), lon: f64) -> f64 {
    let (s, c) = lon.sin_cos();
    a * s + b * c
}

/// Interpolates a per-column quantity that is linear in `(sin lon, cos lon)`
/// along every wall, such as the tangent of a boundary latitude.
///
/// Between columns `c1` and `c2` the wall lines through `(c0, c1)` and
/// `(c2, c3)` are compared with the samples: if either explains both ends
/// there is no corner in between and the value is exact; otherwise the two
/// lines are intersected and each side uses its own wall.
fn interp_walls(vals: &[f64], lon: f64) -> f64 {
    let w = vals.len();
    let u = lon_to_u(lon, w);
    let base = u.floor();
    let frac = u - base;
    let c1 = (base as i64).rem_euclid(w as i64) as usize;
    if frac < 1e-12 {
        return vals[c1];
    }
    let at = |k: i64| (c1 as i64 + k).rem_euclid(w as i64) as usize;
    let (c0, c2, c3) = (at(-1), at(1), at(2));
    let l = |c: usize| column_lon(c, w);
    let step = std::f64::consts::TAU / w as f64;
    let lon1 = l(c1);
    // unwrap every longitude relative to c1
    let rel = |x: f64| lon1 + crate::geom::normalize_lon(x - lon1);
    let (lon0, lon2, lon3) = (lon1 - step, lon1 + step, lon1 + 2.0 * step);
    let t = rel(lon);

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0);
    let mid = great_circle(lon1, vals[c1], lon2, vals[c2]);
    if w < 4 {
        return eval_gc(mid, t);
    }
    let left = great_circle(lon0, vals[c0], lon1, vals[c1]);
    if close(eval_gc(left, lon2), vals[c2]) {
        return eval_gc(mid, t);
    }
    let right = great_circle(lon2, vals[c2], lon3, vals[c3]);
    if close(eval_gc(right, lon1), vals[c1]) {
        return eval_gc(mid, t);
    }
    // corner between c1 and c2: where the two wall lines meet
    let (da, db) = (left.0 - right.0, left.1 - right.1);
    let root = (-db).atan2(da);
    let corner = [root, root + std::f64::consts::PI]
        .into_iter()
        .map(|r| lon1 + crate::geom::normalize_lon(r - lon1))
        .find(|r| *r >= lon1 && *r <= lon2);
    match corner {
        Some(r) if t <= r => eval_gc(left, t),
        Some(_) => eval_gc(right, t),
        None => eval_gc(mid, t),
    }
}

fn interp_linear(vals: &[f64], lon: f64) -> f64 {
    let w = vals.len();
    let u = lon_to_u(lon, w);
    let base = u.floor();
    let frac = u - base;
    let c1 = (base as i64).rem_euclid(w as i64) as usize;
    let c2 = (c1 + 1) % w;
    (1.0 - frac) * vals[c1] + frac * vals[c2]
}

/// Stretches a boundary map directly. Boundaries are interpolated along wall
/// lines (exact on noiseless maps); `y_w` is resampled linearly.
pub fn stretch_map(map: &BoundaryMap, k: StretchFactors) -> BoundaryMap {
    if k.is_identity() {
        return map.clone();
    }
    let w = map.width();
    let tan_f: Vec<f64> = (0..w).map(|c| (-map.floor_lat(c)).tan()).collect();
    let tan_c: Vec<f64> = (0..w).map(|c| map.ceiling_lat(c).tan()).collect();
    let mut out = BoundaryMap {
        y_c: Vec::with_capacity(w),
        y_f: Vec::with_capacity(w),
        y_w: Vec::with_capacity(w),
    };
    for c in 0..w {
        let (lon, f) = k.unstretch_lon(column_lon(c, w));
        let tf = f * interp_walls(&tan_f, lon);
        let tc = k.ky * f * interp_walls(&tan_c, lon);
        out.y_f.push(-tf.atan() / FRAC_PI_2);
        out.y_c.push(tc.atan() / FRAC_PI_2);
        out.y_w.push(interp_linear(&map.y_w, lon));
    }
    out
}

/// Warps a `[C, H, W]` panorama: every output pixel's ray is mapped back into
/// the unstretched scene and the source is sampled bilinearly (wrapping in
/// longitude, clamping in latitude).
pub fn stretch_image(image: &Tensor, k: StretchFactors) -> Result<Tensor, SynthError> {
    let shape = image.shape();
    let [channels, h, w] = shape[..] else {
        return Err(SynthError::Invalid(format!("image shape {shape:?}")));
    };
    if k.is_identity() {
        return Ok(image.clone());
    }
    let src = image.data();
    let plane = h * w;
    let mut out = vec![0.0; channels * plane];
    for r in 0..h {
        let (sl, cl) = row_lat(r, h).sin_cos();
        let y = if sl > 0.0 { sl / k.ky } else { sl };
        for c in 0..w {
            let (so, co) = column_lon(c, w).sin_cos();
            let x = cl * so / k.kx;
            let z = cl * co / k.kz;
            let lat = y.atan2(x.hypot(z));
            let lon = x.atan2(z);
            let u = lon_to_u(lon, w);
            let v = lat_to_v(lat, h).clamp(0.0, (h - 1) as f64);
            let (u0, v0) = (u.floor(), v.floor());
            let (fu, fv) = (u - u0, v - v0);
            let c0 = (u0 as i64).rem_euclid(w as i64) as usize;
            let c1 = (c0 + 1) % w;
            let r0 = v0 as usize;
            let r1 = (r0 + 1).min(h - 1);
            for ch in 0..channels {
                let p = &src[ch * plane..(ch + 1) * plane];
                out[ch * plane + r * w + c] = (1.0 - fv)
                    * ((1.0 - fu) * p[r0 * w + c0] + fu * p[r0 * w + c1])
                    + fv * ((1.0 - fu) * p[r1 * w + c0] + fu * p[r1 * w + c1]);
            }
        }
    }
    Ok(Tensor::new(shape.to_vec(), out)?)
}

pub fn pano_stretch_layout(
    image: &Tensor,
    layout: &RoomLayout3D,
    k: StretchFactors,
) -> Result<(Tensor, RoomLayout3D), SynthError> {
    Ok((stretch_image(image, k)?, stretch_layout(layout, k)))
}

pub fn pano_stretch_map(
    image: &Tensor,
    map: &BoundaryMap,
    k: StretchFactors,
) -> Result<(Tensor, BoundaryMap), SynthError> {
    Ok((stretch_image(image, k)?, stretch_map(map, k)))
}
