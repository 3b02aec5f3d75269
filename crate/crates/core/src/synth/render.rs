use rand_distr::{Distribution, Normal};

use super::truth::{classify, gt_boundaries, Surface};
use super::{RoomSpec, SynthError};
use crate::geom::{column_lon, row_lat};
use crate::rng::stream;
use crate::tensor::Tensor;

const NOISE_SIGMA: f64 = 0.02;

/// Renders `spec` as a `[3, H, W]` equirectangular image with channels in `[0, 1]`.
///
/// Every pixel shows the surface its center ray hits, colored by the
/// surface's albedo times a world-anchored texture, plus Gaussian noise.
pub fn render(spec: &RoomSpec, width: usize, height: usize) -> Result<Tensor, SynthError> {
    let layout = spec.layout();
    let gt = gt_boundaries(&layout, width, height)?;
    let labels = classify(&gt, height);
    let cam = spec.camera_height;
    let above = spec.height - cam;
    let plane = width * height;
    let mut img = vec![0.0; 3 * plane];
    let mut rng = stream(spec.seed, "noise");
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");

    for r in 0..height {
        let tan_lat = row_lat(r, height).tan();
        for c in 0..width {
            let (s, co) = column_lon(c, width).sin_cos();
            let idx = r * width + c;
            let (albedo, factor) = match labels[idx] {
                Surface::Ceiling => {
                    let reach = above / tan_lat;
                    let p = [spec.camera[0] + reach * s, spec.camera[1] + reach * co];
                    (spec.ceiling.albedo, spec.ceiling.texture.factor(p[0], p[1]))
                }
                Surface::Floor => {
                    let reach = cam / -tan_lat;
                    let p = [spec.camera[0] + reach * s, spec.camera[1] + reach * co];
                    (spec.floor.albedo, spec.floor.texture.factor(p[0], p[1]))
                }
                Surface::Wall(k) => {
                    let d = gt.distance[c];
                    let p = [spec.camera[0] + d * s, spec.camera[1] + d * co];
                    let y = cam + d * tan_lat;
                    let a = spec.footprint[k];
                    let b = spec.footprint[(k + 1) % spec.footprint.len()];
                    let x_parallel = (b[0] - a[0]).abs() > (b[1] - a[1]).abs();
                    let along = if x_parallel { p[0] } else { p[1] };
                    let shade = if x_parallel { 1.0 } else { 0.85 };
                    let m = &spec.walls[k];
                    (m.albedo, shade * m.texture.factor(along, y))
                }
            };
            for ch in 0..3 {
                let v = albedo[ch] * factor + noise.sample(&mut rng);
                img[ch * plane + idx] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Tensor::new(vec![3, height, width], img)?)
}
