//! Independent oracles and shared check suites for the integration and
//! acceptance tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::sync::Arc;

use omnilayout::autodiff::{grad_check, AutodiffError, GradCheckConfig, GruParams, Tape, Var};
use omnilayout::boundary::BoundaryMap;
use omnilayout::layout::{Point, RoomLayout3D};
use omnilayout::sampling::{build_grid, GridMode, GridSpec, SamplingGrid};
use omnilayout::synth::{sample_room, GeneratorConfig, RoomSpec};
use omnilayout::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Direct planar convolution with circular columns and edge-clamped rows.
pub fn naive_planar_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: (usize, usize)) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (h.div_ceil(stride.0), wd.div_ceil(stride.1));
    let mut out = vec![0.0; o * ho * wo];
    for oc in 0..o {
        for r in 0..ho {
            for col in 0..wo {
                let mut acc = b.data()[oc];
                for ic in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let sr = (r * stride.0) as isize + i as isize - (kh / 2) as isize;
                            let sc = (col * stride.1) as isize + j as isize - (kw / 2) as isize;
                            let sr = sr.clamp(0, h as isize - 1) as usize;
                            let sc = sc.rem_euclid(wd as isize) as usize;
                            acc += w.data()[((oc * c + ic) * kh + i) * kw + j] * x.at3(ic, sr, sc);
                        }
                    }
                }
                out[(oc * ho + r) * wo + col] = acc;
            }
        }
    }
    Tensor::new(vec![o, ho, wo], out).unwrap()
}

/// Scalar bilinear interpolation of one channel at continuous `(u, v)`.
pub fn bilinear_oracle(x: &Tensor, ch: usize, u: f64, v: f64) -> f64 {
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let v = v.max(0.0).min((h - 1) as f64);
    let v0 = v.floor();
    let u0 = u.floor();
    let (fv, fu) = (v - v0, u - u0);
    let r0 = v0 as usize;
    let r1 = (r0 + 1).min(h - 1);
    let wrap = |c: f64| (c as i64).rem_euclid(w as i64) as usize;
    let (c0, c1) = (wrap(u0), wrap(u0 + 1.0));
    x.at3(ch, r0, c0) * (1.0 - fu) * (1.0 - fv)
        + x.at3(ch, r0, c1) * fu * (1.0 - fv)
        + x.at3(ch, r1, c0) * (1.0 - fu) * fv
        + x.at3(ch, r1, c1) * fu * fv
}

/// Triple-loop rotation correlation on the sphere.
pub fn azimuthal_oracle(f: &Tensor, g: &Tensor) -> Vec<f64> {
    let (h, w) = (f.shape()[0], f.shape()[1]);
    (0..w)
        .map(|k| {
            let mut total = 0.0;
            for r in 0..h {
                let lat = FRAC_PI_2 - (r as f64 + 0.5) * PI / h as f64;
                for c in 0..w {
                    let rotated = g.data()[r * w + (c + w - k) % w];
                    total += rotated * f.data()[r * w + c] * lat.cos() * (TAU / w as f64) * (PI / h as f64);
                }
            }
            total
        })
        .collect()
}

/// Boolean inside-mask of a polygon on the cell centers of one raster row.
fn fill_row(poly: &[Point], z: f64, x0: f64, cell: f64, n: usize, mask: &mut [bool]) {
    mask.fill(false);
    let mut xs: Vec<f64> = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if (a[1] <= z) != (b[1] <= z) {
            xs.push(a[0] + (z - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
        }
    }
    xs.sort_by(f64::total_cmp);
    for pair in xs.chunks(2) {
        let lo = ((pair[0] - x0) / cell - 0.5).ceil().max(0.0) as usize;
        let hi = ((pair[1] - x0) / cell - 0.5).floor();
        if hi < 0.0 {
            continue;
        }
        let hi = (hi as usize).min(n - 1);
        for m in mask.iter_mut().take(hi + 1).skip(lo) {
            *m = true;
        }
    }
}

/// Volume IoU by rasterizing both prisms: `n × n` cells over the joint x–z
/// bounding box and `layers` vertical slabs with fractional coverage.
pub fn voxel_iou(a: &RoomLayout3D, b: &RoomLayout3D, n: usize, layers: usize) -> f64 {
    let pts = a.footprint.iter().chain(&b.footprint);
    let (mut xmin, mut xmax, mut zmin, mut zmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        xmin = xmin.min(p[0]);
        xmax = xmax.max(p[0]);
        zmin = zmin.min(p[1]);
        zmax = zmax.max(p[1]);
    }
    let (cx, cz) = ((xmax - xmin) / n as f64, (zmax - zmin) / n as f64);
    let (mut in_a, mut in_b, mut in_both) = (0usize, 0usize, 0usize);
    let mut ma = vec![false; n];
    let mut mb = vec![false; n];
    for row in 0..n {
        let z = zmin + (row as f64 + 0.5) * cz;
        fill_row(&a.footprint, z, xmin, cx, n, &mut ma);
        fill_row(&b.footprint, z, xmin, cx, n, &mut mb);
        for (p, q) in ma.iter().zip(&mb) {
            in_a += *p as usize;
            in_b += *q as usize;
            in_both += (*p && *q) as usize;
        }
    }
    let (a0, a1) = (-a.camera_height, a.height - a.camera_height);
    let (b0, b1) = (-b.camera_height, b.height - b.camera_height);
    let (y0, y1) = (a0.min(b0), a1.max(b1));
    let lh = (y1 - y0) / layers as f64;
    let cover = |lo: f64, hi: f64, l: usize| {
        let s = y0 + l as f64 * lh;
        ((hi.min(s + lh) - lo.max(s)).max(0.0)) / lh
    };
    let (mut ha, mut hb, mut hab) = (0.0, 0.0, 0.0);
    for l in 0..layers {
        ha += cover(a0, a1, l);
        hb += cover(b0, b1, l);
        hab += cover(a0.max(b0), a1.min(b1), l);
    }
    let cell = cx * cz * lh;
    let va = in_a as f64 * ha * cell;
    let vb = in_b as f64 * hb * cell;
    let vab = in_both as f64 * hab * cell;
    vab / (va + vb - vab)
}

/// Pixel error by classifying every pixel twice with scalar comparisons.
pub fn pixel_error_oracle(a: &BoundaryMap, b: &BoundaryMap, h: usize) -> f64 {
    let w = a.y_c.len();
    let label = |m: &BoundaryMap, r: usize, c: usize| {
        let lat = FRAC_PI_2 - (r as f64 + 0.5) * PI / h as f64;
        if lat > m.y_c[c] * FRAC_PI_2 {
            0
        } else if lat < m.y_f[c] * FRAC_PI_2 {
            2
        } else {
            1
        }
    };
    let mut wrong = 0;
    for r in 0..h {
        for c in 0..w {
            if label(a, r, c) != label(b, r, c) {
                wrong += 1;
            }
        }
    }
    100.0 * wrong as f64 / (h * w) as f64
}

/// Corner error trying every rotation of whole corners.
pub fn corner_error_oracle(pred: &[[f64; 2]], gt: &[[f64; 2]], w: f64, h: f64) -> f64 {
    let corners = gt.len() / 2;
    let mut best = f64::INFINITY;
    for r in 0..corners {
        let mut total = 0.0;
        for i in 0..corners {
            for k in 0..2 {
                let p = pred[2 * ((i + r) % corners) + k];
                let q = gt[2 * i + k];
                let du = (p[0] - q[0]).abs();
                let du = du.min(w - du);
                total += (du * du + (p[1] - q[1]).powi(2)).sqrt();
            }
        }
        best = best.min(total);
    }
    100.0 * best / gt.len() as f64 / (w * w + h * h).sqrt()
}

/// A random room of the requested class.
pub fn room(seed: u64, l_shape: bool) -> RoomSpec {
    let cfg = GeneratorConfig {
        l_fraction: if l_shape { 1.0 } else { 0.0 },
        ..GeneratorConfig::default()
    };
    sample_room(&cfg, seed).unwrap()
}

/// The centered 4×4 m room of height 3 m.
pub fn centered_square(height: f64) -> RoomLayout3D {
    RoomLayout3D::new(vec![[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0]], height)
}

/// Result of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub op: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl GradCase {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.checked > 0
    }
}

fn gru_from(v: &[Var]) -> GruParams {
    GruParams {
        w_z: v[0],
        w_r: v[1],
        w_h: v[2],
        b_z: v[3],
        b_r: v[4],
        b_h: v[5],
    }
}

fn gru_tensors(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Vec<Tensor> {
    let mut out: Vec<Tensor> = (0..3).map(|_| random_tensor(rng, &[k, d + k], 0.8)).collect();
    out.extend((0..3).map(|_| random_tensor(rng, &[k], 0.5)));
    out
}

fn check<F>(op: &str, seed: u64, f: F, inputs: &[Tensor]) -> GradCase
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let report = grad_check(f, inputs, seed, GradCheckConfig::default()).unwrap();
    GradCase {
        op: op.to_string(),
        seed,
        max_rel_error: report.max_rel_error(),
        checked: report.inputs.iter().map(|r| r.checked).sum(),
        skipped: report.inputs.iter().map(|r| r.skipped).sum(),
    }
}

/// Gradient checks of every differentiable operation for one seed.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(1000 + seed);
    let mut cases = Vec::new();

    for mode in GridMode::ALL {
        let stride = if seed % 2 == 0 { (1, 1) } else { (2, 2) };
        let grid: Arc<SamplingGrid> =
            Arc::new(build_grid(GridSpec::new(mode, (3, 3), (6, 8)).with_stride(stride)).unwrap());
        let inputs = [
            random_tensor(&mut r, &[2, 6, 8], 1.0),
            random_tensor(&mut r, &[3, 2, 3, 3], 0.5),
            random_tensor(&mut r, &[3], 0.5),
        ];
        cases.push(check(
            &format!("grid_conv/{mode}"),
            seed,
            |t, v| t.grid_conv(v[0], v[1], v[2], Arc::clone(&grid)),
            &inputs,
        ));
    }

    let (d, k) = (3, 4);
    let mut inputs = vec![random_tensor(&mut r, &[d], 1.0), random_tensor(&mut r, &[k], 0.9)];
    inputs.extend(gru_tensors(&mut r, d, k));
    cases.push(check("gru_cell", seed, |t, v| t.gru_cell(v[0], v[1], &gru_from(&v[2..])), &inputs));

    let mut inputs = vec![random_tensor(&mut r, &[3, d], 1.0)];
    inputs.extend(gru_tensors(&mut r, d, k));
    inputs.extend(gru_tensors(&mut r, d, k));
    cases.push(check(
        "bi_gru",
        seed,
        |t, v| t.bi_gru(v[0], &gru_from(&v[1..7]), &gru_from(&v[7..13])),
        &inputs,
    ));

    let target = random_tensor(&mut r, &[7], 1.0);
    let inputs = [random_tensor(&mut r, &[7], 1.0)];
    cases.push(check("l1_loss", seed, |t, v| t.l1_loss(v[0], &target), &inputs));

    let probs = Tensor::from_vec((0..7).map(|_| r.random_range(0.0..1.0)).collect());
    let inputs = [random_tensor(&mut r, &[7], 3.0)];
    cases.push(check("bce_with_logits", seed, |t, v| t.bce_with_logits(v[0], &probs), &inputs));

    let inputs = [
        random_tensor(&mut r, &[3, 5], 1.0),
        random_tensor(&mut r, &[4, 5], 1.0),
        random_tensor(&mut r, &[4], 1.0),
    ];
    cases.push(check("linear", seed, |t, v| t.linear(v[0], v[1], v[2]), &inputs));

    let inputs = [random_tensor(&mut r, &[2, 4, 8], 1.0), random_tensor(&mut r, &[3, 2, 4], 1.0)];
    cases.push(check(
        "strip+concat_cols",
        seed,
        |t, v| {
            let a = t.strip(v[0], 4)?;
            let b = t.strip(v[1], 4)?;
            t.concat_cols(&[a, b])
        },
        &inputs,
    ));

    let inputs = [random_tensor(&mut r, &[6], 2.0), random_tensor(&mut r, &[6], 2.0)];
    cases.push(check(
        "elementwise",
        seed,
        |t, v| {
            let a = t.sigmoid(v[0]);
            let b = t.tanh(v[1]);
            let c = t.mul(a, b)?;
            let d = t.relu(v[0]);
            let e = t.add(c, d)?;
            Ok(t.scale(e, 0.7))
        },
        &inputs,
    ));
    cases
}

/// An L-shaped room whose inner corner at (0.5, 4) hides edge-on behind the
/// corner at (0.5, 2): the true map has only five corner peaks. Returns the
/// true layout and a map whose `y_w` has spikes at the five visible corners.
pub fn occluded_fixture(width: usize, height: usize) -> (RoomLayout3D, BoundaryMap) {
    let truth = RoomLayout3D::new(
        vec![[-2.0, -2.0], [3.0, -2.0], [3.0, 4.0], [0.5, 4.0], [0.5, 2.0], [-2.0, 2.0]],
        3.0,
    );
    let gt = omnilayout::synth::gt_boundaries(&truth, width, height).unwrap();
    let mut y_w = vec![0.0; width];
    for p in [[-2.0, -2.0], [3.0, -2.0], [3.0, 4.0], [0.5, 2.0], [-2.0, 2.0]] {
        let u = omnilayout::geom::lon_to_u(f64::atan2(p[0], p[1]), width).round() as usize % width;
        y_w[u] = 1.0;
    }
    (truth, BoundaryMap { y_w, ..gt.map })
}

/// Recovers a layout from the noiseless map of `layout`.
pub fn noiseless_recovery(
    layout: &RoomLayout3D,
    width: usize,
    height: usize,
) -> Result<omnilayout::recover::Recovered, omnilayout::recover::RecoverError> {
    let gt = omnilayout::synth::gt_boundaries(layout, width, height).unwrap();
    omnilayout::recover::recover_layout(&gt.map, layout.camera_height)
}
