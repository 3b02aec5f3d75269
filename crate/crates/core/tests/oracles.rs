mod common;

use std::sync::Arc;

use omnilayout::autodiff::Tape;
use omnilayout::layout::RoomLayout3D;
use omnilayout::metrics::{corner_error, corner_points, iou_3d, pixel_error};
use omnilayout::sampling::{azimuthal_correlate, build_grid, sample, GridMode, GridSpec};
use omnilayout::synth::{gt_boundaries, project_corners};
use rand::Rng;

fn conv(x: &omnilayout::tensor::Tensor, w: &omnilayout::tensor::Tensor, b: &omnilayout::tensor::Tensor, spec: GridSpec) -> omnilayout::tensor::Tensor {
    let grid = Arc::new(build_grid(spec).unwrap());
    let mut tape = Tape::new();
    let (xi, wi, bi) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
    let y = tape.grid_conv(xi, wi, bi, grid).unwrap();
    tape.value(y).clone()
}

#[test]
fn planar_grid_conv_matches_direct_convolution() {
    let mut r = common::rng(1);
    for case in 0..20 {
        let (h, w) = (r.random_range(5..12), r.random_range(5..14));
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
        let k = [1, 3, 5][case % 3];
        let stride = (r.random_range(1..3), r.random_range(1..3));
        let x = common::random_tensor(&mut r, &[cin, h, w], 1.0);
        let wt = common::random_tensor(&mut r, &[cout, cin, k, k], 1.0);
        let b = common::random_tensor(&mut r, &[cout], 1.0);
        let got = conv(&x, &wt, &b, GridSpec::new(GridMode::Planar, (k, k), (h, w)).with_stride(stride));
        let want = common::naive_planar_conv(&x, &wt, &b, stride);
        assert!(got.max_abs_diff(&want) < 1e-12, "case {case}");
    }
}

#[test]
fn bilinear_sampling_matches_scalar_oracle() {
    let mut r = common::rng(2);
    for mode in GridMode::ALL {
        let spec = GridSpec::new(mode, (3, 5), (16, 32)).with_stride((1, 2));
        let grid = build_grid(spec).unwrap();
        let x = common::random_tensor(&mut r, &[2, 16, 32], 1.0);
        let (ho, wo) = grid.output();
        for row in 0..ho {
            for _ in 0..4 {
                let col = r.random_range(0..wo);
                for t in 0..15 {
                    let got = sample(&x, &grid, row, col, t).unwrap();
                    let tap = &grid.row_taps(row)[t];
                    let (u, v) = grid.source_coord(tap, col);
                    for (ch, g) in got.iter().enumerate() {
                        let want = common::bilinear_oracle(&x, ch, u, v);
                        assert!((g - want).abs() < 1e-12, "{mode} row {row} tap {t}");
                    }
                }
            }
        }
    }
}

#[test]
fn azimuthal_correlation_matches_triple_loop() {
    let mut r = common::rng(3);
    for _ in 0..5 {
        let f = common::random_tensor(&mut r, &[8, 16], 1.0);
        let g = common::random_tensor(&mut r, &[8, 16], 1.0);
        let got = azimuthal_correlate(&f, &g).unwrap();
        for (a, b) in got.data().iter().zip(common::azimuthal_oracle(&f, &g)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn equirect_grid_conv_commutes_with_column_rolls() {
    let mut r = common::rng(4);
    for case in 0..20 {
        let (h, w) = (8 + 2 * r.random_range(0..4), 16 + 4 * r.random_range(0..4));
        let x = common::random_tensor(&mut r, &[2, h, w], 1.0);
        let wt = common::random_tensor(&mut r, &[3, 2, 3, 3], 1.0);
        let b = common::random_tensor(&mut r, &[3], 1.0);
        let shift = r.random_range(1..w) as isize;
        let spec = GridSpec::new(GridMode::Equirect, (3, 3), (h, w));
        let a = conv(&x.roll_last(shift), &wt, &b, spec);
        let bb = conv(&x, &wt, &b, spec).roll_last(shift);
        assert_eq!(a, bb, "case {case}");
    }
}

fn random_pair(i: u64, r: &mut rand_chacha::ChaCha8Rng) -> (RoomLayout3D, RoomLayout3D) {
    let a = common::room(i, i % 2 == 0).layout();
    let mut b = if i % 3 == 0 {
        a.clone()
    } else {
        common::room(5000 + i, r.random_bool(0.5)).layout()
    };
    let (dx, dz) = (r.random_range(-1.5..1.5), r.random_range(-1.5..1.5));
    for p in &mut b.footprint {
        p[0] += dx;
        p[1] += dz;
    }
    b.height = r.random_range(2.4..3.6);
    (a, b)
}

#[test]
fn iou_matches_voxel_oracle() {
    let mut r = common::rng(5);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (a, b) = random_pair(i, &mut r);
        let exact = iou_3d(&a, &b).unwrap();
        let voxel = common::voxel_iou(&a, &b, 2048, 64);
        worst = worst.max((exact - voxel).abs());
        assert!((0.0..=1.0).contains(&exact));
        assert!((exact - iou_3d(&b, &a).unwrap()).abs() < 1e-15);
    }
    assert!(worst < 1e-3, "worst gap {worst}");
}

#[test]
fn pixel_error_matches_double_loop() {
    for seed in 0..10 {
        let a = gt_boundaries(&common::room(seed, true).layout(), 64, 32).unwrap().map;
        let b = gt_boundaries(&common::room(seed + 50, false).layout(), 64, 32).unwrap().map;
        let got = pixel_error(&a, &b, 48).unwrap();
        assert_eq!(got, common::pixel_error_oracle(&a, &b, 48));
        assert_eq!(got, pixel_error(&b, &a, 48).unwrap());
    }
}

#[test]
fn corner_error_matches_exhaustive_rotations() {
    let mut r = common::rng(6);
    for seed in 0..20 {
        let layout = common::room(seed, seed % 2 == 1).layout();
        let gt = corner_points(&project_corners(&layout, 256, 128));
        let jittered: Vec<[f64; 2]> = gt
            .iter()
            .map(|p| [p[0] + r.random_range(-3.0..3.0), p[1] + r.random_range(-3.0..3.0)])
            .collect();
        let n = jittered.len();
        let shift = 2 * r.random_range(0..n / 2);
        let rotated: Vec<[f64; 2]> = (0..n).map(|i| jittered[(i + shift) % n]).collect();
        let got = corner_error(&rotated, &gt, 256, 128).unwrap();
        let want = common::corner_error_oracle(&rotated, &gt, 256.0, 128.0);
        assert!((got.percent - want).abs() < 1e-12);
        assert!(!got.unequal_count);
    }
}
