mod common;

use omnilayout::boundary::BoundaryMap;
use omnilayout::metrics::{corner_error, iou_3d, pixel_error, row_group_error, weighted_group_error};
use omnilayout::synth::gt_boundaries;
use proptest::prelude::*;

fn map_strategy(w: usize) -> impl Strategy<Value = BoundaryMap> {
    (
        proptest::collection::vec(0.05f64..0.95, w),
        proptest::collection::vec(-0.95f64..-0.05, w),
    )
        .prop_map(move |(y_c, y_f)| BoundaryMap { y_c, y_f, y_w: vec![0.0; w] })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_error_symmetric_and_zero_on_self(a in map_strategy(24), b in map_strategy(24)) {
        prop_assert_eq!(pixel_error(&a, &a, 40).unwrap(), 0.0);
        prop_assert_eq!(pixel_error(&a, &b, 40).unwrap(), pixel_error(&b, &a, 40).unwrap());
    }

    #[test]
    fn row_groups_average_to_global(a in map_strategy(16), b in map_strategy(16), h in 50usize..140, g in 5usize..25) {
        let groups = row_group_error(&a, &b, h, g).unwrap();
        let global = pixel_error(&a, &b, h).unwrap();
        prop_assert!((weighted_group_error(&groups) - global).abs() < 1e-12);
    }

    #[test]
    fn corner_error_invariant_to_common_relabeling(seed in 0u64..200, shift in 0usize..8) {
        let pred = common::room(seed, true).layout();
        let gt = common::room(seed + 1, true).layout();
        let p = omnilayout::metrics::corner_points(&omnilayout::synth::project_corners(&pred, 128, 64));
        let q = omnilayout::metrics::corner_points(&omnilayout::synth::project_corners(&gt, 128, 64));
        let n = q.len();
        let s = 2 * (shift % (n / 2));
        let rot = |v: &[[f64; 2]]| (0..n).map(|i| v[(i + s) % n]).collect::<Vec<_>>();
        let base = corner_error(&p, &q, 128, 64).unwrap().percent;
        let moved = corner_error(&rot(&p), &rot(&q), 128, 64).unwrap().percent;
        prop_assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn iou_bounded_and_symmetric(s1 in 0u64..500, s2 in 0u64..500) {
        let a = common::room(s1, s1 % 2 == 0).layout();
        let b = common::room(s2, s2 % 3 == 0).layout();
        let ab = iou_3d(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - iou_3d(&b, &a).unwrap()).abs() < 1e-15);
        prop_assert_eq!(iou_3d(&a, &a).unwrap(), 1.0);
    }
}

#[test]
fn uniform_error_gives_equal_groups() {
    // whole columns flip from wall to ceiling, so every row carries the same error
    let w = 16;
    let gt = BoundaryMap { y_c: vec![0.9999; w], y_f: vec![-0.9999; w], y_w: vec![0.0; w] };
    let mut pred = gt.clone();
    for c in 0..4 {
        pred.y_c[c] = -0.9998;
    }
    let groups = row_group_error(&pred, &gt, 200, 20).unwrap();
    assert!(groups.iter().all(|g| g.percent == 25.0), "{groups:?}");
}

#[test]
fn group_zero_only_for_polar_errors() {
    let truth = common::centered_square(3.0);
    let mut gt = gt_boundaries(&truth, 64, 512).unwrap().map;
    let mut pred = gt.clone();
    // both ceilings within 8.8° of the pole in a few columns
    for c in 0..8 {
        gt.y_c[c] = 0.99;
        pred.y_c[c] = 0.95;
    }
    let groups = row_group_error(&pred, &gt, 512, 25).unwrap();
    assert!(groups[0].wrong > 0);
    assert!(groups[1..].iter().all(|g| g.wrong == 0));
}
