//! Layout metrics: surface pixel error, corner error, 3D IoU and the
//! pole-distance row-group breakdown.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::BoundaryMap;
use crate::geom::row_lat;
use crate::layout::{intersection_area, LayoutError, RoomLayout3D};
use crate::synth::CornerAnnotation;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("width mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("corner list is empty")]
    EmptyCorners,
    #[error("invalid layout: {0}")]
    InvalidLayout(#[from] LayoutError),
    #[error("image height {height} is below two row groups of {group}")]
    TooFewRows { height: usize, group: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SurfaceLabel {
    Ceiling = 0,
    Wall = 1,
    Floor = 2,
}

/// Per-pixel surface classes of a boundary map rasterized at `H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<SurfaceLabel>,
}

impl SurfaceMask {
    pub fn from_map(map: &BoundaryMap, height: usize) -> Self {
        let width = map.width();
        let mut labels = Vec::with_capacity(width * height);
        for r in 0..height {
            let lat = row_lat(r, height);
            for c in 0..width {
                labels.push(if lat > map.ceiling_lat(c) {
                    SurfaceLabel::Ceiling
                } else if lat < map.floor_lat(c) {
                    SurfaceLabel::Floor
                } else {
                    SurfaceLabel::Wall
                });
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> SurfaceLabel {
        self.labels[row * self.width + col]
    }
}

fn masks(
    pred: &BoundaryMap,
    gt: &BoundaryMap,
    height: usize,
) -> Result<(SurfaceMask, SurfaceMask), MetricError> {
    if pred.width() != gt.width() {
        return Err(MetricError::ShapeMismatch(pred.width(), gt.width()));
    }
    Ok((SurfaceMask::from_map(pred, height), SurfaceMask::from_map(gt, height)))
}

/// Percentage of pixels whose surface class differs.
pub fn pixel_error(pred: &BoundaryMap, gt: &BoundaryMap, height: usize) -> Result<f64, MetricError> {
    let (a, b) = masks(pred, gt, height)?;
    let wrong = a.labels.iter().zip(&b.labels).filter(|(x, y)| x != y).count();
    Ok(100.0 * wrong as f64 / a.labels.len() as f64)
}

/// Ceiling and floor image points of each corner, corner by corner.
pub fn corner_points(corners: &[CornerAnnotation]) -> Vec<[f64; 2]> {
    corners
        .iter()
        .flat_map(|c| [[c.u, c.v_ceiling], [c.u, c.v_floor]])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerError {
    pub percent: f64,
    /// Counts differed; the value came from nearest-neighbour matching and
    /// stays out of headline averages.
    pub unequal_count: bool,
}

fn point_distance(a: [f64; 2], b: [f64; 2], width: f64) -> f64 {
    let du = (a[0] - b[0]).rem_euclid(width);
    du.min(width - du).hypot(a[1] - b[1])
}

/// Mean corner distance as a percentage of the image diagonal.
///
/// Both lists are ordered by column; equal-length lists are matched under
/// the circular rotation (in whole corners, when both lengths are even) with
/// the smallest total distance.
pub fn corner_error(
    pred: &[[f64; 2]],
    gt: &[[f64; 2]],
    width: usize,
    height: usize,
) -> Result<CornerError, MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::EmptyCorners);
    }
    let w = width as f64;
    let diag = w.hypot(height as f64);
    if pred.len() == gt.len() {
        let n = gt.len();
        let step = if n % 2 == 0 { 2 } else { 1 };
        let best = (0..n)
            .step_by(step)
            .map(|r| {
                (0..n)
                    .map(|i| point_distance(pred[(i + r) % n], gt[i], w))
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        return Ok(CornerError {
            percent: 100.0 * best / n as f64 / diag,
            unequal_count: false,
        });
    }
    let (small, large) = if pred.len() < gt.len() { (pred, gt) } else { (gt, pred) };
    let total: f64 = small
        .iter()
        .map(|p| {
            large
                .iter()
                .map(|q| point_distance(*p, *q, w))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(CornerError {
        percent: 100.0 * total / small.len() as f64 / diag,
        unequal_count: true,
    })
}

/// Volume IoU of two vertical prisms sharing the camera frame.
pub fn iou_3d(a: &RoomLayout3D, b: &RoomLayout3D) -> Result<f64, MetricError> {
    a.validate()?;
    b.validate()?;
    let inter_area = intersection_area(&a.footprint, &b.footprint);
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    let overlap = (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = inter_area * overlap;
    // areas through the same rectangle sums, so identical prisms give exactly 1
    let vol_a = intersection_area(&a.footprint, &a.footprint) * (a1 - a0);
    let vol_b = intersection_area(&b.footprint, &b.footprint) * (b1 - b0);
    let union = vol_a + vol_b - inter;
    Ok(if union > 0.0 { (inter / union).min(1.0) } else { 0.0 })
}

/// Error statistics of one band of rows at similar distance from the poles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowGroup {
    pub group: usize,
    pub pole_distance_lo: usize,
    pub pole_distance_hi: usize,
    pub pixels: usize,
    pub wrong: usize,
    pub percent: f64,
    /// The innermost band when it holds fewer than `g` pole distances.
    pub partial: bool,
}

/// Row `v` joins group `min(v, H−1−v) / g`, pooling top and bottom rows.
pub fn row_group_error(
    pred: &BoundaryMap,
    gt: &BoundaryMap,
    height: usize,
    group_rows: usize,
) -> Result<Vec<RowGroup>, MetricError> {
    if group_rows == 0 || height < 2 * group_rows {
        return Err(MetricError::TooFewRows {
            height,
            group: group_rows,
        });
    }
    let (a, b) = masks(pred, gt, height)?;
    let max_dist = (height - 1) / 2;
    let count = max_dist / group_rows + 1;
    let mut groups: Vec<RowGroup> = (0..count)
        .map(|k| {
            let lo = k * group_rows;
            let hi = ((k + 1) * group_rows - 1).min(max_dist);
            RowGroup {
                group: k,
                pole_distance_lo: lo,
                pole_distance_hi: hi,
                pixels: 0,
                wrong: 0,
                percent: 0.0,
                partial: hi - lo + 1 < group_rows,
            }
        })
        .collect();
    for r in 0..height {
        let g = &mut groups[r.min(height - 1 - r) / group_rows];
        for c in 0..a.width {
            g.pixels += 1;
            if a.get(r, c) != b.get(r, c) {
                g.wrong += 1;
            }
        }
    }
    for g in &mut groups {
        g.percent = 100.0 * g.wrong as f64 / g.pixels as f64;
    }
    Ok(groups)
}

/// Pixel-weighted mean of group errors; equals the global pixel error.
pub fn weighted_group_error(groups: &[RowGroup]) -> f64 {
    let pixels: usize = groups.iter().map(|g| g.pixels).sum();
    groups
        .iter()
        .map(|g| g.percent * g.pixels as f64)
        .sum::<f64>()
        / pixels as f64
}

/// Side-by-side row-group errors of the standard and the spherical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowGroupReport {
    pub group_rows: usize,
    pub planar: Vec<RowGroup>,
    pub equirect: Vec<RowGroup>,
}

impl RowGroupReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("group,pole_distance_lo,pole_distance_hi,pixel_error_planar,pixel_error_equirect\n");
        for (p, e) in self.planar.iter().zip(&self.equirect) {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.group, p.pole_distance_lo, p.pole_distance_hi, p.percent, e.percent
            ));
        }
        out
    }
}

/// Sums the per-group counts of several evaluations with identical grouping.
pub fn pool_row_groups(runs: &[Vec<RowGroup>]) -> Vec<RowGroup> {
    let mut out = runs[0].clone();
    for g in &mut out {
        g.pixels = 0;
        g.wrong = 0;
    }
    for run in runs {
        for (acc, g) in out.iter_mut().zip(run) {
            acc.pixels += g.pixels;
            acc.wrong += g.wrong;
        }
    }
    for g in &mut out {
        g.percent = 100.0 * g.wrong as f64 / g.pixels as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn flat_map(w: usize, c: f64, f: f64) -> BoundaryMap {
        BoundaryMap::new(vec![c; w], vec![f; w], vec![0.0; w]).unwrap()
    }

    fn square(cx: f64, s: f64, h: f64) -> RoomLayout3D {
        let r = s / 2.0;
        RoomLayout3D::new(
            vec![[cx - r, -r], [cx + r, -r], [cx + r, r], [cx - r, r]],
            h,
        )
    }

    #[test]
    fn identical_maps_have_no_error() {
        let m = flat_map(32, 0.3, -0.4);
        assert_eq!(pixel_error(&m, &m, 64).unwrap(), 0.0);
    }

    #[test]
    fn shifted_floor_gives_strip_error() {
        let h = 64;
        // boundaries between rows: row r spans latitudes around row_lat(r)
        let lat_between = |r: usize| FRAC_PI_2 - r as f64 / h as f64 * std::f64::consts::PI;
        let gt = flat_map(16, 0.3, lat_between(44) / FRAC_PI_2);
        let pred = flat_map(16, 0.3, lat_between(47) / FRAC_PI_2);
        let e = pixel_error(&pred, &gt, h).unwrap();
        assert!((e - 100.0 * 3.0 / h as f64).abs() < 1e-12);
    }

    #[test]
    fn width_mismatch() {
        assert!(pixel_error(&flat_map(8, 0.3, -0.3), &flat_map(9, 0.3, -0.3), 16).is_err());
    }

    #[test]
    fn corner_error_closed_form() {
        let gt: Vec<[f64; 2]> = (0..8).map(|i| [i as f64 * 100.0, 100.0 + (i % 2) as f64 * 300.0]).collect();
        assert_eq!(corner_error(&gt, &gt, 1024, 512).unwrap().percent, 0.0);
        let mut pred = gt.clone();
        pred[3][0] += 3.0;
        pred[3][1] += 4.0;
        let e = corner_error(&pred, &gt, 1024, 512).unwrap();
        let want = 100.0 * (5.0 / 8.0) / (1024f64.powi(2) + 512f64.powi(2)).sqrt();
        assert!((e.percent - want).abs() < 1e-12);
        assert!((e.percent - 0.0546).abs() < 1e-4);
        assert!(!e.unequal_count);
    }

    #[test]
    fn corner_error_wraps_horizontally() {
        let gt = vec![[1023.0, 10.0], [0.5, 20.0]];
        let pred = vec![[0.0, 10.0], [1023.5, 20.0]];
        let e = corner_error(&pred, &gt, 1024, 512).unwrap();
        assert!((e.percent - 100.0 / (1024f64.hypot(512.0))).abs() < 1e-12);
    }

    #[test]
    fn corner_error_flags_unequal_counts() {
        let gt = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let e = corner_error(&gt[..2], &gt, 64, 32).unwrap();
        assert!(e.unequal_count);
        assert_eq!(e.percent, 0.0);
        assert_eq!(corner_error(&[], &gt, 64, 32), Err(MetricError::EmptyCorners));
    }

    #[test]
    fn iou_identities() {
        let a = square(0.0, 4.0, 3.0);
        assert_eq!(iou_3d(&a, &a).unwrap(), 1.0);
        let b = square(2.0, 4.0, 3.0);
        assert_eq!(iou_3d(&a, &b).unwrap(), 1.0 / 3.0);
        let far = square(10.0, 4.0, 3.0);
        assert_eq!(iou_3d(&a, &far).unwrap(), 0.0);
        let short = square(0.0, 4.0, 2.5);
        // same footprint, heights 3.0 and 2.5 share the floor
        assert!((iou_3d(&a, &short).unwrap() - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn row_groups_partition_rows() {
        let gt = flat_map(16, 0.3, -0.3);
        let pred = flat_map(16, 0.35, -0.2);
        let groups = row_group_error(&pred, &gt, 512, 25).unwrap();
        assert_eq!(groups.len(), 11);
        assert!(groups[..10].iter().all(|g| !g.partial));
        assert!(groups[10].partial);
        assert_eq!((groups[10].pole_distance_lo, groups[10].pole_distance_hi), (250, 255));
        let total: usize = groups.iter().map(|g| g.pixels).sum();
        assert_eq!(total, 512 * 16);
        let global = pixel_error(&pred, &gt, 512).unwrap();
        assert!((weighted_group_error(&groups) - global).abs() < 1e-12);
        assert!(row_group_error(&pred, &gt, 40, 25).is_err());
    }

    #[test]
    fn polar_only_error_lands_in_group_zero() {
        let h = 512;
        let lat_between = |r: usize| FRAC_PI_2 - r as f64 / h as f64 * std::f64::consts::PI;
        let gt = flat_map(8, lat_between(10) / FRAC_PI_2, -0.3);
        let pred = flat_map(8, lat_between(20) / FRAC_PI_2, -0.3);
        let groups = row_group_error(&pred, &gt, h, 25).unwrap();
        assert!(groups[0].wrong > 0);
        assert!(groups[1..].iter().all(|g| g.wrong == 0));
    }
}
