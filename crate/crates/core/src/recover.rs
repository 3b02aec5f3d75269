//! Manhattan layout recovery from a boundary map.
//!
//! Pipeline: corner peaks from `y_w`, room height from the boundary pair,
//! one axis-aligned wall line per segment of the top-view trace, then
//! orthogonality enforcement with merged or inserted walls.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::{BoundaryError, BoundaryMap};
use crate::geom::{
    ceiling_height_at_column, column_lon, floor_boundary_to_distance, lon_to_u, CameraModel,
    MAX_FLOOR_DISTANCE,
};
use crate::layout::{validate_rectilinear, LayoutError, Point, RoomLayout3D};

pub const PEAK_THRESHOLD: f64 = 0.05;
pub const PEAK_FOV_DEG: f64 = 5.0;
/// Points within this distance (meters) of a wall line count toward it.
pub const WALL_TOLERANCE: f64 = 0.16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoverError {
    #[error("found {0} corner peaks, a Manhattan room needs at least 4")]
    TooFewPeaks(usize),
    #[error("no column has a floor boundary below and a ceiling boundary above the horizon")]
    NoValidColumns,
    #[error("trace part {0} cannot support a wall")]
    DegeneratePart(usize),
    #[error("only {0} walls remain after enforcing orthogonality")]
    TooFewWalls(usize),
    #[error("recovered footprint is invalid: {0}")]
    InvalidPolygon(#[from] LayoutError),
    #[error(transparent)]
    Boundary(#[from] BoundaryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub columns: Vec<usize>,
    pub strengths: Vec<f64>,
}

/// Width of the suppression window: the nearest odd integer ≥ `W·5/360`.
pub fn peak_window(width: usize) -> usize {
    let w = (width as f64 * PEAK_FOV_DEG / 360.0).ceil().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Columns whose corner probability reaches the threshold and beats every
/// other column of the circular window centred on them. Equal values go to
/// the lower column index.
pub fn find_peaks(y_w: &[f64]) -> Result<PeakSet, RecoverError> {
    let w = y_w.len();
    let half = (peak_window(w) / 2) as isize;
    let mut columns = Vec::new();
    let mut strengths = Vec::new();
    for c in 0..w {
        let v = y_w[c];
        if !(v >= PEAK_THRESHOLD) {
            continue;
        }
        let wins = (-half..=half).filter(|k| *k != 0).all(|k| {
            let o = (c as isize + k).rem_euclid(w as isize) as usize;
            if o == c {
                return true;
            }
            v > y_w[o] || (v == y_w[o] && c < o)
        });
        if wins {
            columns.push(c);
            strengths.push(v);
        }
    }
    if columns.len() < 4 {
        return Err(RecoverError::TooFewPeaks(columns.len()));
    }
    Ok(PeakSet { columns, strengths })
}

/// Top view of the wall boundary: one point per usable column.
#[derive(Debug, Clone, PartialEq)]
pub struct CeilingTrace {
    pub points: Vec<Option<Point>>,
    /// Columns skipped because their boundaries are not on opposite sides
    /// of the horizon or the wall is out of range.
    pub excluded: usize,
}

impl CeilingTrace {
    pub fn width(&self) -> usize {
        self.points.len()
    }

    /// `column,x,z` rows, one per usable column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("column,x,z\n");
        for (c, p) in self.points.iter().enumerate() {
            if let Some([x, z]) = p {
                out.push_str(&format!("{c},{x},{z}\n"));
            }
        }
        out
    }
}

/// Room height as the mean of the per-column heights, and the top-view trace.
pub fn recover_height(
    map: &BoundaryMap,
    camera_height: f64,
) -> Result<(f64, CeilingTrace), RecoverError> {
    map.validate()?;
    let w = map.width();
    let cam = CameraModel::new(w, 1).with_height(camera_height);
    let mut points = Vec::with_capacity(w);
    let mut heights = Vec::with_capacity(w);
    for c in 0..w {
        let usable = map.y_f[c] < 0.0 && map.y_c[c] > 0.0;
        let p = usable
            .then(|| floor_boundary_to_distance(map.floor_lat(c), &cam).ok())
            .flatten()
            .filter(|d| *d < MAX_FLOOR_DISTANCE)
            .and_then(|d| {
                let h = ceiling_height_at_column(map.ceiling_lat(c), d, &cam).ok()?;
                heights.push(h);
                let (s, co) = column_lon(c, w).sin_cos();
                Some([d * s, d * co])
            });
        points.push(p);
    }
    if heights.is_empty() {
        return Err(RecoverError::NoValidColumns);
    }
    let h = heights.iter().sum::<f64>() / heights.len() as f64;
    let excluded = w - heights.len();
    Ok((h, CeilingTrace { points, excluded }))
}

/// Orientation of a wall line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    /// Runs along x: `z = offset`.
    X,
    /// Runs along z: `x = offset`.
    Z,
}

impl Axis {
    fn other(self) -> Self {
        match self {
            Axis::X => Axis::Z,
            Axis::Z => Axis::X,
        }
    }

    /// The coordinate a line of this orientation fixes.
    fn coord(self, p: Point) -> f64 {
        match self {
            Axis::X => p[1],
            Axis::Z => p[0],
        }
    }
}

#[derive(Debug, Clone)]
struct Wall {
    axis: Axis,
    offset: f64,
    points: Vec<Point>,
    /// First column of the wall's part, where it meets its predecessor.
    start: usize,
    part: usize,
    inserted: bool,
}

impl Wall {
    fn outliers(&self) -> impl Iterator<Item = Point> + '_ {
        self.points
            .iter()
            .copied()
            .filter(|p| (self.axis.coord(*p) - self.offset).abs() > WALL_TOLERANCE)
    }
}

/// Best line of one orientation: the candidate offset (a point coordinate)
/// with the most points within tolerance, ties to the smaller magnitude,
/// refined to the median of its inliers. Returns `(score, offset)`.
fn best_line(points: &[Point], axis: Axis) -> (usize, f64) {
    let coords: Vec<f64> = points.iter().map(|p| axis.coord(*p)).collect();
    let mut best = (0, f64::INFINITY);
    for cand in &coords {
        let score = coords
            .iter()
            .filter(|c| (*c - cand).abs() <= WALL_TOLERANCE)
            .count();
        if score > best.0 || (score == best.0 && cand.abs() < best.1.abs()) {
            best = (score, *cand);
        }
    }
    let mut inliers: Vec<f64> = coords
        .iter()
        .copied()
        .filter(|c| (c - best.1).abs() <= WALL_TOLERANCE)
        .collect();
    if inliers.is_empty() {
        return best;
    }
    inliers.sort_by(f64::total_cmp);
    let k = inliers.len();
    let median = 0.5 * (inliers[(k - 1) / 2] + inliers[k / 2]);
    (best.0, median)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WallFit {
    pub layout: RoomLayout3D,
    /// Continuous image column of each corner.
    pub corner_columns: Vec<f64>,
    pub merged: usize,
    pub inserted: usize,
}

pub fn fit_walls(
    trace: &CeilingTrace,
    peaks: &PeakSet,
    height: f64,
    camera_height: f64,
) -> Result<WallFit, RecoverError> {
    let w = trace.width();
    let n = peaks.columns.len();
    if n < 4 {
        return Err(RecoverError::TooFewPeaks(n));
    }

    // parts: [peak_i, peak_{i+1}) circularly
    let mut parts: Vec<Vec<Point>> = Vec::with_capacity(n);
    for i in 0..n {
        let start = peaks.columns[i];
        let end = peaks.columns[(i + 1) % n];
        let len = (end + w - start - 1) % w + 1;
        let pts: Vec<Point> = (0..len)
            .filter_map(|k| trace.points[(start + k) % w])
            .collect();
        if pts.len() < 2 {
            return Err(RecoverError::DegeneratePart(i));
        }
        parts.push(pts);
    }

    let fits: Vec<[(usize, f64); 2]> = parts
        .iter()
        .map(|p| [best_line(p, Axis::X), best_line(p, Axis::Z)])
        .collect();
    let preferred: Vec<Option<Axis>> = fits
        .iter()
        .map(|[x, z]| match x.0.cmp(&z.0) {
            std::cmp::Ordering::Greater => Some(Axis::X),
            std::cmp::Ordering::Less => Some(Axis::Z),
            std::cmp::Ordering::Equal => None,
        })
        .collect();
    let mut walls: Vec<Wall> = (0..n)
        .map(|i| {
            let axis = preferred[i].unwrap_or_else(|| {
                // a tie goes to the orientation that alternates with more neighbours
                let neighbours = [preferred[(i + n - 1) % n], preferred[(i + 1) % n]];
                let votes = |a: Axis| neighbours.iter().filter(|q| **q == Some(a.other())).count();
                if votes(Axis::Z) > votes(Axis::X) {
                    Axis::Z
                } else {
                    Axis::X
                }
            });
            let offset = fits[i][if axis == Axis::X { 0 } else { 1 }].1;
            Wall {
                axis,
                offset,
                points: parts[i].clone(),
                start: peaks.columns[i],
                part: i,
                inserted: false,
            }
        })
        .collect();

    // collinear neighbours are one wall split by a spurious peak
    let mut merged = 0;
    loop {
        let m = walls.len();
        if m < 2 {
            break;
        }
        let hit = (0..m).find(|i| {
            let (a, b) = (&walls[*i], &walls[(i + 1) % m]);
            a.axis == b.axis && (a.offset - b.offset).abs() <= WALL_TOLERANCE
        });
        let Some(i) = hit else { break };
        let j = (i + 1) % m;
        let next = walls[j].points.clone();
        walls[i].points.extend(next);
        walls[i].offset = best_line(&walls[i].points, walls[i].axis).1;
        walls.remove(j);
        merged += 1;
    }

    // parallel neighbours hide a wall between them: add it and its corner
    let m = walls.len();
    let mut out: Vec<Wall> = Vec::with_capacity(2 * m);
    let mut inserted_after = vec![false; m];
    for i in 0..m {
        let (a, b) = (&walls[i], &walls[(i + 1) % m]);
        if a.axis == b.axis {
            inserted_after[i] = true;
        }
    }
    for i in 0..m {
        if inserted_after[i] && inserted_after[(i + m - 1) % m] && m > 1 {
            return Err(RecoverError::DegeneratePart(walls[i].part));
        }
    }
    for i in 0..m {
        out.push(walls[i].clone());
        if !inserted_after[i] {
            continue;
        }
        let (a, b) = (&walls[i], &walls[(i + 1) % m]);
        let axis = a.axis.other();
        let stray: Vec<Point> = a.outliers().chain(b.outliers()).collect();
        let (score, fitted) = best_line(&stray, axis);
        let offset = if score >= 2 {
            fitted
        } else {
            junction_offset(a, b, column_lon(b.start, w), axis)
        };
        out.push(Wall {
            axis,
            offset,
            points: Vec::new(),
            start: b.start,
            part: a.part,
            inserted: true,
        });
    }
    let walls = out;
    let m = walls.len();
    if m < 4 {
        return Err(RecoverError::TooFewWalls(m));
    }

    let footprint: Vec<Point> = (0..m)
        .map(|k| {
            let (a, b) = (&walls[k], &walls[(k + 1) % m]);
            match a.axis {
                Axis::X => [b.offset, a.offset],
                Axis::Z => [a.offset, b.offset],
            }
        })
        .collect();
    validate_rectilinear(&footprint)?;
    let corner_columns = footprint
        .iter()
        .map(|p| lon_to_u(p[0].atan2(p[1]), w))
        .collect();
    let inserted = walls.iter().filter(|x| x.inserted).count();
    Ok(WallFit {
        layout: RoomLayout3D {
            footprint,
            height,
            camera_height,
        },
        corner_columns,
        merged,
        inserted,
    })
}

/// Offset of a hidden wall between parallel walls `a` and `b`: the ray at
/// the junction longitude grazes the end of whichever of the two is nearer.
fn junction_offset(a: &Wall, b: &Wall, lon: f64, axis: Axis) -> f64 {
    let dir = [lon.sin(), lon.cos()];
    let along = |wall: &Wall| {
        let d = match wall.axis {
            Axis::X => dir[1],
            Axis::Z => dir[0],
        };
        let t = wall.offset / d;
        if t > 0.0 && t.is_finite() {
            t
        } else {
            f64::INFINITY
        }
    };
    let t = along(a).min(along(b));
    if !t.is_finite() {
        return 0.5 * (axis.coord([a.offset, a.offset]) + axis.coord([b.offset, b.offset]));
    }
    axis.coord([t * dir[0], t * dir[1]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub peaks: PeakSet,
    pub trace: CeilingTrace,
    pub fit: WallFit,
}

impl Recovered {
    pub fn layout(&self) -> &RoomLayout3D {
        &self.fit.layout
    }

    pub fn to_json(&self) -> LayoutJson {
        LayoutJson {
            corners_xz: self.fit.layout.footprint.clone(),
            height: self.fit.layout.height,
            camera_height: self.fit.layout.camera_height,
            corner_columns: self.fit.corner_columns.clone(),
        }
    }
}

/// Runs peak finding, height recovery and wall fitting.
pub fn recover_layout(map: &BoundaryMap, camera_height: f64) -> Result<Recovered, RecoverError> {
    let peaks = find_peaks(&map.y_w)?;
    let (h, trace) = recover_height(map, camera_height)?;
    let fit = fit_walls(&trace, &peaks, h, camera_height)?;
    Ok(Recovered { peaks, trace, fit })
}

/// On-disk form of a recovered layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutJson {
    pub corners_xz: Vec<Point>,
    pub height: f64,
    pub camera_height: f64,
    pub corner_columns: Vec<f64>,
}

impl LayoutJson {
    pub fn layout(&self) -> RoomLayout3D {
        RoomLayout3D {
            footprint: self.corners_xz.clone(),
            height: self.height,
            camera_height: self.camera_height,
        }
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::interior_angles;
    use crate::synth::gt_boundaries;

    fn spikes(w: usize, at: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; w];
        for (c, s) in at {
            v[*c] = *s;
        }
        v
    }

    #[test]
    fn window_sizes() {
        assert_eq!(peak_window(1024), 15);
        assert_eq!(peak_window(128), 3);
        assert_eq!(peak_window(360), 5);
    }

    #[test]
    fn four_spikes_found() {
        let y = spikes(128, &[(5, 0.9), (40, 0.9), (70, 0.9), (100, 0.9)]);
        assert_eq!(find_peaks(&y).unwrap().columns, vec![5, 40, 70, 100]);
    }

    #[test]
    fn weak_spike_excluded() {
        let y = spikes(128, &[(5, 0.9), (40, 0.9), (70, 0.9), (100, 0.9), (120, 0.04)]);
        assert_eq!(find_peaks(&y).unwrap().columns.len(), 4);
        let y = spikes(128, &[(5, 0.9), (40, 0.9), (70, 0.04)]);
        assert_eq!(find_peaks(&y).unwrap_err(), RecoverError::TooFewPeaks(2));
    }

    #[test]
    fn nearby_spikes_suppressed() {
        let y = spikes(1024, &[(100, 0.7), (103, 0.8), (300, 0.9), (600, 0.9), (900, 0.9)]);
        let p = find_peaks(&y).unwrap();
        assert_eq!(p.columns, vec![103, 300, 600, 900]);
        // equal strengths: the lower column wins
        let y = spikes(1024, &[(100, 0.8), (103, 0.8), (300, 0.9), (600, 0.9), (900, 0.9)]);
        assert_eq!(find_peaks(&y).unwrap().columns, vec![100, 300, 600, 900]);
        // wrap-around suppression
        let y = spikes(1024, &[(1, 0.5), (1022, 0.6), (300, 0.9), (600, 0.9), (900, 0.9)]);
        assert_eq!(find_peaks(&y).unwrap().columns, vec![300, 600, 900, 1022]);
    }

    fn square_map() -> BoundaryMap {
        let layout = RoomLayout3D::new(vec![[-2.0, -2.0], [2.0, -2.0], [2.0, 2.0], [-2.0, 2.0]], 3.0);
        gt_boundaries(&layout, 1024, 512).unwrap().map
    }

    #[test]
    fn height_of_the_square_room() {
        let (h, trace) = recover_height(&square_map(), 1.6).unwrap();
        assert!((h - 3.0).abs() < 1e-9);
        assert_eq!(trace.excluded, 0);
    }

    #[test]
    fn symmetric_boundaries_give_twice_camera_height() {
        let y_f: Vec<f64> = (0..64).map(|c| -0.2 - 0.001 * c as f64).collect();
        let y_c: Vec<f64> = y_f.iter().map(|v| -v).collect();
        let map = BoundaryMap::new(y_c, y_f, vec![0.0; 64]).unwrap();
        let (h, _) = recover_height(&map, 1.6).unwrap();
        assert!((h - 3.2).abs() < 1e-12);
    }

    #[test]
    fn corrupted_columns_are_excluded() {
        let mut map = square_map();
        for c in (0..1024).step_by(10) {
            map.y_f[c] = 0.1;
        }
        let (h, trace) = recover_height(&map, 1.6).unwrap();
        assert_eq!(trace.excluded, 103);
        assert!((h - 3.0).abs() < 1e-9);
        for c in 0..1024 {
            map.y_f[c] = 0.1;
        }
        assert_eq!(recover_height(&map, 1.6).unwrap_err(), RecoverError::NoValidColumns);
    }

    #[test]
    fn square_room_corners() {
        let rec = recover_layout(&square_map(), 1.6).unwrap();
        let fp = &rec.layout().footprint;
        assert_eq!(fp.len(), 4);
        for p in fp {
            assert!((p[0].abs() - 2.0).abs() < 1e-9 && (p[1].abs() - 2.0).abs() < 1e-9);
        }
        assert!((rec.layout().height - 3.0).abs() < 1e-9);
    }

    #[test]
    fn occluded_wall_is_inserted() {
        // a step in the far wall hidden behind its near half: walls at z = 2
        // (x < 0.5) and z = 4 (x > 0.5), joined by x = 0.5 which the camera
        // at the origin sees edge-on
        let fp = vec![
            [-2.0, -2.0],
            [3.0, -2.0],
            [3.0, 4.0],
            [0.5, 4.0],
            [0.5, 2.0],
            [-2.0, 2.0],
        ];
        let truth = RoomLayout3D::new(fp, 3.0);
        let mut y_w = vec![0.0; 1024];
        let gt = gt_boundaries(&truth, 1024, 512).unwrap();
        // only the four visible convex corners and the occluding corner produce peaks
        let visible = [[-2.0, -2.0], [3.0, -2.0], [3.0, 4.0], [-2.0, 2.0], [0.5, 2.0]];
        for p in visible {
            let u = lon_to_u(f64::atan2(p[0], p[1]), 1024).round() as usize % 1024;
            y_w[u] = 1.0;
        }
        let map = BoundaryMap { y_w, ..gt.map };
        let rec = recover_layout(&map, 1.6).unwrap();
        assert_eq!(rec.fit.inserted, 1);
        let fp = &rec.layout().footprint;
        assert_eq!(fp.len(), 6);
        for a in interior_angles(fp) {
            assert!((a - 90.0).abs() < 1e-9 || (a - 270.0).abs() < 1e-9);
        }
    }
}
