//! Analytic ground truth by casting one horizontal ray per image column.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::boundary::{smoothed_corner_target, BoundaryMap};
use crate::geom::{column_lon, lat_to_v, lon_to_u, row_lat};
use crate::layout::{ray_hit, RoomLayout3D};

/// Image position of one footprint vertex: its column and the rows of its
/// ceiling and floor end points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerAnnotation {
    pub u: f64,
    pub v_ceiling: f64,
    pub v_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub map: BoundaryMap,
    /// Corners sorted by column.
    pub corners: Vec<CornerAnnotation>,
    /// Footprint edge hit by each column's ray.
    pub wall: Vec<usize>,
    /// Horizontal distance to that wall.
    pub distance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ceiling,
    Floor,
    Wall(usize),
}

pub fn gt_boundaries(
    layout: &RoomLayout3D,
    width: usize,
    height: usize,
) -> Result<GroundTruth, SynthError> {
    let cam = layout.camera_height;
    let above = layout.height - cam;
    let mut y_c = Vec::with_capacity(width);
    let mut y_f = Vec::with_capacity(width);
    let mut wall = Vec::with_capacity(width);
    let mut distance = Vec::with_capacity(width);
    for c in 0..width {
        let (s, co) = column_lon(c, width).sin_cos();
        let (d, edge) =
            ray_hit(&layout.footprint, [0.0, 0.0], [s, co]).ok_or(SynthError::DegenerateRay(c))?;
        y_f.push(-(cam / d).atan() / FRAC_PI_2);
        y_c.push((above / d).atan() / FRAC_PI_2);
        wall.push(edge);
        distance.push(d);
    }

    let mut corners = project_corners(layout, width, height);
    corners.sort_by(|a, b| a.u.total_cmp(&b.u));
    let us: Vec<f64> = corners.iter().map(|c| c.u).collect();
    let y_w = smoothed_corner_target(&us, width);
    Ok(GroundTruth {
        map: BoundaryMap { y_c, y_f, y_w },
        corners,
        wall,
        distance,
    })
}

/// Image positions of every footprint vertex, in footprint order.
pub fn project_corners(layout: &RoomLayout3D, width: usize, height: usize) -> Vec<CornerAnnotation> {
    let cam = layout.camera_height;
    let above = layout.height - cam;
    layout
        .footprint
        .iter()
        .map(|p| {
            let dist = p[0].hypot(p[1]);
            CornerAnnotation {
                u: lon_to_u(p[0].atan2(p[1]), width),
                v_ceiling: lat_to_v((above / dist).atan(), height),
                v_floor: lat_to_v(-(cam / dist).atan(), height),
            }
        })
        .collect()
}

/// Surface seen through the center of every pixel, row-major `H × W`.
pub fn classify(gt: &GroundTruth, height: usize) -> Vec<Surface> {
    let width = gt.map.width();
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        let lat = row_lat(r, height);
        for c in 0..width {
            out.push(if lat > gt.map.ceiling_lat(c) {
                Surface::Ceiling
            } else if lat < gt.map.floor_lat(c) {
                Surface::Floor
            } else {
                Surface::Wall(gt.wall[c])
            });
        }
    }
    out
}
