//! The per-column layout representation predicted by the network.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::column_lon;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("boundary rows have different lengths ({0}, {1}, {2})")]
    RaggedRows(usize, usize, usize),
    #[error("boundary map is empty")]
    Empty,
    #[error("width mismatch: {0} vs {1}")]
    WidthMismatch(usize, usize),
}

/// Ceiling and floor boundary latitudes divided by `π/2`, plus the corner
/// probability of every column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMap {
    pub y_c: Vec<f64>,
    pub y_f: Vec<f64>,
    pub y_w: Vec<f64>,
}

impl BoundaryMap {
    pub fn new(y_c: Vec<f64>, y_f: Vec<f64>, y_w: Vec<f64>) -> Result<Self, BoundaryError> {
        let m = Self { y_c, y_f, y_w };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), BoundaryError> {
        let (a, b, c) = (self.y_c.len(), self.y_f.len(), self.y_w.len());
        if a != b || b != c {
            return Err(BoundaryError::RaggedRows(a, b, c));
        }
        if a == 0 {
            return Err(BoundaryError::Empty);
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.y_c.len()
    }

    pub fn ceiling_lat(&self, col: usize) -> f64 {
        self.y_c[col] * FRAC_PI_2
    }

    pub fn floor_lat(&self, col: usize) -> f64 {
        self.y_f[col] * FRAC_PI_2
    }

    pub fn lon(&self, col: usize) -> f64 {
        column_lon(col, self.width())
    }

    /// Circular shift of every row: `out[c] = self[(c - shift) mod W]`.
    pub fn roll(&self, shift: isize) -> Self {
        let w = self.width() as isize;
        let roll = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for (c, x) in v.iter().enumerate() {
                out[(c as isize + shift).rem_euclid(w) as usize] = *x;
            }
            out
        };
        Self {
            y_c: roll(&self.y_c),
            y_f: roll(&self.y_f),
            y_w: roll(&self.y_w),
        }
    }

    /// Largest absolute difference over the two boundary rows.
    pub fn max_boundary_diff(&self, other: &Self) -> f64 {
        self.y_c
            .iter()
            .zip(&other.y_c)
            .chain(self.y_f.iter().zip(&other.y_f))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Corner target for the `y_w` row: `exp(−d²/2σ²)` with `d` the circular column
/// distance from each column center to the nearest corner and `σ = 1.5·W/128`.
pub fn smoothed_corner_target(corner_u: &[f64], width: usize) -> Vec<f64> {
    let sigma = 1.5 * width as f64 / 128.0;
    let w = width as f64;
    (0..width)
        .map(|c| {
            let d = corner_u
                .iter()
                .map(|u| {
                    let diff = (c as f64 - u).rem_euclid(w);
                    diff.min(w - diff)
                })
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() {
                (-d * d / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            }
        })
        .collect()
}
