//! Planar grid geometry: cells, centroids, and point-to-cell lookup.
//!
//! The city map is a bounded rectangle partitioned into `rows x cols`
//! uniform square cells. Cell indices are row-major, so cell `(r, c)`
//! has index `r * cols + c`. All distances are Euclidean and in km.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a grid cell, in `[0, n_q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(pub usize);

impl CellId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A point on the map, km coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dist(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Uniform rectangular grid over `[0, cols*cell_km] x [0, rows*cell_km]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Side length of one square cell, km.
    pub cell_km: f64,
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize, cell_km: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(
                "grid must have at least one row and column".into(),
            ));
        }
        if !(cell_km > 0.0) {
            return Err(Error::Config(format!(
                "cell size must be positive, got {cell_km}"
            )));
        }
        Ok(GridGeometry {
            rows,
            cols,
            cell_km,
        })
    }

    /// Smallest square-ish grid holding `n_q` cells; extra cells beyond
    /// `rows*cols - n_q` never occur because we pick rows*cols == n_q only
    /// when n_q factors as rows*cols, otherwise a 1 x n_q strip.
    pub fn for_cells(n_q: usize, cell_km: f64) -> Result<Self> {
        let side = (n_q as f64).sqrt() as usize;
        for r in (1..=side).rev() {
            if n_q % r == 0 {
                return GridGeometry::new(r, n_q / r, cell_km);
            }
        }
        GridGeometry::new(1, n_q, cell_km)
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn width_km(&self) -> f64 {
        self.cols as f64 * self.cell_km
    }

    pub fn height_km(&self) -> f64 {
        self.rows as f64 * self.cell_km
    }

    /// Centroid of a cell.
    pub fn centroid(&self, cell: CellId) -> Point2 {
        let r = cell.0 / self.cols;
        let c = cell.0 % self.cols;
        Point2::new(
            (c as f64 + 0.5) * self.cell_km,
            (r as f64 + 0.5) * self.cell_km,
        )
    }

    pub fn centroids(&self) -> Vec<Point2> {
        (0..self.n_cells())
            .map(|i| self.centroid(CellId(i)))
            .collect()
    }

    /// Cell containing a point, or None when the point lies outside the map.
    /// Points on the shared edge of two cells belong to the cell with the
    /// larger index (floor semantics), except on the outer boundary, which
    /// is clamped inward so the whole closed rectangle is covered.
    pub fn locate(&self, p: Point2) -> Option<CellId> {
        if p.x < 0.0 || p.y < 0.0 || p.x > self.width_km() || p.y > self.height_km() {
            return None;
        }
        let c = ((p.x / self.cell_km) as usize).min(self.cols - 1);
        let r = ((p.y / self.cell_km) as usize).min(self.rows - 1);
        Some(CellId(r * self.cols + c))
    }

    /// Centroid-to-centroid distance between two cells.
    pub fn cell_dist(&self, a: CellId, b: CellId) -> f64 {
        self.centroid(a).dist(self.centroid(b))
    }
}
