//! ROI geometry: loading, validation, and mapping pixel coordinates to ROI,
//! column, and row tokens.
//!
//! Boxes are half-open `[x_min, x_max) x [y_min, y_max)` so boundary points
//! resolve to exactly one ROI. Points outside the image map to the reserved
//! OFF token rather than an error.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A single axis-aligned region. Coordinates in pixels, origin top-left,
/// y increasing downward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Roi {
    pub id: u32,
    pub label: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub row: u32,
    pub col: u32,
}

impl Roi {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiMap {
    pub image_width: f64,
    pub image_height: f64,
    pub grid: bool,
    pub n_rows: u32,
    pub n_cols: u32,
    pub rois: Vec<Roi>,
}

/// Result of mapping a point: a content token or OFF (outside the image).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapToken {
    Id(u32),
    Off,
}

impl RoiMap {
    /// Number of ROIs (J).
    pub fn n_rois(&self) -> usize {
        self.rois.len()
    }

    /// Load and fully validate a map. Validation reports every violation,
    /// not just the first.
    pub fn load(path: impl AsRef<Path>) -> Result<RoiMap> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let map: RoiMap = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        map.validate()?;
        Ok(map)
    }

    /// Check exclusivity, exhaustiveness, id density, and (for grid maps)
    /// row/column structure. Collects all violations.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();

        if self.rois.is_empty() {
            violations.push("map contains no ROIs".to_string());
            return Err(Error::RoiValidation(violations));
        }
        if self.image_width <= 0.0 || self.image_height <= 0.0 {
            violations.push(format!(
                "image dimensions must be positive, got {}x{}",
                self.image_width, self.image_height
            ));
        }
        for r in &self.rois {
            if !(r.x_min < r.x_max && r.y_min < r.y_max) {
                violations.push(format!("roi {} has an empty or inverted box", r.id));
            }
            if r.x_min < 0.0
                || r.y_min < 0.0
                || r.x_max > self.image_width
                || r.y_max > self.image_height
            {
                violations.push(format!("roi {} extends outside the image bounds", r.id));
            }
        }

        // Dense, unique ids 0..J-1.
        let mut ids: Vec<u32> = self.rois.iter().map(|r| r.id).collect();
        ids.sort_unstable();
        for w in ids.windows(2) {
            if w[0] == w[1] {
                violations.push(format!("duplicate roi id {}", w[0]));
            }
        }
        ids.dedup();
        if ids != (0..self.rois.len() as u32).collect::<Vec<_>>() {
            violations.push(format!(
                "roi ids must be dense 0..{}, got {:?}",
                self.rois.len() - 1,
                ids
            ));
        }

        if !violations.is_empty() {
            return Err(Error::RoiValidation(violations));
        }

        // Arrangement check: cut the image at every box edge and probe each
        // cell midpoint. Exhaustive for axis-aligned boxes: a gap or overlap
        // always contains some cell of the arrangement.
        let mut xs: Vec<f64> = vec![0.0, self.image_width];
        let mut ys: Vec<f64> = vec![0.0, self.image_height];
        for r in &self.rois {
            xs.extend([r.x_min, r.x_max]);
            ys.extend([r.y_min, r.y_max]);
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        ys.dedup();
        for wx in xs.windows(2) {
            for wy in ys.windows(2) {
                let (mx, my) = ((wx[0] + wx[1]) / 2.0, (wy[0] + wy[1]) / 2.0);
                if mx < 0.0 || mx >= self.image_width || my < 0.0 || my >= self.image_height {
                    continue;
                }
                let hits: Vec<u32> = self
                    .rois
                    .iter()
                    .filter(|r| r.contains(mx, my))
                    .map(|r| r.id)
                    .collect();
                match hits.len() {
                    0 => violations.push(format!("coverage gap at sample point ({mx}, {my})")),
                    1 => {}
                    _ => violations.push(format!(
                        "overlap between rois {:?} in cell [{}, {}) x [{}, {})",
                        hits, wx[0], wx[1], wy[0], wy[1]
                    )),
                }
            }
        }

        if self.grid {
            violations.extend(self.validate_grid());
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::RoiValidation(violations))
        }
    }

    fn validate_grid(&self) -> Vec<String> {
        let mut violations = Vec::new();
        let mut seen = vec![0usize; (self.n_rows * self.n_cols) as usize];
        for r in &self.rois {
            if r.row >= self.n_rows || r.col >= self.n_cols {
                violations.push(format!(
                    "roi {} has (row, col) = ({}, {}) outside {}x{}",
                    r.id, r.row, r.col, self.n_rows, self.n_cols
                ));
                continue;
            }
            seen[(r.row * self.n_cols + r.col) as usize] += 1;
        }
        for row in 0..self.n_rows {
            for col in 0..self.n_cols {
                let n = seen[(row * self.n_cols + col) as usize];
                if n != 1 {
                    violations.push(format!(
                        "grid cell ({row}, {col}) is covered by {n} ROIs, expected 1"
                    ));
                }
            }
        }
        // Axis-wise mapping needs consistent spans per column and per row.
        for col in 0..self.n_cols {
            let spans: Vec<(f64, f64)> = self
                .rois
                .iter()
                .filter(|r| r.col == col)
                .map(|r| (r.x_min, r.x_max))
                .collect();
            if spans.windows(2).any(|w| w[0] != w[1]) {
                violations.push(format!("column {col} has inconsistent horizontal spans"));
            }
        }
        for row in 0..self.n_rows {
            let spans: Vec<(f64, f64)> = self
                .rois
                .iter()
                .filter(|r| r.row == row)
                .map(|r| (r.y_min, r.y_max))
                .collect();
            if spans.windows(2).any(|w| w[0] != w[1]) {
                violations.push(format!("row {row} has inconsistent vertical spans"));
            }
        }
        violations
    }

    /// Map a pixel to the unique ROI containing it, or OFF when outside the
    /// image bounds. Total: never panics.
    pub fn map_point_to_roi(&self, x: f64, y: f64) -> MapToken {
        if !(x >= 0.0 && x < self.image_width && y >= 0.0 && y < self.image_height)
            || x.is_nan()
            || y.is_nan()
        {
            return MapToken::Off;
        }
        match self.rois.iter().find(|r| r.contains(x, y)) {
            Some(r) => MapToken::Id(r.id),
            None => MapToken::Off,
        }
    }

    fn require_grid(&self) -> Result<()> {
        if self.grid {
            Ok(())
        } else {
            Err(Error::UnsupportedLayout(
                "axis-wise token mapping requires a grid ROI map".to_string(),
            ))
        }
    }

    /// Column token for an x coordinate on a grid map.
    pub fn map_x_to_column_token(&self, x: f64) -> Result<MapToken> {
        self.require_grid()?;
        if !(x >= 0.0 && x < self.image_width) || x.is_nan() {
            return Ok(MapToken::Off);
        }
        for r in &self.rois {
            if x >= r.x_min && x < r.x_max {
                return Ok(MapToken::Id(r.col));
            }
        }
        Ok(MapToken::Off)
    }

    /// Row token for a y coordinate on a grid map.
    pub fn map_y_to_row_token(&self, y: f64) -> Result<MapToken> {
        self.require_grid()?;
        if !(y >= 0.0 && y < self.image_height) || y.is_nan() {
            return Ok(MapToken::Off);
        }
        for r in &self.rois {
            if y >= r.y_min && y < r.y_max {
                return Ok(MapToken::Id(r.row));
            }
        }
        Ok(MapToken::Off)
    }

    /// ROI at a (row, col) cell of a grid map.
    pub fn roi_at(&self, row: u32, col: u32) -> Option<&Roi> {
        self.rois.iter().find(|r| r.row == row && r.col == col)
    }

    /// Build a uniform `rows x cols` grid map over `width x height` pixels,
    /// row-major ids.
    pub fn uniform_grid(rows: u32, cols: u32, width: f64, height: f64) -> RoiMap {
        let cell_w = width / cols as f64;
        let cell_h = height / rows as f64;
        let mut rois = Vec::with_capacity((rows * cols) as usize);
        for row in 0..rows {
            for col in 0..cols {
                let id = row * cols + col;
                rois.push(Roi {
                    id,
                    label: format!("r{row}c{col}"),
                    x_min: col as f64 * cell_w,
                    y_min: row as f64 * cell_h,
                    // Last cells close exactly on the image edge.
                    x_max: if col + 1 == cols {
                        width
                    } else {
                        (col + 1) as f64 * cell_w
                    },
                    y_max: if row + 1 == rows {
                        height
                    } else {
                        (row + 1) as f64 * cell_h
                    },
                    row,
                    col,
                });
            }
        }
        RoiMap {
            image_width: width,
            image_height: height,
            grid: true,
            n_rows: rows,
            n_cols: cols,
            rois,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("roi map serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
