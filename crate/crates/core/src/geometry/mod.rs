//! Warp models: projective homography and thin-plate-spline, plus the control
//! mesh that parameterizes the TPS stage.

pub(crate) mod homography;
pub(crate) mod tps;

pub use homography::{apply_homography, solve_homography_4pt, Homography};
pub use tps::{radial_basis, solve_tps, tps_transform, TpsParams};

use crate::{Error, Result, Vec2};

/// A uniform lattice of control points on the target image together with the
/// optimized (warped) positions of those points.
///
/// `source` spans `[0, target_width] x [0, target_height]` exactly; `warped`
/// holds the corresponding positions in the frame the target is being aligned
/// to. Both grids are row-major with `rows * cols` points.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMesh {
    rows: usize,
    cols: usize,
    target_width: f64,
    target_height: f64,
    source: Vec<Vec2>,
    warped: Vec<Vec2>,
}

/// Build an evenly distributed control grid over a `width x height` target.
/// Spacing is `width/(cols-1)` horizontally and `height/(rows-1)` vertically;
/// the warped grid starts equal to the source grid.
pub fn make_control_grid(rows: usize, cols: usize, width: f64, height: f64) -> Result<ControlMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidParam(format!(
            "control grid needs rows, cols >= 2, got {rows}x{cols}"
        )));
    }
    if !(width > 0.0) || !(height > 0.0) {
        return Err(Error::InvalidParam("control grid needs positive size".into()));
    }
    let mut source = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let y = height * r as f64 / (rows - 1) as f64;
        for c in 0..cols {
            let x = width * c as f64 / (cols - 1) as f64;
            source.push(Vec2::new(x, y));
        }
    }
    Ok(ControlMesh {
        rows,
        cols,
        target_width: width,
        target_height: height,
        warped: source.clone(),
        source,
    })
}

/// Initialize the warped grid by pushing every source point through `h`.
pub fn mesh_from_homography(mesh: &ControlMesh, h: &Homography) -> Result<ControlMesh> {
    let mut out = mesh.clone();
    for (w, s) in out.warped.iter_mut().zip(&mesh.source) {
        *w = apply_homography(h, *s)?;
    }
    Ok(out)
}

impl ControlMesh {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn target_width(&self) -> f64 {
        self.target_width
    }

    pub fn target_height(&self) -> f64 {
        self.target_height
    }

    pub fn source(&self) -> &[Vec2] {
        &self.source
    }

    pub fn warped(&self) -> &[Vec2] {
        &self.warped
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn source_at(&self, row: usize, col: usize) -> Vec2 {
        self.source[self.idx(row, col)]
    }

    pub fn warped_at(&self, row: usize, col: usize) -> Vec2 {
        self.warped[self.idx(row, col)]
    }

    /// Replace the warped grid (shape must match).
    pub fn set_warped(&mut self, warped: Vec<Vec2>) -> Result<()> {
        if warped.len() != self.source.len() {
            return Err(Error::ShapeMismatch(format!(
                "warped grid has {} points, expected {}",
                warped.len(),
                self.source.len()
            )));
        }
        self.warped = warped;
        Ok(())
    }

    pub fn warped_mut(&mut self) -> &mut [Vec2] {
        &mut self.warped
    }

    /// Shift every warped point by `(dx, dy)`, e.g. moving from reference
    /// coordinates into canvas coordinates.
    pub fn translated(&self, dx: f64, dy: f64) -> ControlMesh {
        let mut out = self.clone();
        for p in &mut out.warped {
            p.x += dx;
            p.y += dy;
        }
        out
    }

    /// Rescale the mesh to a new target resolution: the source lattice is
    /// rebuilt over the new size and warped positions are scaled by the same
    /// per-axis factors. Used to carry a warm start across resolutions.
    pub fn rescaled(&self, new_width: f64, new_height: f64) -> Result<ControlMesh> {
        let sx = new_width / self.target_width;
        let sy = new_height / self.target_height;
        let mut out = make_control_grid(self.rows, self.cols, new_width, new_height)?;
        let warped = self
            .warped
            .iter()
            .map(|p| Vec2::new(p.x * sx, p.y * sy))
            .collect();
        out.set_warped(warped)?;
        Ok(out)
    }

    /// Re-grid the mesh: fit the forward spline through the current
    /// correspondences and evaluate it on a `new_rows x new_cols` lattice at
    /// a (possibly different) target resolution. With unchanged shape this
    /// reduces to [`ControlMesh::rescaled`] thanks to spline interpolation.
    pub fn resampled(
        &self,
        new_rows: usize,
        new_cols: usize,
        new_width: f64,
        new_height: f64,
    ) -> Result<ControlMesh> {
        let scaled = self.rescaled(new_width, new_height)?;
        if new_rows == self.rows && new_cols == self.cols {
            return Ok(scaled);
        }
        let params = solve_tps(scaled.source(), scaled.warped())?;
        let mut out = make_control_grid(new_rows, new_cols, new_width, new_height)?;
        let warped = tps_transform(&params, out.source());
        out.set_warped(warped)?;
        Ok(out)
    }

    /// Boundary control points in counter-clockwise order (image coordinates
    /// with y down make this top row, right column, bottom row reversed, left
    /// column reversed).
    pub fn boundary_polygon(&self) -> Vec<Vec2> {
        let mut poly = Vec::with_capacity(2 * (self.rows + self.cols) - 4);
        for c in 0..self.cols {
            poly.push(self.warped_at(0, c));
        }
        for r in 1..self.rows {
            poly.push(self.warped_at(r, self.cols - 1));
        }
        for c in (0..self.cols - 1).rev() {
            poly.push(self.warped_at(self.rows - 1, c));
        }
        for r in (1..self.rows - 1).rev() {
            poly.push(self.warped_at(r, 0));
        }
        poly
    }

    /// Segment-pair test over the warped boundary polygon, skipping adjacent
    /// segments. Self-intersection means the backward-warp validity clip may
    /// behave unexpectedly and is surfaced as a warning upstream.
    pub fn boundary_self_intersects(&self) -> bool {
        fn segs_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
            let d1 = (b - a).cross(c - a);
            let d2 = (b - a).cross(d - a);
            let d3 = (d - c).cross(a - c);
            let d4 = (d - c).cross(b - c);
            (d1 * d2 < 0.0) && (d3 * d4 < 0.0)
        }
        let poly = self.boundary_polygon();
        let n = poly.len();
        for i in 0..n {
            for j in i + 2..n {
                // Skip adjacent segments (including the wrap-around pair).
                if i == 0 && j == n - 1 {
                    continue;
                }
                if segs_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                    return true;
                }
            }
        }
        false
    }

    /// Number of grid cells whose warped quad is folded (any corner triple
    /// with inverted orientation).
    pub fn fold_count(&self) -> usize {
        let mut folds = 0;
        for r in 0..self.rows - 1 {
            for c in 0..self.cols - 1 {
                let p00 = self.warped_at(r, c);
                let p10 = self.warped_at(r, c + 1);
                let p11 = self.warped_at(r + 1, c + 1);
                let p01 = self.warped_at(r + 1, c);
                let quad = [p00, p10, p11, p01];
                let mut bad = false;
                for i in 0..4 {
                    let a = quad[i];
                    let b = quad[(i + 1) % 4];
                    let c = quad[(i + 2) % 4];
                    if (b - a).cross(c - b) <= 0.0 {
                        bad = true;
                        break;
                    }
                }
                if bad {
                    folds += 1;
                }
            }
        }
        folds
    }

    /// Serialize to the JSON grid-dump format: row-major `[x, y]` pairs for
    /// both grids.
    pub fn to_json(&self) -> String {
        let pairs = |pts: &[Vec2]| -> Vec<[f64; 2]> { pts.iter().map(|p| [p.x, p.y]).collect() };
        let v = serde_json::json!({
            "rows": self.rows,
            "cols": self.cols,
            "target_width": self.target_width,
            "target_height": self.target_height,
            "source": pairs(&self.source),
            "warped": pairs(&self.warped),
        });
        serde_json::to_string_pretty(&v).expect("mesh json")
    }

    pub fn from_json(text: &str) -> Result<ControlMesh> {
        #[derive(serde::Deserialize)]
        struct MeshFile {
            rows: usize,
            cols: usize,
            target_width: f64,
            target_height: f64,
            source: Vec<[f64; 2]>,
            warped: Vec<[f64; 2]>,
        }
        let f: MeshFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("mesh json: {e}")))?;
        if f.source.len() != f.rows * f.cols || f.warped.len() != f.rows * f.cols {
            return Err(Error::Parse(format!(
                "mesh json: grids must have rows*cols = {} points",
                f.rows * f.cols
            )));
        }
        let mut mesh = make_control_grid(f.rows, f.cols, f.target_width, f.target_height)?;
        // The stored source grid must be the uniform lattice we rebuild.
        for (a, b) in mesh.source.iter().zip(&f.source) {
            if (a.x - b[0]).abs() > 1e-6 || (a.y - b[1]).abs() > 1e-6 {
                return Err(Error::Parse(
                    "mesh json: source grid is not the uniform lattice".into(),
                ));
            }
        }
        mesh.set_warped(f.warped.iter().map(|p| Vec2::new(p[0], p[1])).collect())?;
        Ok(mesh)
    }
}
