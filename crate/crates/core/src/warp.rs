//! Canvas geometry and backward-interpolated warping.
//!
//! Every canvas pixel is mapped to a source coordinate in target-image space
//! (closed-form for both homography and TPS warps, so the loop is pixel
//! parallel), then resolved by bilinear sampling. Warping the all-one image
//! through any field reproduces the validity mask exactly.

use crate::geometry::{apply_homography, solve_tps, ControlMesh, Homography};
use crate::par;
use crate::raster::{ImageF, SoftMask};
use crate::{Error, Result, Vec2};
use std::io::{Read, Write};

/// The stitching frame: a pixel raster containing the placed reference image
/// and the warped target. `offset` translates reference-image coordinates
/// into canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub offset: (i64, i64),
}

impl Canvas {
    /// Canvas that coincides with a `width x height` reference image.
    pub fn for_reference(width: usize, height: usize) -> Canvas {
        Canvas {
            width,
            height,
            offset: (0, 0),
        }
    }
}

/// Axis-aligned integer bounding box of the reference rectangle united with a
/// warped target outline (mesh boundary or homography-warped corners).
pub fn compute_canvas(reference: &ImageF, warped_outline: &[Vec2]) -> Result<Canvas> {
    if warped_outline.is_empty() {
        return Err(Error::InvalidParam("empty warp outline".into()));
    }
    let mut min_x = 0.0f64;
    let mut min_y = 0.0f64;
    let mut max_x = reference.width() as f64;
    let mut max_y = reference.height() as f64;
    for p in warped_outline {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let x0 = min_x.floor() as i64;
    let y0 = min_y.floor() as i64;
    let x1 = max_x.ceil() as i64;
    let y1 = max_y.ceil() as i64;
    Ok(Canvas {
        width: (x1 - x0) as usize,
        height: (y1 - y0) as usize,
        offset: (-x0, -y0),
    })
}

/// Per-canvas-pixel source coordinates in target-image space.
///
/// Coordinates are stored as two planes; invalid entries carry NaN and a
/// cleared flag. A source is valid when it lies in the closed sampling box
/// `[0, tw-1] x [0, th-1]` (and, for mesh fields, when the canvas pixel falls
/// inside the warped mesh boundary polygon).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    width: usize,
    height: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    valid: Vec<bool>,
}

impl WarpField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (Vec2, bool) {
        let i = y * self.width + x;
        (Vec2::new(self.xs[i], self.ys[i]), self.valid[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Nonzero-winding point-in-polygon test.
pub(crate) fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut winding = 0i32;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if a.y <= p.y {
            if b.y > p.y && (b - a).cross(p - a) > 0.0 {
                winding += 1;
            }
        } else if b.y <= p.y && (b - a).cross(p - a) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn assemble_field(
    width: usize,
    height: usize,
    rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)>,
) -> WarpField {
    let mut field = WarpField {
        width,
        height,
        xs: Vec::with_capacity(width * height),
        ys: Vec::with_capacity(width * height),
        valid: Vec::with_capacity(width * height),
    };
    for (xs, ys, valid) in rows {
        field.xs.extend(xs);
        field.ys.extend(ys);
        field.valid.extend(valid);
    }
    field
}

/// Backward field of a homography: each canvas pixel is carried to reference
/// coordinates and then through `h^-1` into the target image.
pub fn field_from_homography(
    h: &Homography,
    canvas: &Canvas,
    target_width: usize,
    target_height: usize,
) -> Result<WarpField> {
    let hinv = h.inverse()?;
    let (w, hgt) = (canvas.width, canvas.height);
    let (ox, oy) = canvas.offset;
    let bx = (target_width - 1) as f64;
    let by = (target_height - 1) as f64;
    let rows = par::map_rows(hgt, |iy| {
        let mut xs = vec![f64::NAN; w];
        let mut ys = vec![f64::NAN; w];
        let mut valid = vec![false; w];
        let ry = iy as f64 - oy as f64;
        for ix in 0..w {
            let rx = ix as f64 - ox as f64;
            if let Ok(src) = apply_homography(&hinv, Vec2::new(rx, ry)) {
                if src.x >= 0.0 && src.y >= 0.0 && src.x <= bx && src.y <= by {
                    xs[ix] = src.x;
                    ys[ix] = src.y;
                    valid[ix] = true;
                }
            }
        }
        (xs, ys, valid)
    });
    Ok(assemble_field(w, hgt, rows))
}

/// Backward field of a TPS mesh. The spline is fitted with the warped grid as
/// anchors (canvas coordinates) and the source lattice as targets, so every
/// canvas pixel is a closed-form evaluation; this interpolates the inverse
/// correspondence and is exact on affine motions. Validity is clipped to the
/// warped mesh boundary polygon.
pub fn field_from_mesh(mesh: &ControlMesh, canvas: &Canvas) -> Result<WarpField> {
    let params = solve_tps(mesh.warped(), mesh.source())?;
    let poly = mesh.boundary_polygon();
    let (w, hgt) = (canvas.width, canvas.height);
    let bx = mesh.target_width() - 1.0;
    let by = mesh.target_height() - 1.0;
    let rows = par::map_rows(hgt, |iy| {
        let mut xs = vec![f64::NAN; w];
        let mut ys = vec![f64::NAN; w];
        let mut valid = vec![false; w];
        for ix in 0..w {
            let q = Vec2::new(ix as f64, iy as f64);
            if !point_in_polygon(q, &poly) {
                continue;
            }
            let src = params.transform_point(q);
            if src.x >= 0.0 && src.y >= 0.0 && src.x <= bx && src.y <= by {
                xs[ix] = src.x;
                ys[ix] = src.y;
                valid[ix] = true;
            }
        }
        (xs, ys, valid)
    });
    Ok(assemble_field(w, hgt, rows))
}

fn warp_row(img: &ImageF, field: &WarpField, iy: usize, out_row: &mut [f64], mask_row: &mut [f64]) {
    let ch = img.channels();
    let w = field.width;
    for ix in 0..w {
        let i = iy * w + ix;
        if field.valid[i] {
            let (v, ok) = img.bilinear_sample(field.xs[i], field.ys[i]);
            out_row[ix * ch..ix * ch + ch].copy_from_slice(&v[..ch]);
            mask_row[ix] = if ok { 1.0 } else { 0.0 };
        }
    }
}

/// Warp an image through a backward field, returning the warped image and the
/// validity mask (the warp of the all-one image). Rows are processed in
/// parallel with disjoint writes; the result is identical to sequential
/// evaluation.
pub fn warp(img: &ImageF, field: &WarpField) -> (ImageF, SoftMask) {
    let ch = img.channels();
    let (w, h) = (field.width, field.height);
    let rows = par::map_rows(h, |iy| {
        let mut out_row = vec![0.0f64; w * ch];
        let mut mask_row = vec![0.0f64; w];
        warp_row(img, field, iy, &mut out_row, &mut mask_row);
        (out_row, mask_row)
    });
    let mut out = Vec::with_capacity(w * h * ch);
    let mut mask = Vec::with_capacity(w * h);
    for (o, m) in rows {
        out.extend(o);
        mask.extend(m);
    }
    (
        ImageF::new(w, h, ch, out).expect("warp output is finite by construction"),
        SoftMask::new(w, h, mask).expect("mask values are 0/1"),
    )
}

/// Plain sequential loop with the same contract as [`warp`]; kept as the
/// determinism oracle.
#[doc(hidden)]
pub fn warp_sequential(img: &ImageF, field: &WarpField) -> (ImageF, SoftMask) {
    let ch = img.channels();
    let (w, h) = (field.width, field.height);
    let mut out = vec![0.0f64; w * h * ch];
    let mut mask = vec![0.0f64; w * h];
    for iy in 0..h {
        let (o, m) = (
            &mut out[iy * w * ch..(iy + 1) * w * ch],
            &mut mask[iy * w..(iy + 1) * w],
        );
        warp_row(img, field, iy, o, m);
    }
    (
        ImageF::new(w, h, ch, out).expect("warp output is finite by construction"),
        SoftMask::new(w, h, mask).expect("mask values are 0/1"),
    )
}

/// Place the reference image onto the canvas at its offset. Returns the
/// placed image and its footprint mask.
pub fn place_reference(img: &ImageF, canvas: &Canvas) -> (ImageF, SoftMask) {
    let ch = img.channels();
    let (ox, oy) = canvas.offset;
    let placed = ImageF::from_fn(canvas.width, canvas.height, ch, |x, y| {
        let sx = x as i64 - ox;
        let sy = y as i64 - oy;
        let mut px = [0.0; 3];
        if sx >= 0 && sy >= 0 && (sx as usize) < img.width() && (sy as usize) < img.height() {
            for (c, v) in px.iter_mut().enumerate().take(ch) {
                *v = img.get(sx as usize, sy as usize, c);
            }
        }
        px
    });
    let mask = SoftMask::from_fn(canvas.width, canvas.height, |x, y| {
        let sx = x as i64 - ox;
        let sy = y as i64 - oy;
        if sx >= 0 && sy >= 0 && (sx as usize) < img.width() && (sy as usize) < img.height() {
            1.0
        } else {
            0.0
        }
    });
    (placed, mask)
}

const FIELD_MAGIC: &str = "UDISFIELD v1";

/// Dump a field as the debug raster format: one ASCII header line
/// `UDISFIELD v1 <width> <height>`, then the x plane and the y plane as
/// row-major little-endian f32, NaN marking invalid entries.
pub fn write_field<W: Write>(field: &WarpField, mut out: W) -> Result<()> {
    writeln!(out, "{FIELD_MAGIC} {} {}", field.width, field.height)?;
    for plane in [&field.xs, &field.ys] {
        for (v, ok) in plane.iter().zip(&field.valid) {
            let f = if *ok { *v as f32 } else { f32::NAN };
            out.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Read back a dumped field (debug aid and round-trip tests).
pub fn read_field<R: Read>(mut input: R) -> Result<WarpField> {
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        input.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 128 {
            return Err(Error::Parse("field header too long".into()));
        }
    }
    let header = String::from_utf8(header).map_err(|_| Error::Parse("field header".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "UDISFIELD" || parts[1] != "v1" {
        return Err(Error::Parse(format!("bad field header: {header}")));
    }
    let width: usize = parts[2]
        .parse()
        .map_err(|_| Error::Parse("field width".into()))?;
    let height: usize = parts[3]
        .parse()
        .map_err(|_| Error::Parse("field height".into()))?;
    let n = width * height;
    let mut planes = [vec![0.0f64; n], vec![0.0f64; n]];
    for plane in &mut planes {
        for v in plane.iter_mut() {
            let mut buf = [0u8; 4];
            input.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf) as f64;
        }
    }
    let valid = planes[0]
        .iter()
        .zip(&planes[1])
        .map(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let [xs, ys] = planes;
    Ok(WarpField {
        width,
        height,
        xs,
        ys,
        valid,
    })
}
