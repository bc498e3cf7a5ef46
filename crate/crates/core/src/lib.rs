//! Parallax-tolerant two-stage image stitching.
//!
//! The pipeline registers an image pair with a global homography refined by a
//! thin-plate-spline (TPS) control mesh, both optimized photometrically against
//! a joint alignment/distortion objective, then composites the warped images
//! through a seam-driven soft mask found by energy minimization.
//!
//! Stage 1 (warp): [`optim::optimize_homography`] recovers a 4-pt homography
//! over a Gaussian image pyramid, [`optim::optimize_tps`] refines per-control-point
//! motions, and [`optim::adapt`] iterates the alignment-only objective for quick
//! per-pair refinement.
//!
//! Stage 2 (composition): [`compose::optimize_seam`] relaxes the hard seam label
//! to a soft mask optimized under boundary and smoothness energies, and
//! [`compose::blend`] produces the panorama.
//!
//! [`synth`] generates deterministic synthetic pairs with exact ground-truth
//! warps for benchmarking both stages.

pub mod compose;
pub mod energy;
pub mod geometry;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod warp;

mod par;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Raster or grid dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A metric or optimization region contains no pixels.
    #[error("empty region: {0}")]
    EmptyRegion(&'static str),
    /// Collinear/coincident points or a rank-deficient system.
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    /// Projective action had a vanishing homogeneous denominator.
    #[error("point at infinity: homogeneous denominator {0:e} is below 1e-10")]
    PointAtInfinity(f64),
    /// The image pair has no usable overlap.
    #[error("no overlap: {0}")]
    NoOverlap(String),
    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    /// A mesh/config/field file failed to parse.
    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A 2D point or vector, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Z component of the 2D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}
