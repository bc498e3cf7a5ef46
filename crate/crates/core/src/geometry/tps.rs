//! Thin-plate-spline solve and evaluation.
//!
//! The warp is `T(p) = c + m p + sum_i w_i O(|p - p_i|)` with the radial basis
//! `O(r) = r^2 log r^2`. Coefficients come from the dense `(N+3) x (N+3)`
//! block system assembling the N interpolation constraints with the side
//! conditions `sum w_i = 0` and `sum p_i w_i^T = 0`. The bending weight is
//! zero, so anchors are interpolated exactly.

use crate::{Error, Result, Vec2};
use nalgebra::DMatrix;

/// Radial basis `O(r) = r^2 ln(r^2)`, with the continuous limit `O(0) = 0`.
#[inline]
pub fn radial_basis(r: f64) -> f64 {
    if r < 1e-30 {
        0.0
    } else {
        let r2 = r * r;
        r2 * r2.ln()
    }
}

/// `O'(r)/r = 2 (ln r^2 + 1)`, used by analytic gradients. Returns 0 for
/// vanishing radii where the product with `(p - p_i)` tends to zero anyway.
#[inline]
pub(crate) fn radial_basis_grad_factor(r: f64) -> f64 {
    if r < 1e-9 {
        0.0
    } else {
        2.0 * ((r * r).ln() + 1.0)
    }
}

/// Solved thin-plate-spline coefficients for one correspondence set.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsParams {
    /// Translation part.
    pub c: Vec2,
    /// Affine part, row-major 2x2.
    pub m: [[f64; 2]; 2],
    /// Kernel weights, one per anchor.
    pub w: Vec<Vec2>,
    /// The control points the kernel is centered on.
    pub anchors: Vec<Vec2>,
}

impl TpsParams {
    pub fn identity_for(anchors: Vec<Vec2>) -> Self {
        TpsParams {
            c: Vec2::ZERO,
            m: [[1.0, 0.0], [0.0, 1.0]],
            w: vec![Vec2::ZERO; anchors.len()],
            anchors,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: Vec2) -> Vec2 {
        let mut out = Vec2::new(
            self.c.x + self.m[0][0] * p.x + self.m[0][1] * p.y,
            self.c.y + self.m[1][0] * p.x + self.m[1][1] * p.y,
        );
        for (w, a) in self.w.iter().zip(&self.anchors) {
            let o = radial_basis((p - *a).norm());
            out.x += w.x * o;
            out.y += w.y * o;
        }
        out
    }
}

fn check_anchor_set(p: &[Vec2]) -> Result<()> {
    let n = p.len();
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "thin-plate spline needs at least 3 control points, got {n}"
        )));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (p[i] - p[j]).norm() < 1e-9 {
                return Err(Error::Degenerate(format!(
                    "control points {i} and {j} coincide"
                )));
            }
        }
    }
    // Collinearity via the smaller eigenvalue of the point covariance.
    let cx = p.iter().map(|q| q.x).sum::<f64>() / n as f64;
    let cy = p.iter().map(|q| q.y).sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for q in p {
        let dx = q.x - cx;
        let dy = q.y - cy;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let lambda_min = tr / 2.0 - disc;
    if lambda_min <= 1e-12 * tr.max(1e-300) {
        return Err(Error::Degenerate("control points are collinear".into()));
    }
    Ok(())
}

/// Solve for the TPS mapping each `p[i]` to `p_prime[i]` exactly.
pub fn solve_tps(p: &[Vec2], p_prime: &[Vec2]) -> Result<TpsParams> {
    if p.len() != p_prime.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} control points vs {} targets",
            p.len(),
            p_prime.len()
        )));
    }
    check_anchor_set(p)?;
    let n = p.len();
    let dim = n + 3;
    let mut l = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DMatrix::<f64>::zeros(dim, 2);
    for k in 0..n {
        l[(k, 0)] = 1.0;
        l[(k, 1)] = p[k].x;
        l[(k, 2)] = p[k].y;
        for i in 0..n {
            l[(k, 3 + i)] = radial_basis((p[k] - p[i]).norm());
        }
        b[(k, 0)] = p_prime[k].x;
        b[(k, 1)] = p_prime[k].y;
    }
    for i in 0..n {
        l[(n, 3 + i)] = 1.0;
        l[(n + 1, 3 + i)] = p[i].x;
        l[(n + 2, 3 + i)] = p[i].y;
    }
    let lu = l.lu();
    let x = lu
        .solve(&b)
        .ok_or_else(|| Error::Degenerate("singular thin-plate-spline system".into()))?;
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        w.push(Vec2::new(x[(3 + i, 0)], x[(3 + i, 1)]));
    }
    Ok(TpsParams {
        c: Vec2::new(x[(0, 0)], x[(0, 1)]),
        m: [[x[(1, 0)], x[(2, 0)]], [x[(1, 1)], x[(2, 1)]]],
        w,
        anchors: p.to_vec(),
    })
}

/// Evaluate the spline at every query point.
pub fn tps_transform(params: &TpsParams, pts: &[Vec2]) -> Vec<Vec2> {
    pts.iter().map(|p| params.transform_point(*p)).collect()
}
