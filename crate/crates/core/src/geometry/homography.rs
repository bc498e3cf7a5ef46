//! 4-point homography estimation via the normalized direct linear transform.

use crate::{Error, Result, Vec2};
use nalgebra::DMatrix;

/// 3x3 projective transform. Normalized so `h[2][2] = 1` whenever that entry
/// is not vanishing; always invertible (`|det| > 1e-8`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Build from row-major entries, validating invertibility and normalizing.
    pub fn from_rows(m: [[f64; 3]; 3]) -> Result<Self> {
        let h = Homography { m }.normalized();
        let det = h.det();
        if det.abs() <= 1e-8 {
            return Err(Error::Degenerate(format!(
                "homography determinant {det:e} below invertibility threshold"
            )));
        }
        Ok(h)
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.m[r][c]
    }

    fn normalized(mut self) -> Self {
        let s = self.m[2][2];
        if s.abs() > 1e-8 {
            for r in 0..3 {
                for c in 0..3 {
                    self.m[r][c] /= s;
                }
            }
        }
        self
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse transform via the adjugate, renormalized.
    pub fn inverse(&self) -> Result<Homography> {
        let det = self.det();
        if det.abs() <= 1e-8 {
            return Err(Error::Degenerate(format!(
                "cannot invert homography with determinant {det:e}"
            )));
        }
        let m = &self.m;
        let adj = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                inv[r][c] = adj[r][c] / det;
            }
        }
        Ok(Homography { m: inv }.normalized())
    }

    pub fn compose(&self, other: &Homography) -> Homography {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = (0..3).map(|k| self.m[r][k] * other.m[k][c]).sum();
            }
        }
        Homography { m: out }.normalized()
    }
}

/// Projective action `p -> (h0.p~ / h2.p~, h1.p~ / h2.p~)`.
pub fn apply_homography(h: &Homography, p: Vec2) -> Result<Vec2> {
    let m = &h.m;
    let d = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
    if d.abs() < 1e-10 {
        return Err(Error::PointAtInfinity(d));
    }
    Ok(Vec2::new(
        (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / d,
        (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / d,
    ))
}

/// Similarity mapping a point set into roughly `[-1, 1]^2` for conditioning.
/// Returns (scale, center).
fn normalizer(pts: &[Vec2; 4]) -> (f64, Vec2) {
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let extent = pts
        .iter()
        .map(|p| (p.x - cx).abs().max((p.y - cy).abs()))
        .fold(0.0f64, f64::max);
    (if extent > 0.0 { extent } else { 1.0 }, Vec2::new(cx, cy))
}

fn any_three_collinear(pts: &[Vec2; 4], scale: f64) -> bool {
    const TRIPLES: [[usize; 3]; 4] = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
    TRIPLES.iter().any(|t| {
        let a = pts[t[0]];
        let b = pts[t[1]];
        let c = pts[t[2]];
        ((b - a).cross(c - a)).abs() < 1e-9 * scale * scale
    })
}

/// Solve the homography carrying `src_corners` to `dst_corners` (the 4-pt
/// motion parameterization). Assembled as the standard 8x9 DLT system solved
/// for the SVD null vector, with both corner sets pre-normalized to `[-1,1]`.
pub fn solve_homography_4pt(src_corners: &[Vec2; 4], dst_corners: &[Vec2; 4]) -> Result<Homography> {
    let (ss, sc) = normalizer(src_corners);
    let (ds, dc) = normalizer(dst_corners);
    if any_three_collinear(src_corners, ss) || any_three_collinear(dst_corners, ds) {
        return Err(Error::Degenerate(
            "three corners are collinear; homography is not determined".into(),
        ));
    }
    let mut a = DMatrix::<f64>::zeros(9, 9);
    for (k, (ps, pd)) in src_corners.iter().zip(dst_corners.iter()).enumerate() {
        let x = (ps.x - sc.x) / ss;
        let y = (ps.y - sc.y) / ss;
        let u = (pd.x - dc.x) / ds;
        let v = (pd.y - dc.y) / ds;
        let r0 = 2 * k;
        let r1 = 2 * k + 1;
        a[(r0, 0)] = -x;
        a[(r0, 1)] = -y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = u * x;
        a[(r0, 7)] = u * y;
        a[(r0, 8)] = u;
        a[(r1, 3)] = -x;
        a[(r1, 4)] = -y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = v * x;
        a[(r1, 7)] = v * y;
        a[(r1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    // Row of V^T for the smallest singular value (nalgebra sorts descending).
    let h_vec = v_t.row(8);
    let hn = [
        [h_vec[0], h_vec[1], h_vec[2]],
        [h_vec[3], h_vec[4], h_vec[5]],
        [h_vec[6], h_vec[7], h_vec[8]],
    ];
    // Denormalize: H = T_dst^-1 * Hn * T_src with T similarity transforms.
    let t_src = [
        [1.0 / ss, 0.0, -sc.x / ss],
        [0.0, 1.0 / ss, -sc.y / ss],
        [0.0, 0.0, 1.0],
    ];
    let t_dst_inv = [[ds, 0.0, dc.x], [0.0, ds, dc.y], [0.0, 0.0, 1.0]];
    let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        out
    };
    let h = mul(&t_dst_inv, &mul(&hn, &t_src));
    let h = Homography { m: h }.normalized();
    let det = h.det();
    if det.abs() <= 1e-8 {
        return Err(Error::Degenerate(format!(
            "solved homography is not invertible (det {det:e})"
        )));
    }
    // The 4-point problem is exact; reject rank-deficient solves that failed
    // to interpolate the corners.
    for (ps, pd) in src_corners.iter().zip(dst_corners.iter()) {
        let q = apply_homography(&h, *ps)?;
        if (q - *pd).norm() > 1e-6 * ss.max(ds).max(1.0) {
            return Err(Error::Degenerate(
                "DLT residual too large; corner configuration is near-degenerate".into(),
            ));
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_square() -> [Vec2; 4] {
        [
            Vec2::new(0.0, 0.0),
            Vec2::new(100.0, 0.0),
            Vec2::new(100.0, 100.0),
            Vec2::new(0.0, 100.0),
        ]
    }

    #[test]
    fn identity_motion() {
        let sq = unit_square();
        let h = solve_homography_4pt(&sq, &sq).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(h.at(r, c), want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn pure_translation() {
        let sq = unit_square();
        let dst = sq.map(|p| p + Vec2::new(5.0, 3.0));
        let h = solve_homography_4pt(&sq, &dst).unwrap();
        assert_abs_diff_eq!(h.at(0, 2), 5.0, epsilon = 1e-8);
        assert_abs_diff_eq!(h.at(1, 2), 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(h.at(0, 0), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(h.at(2, 0), 0.0, epsilon = 1e-11);
    }

    #[test]
    fn collinear_corners_rejected() {
        let src = [
            Vec2::new(0.0, 0.0),
            Vec2::new(50.0, 0.0),
            Vec2::new(100.0, 0.0),
            Vec2::new(0.0, 100.0),
        ];
        assert!(matches!(
            solve_homography_4pt(&src, &unit_square()),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn apply_identity_and_translation() {
        let p = Vec2::new(12.3, -4.5);
        assert_eq!(apply_homography(&Homography::identity(), p).unwrap(), p);
        let t = Homography::translation(7.0, -2.0);
        assert_eq!(
            apply_homography(&t, Vec2::ZERO).unwrap(),
            Vec2::new(7.0, -2.0)
        );
    }

    #[test]
    fn apply_matches_homogeneous_oracle() {
        let h = Homography::from_rows([
            [0.9, 0.1, 4.0],
            [-0.2, 1.1, -3.0],
            [1e-3, -2e-3, 1.0],
        ])
        .unwrap();
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(10.0, 20.0),
            Vec2::new(-5.0, 100.0),
        ];
        for p in pts {
            // 3-vector multiply oracle.
            let m = h.rows();
            let hx = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
            let hy = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
            let hw = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
            let got = apply_homography(&h, p).unwrap();
            assert_abs_diff_eq!(got.x, hx / hw, epsilon = 1e-9);
            assert_abs_diff_eq!(got.y, hy / hw, epsilon = 1e-9);
        }
    }

    #[test]
    fn point_at_infinity_error() {
        let h = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-0.01, 0.0, 1.0]])
            .unwrap();
        // Denominator vanishes at x = 100.
        assert!(matches!(
            apply_homography(&h, Vec2::new(100.0, 0.0)),
            Err(Error::PointAtInfinity(_))
        ));
    }

    /// Independent oracle: un-normalized 8x8 solve with h22 = 1, eliminated by
    /// hand-rolled Gaussian elimination with partial pivoting.
    fn dlt_oracle_8x8(src: &[Vec2; 4], dst: &[Vec2; 4]) -> [[f64; 3]; 3] {
        let mut a = [[0.0f64; 9]; 8]; // augmented
        for k in 0..4 {
            let (x, y) = (src[k].x, src[k].y);
            let (u, v) = (dst[k].x, dst[k].y);
            a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
            a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
        }
        for col in 0..8 {
            let piv = (col..8)
                .max_by(|i, j| a[*i][col].abs().partial_cmp(&a[*j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            for row in 0..8 {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..9 {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        let h: Vec<f64> = (0..8).map(|i| a[i][8] / a[i][i]).collect();
        [
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], 1.0],
        ]
    }

    #[test]
    fn random_quads_match_8x8_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let sq = unit_square();
            let dst = sq.map(|p| {
                p + Vec2::new(
                    (rng.random::<f64>() - 0.5) * 30.0,
                    (rng.random::<f64>() - 0.5) * 30.0,
                )
            });
            let h = solve_homography_4pt(&sq, &dst).unwrap();
            let o = dlt_oracle_8x8(&sq, &dst);
            for r in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(h.at(r, c), o[r][c], epsilon = 1e-6);
                }
            }
            // Corner residuals.
            for (s, d) in sq.iter().zip(&dst) {
                let q = apply_homography(&h, *s).unwrap();
                assert!((q - *d).norm() < 1e-6);
            }
        }
    }

    proptest! {
        /// Round trip residual < 1e-6 px for random convex quads.
        #[test]
        fn dlt_round_trip(offs in proptest::array::uniform8(-20.0f64..20.0)) {
            let sq = unit_square();
            let dst = [
                sq[0] + Vec2::new(offs[0], offs[1]),
                sq[1] + Vec2::new(offs[2], offs[3]),
                sq[2] + Vec2::new(offs[4], offs[5]),
                sq[3] + Vec2::new(offs[6], offs[7]),
            ];
            // Convexity filter: all cross products of successive edges share sign.
            let mut convex = true;
            for i in 0..4 {
                let e1 = dst[(i + 1) % 4] - dst[i];
                let e2 = dst[(i + 2) % 4] - dst[(i + 1) % 4];
                if e1.cross(e2) <= 1.0 {
                    convex = false;
                }
            }
            prop_assume!(convex);
            let h = solve_homography_4pt(&sq, &dst).unwrap();
            for (s, d) in sq.iter().zip(&dst) {
                let q = apply_homography(&h, *s).unwrap();
                prop_assert!((q - *d).norm() < 1e-6);
            }
        }
    }
}
