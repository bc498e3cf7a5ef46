//! The warp-stage objective: masked photometric alignment plus the intra-grid
//! and inter-grid distortion terms, with analytic gradients.
//!
//! Alignment compares the reference (masked by the warped validity mask)
//! against the backward-warped target, averaged over the overlap so the
//! weights keep their meaning across resolutions. Distortion penalizes grid
//! edges stretching past twice their nominal length (intra) and successive
//! edges in non-overlapping regions bending away from collinear (inter).
//!
//! Gradients flow through the thin-plate solve itself: the system matrix
//! depends on the optimized warped positions, so the linear-solve adjoint is
//! implemented via a transposed LU solve. Pixel reductions are accumulated in
//! row order, so repeated runs are bit-stable.

use crate::geometry::{solve_tps, ControlMesh, Homography};
use crate::par;
use crate::raster::{ImageF, SoftMask};
use crate::warp::{point_in_polygon, Canvas, WarpField};
use crate::{Result, Vec2};
use nalgebra::DMatrix;

/// Weights of the combined warp objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpLossWeights {
    /// Distortion weight.
    pub omega: f64,
    /// Homography-term weight.
    pub lambda: f64,
}

impl Default for WarpLossWeights {
    fn default() -> Self {
        WarpLossWeights {
            omega: 10.0,
            lambda: 3.0,
        }
    }
}

/// 0/1 labels for successive-edge pairs, set where the pair lies entirely in
/// non-overlapping territory. Pairs are indexed row-major: horizontal pairs
/// have `rows * (cols-2)` entries, vertical pairs `cols * (rows-2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabels {
    rows: usize,
    cols: usize,
    horizontal: Vec<bool>,
    vertical: Vec<bool>,
}

impl EdgeLabels {
    pub fn all_ones(rows: usize, cols: usize) -> Self {
        EdgeLabels {
            rows,
            cols,
            horizontal: vec![true; rows * cols.saturating_sub(2)],
            vertical: vec![true; cols * rows.saturating_sub(2)],
        }
    }

    pub fn all_zeros(rows: usize, cols: usize) -> Self {
        EdgeLabels {
            rows,
            cols,
            horizontal: vec![false; rows * cols.saturating_sub(2)],
            vertical: vec![false; cols * rows.saturating_sub(2)],
        }
    }

    /// Total number of successive-edge pairs Q.
    pub fn pair_count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }

    pub fn horizontal(&self, row: usize, pair: usize) -> bool {
        self.horizontal[row * (self.cols - 2) + pair]
    }

    pub fn vertical(&self, pair: usize, col: usize) -> bool {
        self.vertical[pair * self.cols + col]
    }

    pub fn labeled_count(&self) -> usize {
        self.horizontal.iter().filter(|v| **v).count()
            + self.vertical.iter().filter(|v| **v).count()
    }
}

/// Mean absolute difference between the placed reference and the warped
/// target over pixels where both the warp validity and the reference
/// footprint are positive. Returns 0 when the overlap is empty.
pub fn alignment_term(
    reference: &ImageF,
    target: &ImageF,
    field: &WarpField,
    ref_placement: &Canvas,
) -> f64 {
    alignment_term_counted(reference, target, field, ref_placement).0
}

/// [`alignment_term`] plus the overlap pixel count, so callers can detect an
/// empty overlap.
pub fn alignment_term_counted(
    reference: &ImageF,
    target: &ImageF,
    field: &WarpField,
    ref_placement: &Canvas,
) -> (f64, usize) {
    assert_eq!(
        reference.channels(),
        target.channels(),
        "alignment needs matching channel counts"
    );
    let ch = reference.channels();
    let (ox, oy) = ref_placement.offset;
    let rows = par::map_rows(field.height(), |iy| {
        let mut sum = 0.0;
        let mut count = 0usize;
        let sy = iy as i64 - oy;
        if sy < 0 || sy >= reference.height() as i64 {
            return (sum, count);
        }
        for ix in 0..field.width() {
            let sx = ix as i64 - ox;
            if sx < 0 || sx >= reference.width() as i64 {
                continue;
            }
            let (src, field_ok) = field.get(ix, iy);
            if !field_ok {
                continue;
            }
            let (v, ok) = target.bilinear_sample(src.x, src.y);
            if !ok {
                continue;
            }
            for c in 0..ch {
                sum += (reference.get(sx as usize, sy as usize, c) - v[c]).abs();
            }
            count += 1;
        }
        (sum, count)
    });
    let mut sum = 0.0;
    let mut count = 0usize;
    for (s, c) in rows {
        sum += s;
        count += c;
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (sum / (count * ch) as f64, count)
    }
}

/// Symmetric homography alignment: the forward masked-L1 term on the
/// reference frame plus the inverse term on the target frame. The caller
/// multiplies by lambda.
pub fn homography_alignment(reference: &ImageF, target: &ImageF, h: &Homography) -> Result<f64> {
    let hinv = h.inverse()?;
    let ref_canvas = Canvas::for_reference(reference.width(), reference.height());
    let fwd = crate::warp::field_from_homography(h, &ref_canvas, target.width(), target.height())?;
    let tgt_canvas = Canvas::for_reference(target.width(), target.height());
    let bwd = crate::warp::field_from_homography(
        &hinv,
        &tgt_canvas,
        reference.width(),
        reference.height(),
    )?;
    Ok(alignment_term(reference, target, &fwd, &ref_canvas)
        + alignment_term(target, reference, &bwd, &tgt_canvas))
}

/// ReLU penalty on warped-edge axis projections exceeding twice the nominal
/// cell size; the projection is signed, exactly as defined.
pub fn intra_grid_term(mesh: &ControlMesh) -> f64 {
    intra_grid_grad(mesh).0
}

/// [`intra_grid_term`] together with its gradient w.r.t. the warped grid.
pub fn intra_grid_grad(mesh: &ControlMesh) -> (f64, Vec<Vec2>) {
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let thresh_x = 2.0 * mesh.target_width() / (cols - 1) as f64;
    let thresh_y = 2.0 * mesh.target_height() / (rows - 1) as f64;
    let norm_h = (rows * (cols - 1)) as f64;
    let norm_v = ((rows - 1) * cols) as f64;
    let mut loss = 0.0;
    let mut grad = vec![Vec2::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols - 1 {
            let e = mesh.warped_at(r, c + 1) - mesh.warped_at(r, c);
            let over = e.x - thresh_x;
            if over > 0.0 {
                loss += over / norm_h;
                grad[mesh.idx(r, c + 1)].x += 1.0 / norm_h;
                grad[mesh.idx(r, c)].x -= 1.0 / norm_h;
            }
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            let e = mesh.warped_at(r + 1, c) - mesh.warped_at(r, c);
            let over = e.y - thresh_y;
            if over > 0.0 {
                loss += over / norm_v;
                grad[mesh.idx(r + 1, c)].y += 1.0 / norm_v;
                grad[mesh.idx(r, c)].y -= 1.0 / norm_v;
            }
        }
    }
    (loss, grad)
}

/// Collinearity penalty `1 - cos` on labeled successive-edge pairs, averaged
/// over all Q pairs. Degenerate zero-length edges contribute the maximum
/// value 2 with zero gradient.
pub fn inter_grid_term(mesh: &ControlMesh, labels: &EdgeLabels) -> f64 {
    inter_grid_grad(mesh, labels).0
}

/// [`inter_grid_term`] together with its gradient w.r.t. the warped grid.
pub fn inter_grid_grad(mesh: &ControlMesh, labels: &EdgeLabels) -> (f64, Vec<Vec2>) {
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let q = labels.pair_count() as f64;
    let mut loss = 0.0;
    let mut grad = vec![Vec2::ZERO; rows * cols];
    let mut accumulate = |a: usize, b: usize, c: usize, grad: &mut Vec<Vec2>| {
        // Pair of edges (b - a) and (c - b).
        let e1 = mesh.warped()[b] - mesh.warped()[a];
        let e2 = mesh.warped()[c] - mesh.warped()[b];
        let n1 = e1.norm();
        let n2 = e2.norm();
        if n1 < 1e-9 || n2 < 1e-9 {
            loss += 2.0 / q;
            return;
        }
        let dot = e1.dot(e2);
        loss += (1.0 - dot / (n1 * n2)) / q;
        let de1 = (e1 * (dot / (n1 * n1)) - e2) * (1.0 / (n1 * n2 * q));
        let de2 = (e2 * (dot / (n2 * n2)) - e1) * (1.0 / (n1 * n2 * q));
        grad[a] = grad[a] - de1;
        grad[b] = grad[b] + de1 - de2;
        grad[c] = grad[c] + de2;
    };
    for r in 0..rows {
        for p in 0..cols.saturating_sub(2) {
            if labels.horizontal(r, p) {
                accumulate(mesh.idx(r, p), mesh.idx(r, p + 1), mesh.idx(r, p + 2), &mut grad);
            }
        }
    }
    for p in 0..rows.saturating_sub(2) {
        for c in 0..cols {
            if labels.vertical(p, c) {
                accumulate(mesh.idx(p, c), mesh.idx(p + 1, c), mesh.idx(p + 2, c), &mut grad);
            }
        }
    }
    (loss, grad)
}

/// Label the successive-edge pairs whose three spanning vertices all lie at
/// `overlap < 0.5`. The mesh is in reference coordinates; vertex positions
/// are shifted by the canvas offset before sampling the overlap mask.
pub fn label_nonoverlap_edges(
    mesh: &ControlMesh,
    overlap: &SoftMask,
    canvas: &Canvas,
) -> EdgeLabels {
    let (rows, cols) = (mesh.rows(), mesh.cols());
    let (ox, oy) = canvas.offset;
    // Clamped sampling so lattice lines at exactly x = width / y = height read
    // the border value instead of 0.
    let outside = |p: Vec2| -> bool {
        let x = (p.x + ox as f64).clamp(0.0, (overlap.width() - 1) as f64);
        let y = (p.y + oy as f64).clamp(0.0, (overlap.height() - 1) as f64);
        overlap.sample(x, y) < 0.5
    };
    let mut labels = EdgeLabels::all_zeros(rows, cols);
    for r in 0..rows {
        for p in 0..cols.saturating_sub(2) {
            let ok = outside(mesh.warped_at(r, p))
                && outside(mesh.warped_at(r, p + 1))
                && outside(mesh.warped_at(r, p + 2));
            labels.horizontal[r * (cols - 2) + p] = ok;
        }
    }
    for p in 0..rows.saturating_sub(2) {
        for c in 0..cols {
            let ok = outside(mesh.warped_at(p, c))
                && outside(mesh.warped_at(p + 1, c))
                && outside(mesh.warped_at(p + 2, c));
            labels.vertical[p * cols + c] = ok;
        }
    }
    labels
}

/// Combine the terms: `lambda * h_align + align + omega * (intra + inter)`.
pub fn total_warp_loss(
    align: f64,
    h_align: f64,
    intra: f64,
    inter: f64,
    w: &WarpLossWeights,
) -> f64 {
    w.lambda * h_align + align + w.omega * (intra + inter)
}

/// Result of one fused TPS alignment evaluation.
#[derive(Debug, Clone)]
pub struct TpsAlignment {
    pub loss: f64,
    /// d loss / d warped control point, including the solve adjoint.
    pub grad: Vec<Vec2>,
    pub overlap_pixels: usize,
}

/// TPS alignment value along the modular path (field construction, warp,
/// masked L1); the fused gradient evaluation must agree with this.
pub fn tps_alignment_value(
    reference: &ImageF,
    target: &ImageF,
    mesh: &ControlMesh,
    canvas: &Canvas,
) -> Result<f64> {
    let field = crate::warp::field_from_mesh(mesh, canvas)?;
    Ok(alignment_term(reference, target, &field, canvas))
}

/// Fused evaluation of the TPS alignment term and its gradient w.r.t. the
/// warped control points.
///
/// The backward spline is fitted per call (anchors = warped grid in canvas
/// coordinates), pixels are reduced row by row in fixed order, and the
/// adjoint of the `(N+3)x(N+3)` solve distributes sensitivity from the
/// spline coefficients back to the anchors.
pub fn tps_alignment_with_grad(
    reference: &ImageF,
    target: &ImageF,
    mesh: &ControlMesh,
    canvas: &Canvas,
) -> Result<TpsAlignment> {
    assert_eq!(reference.channels(), target.channels());
    let ch = reference.channels();
    let n = mesh.warped().len();
    let dim = n + 3;
    let anchors = mesh.warped();
    let params = solve_tps(anchors, mesh.source())?;
    let poly = mesh.boundary_polygon();
    let bx = mesh.target_width() - 1.0;
    let by = mesh.target_height() - 1.0;
    let (ox, oy) = canvas.offset;

    struct RowAcc {
        sum: f64,
        count: usize,
        theta_bar: Vec<[f64; 2]>,
        anchor_bar: Vec<Vec2>,
    }

    let rows = par::map_rows(canvas.height, |iy| {
        let mut acc = RowAcc {
            sum: 0.0,
            count: 0,
            theta_bar: vec![[0.0; 2]; dim],
            anchor_bar: vec![Vec2::ZERO; n],
        };
        let sy = iy as i64 - oy;
        if sy < 0 || sy >= reference.height() as i64 {
            return acc;
        }
        let mut kernel = vec![0.0f64; n];
        for ix in 0..canvas.width {
            let sx = ix as i64 - ox;
            if sx < 0 || sx >= reference.width() as i64 {
                continue;
            }
            let q = Vec2::new(ix as f64, iy as f64);
            if !point_in_polygon(q, &poly) {
                continue;
            }
            // Spline evaluation, keeping the kernel values for the backward pass.
            let mut src = Vec2::new(
                params.c.x + params.m[0][0] * q.x + params.m[0][1] * q.y,
                params.c.y + params.m[1][0] * q.x + params.m[1][1] * q.y,
            );
            for (i, a) in anchors.iter().enumerate() {
                let o = crate::geometry::radial_basis((q - *a).norm());
                kernel[i] = o;
                src.x += params.w[i].x * o;
                src.y += params.w[i].y * o;
            }
            if !(src.x >= 0.0 && src.y >= 0.0 && src.x <= bx && src.y <= by) {
                continue;
            }
            let (v, ok) = target.bilinear_sample(src.x, src.y);
            if !ok {
                continue;
            }
            let (gx, gy) = target.bilinear_gradient(src.x, src.y);
            let mut g_src = Vec2::ZERO;
            for c in 0..ch {
                let diff = reference.get(sx as usize, sy as usize, c) - v[c];
                acc.sum += diff.abs();
                let s = -l1_sign(diff);
                g_src.x += s * gx[c];
                g_src.y += s * gy[c];
            }
            acc.count += 1;
            // d src / d theta.
            acc.theta_bar[0][0] += g_src.x;
            acc.theta_bar[0][1] += g_src.y;
            acc.theta_bar[1][0] += g_src.x * q.x;
            acc.theta_bar[1][1] += g_src.y * q.x;
            acc.theta_bar[2][0] += g_src.x * q.y;
            acc.theta_bar[2][1] += g_src.y * q.y;
            for i in 0..n {
                acc.theta_bar[3 + i][0] += g_src.x * kernel[i];
                acc.theta_bar[3 + i][1] += g_src.y * kernel[i];
                // Direct kernel path: d O(|q - a_i|) / d a_i.
                let gw = g_src.x * params.w[i].x + g_src.y * params.w[i].y;
                if gw != 0.0 {
                    let d = anchors[i] - q;
                    let gf = crate::geometry::tps::radial_basis_grad_factor(d.norm());
                    acc.anchor_bar[i] = acc.anchor_bar[i] + d * (gw * gf);
                }
            }
        }
        acc
    });

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut theta_bar = DMatrix::<f64>::zeros(dim, 2);
    let mut grad = vec![Vec2::ZERO; n];
    for acc in rows {
        sum += acc.sum;
        count += acc.count;
        for (i, t) in acc.theta_bar.iter().enumerate() {
            theta_bar[(i, 0)] += t[0];
            theta_bar[(i, 1)] += t[1];
        }
        for (g, a) in grad.iter_mut().zip(acc.anchor_bar) {
            *g = *g + a;
        }
    }
    if count == 0 {
        return Ok(TpsAlignment {
            loss: 0.0,
            grad: vec![Vec2::ZERO; n],
            overlap_pixels: 0,
        });
    }
    let scale = 1.0 / (count * ch) as f64;
    let loss = sum * scale;
    theta_bar *= scale;
    for g in &mut grad {
        *g = *g * scale;
    }

    // Adjoint through the solve: lambda = L^-T theta_bar, Lbar = -lambda theta^T.
    let mut l = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..n {
        l[(k, 0)] = 1.0;
        l[(k, 1)] = anchors[k].x;
        l[(k, 2)] = anchors[k].y;
        for i in 0..n {
            l[(k, 3 + i)] = crate::geometry::radial_basis((anchors[k] - anchors[i]).norm());
        }
    }
    for i in 0..n {
        l[(n, 3 + i)] = 1.0;
        l[(n + 1, 3 + i)] = anchors[i].x;
        l[(n + 2, 3 + i)] = anchors[i].y;
    }
    let lt = l.transpose();
    let lam = lt
        .lu()
        .solve(&theta_bar)
        .ok_or_else(|| crate::Error::Degenerate("singular adjoint solve".into()))?;
    // theta columns in the same (N+3) x 2 layout the solve produced.
    let mut theta = DMatrix::<f64>::zeros(dim, 2);
    theta[(0, 0)] = params.c.x;
    theta[(0, 1)] = params.c.y;
    theta[(1, 0)] = params.m[0][0];
    theta[(1, 1)] = params.m[1][0];
    theta[(2, 0)] = params.m[0][1];
    theta[(2, 1)] = params.m[1][1];
    for i in 0..n {
        theta[(3 + i, 0)] = params.w[i].x;
        theta[(3 + i, 1)] = params.w[i].y;
    }
    let lbar = |i: usize, j: usize| -> f64 {
        -(lam[(i, 0)] * theta[(j, 0)] + lam[(i, 1)] * theta[(j, 1)])
    };
    for k in 0..n {
        grad[k].x += lbar(k, 1);
        grad[k].y += lbar(k, 2);
        grad[k].x += lbar(n + 1, 3 + k);
        grad[k].y += lbar(n + 2, 3 + k);
        for i in 0..n {
            if i == k {
                continue;
            }
            let d = anchors[k] - anchors[i];
            let gf = crate::geometry::tps::radial_basis_grad_factor(d.norm());
            let coeff = lbar(k, 3 + i) * gf;
            grad[k] = grad[k] + d * coeff;
            grad[i] = grad[i] - d * coeff;
        }
    }
    Ok(TpsAlignment {
        loss,
        grad,
        overlap_pixels: count,
    })
}

/// Homography alignment value plus its gradient w.r.t. the nine entries of
/// `h` (the `[2][2]` component is reported but ignored by 4-pt chains, which
/// hold it fixed at 1).
pub fn homography_alignment_grad(
    reference: &ImageF,
    target: &ImageF,
    h: &Homography,
) -> Result<(f64, [[f64; 3]; 3])> {
    let hinv = h.inverse()?;
    // Forward term: canvas = reference frame, sources through h^-1.
    let (loss_f, gbar_f) = masked_l1_grad_wrt_matrix(reference, target, hinv.rows());
    // d/dH = -G^T Gbar G^T for G = H^-1.
    let gt = transpose3(hinv.rows());
    let mut hbar = neg3(mul3(&gt, &mul3(&gbar_f, &gt)));
    // Inverse term: canvas = target frame, sources through (h^-1)^-1 = h.
    let (loss_b, gbar_b) = masked_l1_grad_wrt_matrix(target, reference, h.rows());
    for r in 0..3 {
        for c in 0..3 {
            hbar[r][c] += gbar_b[r][c];
        }
    }
    Ok((loss_f + loss_b, hbar))
}

/// Masked-L1 alignment of `warped(target through G)` against `reference` on
/// the reference frame, returning the loss and its gradient w.r.t. G.
fn masked_l1_grad_wrt_matrix(
    reference: &ImageF,
    target: &ImageF,
    g: &[[f64; 3]; 3],
) -> (f64, [[f64; 3]; 3]) {
    let ch = reference.channels();
    let bx = (target.width() - 1) as f64;
    let by = (target.height() - 1) as f64;
    let rows = par::map_rows(reference.height(), |iy| {
        let y = iy as f64;
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut gbar = [[0.0f64; 3]; 3];
        for ix in 0..reference.width() {
            let x = ix as f64;
            let nx = g[0][0] * x + g[0][1] * y + g[0][2];
            let ny = g[1][0] * x + g[1][1] * y + g[1][2];
            let d = g[2][0] * x + g[2][1] * y + g[2][2];
            if d.abs() < 1e-10 {
                continue;
            }
            let sxp = nx / d;
            let syp = ny / d;
            if !(sxp >= 0.0 && syp >= 0.0 && sxp <= bx && syp <= by) {
                continue;
            }
            let (v, ok) = target.bilinear_sample(sxp, syp);
            if !ok {
                continue;
            }
            let (gx, gy) = target.bilinear_gradient(sxp, syp);
            let mut g_src = Vec2::ZERO;
            for c in 0..ch {
                let diff = reference.get(ix, iy, c) - v[c];
                sum += diff.abs();
                let s = -l1_sign(diff);
                g_src.x += s * gx[c];
                g_src.y += s * gy[c];
            }
            count += 1;
            // src = (nx/d, ny/d): pull g_src back onto the matrix entries.
            let nbar = [
                g_src.x / d,
                g_src.y / d,
                -(g_src.x * nx + g_src.y * ny) / (d * d),
            ];
            let hom = [x, y, 1.0];
            for (r, nb) in nbar.iter().enumerate() {
                for (c, hc) in hom.iter().enumerate() {
                    gbar[r][c] += nb * hc;
                }
            }
        }
        (sum, count, gbar)
    });
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut gbar = [[0.0f64; 3]; 3];
    for (s, n, gb) in rows {
        sum += s;
        count += n;
        for r in 0..3 {
            for c in 0..3 {
                gbar[r][c] += gb[r][c];
            }
        }
    }
    if count == 0 {
        return (0.0, [[0.0; 3]; 3]);
    }
    let scale = 1.0 / (count * ch) as f64;
    for row in &mut gbar {
        for v in row {
            *v *= scale;
        }
    }
    (sum * scale, gbar)
}

/// L1 subgradient sign with the 0-at-tie convention (f64::signum(0.0) is 1).
#[inline]
fn l1_sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
        }
    }
    out
}

fn transpose3(a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[c][r];
        }
    }
    out
}

fn neg3(mut a: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    for row in &mut a {
        for v in row {
            *v = -*v;
        }
    }
    a
}
