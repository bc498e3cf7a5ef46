//! Coarse-to-fine photometric optimization of the 4-pt homography motions and
//! the TPS control-point motions, plus the iterative per-pair adaption loop.
//!
//! A Gaussian image pyramid supplies the capture range for large
//! displacements: the 8 corner motions (then the control-point motions) are
//! optimized with Adam at the coarsest level and refined upward, with
//! learning rates expressed in pixels and halved per level. Each level keeps
//! a best-so-far snapshot, so the returned state never loses to its own
//! initialization.

mod adam;
mod pyramid;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use pyramid::{gaussian_pyramid, usable_levels};

use crate::energy::{
    homography_alignment, homography_alignment_grad, inter_grid_grad, intra_grid_grad,
    label_nonoverlap_edges, total_warp_loss, tps_alignment_with_grad, WarpLossWeights,
};
use crate::geometry::{
    make_control_grid, mesh_from_homography, solve_homography_4pt, ControlMesh, Homography,
};
use crate::raster::{ImageF, SoftMask};
use crate::warp::{field_from_mesh, Canvas};
use crate::{Error, Result, Vec2};

/// Settings shared by the optimization stages. `learning_rate` is a pixel
/// step at the coarsest pyramid level for the warp stages, halved at each
/// finer level; the adaption and seam stages run a single level and use it
/// directly. `max_iters` is the per-level budget for the warp stages and the
/// total budget T elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop a stage when consecutive losses differ by less than this.
    pub tol: f64,
    pub pyramid_levels: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    /// Cold-start warp optimization: 0.5 px steps at the coarsest of 4
    /// levels, 200 iterations per level, 13x13 control points.
    pub fn warp_defaults() -> Self {
        OptimizerConfig {
            learning_rate: 0.5,
            max_iters: 200,
            tol: 1e-4,
            pyramid_levels: 4,
            grid_rows: 13,
            grid_cols: 13,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Iterative warp adaption: T = 50 iterations, tau = 1e-4, full
    /// resolution only.
    pub fn adapt_defaults() -> Self {
        OptimizerConfig {
            learning_rate: 0.15,
            max_iters: 50,
            tol: 1e-4,
            pyramid_levels: 1,
            ..Self::warp_defaults()
        }
    }

    /// Seam mask optimization: logit-space steps, 300 iterations, tolerance
    /// 1e-6 on the total energy.
    pub fn seam_defaults() -> Self {
        OptimizerConfig {
            learning_rate: 0.15,
            max_iters: 300,
            tol: 1e-6,
            pyramid_levels: 1,
            ..Self::warp_defaults()
        }
    }

    pub fn adam(&self, learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One optimization step's loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iter: usize,
    pub align: f64,
    pub h_align: f64,
    pub intra: f64,
    pub inter: f64,
    pub total: f64,
}

impl LossRecord {
    pub const CSV_HEADER: &'static str = "iter,align,h_align,intra,inter,total";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iter, self.align, self.h_align, self.intra, self.inter, self.total
        )
    }
}

/// Output of the homography stage.
#[derive(Debug, Clone)]
pub struct HomographyStage {
    pub homography: Homography,
    /// Motions of the four target corners at full resolution, in the corner
    /// order (0,0), (w,0), (w,h), (0,h).
    pub corner_motions: [Vec2; 4],
    pub loss_history: Vec<LossRecord>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Set when the pair failed the 10% identity-overlap precondition and the
    /// identity transform was returned.
    pub no_overlap: bool,
    pub warnings: Vec<String>,
}

/// Output of the TPS stage (and of adaption).
#[derive(Debug, Clone)]
pub struct WarpResult {
    pub homography: Homography,
    pub mesh: ControlMesh,
    pub loss_history: Vec<LossRecord>,
    pub iterations_used: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl WarpResult {
    /// Wrap a bare mesh (e.g. parsed from a file) as a warm start.
    pub fn from_mesh(mesh: ControlMesh) -> Self {
        WarpResult {
            homography: Homography::identity(),
            mesh,
            loss_history: Vec::new(),
            iterations_used: 0,
            converged: false,
            warnings: Vec::new(),
        }
    }
}

/// Conjugate a homography into other resolutions: `S_dst * H * S_src^-1`,
/// where the scale pairs map full-resolution coordinates to the level.
pub(crate) fn scale_homography(
    h: &Homography,
    dst_scale: (f64, f64),
    src_scale: (f64, f64),
) -> Homography {
    let m = h.rows();
    let (dx, dy) = dst_scale;
    let (sx, sy) = src_scale;
    Homography::from_rows([
        [m[0][0] * dx / sx, m[0][1] * dx / sy, m[0][2] * dx],
        [m[1][0] * dy / sx, m[1][1] * dy / sy, m[1][2] * dy],
        [m[2][0] / sx, m[2][1] / sy, m[2][2]],
    ])
    .expect("axis scaling preserves invertibility")
}

fn target_corners(w: f64, h: f64) -> [Vec2; 4] {
    [
        Vec2::new(0.0, 0.0),
        Vec2::new(w, 0.0),
        Vec2::new(w, h),
        Vec2::new(0.0, h),
    ]
}

/// Partial-pivot Gaussian elimination on an 8x8 system.
fn solve8(a: &[[f64; 8]; 8], b: &[f64; 8]) -> Option<[f64; 8]> {
    let mut aug = [[0.0f64; 9]; 8];
    for r in 0..8 {
        aug[r][..8].copy_from_slice(&a[r]);
        aug[r][8] = b[r];
    }
    for col in 0..8 {
        let piv = (col..8).max_by(|i, j| {
            aug[*i][col]
                .abs()
                .partial_cmp(&aug[*j][col].abs())
                .unwrap()
        })?;
        if aug[piv][col].abs() < 1e-12 {
            return None;
        }
        aug.swap(col, piv);
        for row in 0..8 {
            if row != col {
                let f = aug[row][col] / aug[col][col];
                for c in col..9 {
                    aug[row][c] -= f * aug[col][c];
                }
            }
        }
    }
    let mut x = [0.0f64; 8];
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = aug[i][8] / aug[i][i];
    }
    Some(x)
}

/// Exact 4-point DLT with `h22 = 1`, keeping the system matrix for the
/// adjoint pass. Rows `2k, 2k+1` correspond to corner k.
fn assemble_4pt(src: &[Vec2; 4], dst: &[Vec2; 4]) -> ([[f64; 8]; 8], [f64; 8]) {
    let mut a = [[0.0f64; 8]; 8];
    let mut b = [0.0f64; 8];
    for k in 0..4 {
        let (x, y) = (src[k].x, src[k].y);
        let (u, v) = (dst[k].x, dst[k].y);
        a[2 * k] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y];
        a[2 * k + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y];
        b[2 * k] = u;
        b[2 * k + 1] = v;
    }
    (a, b)
}

fn quad_is_convex(q: &[Vec2; 4], scale: f64) -> bool {
    for i in 0..4 {
        let e1 = q[(i + 1) % 4] - q[i];
        let e2 = q[(i + 2) % 4] - q[(i + 1) % 4];
        if e1.cross(e2) <= 1e-6 * scale * scale {
            return false;
        }
    }
    true
}

/// One evaluation of the symmetric homography alignment at the current corner
/// motions, with the gradient pulled back through the exact 4-point solve.
fn eval_homography_motions(
    reference: &ImageF,
    target: &ImageF,
    corners: &[Vec2; 4],
    motions: &[f64; 8],
) -> Result<(f64, [f64; 8], Homography)> {
    let dst = [
        corners[0] + Vec2::new(motions[0], motions[1]),
        corners[1] + Vec2::new(motions[2], motions[3]),
        corners[2] + Vec2::new(motions[4], motions[5]),
        corners[3] + Vec2::new(motions[6], motions[7]),
    ];
    let scale = corners[1].x.max(corners[3].y);
    if !quad_is_convex(&dst, scale) {
        return Err(Error::Degenerate(
            "optimized corners form a non-convex quad".into(),
        ));
    }
    let (a, b) = assemble_4pt(corners, &dst);
    let hv = solve8(&a, &b).ok_or_else(|| Error::Degenerate("singular 4-point system".into()))?;
    let h = Homography::from_rows([
        [hv[0], hv[1], hv[2]],
        [hv[3], hv[4], hv[5]],
        [hv[6], hv[7], 1.0],
    ])?;
    let (loss, hbar) = homography_alignment_grad(reference, target, &h)?;
    // Adjoint of A h = b with respect to the destination corners.
    let hbar8 = [
        hbar[0][0], hbar[0][1], hbar[0][2], hbar[1][0], hbar[1][1], hbar[1][2], hbar[2][0],
        hbar[2][1],
    ];
    let mut at = [[0.0f64; 8]; 8];
    for r in 0..8 {
        for c in 0..8 {
            at[r][c] = a[c][r];
        }
    }
    let lam =
        solve8(&at, &hbar8).ok_or_else(|| Error::Degenerate("singular 4-point adjoint".into()))?;
    let mut grad = [0.0f64; 8];
    for k in 0..4 {
        // bbar = lambda and Abar = -lambda h^T collapse per corner to
        // lambda * d with d the homogeneous denominator at that corner.
        let d = 1.0 + hv[6] * corners[k].x + hv[7] * corners[k].y;
        grad[2 * k] = lam[2 * k] * d;
        grad[2 * k + 1] = lam[2 * k + 1] * d;
    }
    Ok((loss, grad, h))
}

fn identity_overlap_ok(reference: &ImageF, target: &ImageF) -> bool {
    let iw = reference.width().min(target.width()) as f64;
    let ih = reference.height().min(target.height()) as f64;
    let min_area =
        (reference.width() * reference.height()).min(target.width() * target.height()) as f64;
    iw * ih >= 0.1 * min_area
}

/// Estimate the 4-pt homography by direct photometric optimization over the
/// pyramid. Returns the identity (with a warning) when the pair does not
/// overlap by at least 10% at identity placement; restarts once with a 10x
/// smaller step if the corners degenerate mid-optimization.
pub fn optimize_homography(
    reference: &ImageF,
    target: &ImageF,
    cfg: &OptimizerConfig,
) -> Result<HomographyStage> {
    if reference.width() == 0 || target.width() == 0 {
        return Err(Error::InvalidParam("empty image".into()));
    }
    if !identity_overlap_ok(reference, target) {
        return Ok(HomographyStage {
            homography: Homography::identity(),
            corner_motions: [Vec2::ZERO; 4],
            loss_history: Vec::new(),
            iterations_used: 0,
            converged: false,
            no_overlap: true,
            warnings: vec!["no overlap at identity initialization; returning identity".into()],
        });
    }
    match run_homography_schedule(reference, target, cfg, cfg.learning_rate) {
        Ok(stage) => Ok(stage),
        Err(Error::Degenerate(msg)) => {
            let mut stage =
                run_homography_schedule(reference, target, cfg, cfg.learning_rate / 10.0)?;
            stage
                .warnings
                .push(format!("restarted with reduced step after: {msg}"));
            Ok(stage)
        }
        Err(e) => Err(e),
    }
}

/// Exhaustive integer-shift scan at the coarsest level: the capture range for
/// large displacements that gradient steps alone cannot provide. Returns the
/// translation minimizing mean absolute difference over the shifted overlap.
fn coarse_translation_scan(reference: &ImageF, target: &ImageF) -> Vec2 {
    let (rw, rh) = (reference.width() as i64, reference.height() as i64);
    let (tw, th) = (target.width() as i64, target.height() as i64);
    let span_x = (rw.max(tw) * 3) / 5;
    let span_y = (rh.max(th) * 3) / 5;
    let min_pixels = ((rw * rh).min(tw * th) as f64 * 0.08) as usize;
    let mut best = (f64::INFINITY, Vec2::ZERO);
    for dy in -span_y..=span_y {
        for dx in -span_x..=span_x {
            let mut sum = 0.0;
            let mut count = 0usize;
            let x0 = dx.max(0);
            let x1 = rw.min(tw + dx);
            let y0 = dy.max(0);
            let y1 = rh.min(th + dy);
            if x1 <= x0 || y1 <= y0 {
                continue;
            }
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += (reference.get(x as usize, y as usize, 0)
                        - target.get((x - dx) as usize, (y - dy) as usize, 0))
                    .abs();
                    count += 1;
                }
            }
            if count >= min_pixels {
                let mean = sum / count as f64;
                if mean < best.0 {
                    best = (mean, Vec2::new(dx as f64, dy as f64));
                }
            }
        }
    }
    best.1
}

fn run_homography_schedule(
    reference: &ImageF,
    target: &ImageF,
    cfg: &OptimizerConfig,
    lr0: f64,
) -> Result<HomographyStage> {
    let levels = usable_levels(reference, target, cfg.pyramid_levels, 24);
    let ref_pyr = gaussian_pyramid(reference, levels);
    let tgt_pyr = gaussian_pyramid(target, levels);
    let mut motions = [0.0f64; 8];
    let shift = coarse_translation_scan(
        &ref_pyr[ref_pyr.len() - 1].to_luma(),
        &tgt_pyr[tgt_pyr.len() - 1].to_luma(),
    );
    for k in 0..4 {
        motions[2 * k] = shift.x;
        motions[2 * k + 1] = shift.y;
    }
    let mut history = Vec::new();
    let mut iter_count = 0usize;
    let mut converged = false;
    let lambda = WarpLossWeights::default().lambda;
    for level in (0..ref_pyr.len()).rev() {
        let ref_l = &ref_pyr[level];
        let tgt_l = &tgt_pyr[level];
        let corners = target_corners(tgt_l.width() as f64, tgt_l.height() as f64);
        let lr = lr0 / (1u64 << (ref_pyr.len() - 1 - level)) as f64;
        let mut state = AdamState::new(8);
        let adam_cfg = cfg.adam(lr);
        let mut best = motions;
        let mut best_loss = f64::INFINITY;
        let mut prev_loss = f64::INFINITY;
        converged = false;
        for _ in 0..cfg.max_iters {
            let (loss, grad, _h) = eval_homography_motions(ref_l, tgt_l, &corners, &motions)?;
            if loss < best_loss {
                best_loss = loss;
                best = motions;
            }
            history.push(LossRecord {
                iter: iter_count,
                align: 0.0,
                h_align: loss,
                intra: 0.0,
                inter: 0.0,
                total: lambda * loss,
            });
            iter_count += 1;
            if (prev_loss - loss).abs() < cfg.tol {
                converged = true;
                break;
            }
            prev_loss = loss;
            adam_step(&mut motions, &grad, &mut state, &adam_cfg)?;
        }
        motions = best;
        // Carry motions to the next finer level.
        if level > 0 {
            let sx = tgt_pyr[level - 1].width() as f64 / tgt_l.width() as f64;
            let sy = tgt_pyr[level - 1].height() as f64 / tgt_l.height() as f64;
            for k in 0..4 {
                motions[2 * k] *= sx;
                motions[2 * k + 1] *= sy;
            }
        }
    }
    let corners = target_corners(target.width() as f64, target.height() as f64);
    let dst = [
        corners[0] + Vec2::new(motions[0], motions[1]),
        corners[1] + Vec2::new(motions[2], motions[3]),
        corners[2] + Vec2::new(motions[4], motions[5]),
        corners[3] + Vec2::new(motions[6], motions[7]),
    ];
    let homography = solve_homography_4pt(&corners, &dst)?;
    Ok(HomographyStage {
        homography,
        corner_motions: [
            Vec2::new(motions[0], motions[1]),
            Vec2::new(motions[2], motions[3]),
            Vec2::new(motions[4], motions[5]),
            Vec2::new(motions[6], motions[7]),
        ],
        loss_history: history,
        iterations_used: iter_count,
        converged,
        no_overlap: false,
        warnings: Vec::new(),
    })
}

/// Validity mask of the current mesh warp on the reference-frame canvas.
fn mesh_overlap_mask(mesh: &ControlMesh, canvas: &Canvas) -> Result<SoftMask> {
    let field = field_from_mesh(mesh, canvas)?;
    Ok(SoftMask::from_fn(canvas.width, canvas.height, |x, y| {
        if field.get(x, y).1 {
            1.0
        } else {
            0.0
        }
    }))
}

/// Refine the TPS control mesh against the full warp objective, coarse to
/// fine. The mesh is initialized from the homography, labels for the
/// inter-grid term are recomputed once per level, and gradients flow through
/// the spline solve.
pub fn optimize_tps(
    reference: &ImageF,
    target: &ImageF,
    h: &Homography,
    weights: &WarpLossWeights,
    cfg: &OptimizerConfig,
) -> Result<WarpResult> {
    let levels = usable_levels(reference, target, cfg.pyramid_levels, 24);
    let ref_pyr = gaussian_pyramid(reference, levels);
    let tgt_pyr = gaussian_pyramid(target, levels);
    // Coarse levels use a sparser grid (cells no finer than ~16 px) so the
    // photometric term stays well determined; the full grid is reached at
    // level 0 by spline resampling.
    let level_grid = |level: usize| -> (usize, usize) {
        if level == 0 {
            return (cfg.grid_rows, cfg.grid_cols);
        }
        let w = tgt_pyr[level].width() as f64;
        let h = tgt_pyr[level].height() as f64;
        let rows = ((h / 16.0).round() as usize + 1).max(4).min(cfg.grid_rows);
        let cols = ((w / 16.0).round() as usize + 1).max(4).min(cfg.grid_cols);
        (rows, cols)
    };
    let coarsest = ref_pyr.len() - 1;
    let (rows_c, cols_c) = level_grid(coarsest);
    let h_coarsest = scale_homography(
        h,
        (
            ref_pyr[coarsest].width() as f64 / reference.width() as f64,
            ref_pyr[coarsest].height() as f64 / reference.height() as f64,
        ),
        (
            tgt_pyr[coarsest].width() as f64 / target.width() as f64,
            tgt_pyr[coarsest].height() as f64 / target.height() as f64,
        ),
    );
    let grid_c = make_control_grid(
        rows_c,
        cols_c,
        tgt_pyr[coarsest].width() as f64,
        tgt_pyr[coarsest].height() as f64,
    )?;
    let mut mesh = mesh_from_homography(&grid_c, &h_coarsest)?;
    let mut history = Vec::new();
    let mut iter_count = 0usize;
    let mut converged = false;
    let mut warnings = Vec::new();
    for level in (0..ref_pyr.len()).rev() {
        let ref_l = &ref_pyr[level];
        let tgt_l = &tgt_pyr[level];
        let h_l = scale_homography(
            h,
            (
                ref_l.width() as f64 / reference.width() as f64,
                ref_l.height() as f64 / reference.height() as f64,
            ),
            (
                tgt_l.width() as f64 / target.width() as f64,
                tgt_l.height() as f64 / target.height() as f64,
            ),
        );
        let lr = cfg.learning_rate / (1u64 << (ref_pyr.len() - 1 - level)) as f64;
        let outcome =
            match run_tps_level(ref_l, tgt_l, &h_l, &mesh, weights, cfg, lr, iter_count) {
                Ok(o) => o,
                Err(Error::Degenerate(msg)) => {
                    warnings.push(format!(
                        "level {level}: restarted with reduced step after: {msg}"
                    ));
                    run_tps_level(ref_l, tgt_l, &h_l, &mesh, weights, cfg, lr / 10.0, iter_count)?
                }
                Err(e) => return Err(e),
            };
        mesh = outcome.mesh;
        history.extend(outcome.history);
        iter_count = outcome.iter_count;
        converged = outcome.converged;
        if level > 0 {
            let (rows_n, cols_n) = level_grid(level - 1);
            mesh = mesh.resampled(
                rows_n,
                cols_n,
                tgt_pyr[level - 1].width() as f64,
                tgt_pyr[level - 1].height() as f64,
            )?;
        }
    }
    let folds = mesh.fold_count();
    if folds > 0 {
        warnings.push(format!("mesh fold-over in {folds} cells"));
    }
    if mesh.boundary_self_intersects() {
        warnings.push("warped mesh boundary self-intersects".into());
    }
    Ok(WarpResult {
        homography: *h,
        mesh,
        loss_history: history,
        iterations_used: iter_count,
        converged,
        warnings,
    })
}

struct TpsLevelOutcome {
    mesh: ControlMesh,
    history: Vec<LossRecord>,
    iter_count: usize,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn run_tps_level(
    ref_l: &ImageF,
    tgt_l: &ImageF,
    h_l: &Homography,
    init_mesh: &ControlMesh,
    weights: &WarpLossWeights,
    cfg: &OptimizerConfig,
    lr: f64,
    iter_start: usize,
) -> Result<TpsLevelOutcome> {
    let canvas = Canvas::for_reference(ref_l.width(), ref_l.height());
    let mut mesh = init_mesh.clone();
    let overlap = mesh_overlap_mask(&mesh, &canvas)?;
    let labels = label_nonoverlap_edges(&mesh, &overlap, &canvas);
    let h_align = homography_alignment(ref_l, tgt_l, h_l)?;
    let n = mesh.warped().len();
    let mut params: Vec<f64> = mesh.warped().iter().flat_map(|p| [p.x, p.y]).collect();
    let mut state = AdamState::new(2 * n);
    let adam_cfg = cfg.adam(lr);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_total = f64::INFINITY;
    let mut prev_total = f64::INFINITY;
    let mut iter_count = iter_start;
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let warped: Vec<Vec2> = params.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
        mesh.set_warped(warped)?;
        let align = tps_alignment_with_grad(ref_l, tgt_l, &mesh, &canvas)?;
        let (intra, intra_g) = intra_grid_grad(&mesh);
        let (inter, inter_g) = inter_grid_grad(&mesh, &labels);
        let total = total_warp_loss(align.loss, h_align, intra, inter, weights);
        if total < best_total {
            best_total = total;
            best_params.copy_from_slice(&params);
        }
        history.push(LossRecord {
            iter: iter_count,
            align: align.loss,
            h_align,
            intra,
            inter,
            total,
        });
        iter_count += 1;
        if (prev_total - total).abs() < cfg.tol {
            converged = true;
            break;
        }
        prev_total = total;
        let mut grad = vec![0.0f64; 2 * n];
        for i in 0..n {
            grad[2 * i] = align.grad[i].x + weights.omega * (intra_g[i].x + inter_g[i].x);
            grad[2 * i + 1] = align.grad[i].y + weights.omega * (intra_g[i].y + inter_g[i].y);
        }
        adam_step(&mut params, &grad, &mut state, &adam_cfg)?;
    }
    let warped: Vec<Vec2> = best_params
        .chunks(2)
        .map(|c| Vec2::new(c[0], c[1]))
        .collect();
    mesh.set_warped(warped)?;
    Ok(TpsLevelOutcome {
        mesh,
        history,
        iter_count,
        converged,
    })
}

/// Iterative warp adaption: optimize only the TPS alignment term from a warm
/// start, stopping after T iterations or when consecutive losses differ by
/// less than tau. The warm mesh is rescaled when the pair's resolution
/// differs from the mesh's native resolution.
pub fn adapt(
    reference: &ImageF,
    target: &ImageF,
    warm_start: &WarpResult,
    cfg: &OptimizerConfig,
) -> Result<WarpResult> {
    let mut mesh = warm_start.mesh.clone();
    let (tw, th) = (target.width() as f64, target.height() as f64);
    if (mesh.target_width() - tw).abs() > 1e-9 || (mesh.target_height() - th).abs() > 1e-9 {
        mesh = mesh.rescaled(tw, th)?;
    }
    let canvas = Canvas::for_reference(reference.width(), reference.height());
    let n = mesh.warped().len();
    let mut params: Vec<f64> = mesh.warped().iter().flat_map(|p| [p.x, p.y]).collect();
    let mut state = AdamState::new(2 * n);
    let adam_cfg = cfg.adam(cfg.learning_rate);
    let mut history = Vec::new();
    let init = tps_alignment_with_grad(reference, target, &mesh, &canvas)?;
    history.push(LossRecord {
        iter: 0,
        align: init.loss,
        h_align: 0.0,
        intra: 0.0,
        inter: 0.0,
        total: init.loss,
    });
    let mut best_params = params.clone();
    let mut best_loss = init.loss;
    let mut prev_loss = init.loss;
    let mut grad_pts = init.grad;
    let mut iterations_used = 0usize;
    let mut converged = false;
    for k in 1..=cfg.max_iters {
        let mut grad = vec![0.0f64; 2 * n];
        for i in 0..n {
            grad[2 * i] = grad_pts[i].x;
            grad[2 * i + 1] = grad_pts[i].y;
        }
        adam_step(&mut params, &grad, &mut state, &adam_cfg)?;
        let warped: Vec<Vec2> = params.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
        mesh.set_warped(warped)?;
        let eval = tps_alignment_with_grad(reference, target, &mesh, &canvas)?;
        history.push(LossRecord {
            iter: k,
            align: eval.loss,
            h_align: 0.0,
            intra: 0.0,
            inter: 0.0,
            total: eval.loss,
        });
        iterations_used = k;
        if eval.loss < best_loss {
            best_loss = eval.loss;
            best_params.copy_from_slice(&params);
        }
        if (prev_loss - eval.loss).abs() < cfg.tol {
            converged = true;
            break;
        }
        prev_loss = eval.loss;
        grad_pts = eval.grad;
    }
    let warped: Vec<Vec2> = best_params
        .chunks(2)
        .map(|c| Vec2::new(c[0], c[1]))
        .collect();
    mesh.set_warped(warped)?;
    let mut warnings = Vec::new();
    let folds = mesh.fold_count();
    if folds > 0 {
        warnings.push(format!("mesh fold-over in {folds} cells"));
    }
    Ok(WarpResult {
        homography: warm_start.homography,
        mesh,
        loss_history: history,
        iterations_used,
        converged,
        warnings,
    })
}
