//! End-to-end stitching pipeline: warp stage, canvas assembly, composition.

use crate::compose::{blend, optimize_seam, CompositionInputs, CompositionWeights, SeamMask};
use crate::energy::WarpLossWeights;
use crate::optim::{
    optimize_homography, optimize_tps, HomographyStage, OptimizerConfig, WarpResult,
};
use crate::raster::{psnr, ssim, ImageF, SoftMask};
use crate::warp::{compute_canvas, field_from_mesh, place_reference, warp, Canvas};
use crate::Result;

/// Settings for one full stitch.
#[derive(Debug, Clone, Copy)]
pub struct StitchConfig {
    pub optimizer: OptimizerConfig,
    pub warp_weights: WarpLossWeights,
    pub composition_weights: CompositionWeights,
    pub seam_optimizer: OptimizerConfig,
}

impl Default for StitchConfig {
    fn default() -> Self {
        StitchConfig {
            optimizer: OptimizerConfig::warp_defaults(),
            warp_weights: WarpLossWeights::default(),
            composition_weights: CompositionWeights::default(),
            seam_optimizer: OptimizerConfig::seam_defaults(),
        }
    }
}

/// Wall-clock seconds per stage (zero where the platform lacks a clock).
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub homography_s: f64,
    pub tps_s: f64,
    pub composition_s: f64,
}

/// Everything produced by one stitch, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct StitchOutput {
    pub panorama: ImageF,
    pub canvas: Canvas,
    pub homography_stage: HomographyStage,
    pub warp_result: WarpResult,
    pub seam: Option<SeamMask>,
    pub warped_reference: ImageF,
    pub warped_target: ImageF,
    pub mask_reference: SoftMask,
    pub mask_target: SoftMask,
    /// PSNR / SSIM between the reference and the TPS-warped target over the
    /// overlap, measured on the reference frame.
    pub overlap_psnr: f64,
    pub overlap_ssim: f64,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
}

#[cfg(not(target_arch = "wasm32"))]
fn clock() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn clock() -> Option<std::time::Instant> {
    None
}

fn elapsed(start: Option<std::time::Instant>) -> f64 {
    start.map(|t| t.elapsed().as_secs_f64()).unwrap_or(0.0)
}

/// Run the full two-stage pipeline on one pair.
pub fn stitch_pair(
    reference: &ImageF,
    target: &ImageF,
    cfg: &StitchConfig,
) -> Result<StitchOutput> {
    let mut warnings = Vec::new();
    let t0 = clock();
    let h_stage = optimize_homography(reference, target, &cfg.optimizer)?;
    let homography_s = elapsed(t0);
    warnings.extend(h_stage.warnings.iter().cloned());

    let t1 = clock();
    let warp_result = optimize_tps(
        reference,
        target,
        &h_stage.homography,
        &cfg.warp_weights,
        &cfg.optimizer,
    )?;
    let tps_s = elapsed(t1);
    warnings.extend(warp_result.warnings.iter().cloned());

    // Alignment quality on the reference frame.
    let ref_canvas = Canvas::for_reference(reference.width(), reference.height());
    let ref_field = field_from_mesh(&warp_result.mesh, &ref_canvas)?;
    let (ref_frame_warp, ref_frame_mask) = warp(target, &ref_field);
    let overlap_psnr = psnr(reference, &ref_frame_warp, &ref_frame_mask).unwrap_or(f64::NAN);
    let overlap_ssim = ssim(reference, &ref_frame_warp, &ref_frame_mask).unwrap_or(f64::NAN);

    // Panorama canvas from the warped mesh outline.
    let canvas = compute_canvas(reference, &warp_result.mesh.boundary_polygon())?;
    let mesh_on_canvas = warp_result
        .mesh
        .translated(canvas.offset.0 as f64, canvas.offset.1 as f64);
    let field = field_from_mesh(&mesh_on_canvas, &canvas)?;
    let (warped_target, mask_target) = warp(target, &field);
    let (warped_reference, mask_reference) = place_reference(reference, &canvas);

    let t2 = clock();
    let inputs = CompositionInputs::new(
        warped_reference.clone(),
        warped_target.clone(),
        mask_reference.clone(),
        mask_target.clone(),
    )?;
    let overlap_pixels = inputs.overlap().count_above(0.0);
    let (panorama, seam) = if overlap_pixels == 0 {
        // Degenerate paste: no seam to optimize.
        warnings.push("empty overlap after warping; pasting without a seam".into());
        let m_ct = crate::compose::derive_target_mask(&mask_reference, &mask_reference, &mask_target)?;
        (
            blend(&warped_reference, &warped_target, &mask_reference, &m_ct),
            None,
        )
    } else {
        let seam = optimize_seam(&inputs, &cfg.composition_weights, &cfg.seam_optimizer)?;
        (
            blend(&warped_reference, &warped_target, &seam.m_cr, &seam.m_ct),
            Some(seam),
        )
    };
    let composition_s = elapsed(t2);

    Ok(StitchOutput {
        panorama,
        canvas,
        homography_stage: h_stage,
        warp_result,
        seam,
        warped_reference,
        warped_target,
        mask_reference,
        mask_target,
        overlap_psnr,
        overlap_ssim,
        timings: StageTimings {
            homography_s,
            tps_s,
            composition_s,
        },
        warnings,
    })
}
